//! Config-driven runner: builds the model and set, runs the requested checks
//! and assembles a deterministic JSON report.

pub mod checks;
pub mod config;
pub mod sets;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stochinv::invariance::{InvarianceTolerances, Verdict};
use stochinv::model::ModelRegistry;
use stochinv::verify::{SuiteOutcome, SuiteRegistry};
use stochinv::{Error, Result};

use crate::checks::{CheckRegistry, CheckResult, Context, Tol, Tolerances};
use crate::config::RunConfig;
use crate::sets::SetRegistry;

pub const TOOL: &str = "stochinv";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit statuses of the binary.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAIL: i32 = 1;
    pub const INCONCLUSIVE: i32 = 2;
    pub const CONFIG: i32 = 64;
}

pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Pass => exit::PASS,
        Verdict::Inconclusive => exit::INCONCLUSIVE,
        Verdict::Fail => exit::FAIL,
    }
}

/// Exit status for an error raised before or during a run.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => exit::CONFIG,
        _ => exit::FAIL,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol_eq: Option<f64>,
    pub tol_ineq: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    /// SHA-256 of the config bytes.
    pub config_digest: String,
    pub seed: u64,
    pub model: String,
    pub set: String,
    pub tolerances: Tolerances,
    pub checks: Vec<CheckResult>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckTiming {
    pub check: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub config_digest: String,
    pub checks: Vec<CheckTiming>,
    pub total_seconds: f64,
}

pub struct RunOutput {
    pub report: Report,
    pub timings: Timings,
    /// Trajectory CSV of the first `simulate` check, when requested.
    pub csv: Option<(PathBuf, Vec<u8>)>,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn positive(v: Option<f64>, field: &str) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(field, "tolerance must be positive")),
        other => Ok(other),
    }
}

/// Parses and runs a config given as raw bytes.
pub fn run_config(bytes: &[u8], overrides: &Overrides) -> Result<RunOutput> {
    let start = Instant::now();
    let text = std::str::from_utf8(bytes).map_err(|e| Error::config("config", e.to_string()))?;
    let cfg = RunConfig::from_json(text)?;
    let config_digest = digest(bytes);
    let defaults = InvarianceTolerances::default();
    let tol = Tolerances {
        tol_eq: Tol::resolve(positive(overrides.tol_eq.or(cfg.tolerances.tol_eq), "tolerances.tol_eq")?, defaults.tol_eq),
        tol_ineq: Tol::resolve(
            positive(overrides.tol_ineq.or(cfg.tolerances.tol_ineq), "tolerances.tol_ineq")?,
            defaults.tol_ineq,
        ),
        rank_tol: Tol::resolve(positive(cfg.tolerances.rank_tol, "tolerances.rank_tol")?, defaults.rank_tol),
    };
    let seed = overrides.seed.unwrap_or(cfg.seed);

    let model = ModelRegistry::with_builtins()
        .build(&cfg.model.kind, &cfg.model.params)
        .map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("model.params", other.to_string()),
        })?;
    let sets = Arc::new(SetRegistry::with_builtins());
    let set = sets.build(&cfg.set.kind, &cfg.set.params, "set")?;
    if set.dim() != model.dim() {
        return Err(Error::config(
            "set",
            format!("set dimension {} differs from model dimension {}", set.dim(), model.dim()),
        ));
    }
    if cfg.checks.is_empty() {
        return Err(Error::config("checks", "no checks requested"));
    }
    let registry = CheckRegistry::with_builtins();
    // resolve every check name before running any
    let selected = cfg
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| registry.get(&c.name, &format!("checks[{i}].name")))
        .collect::<Result<Vec<_>>>()?;

    let model_id = model.id().to_string();
    let set_kind = set.kind().to_string();
    let mut ctx = Context {
        model: Arc::new(model),
        set,
        sets,
        seed,
        tol,
    };
    let mut results = Vec::with_capacity(selected.len());
    let mut timings = Vec::with_capacity(selected.len());
    let mut csv = None;
    for (i, (check, block)) in selected.iter().zip(&cfg.checks).enumerate() {
        ctx.seed = seed.wrapping_add(i as u64);
        let t0 = Instant::now();
        let mut r = check.run(&ctx, &block.params, &format!("checks[{i}].params"))?;
        timings.push(CheckTiming {
            check: r.check.clone(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        if let (None, Some(path), Some(bytes)) = (&csv, &cfg.output.csv, r.csv.take()) {
            csv = Some((PathBuf::from(path), bytes));
        }
        results.push(r);
    }
    let verdict = results.iter().fold(Verdict::Pass, |acc, r| acc.and(r.verdict));
    Ok(RunOutput {
        report: Report {
            tool: TOOL,
            version: VERSION,
            config_digest: config_digest.clone(),
            seed,
            model: model_id,
            set: set_kind,
            tolerances: tol,
            checks: results,
            verdict,
        },
        timings: Timings {
            config_digest,
            checks: timings,
            total_seconds: start.elapsed().as_secs_f64(),
        },
        csv,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub suites: Vec<SuiteOutcome>,
    pub passed: bool,
}

/// Runs the named property suites, or all of them for `None`.
pub fn verify_ops(names: Option<&[String]>, seed: u64, perturb: Option<&str>) -> Result<VerifyReport> {
    let registry = SuiteRegistry::with_builtins();
    let all: Vec<String> = registry.names().into_iter().map(String::from).collect();
    let suites = registry.run(names.unwrap_or(&all), seed, perturb)?;
    Ok(VerifyReport {
        tool: TOOL,
        version: VERSION,
        seed,
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

/// `<report>.timings.json` next to the report.
pub fn timings_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_owned();
    s.push(".timings.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIR: &str = r#"{"model":{"kind":"cir","params":{"a":0.3}},"set":{"kind":"orthant","params":{"dim":1}},
        "checks":[{"name":"check_set","params":{"n_points":5,"extra_points":[[0.0]]}}]}"#;

    #[test]
    fn runs_a_small_config() {
        let out = run_config(CIR.as_bytes(), &Overrides::default()).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
        assert_eq!(out.report.config_digest.len(), 64);
        assert_eq!(out.report.tolerances.tol_eq.source, checks::TolSource::Default);
    }

    #[test]
    fn command_line_tolerances_are_marked_as_overrides() {
        let o = Overrides {
            tol_ineq: Some(1e-6),
            ..Default::default()
        };
        let out = run_config(CIR.as_bytes(), &o).unwrap();
        let m = &out.report.checks[0].metrics["max_corrected_drift"];
        assert_eq!(m.tol, 1e-6);
        assert_eq!(m.source, checks::TolSource::Override);
    }

    #[test]
    fn unknown_check_is_a_config_error_naming_the_field() {
        let bad = CIR.replace("\"check_set\"", "\"nope\"");
        let e = run_config(bad.as_bytes(), &Overrides::default()).err().unwrap();
        assert_eq!(error_code(&e), exit::CONFIG);
        assert!(e.to_string().contains("checks[0].name"), "{e}");
    }

    #[test]
    fn atomic_write_replaces_the_target() {
        let dir = std::env::temp_dir().join(format!("stochinv-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_suite_selection_is_a_config_error() {
        let e = verify_ops(Some(&[]), 0, None).err().unwrap();
        assert_eq!(error_code(&e), exit::CONFIG);
    }
}
