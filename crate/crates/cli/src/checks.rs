//! Named checks run against the configured model and set.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stochinv::fd::FdSteps;
use stochinv::geometry::{ClosedSet, GeometryTolerances, SamplerConfig};
use stochinv::invariance::{
    check_set, pmp_battery, series_equality_check, CheckOptions, CheckSetConfig, InvarianceTolerances, PmpConfig,
    Verdict,
};
use stochinv::linop;
use stochinv::model::ModelSpec;
use stochinv::simulate::{
    control_field, delta_scaling_slope, double_integral_mc, invariance_stats, ode_viability, radial_field,
    rotation_field, sigma_mode_field, simulate, OdeField, SimConfig,
};
use stochinv::{Error, Result};

use crate::config::{parse_params, Block};
use crate::sets::SetRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TolSource {
    Default,
    Override,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tol {
    pub value: f64,
    pub source: TolSource,
}

impl Tol {
    pub fn resolve(given: Option<f64>, default: f64) -> Tol {
        match given {
            Some(value) => Tol {
                value,
                source: TolSource::Override,
            },
            None => Tol {
                value: default,
                source: TolSource::Default,
            },
        }
    }
}

/// A checked quantity: passes when `value <= tol`.
#[derive(Clone, Debug, Serialize)]
pub struct Metric {
    pub value: f64,
    pub tol: f64,
    pub source: TolSource,
    pub pass: bool,
}

impl Metric {
    pub fn new(value: f64, tol: Tol) -> Self {
        Self {
            value,
            tol: tol.value,
            source: tol.source,
            pass: value <= tol.value,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    pub tol_eq: Tol,
    pub tol_ineq: Tol,
    pub rank_tol: Tol,
}

impl Tolerances {
    pub fn core(&self) -> InvarianceTolerances {
        InvarianceTolerances {
            tol_eq: self.tol_eq.value,
            tol_ineq: self.tol_ineq.value,
            rank_tol: self.rank_tol.value,
        }
    }
}

pub struct Context {
    pub model: Arc<ModelSpec>,
    pub set: Arc<dyn ClosedSet>,
    pub sets: Arc<SetRegistry>,
    pub seed: u64,
    pub tol: Tolerances,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub verdict: Verdict,
    pub metrics: BTreeMap<String, Metric>,
    pub details: Value,
    /// Trajectory CSV, written by the runner when an output path is set.
    #[serde(skip)]
    pub csv: Option<Vec<u8>>,
}

impl CheckResult {
    fn new(check: &str, verdict: Verdict, metrics: BTreeMap<String, Metric>, details: Value) -> Self {
        Self {
            check: check.to_string(),
            verdict,
            metrics,
            details,
            csv: None,
        }
    }
}

/// Pass iff every metric passes.
fn verdict_of(metrics: &BTreeMap<String, Metric>) -> Verdict {
    if metrics.values().all(|m| m.pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

pub trait Check: Send + Sync {
    fn name(&self) -> &'static str;
    /// `field` locates the parameters in the config for error messages.
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult>;
}

pub struct CheckRegistry {
    checks: BTreeMap<&'static str, Box<dyn Check>>,
}

impl Default for CheckRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl CheckRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            checks: BTreeMap::new(),
        };
        r.register(Box::new(CheckSetCheck));
        r.register(Box::new(SeriesEqualityCheck));
        r.register(Box::new(PmpProbeCheck));
        r.register(Box::new(SimulateCheck));
        r.register(Box::new(DoubleIntegralCheck));
        r.register(Box::new(OdeViabilityCheck));
        r
    }

    pub fn register(&mut self, check: Box<dyn Check>) {
        self.checks.insert(check.name(), check);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.checks.keys().copied().collect()
    }

    pub fn get(&self, name: &str, field: &str) -> Result<&dyn Check> {
        self.checks.get(name).map(|c| c.as_ref()).ok_or_else(|| {
            Error::config(field, format!("unknown check `{name}` (known: {})", self.names().join(", ")))
        })
    }
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn dim_checked(v: &[f64], dim: usize, field: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::config(field, format!("expected {dim} coordinates, got {}", v.len())));
    }
    Ok(dvec(v))
}

fn sampler(center: Option<&[f64]>, radius: f64, seed: u64) -> SamplerConfig {
    SamplerConfig {
        center: center.map(dvec),
        radius,
        seed,
    }
}

fn two() -> f64 {
    2.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckSetParams {
    #[serde(default = "default_points")]
    n_points: usize,
    #[serde(default = "two")]
    radius: f64,
    center: Option<Vec<f64>>,
    #[serde(default)]
    extra_points: Vec<Vec<f64>>,
    #[serde(default = "default_normals")]
    normals_per_point: usize,
}

fn default_points() -> usize {
    50
}

fn default_normals() -> usize {
    8
}

/// Kernel and corrected-drift conditions on sampled boundary points.
struct CheckSetCheck;

impl Check for CheckSetCheck {
    fn name(&self) -> &'static str {
        "check_set"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: CheckSetParams = parse_params(params, field)?;
        let dim = ctx.model.dim();
        let extra = p
            .extra_points
            .iter()
            .enumerate()
            .map(|(i, x)| dim_checked(x, dim, &format!("{field}.extra_points[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let cfg = CheckSetConfig {
            n_points: p.n_points,
            sampler: sampler(p.center.as_deref(), p.radius, ctx.seed),
            extra_points: extra,
            options: CheckOptions {
                tol: ctx.tol.core(),
                normals_per_point: p.normals_per_point,
                seed: ctx.seed,
                ..Default::default()
            },
        };
        let report = check_set(&ctx.model, ctx.set.as_ref(), &cfg)?;
        let normals = report.points.iter().flat_map(|pt| pt.normals.iter().map(move |n| (pt, n)));
        let kernel = normals
            .clone()
            .map(|(pt, n)| n.kernel_residual / (1.0 + pt.c_norm))
            .fold(0.0, f64::max);
        let drift = normals.map(|(_, n)| n.drift_c).reduce(f64::max);
        let mut metrics = BTreeMap::new();
        metrics.insert("kernel_residual_relative".into(), Metric::new(kernel, ctx.tol.tol_eq));
        if let Some(d) = drift {
            metrics.insert("max_corrected_drift".into(), Metric::new(d, ctx.tol.tol_ineq));
        }
        let mut offending: Vec<&Vec<f64>> = Vec::new();
        for &i in &report.offending_points {
            if !offending.contains(&&report.points[i].x) {
                offending.push(&report.points[i].x);
            }
        }
        let details = json!({
            "offending_points": offending,
            "report": report,
        });
        Ok(CheckResult::new(self.name(), report.verdict, metrics, details))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesParams {
    points: Vec<Vec<f64>>,
    /// Off-kernel probe directions; defaults to `e_1`.
    probes: Option<Vec<Vec<f64>>>,
    tol: Option<f64>,
}

/// Both correction series on `ker Σ(x)ᵀ`, plus reported off-kernel probes.
struct SeriesEqualityCheck;

/// Unit eigenvector of `C(x)` for its smallest eigenvalue, when `C(x)` is
/// rank deficient.
fn kernel_direction(model: &ModelSpec, x: &DVector<f64>, rank_tol: f64) -> Result<Option<DVector<f64>>> {
    let sd = linop::spectral(&model.dispersion(x)?);
    if sd.rank(rank_tol) == x.len() {
        return Ok(None);
    }
    let last = sd.eigenvalues.len() - 1;
    let mut u = sd.eigenvectors.column(last).into_owned();
    // fix the sign for a reproducible report
    if let Some(i) = u.iter().position(|v| v.abs() > 1e-12) {
        if u[i] < 0.0 {
            u = -u;
        }
    }
    Ok(Some(u))
}

impl Check for SeriesEqualityCheck {
    fn name(&self) -> &'static str {
        "series_equality"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: SeriesParams = parse_params(params, field)?;
        let dim = ctx.model.dim();
        let tol = Tol::resolve(p.tol, 5e-5);
        let core_tol = ctx.tol.core();
        let steps = FdSteps::default();
        let probes = match &p.probes {
            Some(v) => v
                .iter()
                .enumerate()
                .map(|(i, u)| dim_checked(u, dim, &format!("{field}.probes[{i}]")))
                .collect::<Result<Vec<_>>>()?,
            None => vec![DVector::from_fn(dim, |i, _| if i == 0 { 1.0 } else { 0.0 })],
        };
        let mut kernel_cases = Vec::new();
        let mut probe_cases = Vec::new();
        let mut unavailable = 0usize;
        let mut worst: f64 = 0.0;
        for (i, x) in p.points.iter().enumerate() {
            let x = dim_checked(x, dim, &format!("{field}.points[{i}]"))?;
            if let Some(u) = kernel_direction(&ctx.model, &x, core_tol.rank_tol)? {
                match series_equality_check(&ctx.model, &x, &u, &steps, &core_tol) {
                    Ok(eq) => {
                        worst = worst.max(eq.residual);
                        kernel_cases.push(json!({"x": x.as_slice(), "u": u.as_slice(), "result": eq}));
                    }
                    Err(Error::InvalidArgument(msg)) => {
                        unavailable += 1;
                        kernel_cases.push(json!({"x": x.as_slice(), "u": u.as_slice(), "unavailable": msg}));
                    }
                    Err(e) => return Err(e),
                }
            }
            for u in &probes {
                if let Ok(eq) = series_equality_check(&ctx.model, &x, u, &steps, &core_tol) {
                    probe_cases.push(json!({"x": x.as_slice(), "u": u.as_slice(), "result": eq}));
                }
            }
        }
        let n_kernel = kernel_cases.len() - unavailable;
        let mut metrics = BTreeMap::new();
        metrics.insert("max_kernel_residual".into(), Metric::new(worst, tol));
        let verdict = if n_kernel == 0 {
            Verdict::Inconclusive
        } else {
            verdict_of(&metrics).and(if unavailable > 0 { Verdict::Inconclusive } else { Verdict::Pass })
        };
        let details = json!({
            "kernel_cases": kernel_cases,
            "off_kernel_probes": probe_cases,
            "fd_steps": steps,
        });
        Ok(CheckResult::new(self.name(), verdict, metrics, details))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PmpParams {
    #[serde(default = "default_functions")]
    n_functions: usize,
    #[serde(default = "default_samples")]
    n_samples: usize,
    #[serde(default = "two")]
    radius: f64,
    center: Option<Vec<f64>>,
}

fn default_functions() -> usize {
    50
}

fn default_samples() -> usize {
    400
}

/// Positive maximum principle on random concave quadratics.
struct PmpProbeCheck;

impl Check for PmpProbeCheck {
    fn name(&self) -> &'static str {
        "pmp_probe"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: PmpParams = parse_params(params, field)?;
        let cfg = PmpConfig {
            n_samples: p.n_samples,
            sampler: sampler(p.center.as_deref(), p.radius, ctx.seed),
            tol_ineq: ctx.tol.tol_ineq.value,
            ..Default::default()
        };
        let battery = pmp_battery(&ctx.model, ctx.set.as_ref(), p.n_functions, &cfg, &GeometryTolerances::default())?;
        let mut metrics = BTreeMap::new();
        let verdict = match battery.max_generator_value {
            Some(v) => {
                metrics.insert("max_generator_value".into(), Metric::new(v, ctx.tol.tol_ineq));
                verdict_of(&metrics)
            }
            None => Verdict::Inconclusive,
        };
        Ok(CheckResult::new(self.name(), verdict, metrics, json!(battery)))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    x0: Vec<f64>,
    #[serde(default = "default_h")]
    h: f64,
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default = "default_paths")]
    n_paths: usize,
    #[serde(default = "default_band")]
    c_band: f64,
    /// Largest admissible share of paths leaving the band.
    max_exceed_frequency: Option<f64>,
    /// Extra step sizes for a refinement study of the median violation.
    #[serde(default)]
    refine_h: Vec<f64>,
}

fn default_h() -> f64 {
    1e-3
}

fn one() -> f64 {
    1.0
}

fn default_paths() -> usize {
    1000
}

fn default_band() -> f64 {
    5.0
}

/// Euler paths and their distance to the set relative to the band.
struct SimulateCheck;

impl Check for SimulateCheck {
    fn name(&self) -> &'static str {
        "simulate"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: SimulateParams = parse_params(params, field)?;
        let x0 = dim_checked(&p.x0, ctx.model.dim(), &format!("{field}.x0"))?;
        let cfg = SimConfig {
            h: p.h,
            horizon: p.horizon,
            n_paths: p.n_paths,
            seed: ctx.seed,
            c_band: p.c_band,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config { field: f, message } => Error::config(format!("{field}.{}", f.trim_start_matches("simulate.")), message),
            other => other,
        })?;
        let ens = simulate(&ctx.model, &x0, &cfg)?;
        let stats = invariance_stats(&ens, ctx.set.as_ref(), p.c_band)?;
        let mut csv = Vec::new();
        ens.write_csv(&mut csv).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;

        let mut refinement = Vec::new();
        for h in &p.refine_h {
            let c = SimConfig { h: *h, ..cfg.clone() };
            c.validate().map_err(|e| Error::config(format!("{field}.refine_h"), e.to_string()))?;
            let s = invariance_stats(&simulate(&ctx.model, &x0, &c)?, ctx.set.as_ref(), p.c_band)?;
            refinement.push(json!({"h": h, "median_max": s.median_max, "exceed_frequency": s.exceed_frequency}));
        }

        let mut metrics = BTreeMap::new();
        metrics.insert(
            "exceed_frequency".into(),
            Metric::new(stats.exceed_frequency, Tol::resolve(p.max_exceed_frequency, 0.05)),
        );
        let exit_times: Vec<f64> = stats.first_exit_times.iter().flatten().copied().collect();
        let details = json!({
            "h": p.h,
            "n_steps": ens.n_steps,
            "n_paths": p.n_paths,
            "band": stats.band,
            "median_max_distance": stats.median_max,
            "max_max_distance": stats.max_max,
            "exceed_frequency": stats.exceed_frequency,
            "n_exits": exit_times.len(),
            "mean_first_exit_time": if exit_times.is_empty() { None } else { Some(exit_times.iter().sum::<f64>() / exit_times.len() as f64) },
            "median_final_distance": median(&stats.final_distances),
            "n_aborted": stats.n_aborted,
            "positive_part_diffusion": ctx.model.uses_positive_part(),
            "refinement": refinement,
        });
        let mut r = CheckResult::new(self.name(), verdict_of(&metrics), metrics, details);
        r.csv = Some(csv);
        Ok(r)
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DoubleIntegralParams {
    #[serde(default = "unit_gamma")]
    gamma: Vec<Vec<f64>>,
    #[serde(default = "default_t_list")]
    t_list: Vec<f64>,
    #[serde(default = "default_di_paths")]
    n_paths: usize,
    #[serde(default = "default_h")]
    h: f64,
    #[serde(default = "half")]
    delta: f64,
    /// Admissible z-score of each estimate.
    z_max: Option<f64>,
    /// Admissible deviation of the δ-scaling slope from `2 - 2δ`.
    slope_tol: Option<f64>,
}

fn unit_gamma() -> Vec<Vec<f64>> {
    vec![vec![1.0]]
}

fn default_t_list() -> Vec<f64> {
    vec![0.125, 0.25, 0.5, 1.0, 2.0]
}

fn default_di_paths() -> usize {
    20_000
}

fn half() -> f64 {
    0.5
}

/// Second moment of the iterated Wiener integral against `|γ|²_HS t²/2`.
struct DoubleIntegralCheck;

impl Check for DoubleIntegralCheck {
    fn name(&self) -> &'static str {
        "double_integral"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: DoubleIntegralParams = parse_params(params, field)?;
        let d = p.gamma.len();
        if d == 0 || p.gamma.iter().any(|r| r.len() != d) {
            return Err(Error::config(format!("{field}.gamma"), "γ must be a non-empty square matrix"));
        }
        let gamma = DMatrix::from_fn(d, d, |i, j| p.gamma[i][j]);
        let est = double_integral_mc(&gamma, &p.t_list, p.n_paths, p.h, ctx.seed)
            .map_err(|e| Error::config(field, e.to_string()))?;
        let z_tol = Tol::resolve(p.z_max, 3.0);
        let mut metrics = BTreeMap::new();
        for e in &est {
            let z = if e.std_err > 0.0 {
                (e.mean - e.exact).abs() / e.std_err
            } else if e.mean == e.exact {
                0.0
            } else {
                f64::INFINITY
            };
            metrics.insert(format!("z_score_t={}", e.t), Metric::new(z, z_tol));
        }
        let slope = delta_scaling_slope(&est, p.delta);
        if est.len() >= 2 && est.iter().all(|e| e.mean > 0.0) {
            let target = 2.0 - 2.0 * p.delta;
            metrics.insert(
                "delta_slope_deviation".into(),
                Metric::new((slope - target).abs(), Tol::resolve(p.slope_tol, 0.2)),
            );
        }
        let details = json!({
            "estimates": est,
            "delta": p.delta,
            "slope": if slope.is_finite() { Some(slope) } else { None },
            "n_paths": p.n_paths,
            "h": p.h,
        });
        Ok(CheckResult::new(self.name(), verdict_of(&metrics), metrics, details))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OdeParams {
    /// `rotation`, `radial`, `sigma_mode` or `control`.
    field: String,
    #[serde(default)]
    mode: usize,
    /// Frozen point of the control field.
    at: Option<Vec<f64>>,
    x0: Vec<f64>,
    #[serde(default = "default_h")]
    h: f64,
    #[serde(default = "one")]
    horizon: f64,
    /// Set to integrate against instead of the configured one.
    set: Option<Block>,
    max_distance: Option<f64>,
}

/// RK4 trajectory of a vector field and its distance to the set.
struct OdeViabilityCheck;

impl Check for OdeViabilityCheck {
    fn name(&self) -> &'static str {
        "ode_viability"
    }
    fn run(&self, ctx: &Context, params: &Value, field: &str) -> Result<CheckResult> {
        let p: OdeParams = parse_params(params, field)?;
        let set: Arc<dyn ClosedSet> = match &p.set {
            Some(b) => ctx.sets.build(&b.kind, &b.params, &format!("{field}.set"))?,
            None => ctx.set.clone(),
        };
        let x0 = dim_checked(&p.x0, set.dim(), &format!("{field}.x0"))?;
        let vf: OdeField = match p.field.as_str() {
            "rotation" | "radial" if set.dim() != 2 => {
                return Err(Error::config(format!("{field}.field"), "planar fields need a 2-D set"))
            }
            "rotation" => rotation_field(),
            "radial" => radial_field(),
            "sigma_mode" => sigma_mode_field(ctx.model.clone(), p.mode),
            "control" => {
                let at = p.at.as_deref().unwrap_or(&p.x0);
                let at = dim_checked(at, ctx.model.dim(), &format!("{field}.at"))?;
                control_field(ctx.model.clone(), &at, p.mode, ctx.tol.rank_tol.value)?
            }
            other => {
                return Err(Error::config(
                    format!("{field}.field"),
                    format!("unknown field `{other}` (known: control, radial, rotation, sigma_mode)"),
                ))
            }
        };
        if matches!(p.field.as_str(), "sigma_mode" | "control") && set.dim() != ctx.model.dim() {
            return Err(Error::config(format!("{field}.set"), "set dimension differs from the model"));
        }
        let res = ode_viability(vf.as_ref(), set.as_ref(), &x0, p.h, p.horizon)?;
        let mut metrics = BTreeMap::new();
        metrics.insert("max_distance".into(), Metric::new(res.max_distance, Tol::resolve(p.max_distance, 1e-6)));
        let verdict = if res.aborted.is_some() { Verdict::Fail } else { verdict_of(&metrics) };
        let details = json!({
            "field": p.field,
            "set": set.kind(),
            "h": p.h,
            "horizon": p.horizon,
            "max_distance": res.max_distance,
            "final_distance": res.final_distance,
            "aborted": res.aborted,
        });
        Ok(CheckResult::new(self.name(), verdict, metrics, details))
    }
}
