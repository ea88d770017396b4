use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochinv::Error;
use stochinv_cli::{
    error_code, exit, exit_code, run_config, timings_path, to_json, verify_ops, write_atomic, Overrides,
};

/// Numerical checks of stochastic invariance for closed sets.
#[derive(Parser)]
#[command(name = "stochinv", version)]
struct Cli {
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Kernel-condition tolerance; overrides the config.
    #[arg(long, global = true)]
    tol_eq: Option<f64>,
    /// Drift-inequality tolerance; overrides the config.
    #[arg(long, global = true)]
    tol_ineq: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks listed in a config file and write a JSON report.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in operator and geometry property suites.
    VerifyOps {
        /// Comma-separated suite names (default: all).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        suite: Option<Vec<String>>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt the named suite (negative control).
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("stochinv: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(exit::CONFIG, "--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(exit::FAIL, e);
        }
    }
    match cli.command {
        Command::Check { config, out } => {
            let bytes = match std::fs::read(&config) {
                Ok(b) => b,
                Err(e) => return fail(exit::CONFIG, format!("cannot read {}: {e}", config.display())),
            };
            let overrides = Overrides {
                seed: cli.seed,
                tol_eq: cli.tol_eq,
                tol_ineq: cli.tol_ineq,
            };
            let run = match run_config(&bytes, &overrides) {
                Ok(r) => r,
                Err(e) => return fail(error_code(&e), e),
            };
            let writes = [
                (out.clone(), to_json(&run.report)),
                (timings_path(&out), to_json(&run.timings)),
            ]
            .into_iter()
            .chain(run.csv.clone());
            for (path, bytes) in writes {
                if let Err(e) = write_atomic(&path, &bytes) {
                    return fail(exit::FAIL, format!("cannot write {}: {e}", path.display()));
                }
            }
            eprintln!("verdict: {:?}", run.report.verdict);
            ExitCode::from(exit_code(run.report.verdict) as u8)
        }
        Command::VerifyOps { suite, out, perturb } => {
            let suite: Option<Vec<String>> =
                suite.map(|v| v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
            let report = match verify_ops(suite.as_deref(), cli.seed.unwrap_or(0), perturb.as_deref()) {
                Ok(r) => r,
                Err(e @ Error::Config { .. }) => return fail(exit::CONFIG, e),
                Err(e) => return fail(exit::FAIL, e),
            };
            let bytes = to_json(&report);
            match out {
                Some(p) => {
                    if let Err(e) = write_atomic(&p, &bytes) {
                        return fail(exit::FAIL, format!("cannot write {}: {e}", p.display()));
                    }
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            for s in &report.suites {
                eprintln!("{:<18} {}  cases {:>5}  failures {}", s.suite, if s.passed { "pass" } else { "FAIL" }, s.cases, s.failures);
            }
            ExitCode::from(if report.passed { exit::PASS } else { exit::FAIL } as u8)
        }
    }
}
