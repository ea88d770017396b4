//! Acceptance criteria: one PASS/FAIL line each, non-zero exit on any failure.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochinv::fd::FdSteps;
use stochinv::geometry::{prox_normal_test, Ball, ClosedSet, GeometryTolerances, Orthant, PowerGraph};
use stochinv::invariance::{
    check_point, corrected_drift_c, correction_direct_sum, correction_trace, pmp_battery, series_equality_check,
    CheckOptions, InvarianceTolerances, PmpConfig, ProjectionForm, Verdict,
};
use stochinv::model;
use stochinv::simulate::{
    delta_scaling_slope, double_integral_mc, invariance_stats, ode_viability, rotation_field, simulate, SimConfig,
};
use stochinv::verify::{series_models, EigenLipschitz, Penrose, PowersStormer, Suite};

const SEED: u64 = 20240611;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn penrose() -> Outcome {
    let r = Penrose::default().run(SEED, false).unwrap();
    outcome(
        r.passed && r.cases == 200,
        format!("{} matrices, {} violations, worst residual/tol {:.2e}", r.cases, r.failures, r.worst_ratio),
    )
}

fn square_root_and_eigenvalues() -> Outcome {
    let ps = PowersStormer::default().run(SEED, false).unwrap();
    let el = EigenLipschitz::default().run(SEED, false).unwrap();
    outcome(
        ps.passed && el.passed,
        format!(
            "square root: {} violations in {} checks; eigenvalues: {} violations in {} pairs; {}",
            ps.failures, ps.cases, el.failures, el.cases, el.notes.join("; ")
        ),
    )
}

fn trace_identity() -> Outcome {
    let steps = FdSteps::default();
    let tol = InvarianceTolerances::default();
    let mut rng = rand_chacha_rng(3);
    let models = series_models().unwrap();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for k in 0..50 {
        let (m, point) = &models[k % models.len()];
        let x = point(&mut rng);
        let u = unit(&mut rng, m.dim());
        let a = correction_trace(m, &x, &u, &steps, tol.rank_tol, ProjectionForm::RangeProj).unwrap();
        let b = correction_direct_sum(m, &x, &u, &steps, tol.rank_tol).unwrap();
        let scale = a.abs().max(b.abs());
        let rel = if scale == 0.0 { 0.0 } else { (a - b).abs() / scale };
        worst = worst.max(rel);
        n += 1;
    }
    outcome(worst <= 1e-8, format!("{n} points over {} models, worst relative gap {worst:.2e}", models.len()))
}

fn series_on_kernel() -> Outcome {
    let twist = 0.8;
    let m = model::rank_deficient(twist).unwrap();
    let steps = FdSteps::default();
    let tol = InvarianceTolerances::default();
    let mut worst: f64 = 0.0;
    let mut all_kernel = true;
    let mut probes = Vec::new();
    for i in 0..20 {
        let x = v(&[-1.0 + 2.0 * i as f64 / 19.0, 0.0]);
        let u = model::rank_deficient_kernel(twist, &x);
        let eq = series_equality_check(&m, &x, &u, &steps, &tol).unwrap();
        all_kernel &= eq.u_in_kernel;
        worst = worst.max(eq.residual);
        let off = series_equality_check(&m, &x, &v(&[1.0, 0.0]), &steps, &tol).unwrap();
        probes.push((off.lhs, off.rhs));
    }
    let (l, r) = probes[5];
    outcome(
        all_kernel && worst <= 5e-5,
        format!(
            "step {:.0e}, worst kernel residual {worst:.2e}; off-kernel e1 at x1={:.3}: trace {l:.6}, sigma {r:.6}",
            steps.first,
            -1.0 + 10.0 / 19.0
        ),
    )
}

fn cir_sweep() -> Outcome {
    let expected = [(-0.5, Verdict::Fail), (0.0, Verdict::Pass), (0.3, Verdict::Pass), (1.0, Verdict::Pass)];
    let mut ok = true;
    let mut got = Vec::new();
    for (a, want) in expected {
        let m = model::cir(a, 1.0, 1.0, 1.0).unwrap();
        let x = v(&[0.0]);
        let pv = check_point(&m, &Orthant { dim: 1 }, &x, None, &CheckOptions::default()).unwrap();
        let d = corrected_drift_c(&m, &x, &v(&[-1.0]), &FdSteps::default(), 1e-10).unwrap();
        ok &= pv.verdict == want && d == -a;
        got.push(format!("a={a}: {:?}, drift {d}", pv.verdict));
    }
    outcome(ok, got.join("; "))
}

fn graph_normals() -> Outcome {
    let set = PowerGraph::new(1.5).unwrap();
    let tol = GeometryTolerances::default();
    let o = v(&[0.0, 0.0]);
    let mut ok = true;
    for t in [0.1, 1.0] {
        ok &= prox_normal_test(&set, &o, &v(&[0.0, -1.0]), t, &tol).unwrap();
        ok &= !prox_normal_test(&set, &o, &v(&[0.0, 1.0]), t, &tol).unwrap();
    }
    outcome(ok, "(0,-1) accepted, (0,+1) rejected at scales 0.1 and 1")
}

fn convex_cone_reduction() -> Outcome {
    let m = model::orthant_diag(vec![1.0, 0.5, 2.0], vec![0.1, 0.2, 0.3], vec![1.0, 1.0, 1.0], vec![1.0, 0.5, 0.25])
        .unwrap();
    let set = Orthant { dim: 3 };
    let steps = FdSteps::default();
    let mut rng = rand_chacha_rng(7);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..100 {
        let x = DVector::from_fn(3, |_, _| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.01..2.0) });
        for u in set.analytic_normals(&x).unwrap() {
            let d = corrected_drift_c(&m, &x, &u, &steps, 1e-10).unwrap();
            worst = worst.max((d - u.dot(&m.drift(&x).unwrap())).abs());
            count += 1;
        }
    }
    outcome(worst <= 1e-8 && count > 0, format!("{count} face normals, worst gap {worst:.2e}"))
}

fn double_integral() -> Outcome {
    let t_list = [0.125, 0.25, 0.5, 1.0, 2.0];
    let est = double_integral_mc(&DMatrix::from_element(1, 1, 1.0), &t_list, 20_000, 1e-3, SEED).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for e in est.iter().filter(|e| e.t >= 0.5) {
        let z = (e.mean - e.t * e.t / 2.0).abs() / e.std_err;
        ok &= z <= 3.0;
        parts.push(format!("t={}: {:.4} vs {:.4} (z {z:.2})", e.t, e.mean, e.t * e.t / 2.0));
    }
    let slope = delta_scaling_slope(&est, 0.5);
    ok &= (slope - 1.0).abs() <= 0.2;
    parts.push(format!("slope {slope:.3} for delta 0.5"));
    outcome(ok, parts.join("; "))
}

fn simulator() -> Outcome {
    let m = model::cir(0.3, 1.0, 1.0, 1.0).unwrap();
    let set = Orthant { dim: 1 };
    let mut medians = Vec::new();
    let mut ok = true;
    let mut freqs = Vec::new();
    for h in [1e-2, 1e-3, 1e-4] {
        let cfg = SimConfig {
            h,
            horizon: 1.0,
            n_paths: 1000,
            seed: SEED,
            c_band: 5.0,
        };
        let s = invariance_stats(&simulate(&m, &v(&[0.0]), &cfg).unwrap(), &set, cfg.c_band).unwrap();
        ok &= s.exceed_frequency <= 0.05;
        freqs.push(s.exceed_frequency);
        medians.push(s.median_max);
    }
    ok &= medians.windows(2).all(|w| w[1] < w[0]);
    let bad = model::constant(v(&[-1.0]), DMatrix::zeros(1, 1), vec![1.0]).unwrap();
    let cfg = SimConfig {
        n_paths: 1000,
        seed: SEED,
        ..Default::default()
    };
    let s = invariance_stats(&simulate(&bad, &v(&[0.0]), &cfg).unwrap(), &set, 5.0).unwrap();
    let reached = s.final_distances.iter().filter(|d| **d >= 0.5).count();
    ok &= reached == cfg.n_paths;
    outcome(
        ok,
        format!("exceed frequencies {freqs:?}, median max violation {medians:?}, violator reached 0.5 in {reached}/{}", cfg.n_paths),
    )
}

fn nagumo() -> Outcome {
    let set = Ball::new(DVector::zeros(2), 1.0).unwrap();
    let r = ode_viability(rotation_field().as_ref(), &set, &v(&[1.0, 0.0]), 1e-3, 10.0).unwrap();
    outcome(r.aborted.is_none() && r.max_distance <= 1e-6, format!("max distance {:.2e}", r.max_distance))
}

fn maximum_principle() -> Outcome {
    let m = model::cir(0.3, 1.0, 1.0, 1.0).unwrap();
    let mut cfg = PmpConfig::default();
    cfg.sampler.seed = SEED;
    let b = pmp_battery(&m, &Orthant { dim: 1 }, 50, &cfg, &GeometryTolerances::default()).unwrap();
    let max = b.max_generator_value.unwrap_or(f64::NAN);
    outcome(
        b.n_probed == 50 && b.n_violations == 0 && max <= 1e-7,
        format!("{} functions probed, max generator value {max:.3e}", b.n_probed),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_stochinv");
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/full_suite.json");
    let dir = std::env::temp_dir().join(format!("stochinv-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut reports = Vec::new();
    let mut codes = Vec::new();
    for threads in [1, 8] {
        let out = dir.join(format!("report-{threads}.json"));
        let status = Command::new(bin)
            .args(["--threads", &threads.to_string(), "--seed", "7", "check", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        codes.push(status.code());
        reports.push(std::fs::read(&out).unwrap_or_default());
    }
    let _ = std::fs::remove_dir_all(&dir);
    let same = !reports[0].is_empty() && reports[0] == reports[1];
    outcome(same, format!("exit codes {codes:?}, {} report bytes, identical: {same}", reports[0].len()))
}

fn rand_chacha_rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ salt)
}

fn unit(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = u.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return u / norm;
        }
    }
}

fn main() {
    type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("penrose identities", Some(Duration::from_secs(5)), penrose),
        ("square-root and eigenvalue continuity", Some(Duration::from_secs(5)), square_root_and_eigenvalues),
        ("trace identity consistency", Some(Duration::from_secs(5)), trace_identity),
        ("series equality on the kernel", Some(Duration::from_secs(5)), series_on_kernel),
        ("cir verdict sweep", Some(Duration::from_secs(1)), cir_sweep),
        ("power-graph normals", Some(Duration::from_secs(1)), graph_normals),
        ("convex-cone reduction", Some(Duration::from_secs(2)), convex_cone_reduction),
        ("double-integral oracle", Some(Duration::from_secs(30)), double_integral),
        ("simulator consistency", Some(Duration::from_secs(60)), simulator),
        ("nagumo viability", Some(Duration::from_secs(2)), nagumo),
        ("maximum-principle cross-check", Some(Duration::from_secs(10)), maximum_principle),
        ("report determinism", None, determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = run();
        let elapsed = t0.elapsed();
        let in_time = budget.is_none_or(|b| elapsed < b);
        let ok = out.ok && in_time;
        if !ok {
            failures += 1;
        }
        let budget = budget.map_or(String::new(), |b| format!(" < {}s", b.as_secs()));
        println!(
            "criterion {:>2} {} {name} [{:.2}s{budget}] {}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
