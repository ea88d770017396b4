use nalgebra::DVector;

use super::{random_unit, ClosedSet, SamplerConfig, MEMBERSHIP_TOL};
use crate::error::{Error, Result};

/// Thresholds for the sampling-based variational tests.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryTolerances {
    pub prox_tol: f64,
    pub ineq_tol: f64,
    pub tangent_tol: f64,
    pub t0: f64,
    pub imax: u32,
}

impl Default for GeometryTolerances {
    fn default() -> Self {
        Self {
            prox_tol: 1e-7,
            ineq_tol: 1e-7,
            tangent_tol: 1e-4,
            t0: 1e-2,
            imax: 20,
        }
    }
}

fn require_member(set: &dyn ClosedSet, x: &DVector<f64>) -> Result<()> {
    let d = set.distance(x)?;
    if d > MEMBERSHIP_TOL {
        return Err(Error::NotInSet { distance: d });
    }
    Ok(())
}

/// `u` is a proximal normal at `x` with scale `t` iff `x` stays a nearest
/// point of `x + t u`, i.e. `d(x + t u) = t |u|`.
pub fn prox_normal_test(
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    tol: &GeometryTolerances,
) -> Result<bool> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("prox scale must be positive, got {t}")));
    }
    require_member(set, x)?;
    let step = u * t;
    let d = set.distance(&(x + &step))?;
    let r = step.norm();
    Ok((d - r).abs() <= tol.prox_tol * (1.0 + r))
}

/// Checks `<u, y - x> <= |y - x|^2 / (2t)` over set points `y` sampled in
/// the ball of the given radius around `x`.
pub fn prox_inequality_test(
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    radius: f64,
    n_samples: usize,
    seed: u64,
    tol: &GeometryTolerances,
) -> Result<bool> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("prox scale must be positive, got {t}")));
    }
    require_member(set, x)?;
    let sampler = SamplerConfig {
        center: Some(x.clone()),
        radius,
        seed,
    };
    let points: Vec<_> = set
        .sample_points(n_samples, &sampler)?
        .into_iter()
        .filter(|y| (y - x).norm() <= radius)
        .collect();
    if points.is_empty() {
        return Err(Error::NoSamples { radius });
    }
    Ok(points.iter().all(|y| {
        let d = y - x;
        u.dot(&d) <= d.norm_squared() / (2.0 * t) + tol.ineq_tol
    }))
}

/// Up to `k` unit proximal normals at `x`. Exact for sets with an analytic
/// normal cone; otherwise candidates `(z - P z)/|z - P z|` from probes `z`
/// near `x`, each kept only if it passes [`prox_normal_test`].
pub fn normal_cone_samples(
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    k: usize,
    seed: u64,
    tol: &GeometryTolerances,
) -> Result<Vec<DVector<f64>>> {
    require_member(set, x)?;
    if let Some(normals) = set.analytic_normals(x) {
        return Ok(normals
            .into_iter()
            .filter(|n| n.norm() > 0.0)
            .map(|n| n.normalize())
            .take(k)
            .collect());
    }
    let mut rng = SamplerConfig { seed, ..Default::default() }.rng();
    let r = 1e-3 * (1.0 + x.norm());
    let mut out: Vec<DVector<f64>> = Vec::new();
    for _ in 0..(20 * k.max(1)) {
        if out.len() >= k {
            break;
        }
        let z = x + random_unit(&mut rng, set.dim()) * r;
        let p = set.project(&z)?;
        let w = &z - &p;
        let n = w.norm();
        if n <= MEMBERSHIP_TOL {
            continue;
        }
        let cand = w / n;
        if out.iter().any(|o| (o - &cand).norm() < 1e-6) {
            continue;
        }
        if prox_normal_test(set, x, &cand, r, tol)? {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Bouligand tangency estimated through `min_i d(x + t_i v)/t_i` on the
/// grid `t_i = t0 2^{-i}`.
pub fn tangent_test(
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    v: &DVector<f64>,
    tol: &GeometryTolerances,
) -> Result<bool> {
    require_member(set, x)?;
    let mut running = f64::INFINITY;
    for i in 0..=tol.imax {
        let t = tol.t0 * 0.5f64.powi(i as i32);
        running = running.min(set.distance(&(x + v * t))? / t);
        if running < tol.tangent_tol {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Contingent curvature `-<u, Dτ(x) v>`.
pub fn curvature(
    tau: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let j = crate::fd::jacobian(tau, x, 1e-5 * (1.0 + x.norm()))?;
    if j.nrows() != u.len() || v.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: u.len().max(v.len()),
        });
    }
    Ok(-u.dot(&(j * v)))
}
