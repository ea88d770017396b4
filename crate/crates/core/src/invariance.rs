//! Pointwise and set-level invariance conditions for a model on a closed set.
//!
//! A point `x` on the boundary passes when every proximal normal `u` satisfies
//! the kernel condition `C(x) u = 0` and the corrected drift inequality
//!
//! ```text
//! <u, b(x)> - 1/2 Tr( D(C u)(x) P_C(x) ) <= 0,
//! ```
//!
//! where `P_C = C C⁺` is the projection onto the range of `C(x)`. The trace
//! equals the series `sum_j <u, DC^j(x) (C C⁺)^j(x)>`, which is computed
//! independently by [`correction_direct_sum`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::{self, FdSteps};
use crate::geometry::{self, ClosedSet, GeometryTolerances, NormalPair, SamplerConfig};
use crate::linop::{self, SymOperator, DEFAULT_RANK_TOL};
use crate::model::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvarianceTolerances {
    /// Kernel condition: `|C u| <= tol_eq (1 + |C|)`.
    pub tol_eq: f64,
    /// Drift inequalities: value `<= tol_ineq`.
    pub tol_ineq: f64,
    pub rank_tol: f64,
}

impl Default for InvarianceTolerances {
    fn default() -> Self {
        Self {
            tol_eq: 1e-8,
            tol_ineq: 1e-7,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub tol: InvarianceTolerances,
    pub fd: FdSteps,
    pub geometry: GeometryTolerances,
    pub normals_per_point: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            tol: InvarianceTolerances::default(),
            fd: FdSteps::default(),
            geometry: GeometryTolerances::default(),
            normals_per_point: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    /// The worse of two verdicts.
    pub fn and(self, other: Verdict) -> Verdict {
        self.max(other)
    }
}

pub fn dispersion(model: &ModelSpec, x: &DVector<f64>) -> Result<SymOperator> {
    model.dispersion(x)
}

/// `ℒφ(x) = <Dφ(x), b(x)> + 1/2 Tr(D²φ(x) C(x))`.
pub fn generator_apply(
    model: &ModelSpec,
    phi: &dyn Fn(&DVector<f64>) -> Result<f64>,
    x: &DVector<f64>,
    steps: &FdSteps,
) -> Result<f64> {
    let grad = fd::gradient(phi, x, steps.first_at(x))?;
    let hess = fd::hessian(phi, x, steps.second_at(x))?;
    let c = model.dispersion(x)?;
    Ok(grad.dot(&model.drift(x)?) + 0.5 * (hess * c.matrix()).trace())
}

/// How `C C⁺` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionForm {
    /// Spectral projection onto eigenvectors with non-negligible eigenvalues.
    RangeProj,
    /// The product `C · pinv(C)`.
    PinvProduct,
}

fn projection(c: &SymOperator, rank_tol: f64, form: ProjectionForm) -> DMatrix<f64> {
    match form {
        ProjectionForm::RangeProj => linop::range_proj(c, rank_tol).into_matrix(),
        ProjectionForm::PinvProduct => c.matrix() * linop::pinv(c, rank_tol).matrix(),
    }
}

/// `Tr(D(C u)(x) · P)`, the Jacobian of `y -> C(y) u` taken by central
/// differences in every coordinate.
pub fn correction_trace(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
    form: ProjectionForm,
) -> Result<f64> {
    let c = model.dispersion(x)?;
    let p = projection(&c, rank_tol, form);
    if p.amax() == 0.0 || u.norm() == 0.0 {
        return Ok(0.0);
    }
    let cu = |y: &DVector<f64>| Ok(model.dispersion(y)?.apply(u));
    let jac = fd::jacobian(&cu, x, steps.first_at(x))?;
    Ok((jac * p).trace())
}

/// `sum_j <u, DC^j(x)[P e_j]>` with `C^j = C e_j`, one directional
/// difference of the matrix field per mode.
pub fn correction_direct_sum(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
) -> Result<f64> {
    let c = model.dispersion(x)?;
    let p = linop::range_proj(&c, rank_tol).into_matrix();
    let field = |y: &DVector<f64>| Ok(model.dispersion(y)?.into_matrix());
    let h = steps.first_at(x);
    let mut sum = 0.0;
    for j in 0..model.dim() {
        let dir = p.column(j).into_owned();
        if dir.norm() == 0.0 {
            continue;
        }
        let dc = fd::directional_matrix(&field, x, &dir, h)?;
        sum += u.dot(&dc.column(j));
    }
    Ok(sum)
}

/// `<u, b(x)> - 1/2 Tr(D(C u)(x) P_C(x))`.
pub fn corrected_drift_c(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
) -> Result<f64> {
    corrected_drift_c_with(model, x, u, steps, rank_tol, ProjectionForm::RangeProj)
}

pub fn corrected_drift_c_with(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
    form: ProjectionForm,
) -> Result<f64> {
    let b = model.drift(x)?;
    Ok(u.dot(&b) - 0.5 * correction_trace(model, x, u, steps, rank_tol, form)?)
}

/// Whether `Σ` is differentiable enough at `x` for the σ-form: always for
/// σ-field models, and for C-field models only where `C(x)` is invertible.
pub fn sigma_form_available(model: &ModelSpec, x: &DVector<f64>, rank_tol: f64) -> Result<bool> {
    if model.has_sigma_field() {
        return Ok(true);
    }
    let c = model.dispersion(x)?;
    Ok(linop::spectral(&c).rank(rank_tol) == model.dim() && c.matrix().amax() > 0.0)
}

/// `sum_j <u, Dσ^j(x) σ^j(x)>`, or `None` when the σ-form is unavailable.
pub fn correction_sigma(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
) -> Result<Option<f64>> {
    if !sigma_form_available(model, x, rank_tol)? {
        return Ok(None);
    }
    let s = model.big_sigma(x)?;
    let h = steps.first_at(x);
    let mut sum = 0.0;
    for j in 0..model.dim() {
        let col = s.column(j).into_owned();
        if col.norm() == 0.0 {
            continue;
        }
        let field = |y: &DVector<f64>| model.sigma_column(y, j);
        sum += u.dot(&fd::directional_vector(&field, x, &col, h)?);
    }
    Ok(Some(sum))
}

/// `<u, b(x)> - 1/2 sum_j <u, Dσ^j(x) σ^j(x)>`.
pub fn corrected_drift_sigma(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    rank_tol: f64,
) -> Result<Option<f64>> {
    let b = model.drift(x)?;
    Ok(correction_sigma(model, x, u, steps, rank_tol)?.map(|s| u.dot(&b) - 0.5 * s))
}

/// `<u, b(x)> + 1/2 sum_j Curv(x, u)(σ^j(x), σ^j)`, the drift condition with
/// each mode used as its own tangent field.
pub fn curvature_form(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rank_tol: f64,
) -> Result<Option<f64>> {
    if !sigma_form_available(model, x, rank_tol)? {
        return Ok(None);
    }
    let s = model.big_sigma(x)?;
    let mut sum = 0.0;
    for j in 0..model.dim() {
        let col = s.column(j).into_owned();
        let field = |y: &DVector<f64>| model.sigma_column(y, j);
        sum += geometry::curvature(&field, x, u, &col)?;
    }
    Ok(Some(u.dot(&model.drift(x)?) + 0.5 * sum))
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesEquality {
    /// Trace form `Tr(D(C u) P_C)`.
    pub lhs: f64,
    /// Stratonovich form `sum_j <u, Dσ^j σ^j>`.
    pub rhs: f64,
    pub residual: f64,
    pub kernel_residual: f64,
    pub u_in_kernel: bool,
}

/// Compares both correction series at `(x, u)`. Equality is expected only
/// for `u` in `ker Σ(x)ᵀ`; elsewhere both values are reported as is.
pub fn series_equality_check(
    model: &ModelSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    steps: &FdSteps,
    tol: &InvarianceTolerances,
) -> Result<SeriesEquality> {
    let lhs = correction_trace(model, x, u, steps, tol.rank_tol, ProjectionForm::RangeProj)?;
    let rhs = correction_sigma(model, x, u, steps, tol.rank_tol)?.ok_or_else(|| {
        Error::InvalidArgument("σ-form series unavailable: C(x) is singular and no σ field is given".into())
    })?;
    let s = model.big_sigma(x)?;
    let kernel_residual = (s.transpose() * u).norm();
    Ok(SeriesEquality {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        kernel_residual,
        u_in_kernel: kernel_residual <= tol.tol_eq * (1.0 + s.norm()) * (1.0 + u.norm()),
    })
}

/// `<u, b(x)> + 1/2 Tr(v C(x))` for a second-order normal `(u, v)`.
pub fn second_order_check(model: &ModelSpec, x: &DVector<f64>, pair: &NormalPair) -> Result<f64> {
    let c = model.dispersion(x)?;
    Ok(pair.u.dot(&model.drift(x)?) + 0.5 * (pair.v.matrix() * c.matrix()).trace())
}

#[derive(Clone, Debug)]
pub struct PmpConfig {
    pub n_samples: usize,
    pub sampler: SamplerConfig,
    pub refine_iters: usize,
    pub steps: FdSteps,
    pub tol_ineq: f64,
}

impl Default for PmpConfig {
    fn default() -> Self {
        Self {
            n_samples: 400,
            sampler: SamplerConfig {
                radius: 2.0,
                ..Default::default()
            },
            refine_iters: 200,
            steps: FdSteps::default(),
            tol_ineq: 1e-7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PmpOutcome {
    /// False when the sampled maximum of φ is negative (nothing to test).
    pub probed: bool,
    pub x_hat: Vec<f64>,
    pub phi_max: f64,
    pub generator_value: Option<f64>,
    pub violation: bool,
}

/// Approximately maximizes φ over the set by sampling and projected pattern
/// search; at a nonnegative maximum evaluates `ℒφ` there.
pub fn pmp_probe(
    model: &ModelSpec,
    set: &dyn ClosedSet,
    phi: &dyn Fn(&DVector<f64>) -> Result<f64>,
    cfg: &PmpConfig,
) -> Result<PmpOutcome> {
    let mut candidates = set.sample_points(cfg.n_samples, &cfg.sampler)?;
    candidates.extend(set.boundary_samples(cfg.n_samples / 4, &cfg.sampler)?);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for y in candidates {
        let v = phi(&y)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((y, v));
        }
    }
    let (mut x, mut fx) = best.ok_or(Error::NoSamples {
        radius: cfg.sampler.radius,
    })?;

    let mut step = cfg.sampler.radius / 10.0;
    for _ in 0..cfg.refine_iters {
        if step < 1e-12 {
            break;
        }
        let mut improved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut z = x.clone();
                z[i] += sign * step;
                let z = set.project(&z)?;
                let fz = phi(&z)?;
                if fz > fx {
                    x = z;
                    fx = fz;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    if fx < 0.0 {
        return Ok(PmpOutcome {
            probed: false,
            x_hat: x.iter().copied().collect(),
            phi_max: fx,
            generator_value: None,
            violation: false,
        });
    }
    let lphi = generator_apply(model, phi, &x, &cfg.steps)?;
    Ok(PmpOutcome {
        probed: true,
        x_hat: x.iter().copied().collect(),
        phi_max: fx,
        generator_value: Some(lphi),
        violation: lphi > cfg.tol_ineq,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PmpBattery {
    pub outcomes: Vec<PmpOutcome>,
    pub n_probed: usize,
    pub n_violations: usize,
    /// Largest `ℒφ` among probed functions.
    pub max_generator_value: Option<f64>,
}

/// Runs [`pmp_probe`] on `n_functions` concave quadratics
/// `φ(y) = <u, y - x> - 1/2 (y - x)ᵀ M (y - x)` anchored at sampled boundary
/// points `x` with a proximal normal `u` and random `M ⪰ 0.1 I`. On convex
/// sets each `φ` attains its maximum `0` at `x`.
pub fn pmp_battery(
    model: &ModelSpec,
    set: &dyn ClosedSet,
    n_functions: usize,
    cfg: &PmpConfig,
    geometry_tol: &GeometryTolerances,
) -> Result<PmpBattery> {
    let anchors = set.boundary_samples(n_functions, &cfg.sampler)?;
    if anchors.is_empty() {
        return Err(Error::NoSamples {
            radius: cfg.sampler.radius,
        });
    }
    let n = set.dim();
    let mut rng = SamplerConfig {
        seed: cfg.sampler.seed.wrapping_add(0x5EED),
        ..Default::default()
    }
    .rng();
    let mut outcomes = Vec::with_capacity(n_functions);
    for i in 0..n_functions {
        let x = anchors[i % anchors.len()].clone();
        let g = DMatrix::from_fn(n, n, |_, _| geometry::standard_normal(&mut rng));
        let m = g.transpose() * &g / n as f64 + DMatrix::identity(n, n) * 0.1;
        let normals = geometry::normal_cone_samples(set, &x, 1, cfg.sampler.seed.wrapping_add(i as u64), geometry_tol)?;
        let Some(u) = normals.into_iter().next() else {
            continue;
        };
        let phi = move |y: &DVector<f64>| {
            let d = y - &x;
            Ok(u.dot(&d) - 0.5 * d.dot(&(&m * &d)))
        };
        let probe_cfg = PmpConfig {
            sampler: SamplerConfig {
                seed: cfg.sampler.seed.wrapping_add(1_000 + i as u64),
                ..cfg.sampler.clone()
            },
            ..cfg.clone()
        };
        outcomes.push(pmp_probe(model, set, &phi, &probe_cfg)?);
    }
    let probed: Vec<&PmpOutcome> = outcomes.iter().filter(|o| o.probed).collect();
    Ok(PmpBattery {
        n_probed: probed.len(),
        n_violations: probed.iter().filter(|o| o.violation).count(),
        max_generator_value: probed.iter().filter_map(|o| o.generator_value).reduce(f64::max),
        outcomes,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalResult {
    pub u: Vec<f64>,
    pub kernel_residual: f64,
    pub drift_c: f64,
    pub drift_sigma: Option<f64>,
    pub curvature_form: Option<f64>,
    pub pass_kernel: bool,
    pub pass_drift: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointVerdict {
    pub index: usize,
    pub x: Vec<f64>,
    pub rank: usize,
    /// Some eigenvalue of `C(x)` sits within two decades of the rank cut.
    pub rank_unstable: bool,
    /// Smallest and largest rank of `C` at the coordinate neighbours `x ± h e_i`.
    pub neighbour_ranks: [usize; 2],
    pub c_norm: f64,
    pub kernel_threshold: f64,
    pub normals: Vec<NormalResult>,
    pub verdict: Verdict,
}

fn rank_unstable(c: &SymOperator, rank_tol: f64) -> (usize, bool) {
    let sd = linop::spectral(c);
    let m = sd.max_abs();
    let lo = rank_tol * m * 1e-2;
    let hi = rank_tol * m * 1e2;
    let unstable = m > 0.0 && sd.eigenvalues.iter().any(|e| e.abs() > lo && e.abs() <= hi);
    (sd.rank(rank_tol), unstable)
}

/// Evaluates the kernel and drift conditions at `x` for each normal.
pub fn check_point(
    model: &ModelSpec,
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    normals: Option<&[DVector<f64>]>,
    opts: &CheckOptions,
) -> Result<PointVerdict> {
    check_point_indexed(model, set, x, normals, opts, 0)
}

fn check_point_indexed(
    model: &ModelSpec,
    set: &dyn ClosedSet,
    x: &DVector<f64>,
    normals: Option<&[DVector<f64>]>,
    opts: &CheckOptions,
    index: usize,
) -> Result<PointVerdict> {
    let normals = match normals {
        Some(n) => n.to_vec(),
        None => geometry::normal_cone_samples(
            set,
            x,
            opts.normals_per_point,
            opts.seed.wrapping_add(index as u64),
            &opts.geometry,
        )?,
    };
    let c = model.dispersion(x)?;
    let c_norm = linop::norms(&c).operator;
    let (rank, unstable) = rank_unstable(&c, opts.tol.rank_tol);
    let h = opts.fd.first_at(x);
    let mut neighbour_ranks = [rank, rank];
    for i in 0..x.len() {
        for sign in [1.0, -1.0] {
            let mut y = x.clone();
            y[i] += sign * h;
            let r = linop::spectral(&model.dispersion(&y)?).rank(opts.tol.rank_tol);
            neighbour_ranks[0] = neighbour_ranks[0].min(r);
            neighbour_ranks[1] = neighbour_ranks[1].max(r);
        }
    }
    let kernel_threshold = opts.tol.tol_eq * (1.0 + c_norm);

    let mut results = Vec::with_capacity(normals.len());
    for u in &normals {
        let kernel_residual = c.apply(u).norm();
        let drift_c = corrected_drift_c(model, x, u, &opts.fd, opts.tol.rank_tol)?;
        let drift_sigma = corrected_drift_sigma(model, x, u, &opts.fd, opts.tol.rank_tol)?;
        let curv = curvature_form(model, x, u, opts.tol.rank_tol)?;
        results.push(NormalResult {
            u: u.iter().copied().collect(),
            kernel_residual,
            drift_c,
            drift_sigma,
            curvature_form: curv,
            pass_kernel: kernel_residual <= kernel_threshold,
            pass_drift: drift_c <= opts.tol.tol_ineq,
        });
    }
    let all_pass = results.iter().all(|r| r.pass_kernel && r.pass_drift);
    let verdict = if unstable {
        Verdict::Inconclusive
    } else if all_pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(PointVerdict {
        index,
        x: x.iter().copied().collect(),
        rank,
        rank_unstable: unstable,
        neighbour_ranks,
        c_norm,
        kernel_threshold,
        normals: results,
        verdict,
    })
}

#[derive(Clone, Debug)]
pub struct CheckSetConfig {
    pub n_points: usize,
    pub sampler: SamplerConfig,
    /// Points checked in addition to the sampled boundary.
    pub extra_points: Vec<DVector<f64>>,
    pub options: CheckOptions,
}

impl Default for CheckSetConfig {
    fn default() -> Self {
        Self {
            n_points: 50,
            sampler: SamplerConfig {
                radius: 2.0,
                ..Default::default()
            },
            extra_points: Vec::new(),
            options: CheckOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckDiagnostics {
    pub fd_steps: FdSteps,
    pub tolerances: InvarianceTolerances,
    /// Largest share of `|Σ(x)|²_HS` carried by the last mode.
    pub tail_fraction: f64,
    pub rank_profile: Vec<usize>,
    pub rank_unstable_points: Vec<usize>,
    pub max_sigma_symmetry_defect: f64,
    pub min_sigma_eigenvalue: f64,
    pub positive_part_diffusion: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub model: String,
    pub set: String,
    pub points: Vec<PointVerdict>,
    pub offending_points: Vec<usize>,
    pub verdict: Verdict,
    pub diagnostics: CheckDiagnostics,
}

/// Runs [`check_point`] on sampled boundary points and aggregates.
pub fn check_set(model: &ModelSpec, set: &dyn ClosedSet, cfg: &CheckSetConfig) -> Result<CheckReport> {
    if set.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: set.dim(),
        });
    }
    let mut points = cfg.extra_points.clone();
    points.extend(set.boundary_samples(cfg.n_points, &cfg.sampler)?);
    let mut warnings = Vec::new();
    if points.is_empty() {
        warnings.push("no boundary points sampled; verdict is vacuous".to_string());
    }

    let verdicts: Vec<PointVerdict> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| check_point_indexed(model, set, x, None, &cfg.options, i))
        .collect::<Result<_>>()?;

    let mut tail_fraction: f64 = 0.0;
    let mut defect: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for x in &points {
        let s = model.big_sigma(x)?;
        let hs = s.norm_squared();
        if hs > 0.0 {
            tail_fraction = tail_fraction.max(s.column(model.dim() - 1).norm_squared() / hs);
        }
        let audit = crate::model::sigma_audit(model, x)?;
        defect = defect.max(audit.symmetry_defect);
        min_eig = min_eig.min(audit.min_eigenvalue);
    }
    if model.uses_positive_part() {
        warnings.push("diffusion evaluated at the positive part of the state".to_string());
    }

    let verdict = verdicts.iter().fold(Verdict::Pass, |acc, v| acc.and(v.verdict));
    Ok(CheckReport {
        model: model.id().to_string(),
        set: set.kind().to_string(),
        offending_points: verdicts.iter().filter(|v| v.verdict == Verdict::Fail).map(|v| v.index).collect(),
        diagnostics: CheckDiagnostics {
            fd_steps: cfg.options.fd,
            tolerances: cfg.options.tol,
            tail_fraction,
            rank_profile: verdicts.iter().map(|v| v.rank).collect(),
            rank_unstable_points: verdicts.iter().filter(|v| v.rank_unstable).map(|v| v.index).collect(),
            max_sigma_symmetry_defect: defect,
            min_sigma_eigenvalue: if min_eig.is_finite() { min_eig } else { 0.0 },
            positive_part_diffusion: model.uses_positive_part(),
            warnings,
        },
        points: verdicts,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Orthant, WholeSpace};
    use crate::model::{cir, constant, expression_model, orthant_diag, rank_deficient, rank_deficient_kernel};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn steps() -> FdSteps {
        FdSteps::default()
    }

    /// `dX = σ(X) dW` with `σ(x) = x`, `Q = 1`.
    fn linear_scalar() -> ModelSpec {
        expression_model(vec![1.0], &["0".into()], Some(&[vec!["x1".into()]]), None).unwrap()
    }

    #[test]
    fn pmp_battery_on_the_half_line() {
        let cfg = PmpConfig::default();
        let geo = GeometryTolerances::default();
        let ok = pmp_battery(&cir(0.3, 1.0, 1.0, 1.0).unwrap(), &Orthant { dim: 1 }, 20, &cfg, &geo).unwrap();
        assert_eq!(ok.n_probed, 20);
        assert_eq!(ok.n_violations, 0);
        assert!(ok.max_generator_value.unwrap() <= 1e-7);
        let bad = pmp_battery(&cir(-0.5, 1.0, 1.0, 1.0).unwrap(), &Orthant { dim: 1 }, 20, &cfg, &geo).unwrap();
        assert_eq!(bad.n_violations, 20);
    }

    #[test]
    fn corrected_drift_c_examples() {
        let m = cir(0.7, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(corrected_drift_c(&m, &v(&[0.0]), &v(&[-1.0]), &steps(), 1e-10).unwrap(), -0.7);
        let m = linear_scalar();
        let d = corrected_drift_c(&m, &v(&[1.0]), &v(&[1.0]), &steps(), 1e-10).unwrap();
        assert!((d + 1.0).abs() < 1e-9, "{d}");
        assert_eq!(corrected_drift_c(&m, &v(&[1.0]), &v(&[0.0]), &steps(), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn corrected_drift_sigma_examples() {
        let m = linear_scalar();
        let d = corrected_drift_sigma(&m, &v(&[1.0]), &v(&[1.0]), &steps(), 1e-10).unwrap().unwrap();
        assert!((d + 0.5).abs() < 1e-9);
        let m = cir(0.4, 1.0, 1.0, 1.0).unwrap();
        let d = corrected_drift_sigma(&m, &v(&[0.0]), &v(&[2.0]), &steps(), 1e-10).unwrap().unwrap();
        assert_eq!(d, 0.8);
        assert_eq!(corrected_drift_sigma(&m, &v(&[0.3]), &v(&[0.0]), &steps(), 1e-10).unwrap(), Some(0.0));
    }

    #[test]
    fn series_examples() {
        let tol = InvarianceTolerances::default();
        let m = linear_scalar();
        let s = series_equality_check(&m, &v(&[0.0]), &v(&[1.0]), &steps(), &tol).unwrap();
        assert_eq!((s.lhs, s.rhs), (0.0, 0.0));
        assert!(s.u_in_kernel);
        let s = series_equality_check(&m, &v(&[1.0]), &v(&[1.0]), &steps(), &tol).unwrap();
        assert!(!s.u_in_kernel);
        assert!((s.lhs - 2.0).abs() < 1e-8 && (s.rhs - 1.0).abs() < 1e-8);

        let m = rank_deficient(0.0).unwrap();
        let x = v(&[0.4, 0.0]);
        let s = series_equality_check(&m, &x, &v(&[0.0, 1.0]), &steps(), &tol).unwrap();
        assert!(s.u_in_kernel && s.residual <= 5e-5);
    }

    #[test]
    fn twisted_kernel_series_match_hand_value() {
        // both series equal s(x)^2 θ'(x)·w(x) = s² twist cos θ on the kernel
        let twist = 0.8;
        let m = rank_deficient(twist).unwrap();
        let tol = InvarianceTolerances::default();
        for x1 in [-0.7, 0.0, 0.5] {
            let x = v(&[x1, 0.0]);
            let u = rank_deficient_kernel(twist, &x);
            let s = series_equality_check(&m, &x, &u, &steps(), &tol).unwrap();
            let sx = 1.0 + 0.5 * x1 * x1;
            let exact = sx * sx * twist * (twist * x1).cos();
            assert!(s.u_in_kernel);
            assert!((s.lhs - exact).abs() < 1e-6 && (s.rhs - exact).abs() < 1e-6, "{s:?} vs {exact}");
        }
    }

    #[test]
    fn direct_sum_agrees_with_trace() {
        let m = rank_deficient(0.8).unwrap();
        for (x, u) in [(v(&[0.3, -0.2]), v(&[0.6, 0.8])), (v(&[-1.1, 0.5]), v(&[1.0, 0.0]))] {
            let a = correction_trace(&m, &x, &u, &steps(), 1e-10, ProjectionForm::RangeProj).unwrap();
            let b = correction_direct_sum(&m, &x, &u, &steps(), 1e-10).unwrap();
            let c = correction_trace(&m, &x, &u, &steps(), 1e-10, ProjectionForm::PinvProduct).unwrap();
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn generator_examples() {
        let m = rank_deficient(0.5).unwrap();
        let x = v(&[0.3, -0.4]);
        let lin = |y: &DVector<f64>| Ok(2.0 * y[0] - y[1]);
        let b = m.drift(&x).unwrap();
        assert!((generator_apply(&m, &lin, &x, &steps()).unwrap() - (2.0 * b[0] - b[1])).abs() < 1e-9);
        let sq = |y: &DVector<f64>| Ok(y.norm_squared());
        let exact = 2.0 * x.dot(&b) + m.dispersion(&x).unwrap().trace();
        assert!((generator_apply(&m, &sq, &x, &steps()).unwrap() - exact).abs() < 1e-6);
        let c = |_: &DVector<f64>| Ok(3.0);
        assert_eq!(generator_apply(&m, &c, &x, &steps()).unwrap(), 0.0);
    }

    #[test]
    fn second_order_examples() {
        let m = cir(0.6, 1.0, 1.0, 1.0).unwrap();
        let zero = NormalPair::new(v(&[0.0]), SymOperator::zeros(1)).unwrap();
        assert_eq!(second_order_check(&m, &v(&[0.0]), &zero).unwrap(), 0.0);
        let pair = NormalPair::new(v(&[-1.0]), SymOperator::zeros(1)).unwrap();
        assert_eq!(second_order_check(&m, &v(&[0.0]), &pair).unwrap(), -0.6);
        let diag = orthant_diag(vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let x = v(&[1.0, 0.5]);
        let pair = NormalPair::new(v(&[0.0, 0.0]), SymOperator::diag(&[-1.0, -1.0])).unwrap();
        let c = diag.dispersion(&x).unwrap();
        assert!((second_order_check(&diag, &x, &pair).unwrap() + 0.5 * c.trace()).abs() < 1e-15);
    }

    #[test]
    fn pmp_examples() {
        let set = Orthant { dim: 1 };
        let cfg = PmpConfig::default();
        let m = cir(0.3, 1.0, 1.0, 1.0).unwrap();
        let neg = |_: &DVector<f64>| Ok(-1.0);
        let out = pmp_probe(&m, &set, &neg, &cfg).unwrap();
        assert!(!out.probed && !out.violation);
        let phi = |y: &DVector<f64>| Ok(-y[0]);
        let out = pmp_probe(&m, &set, &phi, &cfg).unwrap();
        assert!(out.probed && !out.violation);
        assert_eq!(out.x_hat, vec![0.0]);
        assert!((out.generator_value.unwrap() + 0.3).abs() < 1e-9);
        let bad = cir(-1.0, 0.0, 0.0, 1.0).unwrap();
        let out = pmp_probe(&bad, &set, &phi, &cfg).unwrap();
        assert!(out.violation);
        assert!((out.generator_value.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn check_point_examples() {
        let set = Orthant { dim: 1 };
        let opts = CheckOptions::default();
        let ok = check_point(&cir(0.3, 1.0, 1.0, 1.0).unwrap(), &set, &v(&[0.0]), None, &opts).unwrap();
        assert_eq!(ok.verdict, Verdict::Pass);
        assert_eq!(ok.normals[0].kernel_residual, 0.0);
        assert_eq!(ok.normals[0].drift_c, -0.3);
        let bad = check_point(&cir(-0.5, 1.0, 1.0, 1.0).unwrap(), &set, &v(&[0.0]), None, &opts).unwrap();
        assert_eq!(bad.verdict, Verdict::Fail);
        assert_eq!(bad.normals[0].drift_c, 0.5);
        let inner = check_point(&cir(-0.5, 1.0, 1.0, 1.0).unwrap(), &set, &v(&[2.0]), None, &opts).unwrap();
        assert_eq!(inner.verdict, Verdict::Pass);
        assert!(inner.normals.is_empty());
    }

    #[test]
    fn check_set_orthant_faces() {
        let set = Orthant { dim: 2 };
        let good = orthant_diag(vec![1.0, 0.5], vec![0.2, 0.1], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let report = check_set(&good, &set, &CheckSetConfig::default()).unwrap();
        assert_eq!(report.points.len(), 50);
        assert_eq!(report.verdict, Verdict::Pass);
        let bad = orthant_diag(vec![1.0, 0.5], vec![0.2, -0.1], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let report = check_set(&bad, &set, &CheckSetConfig::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert!(!report.offending_points.is_empty());
        for &i in &report.offending_points {
            assert!(report.points[i].x[1].abs() < 1e-12);
        }
    }

    #[test]
    fn whole_space_is_vacuous() {
        let m = constant(v(&[1.0]), DMatrix::identity(1, 1), vec![1.0]).unwrap();
        let report = check_set(&m, &WholeSpace { dim: 1 }, &CheckSetConfig::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        assert!(report.points.is_empty());
        assert!(!report.diagnostics.warnings.is_empty());
    }
}
