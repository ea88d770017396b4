//! Randomized property suites over the operator, cone and series layers.
//!
//! Each suite draws its cases from a seeded generator and reports the number
//! of cases, the violations and the worst normalized residual. A suite can be
//! run with a deliberate perturbation as a negative control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::FdSteps;
use crate::geometry::{
    cone_cones, random_unit, standard_normal, tangent_test, ClosedSet, ConeSpec, GeometryTolerances,
    PolyhedralCone, SamplerConfig,
};
use crate::invariance::{self, InvarianceTolerances, ProjectionForm};
use crate::linop::{self, SymOperator, DEFAULT_RANK_TOL};
use crate::model::{self, ModelSpec};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteOutcome {
    pub suite: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest residual divided by its allowed tolerance; `<= 1` passes.
    pub worst_ratio: f64,
    pub worst_residual: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Running tally of `(residual, allowed)` checks.
#[derive(Default)]
struct Tally {
    cases: usize,
    failures: usize,
    worst_ratio: f64,
    worst_residual: f64,
    notes: Vec<String>,
}

impl Tally {
    fn record(&mut self, residual: f64, allowed: f64) {
        self.cases += 1;
        let ratio = if allowed > 0.0 { residual / allowed } else { f64::INFINITY };
        if !(residual <= allowed) {
            self.failures += 1;
        }
        if ratio > self.worst_ratio || ratio.is_nan() {
            self.worst_ratio = ratio;
            self.worst_residual = residual;
        }
    }

    fn flag(&mut self, ok: bool) {
        self.record(if ok { 0.0 } else { 1.0 }, 0.5);
    }

    fn finish(self, suite: &str) -> SuiteOutcome {
        SuiteOutcome {
            suite: suite.to_string(),
            cases: self.cases,
            failures: self.failures,
            worst_ratio: self.worst_ratio,
            worst_residual: self.worst_residual,
            passed: self.failures == 0 && self.cases > 0,
            notes: self.notes,
        }
    }
}

pub trait Suite: Send + Sync {
    fn name(&self) -> &'static str;
    /// With `perturb`, the suite corrupts its own computation and must fail.
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome>;
}

pub struct SuiteRegistry {
    suites: BTreeMap<&'static str, Box<dyn Suite>>,
}

impl Default for SuiteRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SuiteRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            suites: BTreeMap::new(),
        };
        r.register(Box::new(Penrose::default()));
        r.register(Box::new(PowersStormer::default()));
        r.register(Box::new(EigenLipschitz::default()));
        r.register(Box::new(ConeFormulas::default()));
        r.register(Box::new(SeriesIdentities::default()));
        r
    }

    pub fn register(&mut self, suite: Box<dyn Suite>) {
        self.suites.insert(suite.name(), suite);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.suites.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Option<&dyn Suite> {
        self.suites.get(name).map(|s| s.as_ref())
    }

    /// Runs the named suites in order; `perturb` names the suite to corrupt.
    pub fn run(&self, names: &[String], seed: u64, perturb: Option<&str>) -> Result<Vec<SuiteOutcome>> {
        if names.is_empty() {
            return Err(Error::config("suite", "no suites selected"));
        }
        names
            .iter()
            .map(|n| {
                let suite = self.get(n).ok_or_else(|| {
                    Error::config("suite", format!("unknown suite `{n}` (known: {})", self.names().join(", ")))
                })?;
                suite.run(seed, perturb == Some(n.as_str()))
            })
            .collect()
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    SamplerConfig {
        seed: seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ..Default::default()
    }
    .rng()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| standard_normal(rng))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, n).qr().q()
}

/// Symmetric PSD matrix with the given rank: `Q diag(μ) Qᵀ`, `μ_i` spread
/// over two decades at a random overall scale.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> SymOperator {
    let q = random_orthogonal(rng, n);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let mu: Vec<f64> = (0..n)
        .map(|i| if i < rank { scale * 10f64.powf(rng.random_range(-2.0..0.0)) } else { 0.0 })
        .collect();
    SymOperator::symmetrized(&(&q * DMatrix::from_diagonal(&DVector::from_vec(mu)) * q.transpose()))
}

/// Symmetric matrix with Gaussian entries.
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymOperator {
    SymOperator::symmetrized(&gaussian_matrix(rng, n, n))
}

/// Four Penrose identities for `pinv` on PSD matrices of random size and rank.
pub struct Penrose {
    pub cases: usize,
    pub max_dim: usize,
}

impl Default for Penrose {
    fn default() -> Self {
        Self { cases: 200, max_dim: 50 }
    }
}

impl Suite for Penrose {
    fn name(&self) -> &'static str {
        "penrose"
    }
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome> {
        let mut rng = rng_for(seed, 1);
        let mut t = Tally::default();
        for _ in 0..self.cases {
            let n = rng.random_range(1..=self.max_dim);
            let rank = rng.random_range(0..=n);
            let a = random_psd(&mut rng, n, rank);
            let mut x = linop::pinv(&a, DEFAULT_RANK_TOL).into_matrix();
            if perturb {
                x[(0, 0)] += 1e-6 * (1.0 + x.amax());
            }
            let allowed = 1e-9 * (1.0 + linop::norms(&a).operator);
            let worst = linop::penrose_residuals(a.matrix(), &x).into_iter().fold(0.0, f64::max);
            t.record(worst, allowed);
        }
        Ok(t.finish(self.name()))
    }
}

/// `|T^{1/2}|²_HS = Tr T` and `|T^{1/2} - S^{1/2}|²_HS <= |T - S|_1` on PSD pairs.
pub struct PowersStormer {
    pub pairs: usize,
    pub slack: f64,
}

impl Default for PowersStormer {
    fn default() -> Self {
        Self {
            pairs: 200,
            slack: 1e-10,
        }
    }
}

fn psd_pair(rng: &mut ChaCha8Rng, near: bool) -> (SymOperator, SymOperator) {
    let n = rng.random_range(1..=12);
    let rt = rng.random_range(0..=n);
    let t = random_psd(rng, n, rt);
    let s = if near {
        // a small PSD perturbation keeps the pair close
        let re = rng.random_range(0..=n);
        let e = random_psd(rng, n, re);
        let scale = 1e-3 * (1.0 + linop::norms(&t).trace) / (1.0 + linop::norms(&e).trace);
        SymOperator::symmetrized(&(t.matrix() + e.matrix() * scale))
    } else {
        let rs = rng.random_range(0..=n);
        random_psd(rng, n, rs)
    };
    (t, s)
}

impl Suite for PowersStormer {
    fn name(&self) -> &'static str {
        "powers_stormer"
    }
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome> {
        let mut rng = rng_for(seed, 2);
        let mut tally = Tally::default();
        for k in 0..self.pairs {
            let (t, s) = psd_pair(&mut rng, k % 2 == 1);
            let rt = linop::sqrt_abs(&t).into_matrix();
            let mut rs = linop::sqrt_abs(&s).into_matrix();
            if perturb {
                rs *= 1.5;
            }
            let scale = 1.0 + linop::norms(&t).trace + linop::norms(&s).trace;
            tally.record((rt.norm_squared() - t.trace()).abs(), self.slack * scale);
            let diff = SymOperator::symmetrized(&(t.matrix() - s.matrix()));
            let lhs = (rt - rs).norm_squared();
            tally.record((lhs - linop::norms(&diff).nuclear).max(0.0), self.slack * scale);
        }
        Ok(tally.finish(self.name()))
    }
}

/// `sum_j |λ_j(T) - λ_j(S)| <= |T - S|_1`. PSD pairs use the magnitude
/// ordering of [`linop::spectral`]; indefinite symmetric pairs use decreasing
/// order, the magnitude ordering being violated there.
pub struct EigenLipschitz {
    pub psd_pairs: usize,
    pub symmetric_pairs: usize,
    pub slack: f64,
}

impl Default for EigenLipschitz {
    fn default() -> Self {
        Self {
            psd_pairs: 100,
            symmetric_pairs: 100,
            slack: 1e-10,
        }
    }
}

/// `sum_j |λ_j(T) - λ_j(S)|` under the magnitude ordering.
pub fn eigenvalue_distance(t: &SymOperator, s: &SymOperator) -> f64 {
    let a = linop::spectral(t).eigenvalues;
    let b = linop::spectral(s).eigenvalues;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// `sum_j |λ_j(T) - λ_j(S)|` with both spectra in decreasing order.
pub fn eigenvalue_distance_sorted(t: &SymOperator, s: &SymOperator) -> f64 {
    let sorted = |a: &SymOperator| {
        let mut v: Vec<f64> = linop::spectral(a).eigenvalues.iter().copied().collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    };
    sorted(t).iter().zip(sorted(s)).map(|(a, b)| (a - b).abs()).sum()
}

impl Suite for EigenLipschitz {
    fn name(&self) -> &'static str {
        "eigen_lipschitz"
    }
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome> {
        let mut rng = rng_for(seed, 3);
        let mut tally = Tally::default();
        let check = |t: &SymOperator, s: &SymOperator, lhs: f64, tally: &mut Tally| -> bool {
            let nuclear = linop::norms(&SymOperator::symmetrized(&(t.matrix() - s.matrix()))).nuclear;
            let lhs = if perturb { lhs + 0.5 * nuclear + 1e-6 } else { lhs };
            let scale = 1.0 + linop::norms(t).nuclear + linop::norms(s).nuclear;
            let excess = (lhs - nuclear).max(0.0);
            tally.record(excess, self.slack * scale);
            excess <= self.slack * scale
        };
        for k in 0..self.psd_pairs {
            let (t, s) = psd_pair(&mut rng, k % 2 == 1);
            check(&t, &s, eigenvalue_distance(&t, &s), &mut tally);
        }
        let mut magnitude_violations = 0usize;
        for _ in 0..self.symmetric_pairs {
            let n = rng.random_range(1..=12);
            let t = random_symmetric(&mut rng, n);
            let s = random_symmetric(&mut rng, n);
            check(&t, &s, eigenvalue_distance_sorted(&t, &s), &mut tally);
            let nuclear = linop::norms(&SymOperator::symmetrized(&(t.matrix() - s.matrix()))).nuclear;
            let scale = 1.0 + linop::norms(&t).nuclear + linop::norms(&s).nuclear;
            if eigenvalue_distance(&t, &s) > nuclear + self.slack * scale {
                magnitude_violations += 1;
            }
        }
        tally.notes.push(format!(
            "magnitude ordering on indefinite pairs: {magnitude_violations}/{} violations (informational)",
            self.symmetric_pairs
        ));
        Ok(tally.finish(self.name()))
    }
}

/// Tangent and normal cones of random polyhedral cones: polarity, `N ⊥ x`,
/// and agreement of generator membership with the sampling tangent test.
pub struct ConeFormulas {
    pub cones: usize,
    pub directions: usize,
}

impl Default for ConeFormulas {
    fn default() -> Self {
        Self {
            cones: 30,
            directions: 100,
        }
    }
}

impl Suite for ConeFormulas {
    fn name(&self) -> &'static str {
        "cone_formulas"
    }
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome> {
        let mut rng = rng_for(seed, 4);
        let mut tally = Tally::default();
        let geo = GeometryTolerances::default();
        let mut skipped = 0usize;
        for _ in 0..self.cones {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(1..=n + 1);
            let facets = DMatrix::from_fn(m, n, |_, _| standard_normal(&mut rng));
            let cone = PolyhedralCone::new(facets.clone())?;
            let spec = ConeSpec::Facets(facets);
            // a boundary point: project a random probe
            let mut x = DVector::zeros(n);
            for _ in 0..20 {
                let z = random_unit(&mut rng, n) * 2.0;
                if cone.distance(&z)? > 0.0 {
                    x = cone.project(&z)?;
                    break;
                }
            }
            let cones = cone_cones(&spec, &x)?;
            let mut normals = cones.normal.all_generators();
            if perturb {
                for g in normals.iter_mut() {
                    *g = -g.clone();
                }
            }
            let tangents = cones.tangent.all_generators();
            for g in &normals {
                tally.record(g.dot(&x).abs(), 1e-9 * (1.0 + x.norm()));
                for tg in &tangents {
                    tally.record(g.dot(tg).max(0.0), 1e-9);
                }
            }
            for _ in 0..self.directions {
                let v = random_unit(&mut rng, n);
                let inside = cones.tangent.contains(&v, 1e-9);
                // directions within 1e-3 of the cone boundary are ambiguous for the liminf estimate
                let depth = normals
                    .iter()
                    .map(|g| -g.dot(&v))
                    .chain(std::iter::once(f64::INFINITY))
                    .fold(f64::INFINITY, f64::min);
                let outside_gap = if inside {
                    0.0
                } else {
                    (&v - cone_projection(&cones.tangent, &v)).norm()
                };
                if (inside && depth < 1e-3 && !normals.is_empty()) || (!inside && outside_gap < 1e-3) {
                    skipped += 1;
                    continue;
                }
                tally.flag(tangent_test(&cone, &x, &v, &geo)? == inside);
            }
        }
        tally.notes.push(format!("{skipped} near-boundary directions skipped"));
        Ok(tally.finish(self.name()))
    }
}

fn cone_projection(gens: &crate::geometry::ConeGenerators, v: &DVector<f64>) -> DVector<f64> {
    let all = gens.all_generators();
    if all.is_empty() {
        return DVector::zeros(v.len());
    }
    let g = DMatrix::from_columns(&all);
    let coef = crate::geometry::nnls(&g, v);
    g * coef
}

/// Trace vs direct series, projection forms, kernel symmetry and series
/// equality on `ker Σᵀ` over the built-in models.
pub struct SeriesIdentities {
    pub points_per_model: usize,
}

impl Default for SeriesIdentities {
    fn default() -> Self {
        Self { points_per_model: 20 }
    }
}

/// Models and point generators used by [`SeriesIdentities`].
pub fn series_models() -> Result<Vec<(ModelSpec, fn(&mut ChaCha8Rng) -> DVector<f64>)>> {
    fn cir_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_element(1, rng.random_range(0.05..2.0))
    }
    fn orthant_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(3, |_, _| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..2.0) })
    }
    fn plane_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))
    }
    Ok(vec![
        (model::cir(0.3, 1.0, 0.8, 1.5)?, cir_point as fn(&mut ChaCha8Rng) -> DVector<f64>),
        (
            model::orthant_diag(vec![1.0, 0.5, 2.0], vec![0.1, 0.2, 0.3], vec![1.0, 1.0, 1.0], vec![1.0, 0.5, 0.25])?,
            orthant_point,
        ),
        (model::rank_deficient(0.8)?, plane_point),
    ])
}

impl Suite for SeriesIdentities {
    fn name(&self) -> &'static str {
        "series_identities"
    }
    fn run(&self, seed: u64, perturb: bool) -> Result<SuiteOutcome> {
        let mut rng = rng_for(seed, 5);
        let mut tally = Tally::default();
        let steps = FdSteps::default();
        let tol = InvarianceTolerances::default();
        for (m, point) in series_models()? {
            for _ in 0..self.points_per_model {
                let x = point(&mut rng);
                let u = random_unit(&mut rng, m.dim());
                let trace = invariance::correction_trace(&m, &x, &u, &steps, tol.rank_tol, ProjectionForm::RangeProj)?;
                let mut direct = invariance::correction_direct_sum(&m, &x, &u, &steps, tol.rank_tol)?;
                if perturb {
                    direct += 1e-3;
                }
                tally.record((trace - direct).abs(), 1e-8 * trace.abs().max(1.0));
                let pinv_form =
                    invariance::correction_trace(&m, &x, &u, &steps, tol.rank_tol, ProjectionForm::PinvProduct)?;
                tally.record((trace - pinv_form).abs(), 1e-10 * trace.abs().max(1.0));

                // kernel symmetry: |Σᵀu|² = <u, C u>, and ker C = ker Σᵀ
                let c = m.dispersion(&x)?;
                let s = m.big_sigma(&x)?;
                let c_norm = c.matrix().norm();
                let gu = (s.transpose() * &u).norm_squared();
                tally.record((gu - u.dot(&c.apply(&u))).abs(), 1e-12 * (1.0 + c_norm));
                let sd = linop::spectral(&c);
                if sd.rank(tol.rank_tol) < m.dim() {
                    let k = sd.eigenvectors.column(m.dim() - 1).into_owned();
                    tally.record((s.transpose() * &k).norm_squared(), 1e-9 * (1.0 + c_norm));
                }

                if m.id() == "rank_deficient" {
                    let ku = model::rank_deficient_kernel(0.8, &x);
                    let eq = invariance::series_equality_check(&m, &x, &ku, &steps, &tol)?;
                    tally.flag(eq.u_in_kernel);
                    tally.record(eq.residual, 5e-5);
                }
            }
        }
        Ok(tally.finish(self.name()))
    }
}
