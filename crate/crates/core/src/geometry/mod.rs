//! Closed sets and their first- and second-order variational geometry.

mod cones;
mod manifold;
mod sets;
mod variational;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linop::SymOperator;

pub use cones::{cone_cones, enumerate_generators, nnls, ConeCones, ConeGenerators, ConeSpec};
pub use manifold::{manifold_cones, ManifoldCones, ParamJacobian, ParamMap, Parametrization};
pub use sets::{Ball, CustomSet, DistanceFn, Membership, ProjectFn, DistanceExprSet, HalfSpace, Orthant, PolyhedralCone, PowerGraph, Sphere, WholeSpace};
pub use variational::{
    curvature, normal_cone_samples, prox_inequality_test, prox_normal_test, tangent_test, GeometryTolerances,
};

/// Points with `distance <= MEMBERSHIP_TOL` count as members.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Tolerance for deciding that a constraint is active at a point.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// A closed set exposed through distance and projection.
pub trait ClosedSet: Send + Sync {
    fn dim(&self) -> usize;

    /// Short tag such as `orthant` or `ball`.
    fn kind(&self) -> &'static str;

    fn distance(&self, x: &DVector<f64>) -> Result<f64>;

    /// A nearest point of the set.
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.distance(x)? <= MEMBERSHIP_TOL)
    }

    /// Unit generators of the proximal normal cone at `x`, when an exact
    /// formula is known. Interior points yield an empty list.
    fn analytic_normals(&self, _x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        None
    }

    /// Exact Bouligand tangent-cone membership, when known.
    fn analytic_tangent(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> Option<bool> {
        None
    }

    fn is_convex(&self) -> bool {
        false
    }

    /// Facet description `{x : A x >= 0}` for polyhedral cones.
    fn cone_spec(&self) -> Option<ConeSpec> {
        None
    }

    /// Boundary points obtained by projecting ambient probes drawn uniformly
    /// from the ball `B(center, radius)`. Probes already inside are skipped.
    fn boundary_samples(&self, n: usize, sampler: &SamplerConfig) -> Result<Vec<DVector<f64>>> {
        let mut rng = sampler.rng();
        let center = sampler.center_or_zero(self.dim());
        let mut out = Vec::with_capacity(n);
        for _ in 0..(50 * n.max(1)) {
            if out.len() >= n {
                break;
            }
            let z = &center + uniform_in_ball(&mut rng, self.dim()) * sampler.radius;
            if self.distance(&z)? > MEMBERSHIP_TOL {
                out.push(self.project(&z)?);
            }
        }
        Ok(out)
    }

    /// Set points near `center`: projections of uniform probes in the ball.
    fn sample_points(&self, n: usize, sampler: &SamplerConfig) -> Result<Vec<DVector<f64>>> {
        let mut rng = sampler.rng();
        let center = sampler.center_or_zero(self.dim());
        (0..n)
            .map(|_| {
                let z = &center + uniform_in_ball(&mut rng, self.dim()) * sampler.radius;
                self.project(&z)
            })
            .collect()
    }
}

/// Where and how many ambient probes are drawn.
#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub center: Option<DVector<f64>>,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            center: None,
            radius: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn center_or_zero(&self, dim: usize) -> DVector<f64> {
        self.center.clone().unwrap_or_else(|| DVector::zeros(dim))
    }
}

/// A first-order normal `u` with a second-order component `v`.
#[derive(Clone, Debug)]
pub struct NormalPair {
    pub u: DVector<f64>,
    pub v: SymOperator,
}

impl NormalPair {
    pub fn new(u: DVector<f64>, v: SymOperator) -> Result<Self> {
        if v.dim() != u.len() {
            return Err(crate::Error::DimensionMismatch {
                expected: u.len(),
                got: v.dim(),
            });
        }
        Ok(Self { u, v })
    }
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller on (0,1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub(crate) fn random_unit(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub(crate) fn uniform_in_ball(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    random_unit(rng, dim) * r
}
