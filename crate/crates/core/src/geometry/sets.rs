use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::cones::{nnls, ConeSpec};
use super::{ClosedSet, SamplerConfig, BOUNDARY_TOL, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::expr::Expression;

fn check_dim(expected: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// The whole space; it has no boundary.
#[derive(Clone, Debug)]
pub struct WholeSpace {
    pub dim: usize,
}

impl ClosedSet for WholeSpace {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> &'static str {
        "whole_space"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x)?;
        Ok(0.0)
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x)?;
        Ok(x.clone())
    }
    fn analytic_normals(&self, _x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        Some(Vec::new())
    }
    fn analytic_tangent(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> Option<bool> {
        Some(true)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn boundary_samples(&self, _n: usize, _s: &SamplerConfig) -> Result<Vec<DVector<f64>>> {
        Ok(Vec::new())
    }
}

/// The nonnegative orthant `R^n_+`.
#[derive(Clone, Debug)]
pub struct Orthant {
    pub dim: usize,
}

impl ClosedSet for Orthant {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> &'static str {
        "orthant"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x)?;
        Ok(x.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>().sqrt())
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x)?;
        Ok(x.map(|v| v.max(0.0)))
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        Some(
            (0..self.dim)
                .filter(|&i| x[i].abs() <= BOUNDARY_TOL)
                .map(|i| -DVector::from_fn(self.dim, |r, _| if r == i { 1.0 } else { 0.0 }))
                .collect(),
        )
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        Some((0..self.dim).all(|i| x[i].abs() > BOUNDARY_TOL || v[i] >= 0.0))
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn cone_spec(&self) -> Option<ConeSpec> {
        Some(ConeSpec::Facets(DMatrix::identity(self.dim, self.dim)))
    }
}

/// `{x : <a, x> >= c}`.
#[derive(Clone, Debug)]
pub struct HalfSpace {
    a: DVector<f64>,
    c: f64,
}

impl HalfSpace {
    pub fn new(a: DVector<f64>, c: f64) -> Result<Self> {
        if a.norm() == 0.0 || !a.iter().all(|v| v.is_finite()) || !c.is_finite() {
            return Err(Error::InvalidArgument("half space needs a finite nonzero normal".into()));
        }
        Ok(Self { a, c })
    }

    fn slack(&self, x: &DVector<f64>) -> f64 {
        (self.a.dot(x) - self.c) / self.a.norm()
    }
}

impl ClosedSet for HalfSpace {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn kind(&self) -> &'static str {
        "half_space"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok((-self.slack(x)).max(0.0))
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        let s = self.slack(x);
        if s >= 0.0 {
            return Ok(x.clone());
        }
        Ok(x - &self.a * (s / self.a.norm()))
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        if self.slack(x).abs() <= BOUNDARY_TOL * (1.0 + self.c.abs()) {
            Some(vec![-&self.a / self.a.norm()])
        } else {
            Some(Vec::new())
        }
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        Some(self.slack(x) > BOUNDARY_TOL * (1.0 + self.c.abs()) || self.a.dot(v) >= 0.0)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn cone_spec(&self) -> Option<ConeSpec> {
        (self.c == 0.0).then(|| ConeSpec::Facets(DMatrix::from_row_slice(1, self.dim(), self.a.as_slice())))
    }
}

/// Closed Euclidean ball.
#[derive(Clone, Debug)]
pub struct Ball {
    center: DVector<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }
}

impl ClosedSet for Ball {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn kind(&self) -> &'static str {
        "ball"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok(((x - &self.center).norm() - self.radius).max(0.0))
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        let d = x - &self.center;
        let r = d.norm();
        if r <= self.radius {
            return Ok(x.clone());
        }
        Ok(&self.center + d * (self.radius / r))
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let d = x - &self.center;
        if (d.norm() - self.radius).abs() <= BOUNDARY_TOL * (1.0 + self.radius) {
            Some(vec![d.normalize()])
        } else {
            Some(Vec::new())
        }
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        let d = x - &self.center;
        Some((d.norm() - self.radius).abs() > BOUNDARY_TOL * (1.0 + self.radius) || d.dot(v) <= 0.0)
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// Euclidean sphere (a closed submanifold without boundary).
#[derive(Clone, Debug)]
pub struct Sphere {
    center: DVector<f64>,
    radius: f64,
}

impl Sphere {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }
}

impl ClosedSet for Sphere {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn kind(&self) -> &'static str {
        "sphere"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok(((x - &self.center).norm() - self.radius).abs())
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        let d = x - &self.center;
        let r = d.norm();
        if r == 0.0 {
            // every sphere point is nearest; pick the first axis
            let mut e = DVector::zeros(self.dim());
            e[0] = self.radius;
            return Ok(&self.center + e);
        }
        Ok(&self.center + d * (self.radius / r))
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let n = (x - &self.center).normalize();
        Some(vec![n.clone(), -n])
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        let n = (x - &self.center).normalize();
        Some(n.dot(v).abs() <= 1e-12 * (1.0 + v.norm()))
    }
}

/// Polyhedral cone `{x : A x >= 0}` given by inward facet normals (rows of `A`).
#[derive(Clone, Debug)]
pub struct PolyhedralCone {
    facets: DMatrix<f64>,
}

impl PolyhedralCone {
    pub fn new(facets: DMatrix<f64>) -> Result<Self> {
        if facets.nrows() == 0 {
            return Err(Error::InvalidArgument("polyhedral cone needs at least one facet".into()));
        }
        if facets.row_iter().any(|r| r.norm() == 0.0) {
            return Err(Error::InvalidArgument("zero facet normal".into()));
        }
        Ok(Self { facets })
    }

    fn active(&self, x: &DVector<f64>) -> Vec<usize> {
        let scale = 1.0 + x.norm();
        (0..self.facets.nrows())
            .filter(|&i| {
                let row = self.facets.row(i);
                (row * x)[0] <= BOUNDARY_TOL * scale * row.norm()
            })
            .collect()
    }
}

impl ClosedSet for PolyhedralCone {
    fn dim(&self) -> usize {
        self.facets.ncols()
    }
    fn kind(&self) -> &'static str {
        "polyhedral_cone"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((x - self.project(x)?).norm())
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        if (&self.facets * x).iter().all(|&v| v >= 0.0) {
            return Ok(x.clone());
        }
        // Moreau: x = P_K x + P_{K°} x with K° = cone{-a_i}
        let polar_gens = -self.facets.transpose();
        let coef = nnls(&polar_gens, x);
        Ok(x - polar_gens * coef)
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let spec = ConeSpec::Facets(self.facets.clone());
        super::cones::cone_cones(&spec, x).ok().map(|c| c.normal.all_generators())
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        let active = self.active(x);
        Some(active.iter().all(|&i| (self.facets.row(i) * v)[0] >= -1e-12 * (1.0 + v.norm())))
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn cone_spec(&self) -> Option<ConeSpec> {
        Some(ConeSpec::Facets(self.facets.clone()))
    }
}

/// Graph `{(s, |s|^p) : s in R}` in the plane, `p > 1`.
#[derive(Clone, Debug)]
pub struct PowerGraph {
    p: f64,
}

const GRAPH_GRID: usize = 2000;
const GRAPH_TOL: f64 = 1e-10;

impl PowerGraph {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("power graph needs p > 1, got {p}")));
        }
        Ok(Self { p })
    }

    fn height(&self, s: f64) -> f64 {
        s.abs().powf(self.p)
    }

    fn sq_dist(&self, x: &DVector<f64>, s: f64) -> f64 {
        (s - x[0]).powi(2) + (self.height(s) - x[1]).powi(2)
    }

    /// Nearest curve parameter: grid scan over the admissible bracket, then
    /// golden-section refinement around the best grid node.
    fn nearest_parameter(&self, x: &DVector<f64>) -> f64 {
        let bound = (x[1] - self.height(x[0])).abs();
        if bound == 0.0 {
            return x[0];
        }
        let lo = x[0] - bound;
        let step = 2.0 * bound / GRAPH_GRID as f64;
        let mut best = (x[0], self.sq_dist(x, x[0]));
        for k in 0..=GRAPH_GRID {
            let s = lo + step * k as f64;
            let d = self.sq_dist(x, s);
            if d < best.1 {
                best = (s, d);
            }
        }
        if lo <= 0.0 && 0.0 <= lo + 2.0 * bound {
            let d = self.sq_dist(x, 0.0);
            if d < best.1 {
                best = (0.0, d);
            }
        }
        let (mut a, mut b) = (best.0 - step, best.0 + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.sq_dist(x, c), self.sq_dist(x, d));
        while (b - a).abs() > GRAPH_TOL * 1e-2 * (1.0 + best.0.abs()) {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.sq_dist(x, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.sq_dist(x, d);
            }
        }
        let refined = 0.5 * (a + b);
        if self.sq_dist(x, refined) < best.1 {
            refined
        } else {
            best.0
        }
    }

    fn unit_normal(&self, s: f64) -> DVector<f64> {
        let slope = self.p * s.abs().powf(self.p - 1.0) * s.signum();
        DVector::from_column_slice(&[-slope, 1.0]).normalize()
    }
}

impl ClosedSet for PowerGraph {
    fn dim(&self) -> usize {
        2
    }
    fn kind(&self) -> &'static str {
        "power_graph"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(2, x)?;
        let s = self.nearest_parameter(x);
        Ok(self.sq_dist(x, s).sqrt())
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(2, x)?;
        let s = self.nearest_parameter(x);
        Ok(DVector::from_column_slice(&[s, self.height(s)]))
    }
    fn analytic_normals(&self, x: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let s = x[0];
        if s == 0.0 && self.p < 2.0 {
            // C^1 but not C^2 at the origin: only the downward normal is proximal
            return Some(vec![DVector::from_column_slice(&[0.0, -1.0])]);
        }
        let n = self.unit_normal(s);
        Some(vec![n.clone(), -n])
    }
    fn analytic_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<bool> {
        let n = self.unit_normal(x[0]);
        Some(n.dot(v).abs() <= 1e-12 * (1.0 + v.norm()))
    }
}

pub type Membership = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;
pub type DistanceFn = Arc<dyn Fn(&DVector<f64>) -> Result<f64> + Send + Sync>;
pub type ProjectFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// A user-supplied set. Without a projection callback, points are projected
/// by descending the distance function: `z <- z - d(z) grad d(z)`.
#[derive(Clone)]
pub struct CustomSet {
    dim: usize,
    membership: Membership,
    distance: DistanceFn,
    project: Option<ProjectFn>,
    convex: bool,
}

impl std::fmt::Debug for CustomSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomSet")
            .field("dim", &self.dim)
            .field("has_projection", &self.project.is_some())
            .finish()
    }
}

impl CustomSet {
    pub fn new(dim: usize, membership: Membership, distance: DistanceFn) -> Self {
        Self {
            dim,
            membership,
            distance,
            project: None,
            convex: false,
        }
    }

    pub fn with_projection(mut self, project: ProjectFn) -> Self {
        self.project = Some(project);
        self
    }

    pub fn convex(mut self, convex: bool) -> Self {
        self.convex = convex;
        self
    }
}

pub(crate) fn descent_projection(
    dim: usize,
    distance: &dyn Fn(&DVector<f64>) -> Result<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut z = x.clone();
    for _ in 0..60 {
        let d = distance(&z)?;
        if d <= MEMBERSHIP_TOL * 1e-1 {
            return Ok(z);
        }
        let h = (1e-4 * d).max(1e-10);
        let mut grad = DVector::zeros(dim);
        for i in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            grad[i] = (distance(&zp)? - distance(&zm)?) / (2.0 * h);
        }
        let gn = grad.norm();
        if !gn.is_finite() || gn < 1e-8 {
            return Err(Error::Projection(format!(
                "distance gradient vanished at distance {d:e}"
            )));
        }
        z -= grad * (d / (gn * gn));
    }
    let d = distance(&z)?;
    if d <= MEMBERSHIP_TOL {
        Ok(z)
    } else {
        Err(Error::Projection(format!("descent stalled at distance {d:e}")))
    }
}

impl ClosedSet for CustomSet {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> &'static str {
        "custom"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x)?;
        (self.distance)(x)
    }
    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok((self.membership)(x))
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x)?;
        match &self.project {
            Some(p) => p(x),
            None => descent_projection(self.dim, &*self.distance, x),
        }
    }
    fn is_convex(&self) -> bool {
        self.convex
    }
}

/// A set given by an expression for its distance function.
#[derive(Clone, Debug)]
pub struct DistanceExprSet {
    distance: Expression,
    convex: bool,
}

impl DistanceExprSet {
    pub fn new(distance: Expression, convex: bool) -> Self {
        Self { distance, convex }
    }
}

impl ClosedSet for DistanceExprSet {
    fn dim(&self) -> usize {
        self.distance.dim()
    }
    fn kind(&self) -> &'static str {
        "custom"
    }
    fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x)?;
        self.distance.eval(x.as_slice())
    }
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        descent_projection(self.dim(), &|z| self.distance.eval(z.as_slice()), x)
    }
    fn is_convex(&self) -> bool {
        self.convex
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn builtins() -> Vec<Box<dyn ClosedSet>> {
        vec![
            Box::new(Orthant { dim: 3 }),
            Box::new(HalfSpace::new(v(&[1.0, -2.0, 0.5]), 0.3).unwrap()),
            Box::new(Ball::new(v(&[0.2, 0.0, -0.1]), 0.7).unwrap()),
            Box::new(Sphere::new(v(&[0.0, 0.1, 0.0]), 0.8).unwrap()),
            Box::new(
                PolyhedralCone::new(DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -0.5, -0.3, 0.2, 1.0]))
                    .unwrap(),
            ),
        ]
    }

    #[test]
    fn distance_is_one_lipschitz_and_projection_lands_in_set() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for set in builtins() {
            for _ in 0..1000 {
                let x = super::super::uniform_in_ball(&mut rng, 3) * 2.0;
                let y = super::super::uniform_in_ball(&mut rng, 3) * 2.0;
                let (dx, dy) = (set.distance(&x).unwrap(), set.distance(&y).unwrap());
                assert!((dx - dy).abs() <= (&x - &y).norm() + 1e-9, "{}", set.kind());
                let p = set.project(&x).unwrap();
                assert!(set.distance(&p).unwrap() <= 1e-9, "{}", set.kind());
                assert!(((&x - &p).norm() - dx).abs() <= 1e-8, "{}", set.kind());
                assert_eq!(dx <= 1e-9, set.contains(&x).unwrap());
            }
        }
    }

    #[test]
    fn power_graph_distance_properties() {
        let g = PowerGraph::new(1.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = super::super::uniform_in_ball(&mut rng, 2);
            let y = super::super::uniform_in_ball(&mut rng, 2);
            let (dx, dy) = (g.distance(&x).unwrap(), g.distance(&y).unwrap());
            assert!((dx - dy).abs() <= (&x - &y).norm() + 1e-9);
            // brute-force oracle over a fine parameter grid
            let brute = (0..=60_000)
                .map(|k| -3.0 + 6.0 * k as f64 / 60_000.0)
                .map(|s| g.sq_dist(&x, s))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            assert!(dx <= brute + 1e-9 && brute - dx <= 1e-4, "{dx} vs {brute}");
        }
        assert_eq!(g.distance(&v(&[0.0, -0.1])).unwrap(), 0.1);
        assert!(g.distance(&v(&[0.5, 0.5f64.powf(1.5)])).unwrap() < 1e-12);
        assert!(PowerGraph::new(1.0).is_err());
    }

    #[test]
    fn whole_space_has_no_boundary() {
        let w = WholeSpace { dim: 2 };
        assert!(w.boundary_samples(10, &SamplerConfig::default()).unwrap().is_empty());
        assert_eq!(w.distance(&v(&[3.0, -4.0])).unwrap(), 0.0);
    }

    #[test]
    fn custom_set_descent_projection() {
        // unit disk through its distance function only
        let dist: DistanceFn = Arc::new(|x: &DVector<f64>| Ok((x.norm() - 1.0).max(0.0)));
        let member: Membership = Arc::new(|x: &DVector<f64>| x.norm() <= 1.0 + 1e-9);
        let set = CustomSet::new(2, member, dist);
        let p = set.project(&v(&[3.0, 4.0])).unwrap();
        assert!((p - v(&[0.6, 0.8])).norm() < 1e-7);
        assert!(set.contains(&v(&[0.1, 0.1])).unwrap());
    }

    #[test]
    fn custom_projection_failure_is_reported() {
        // a distance function with a flat region outside the set
        let dist: DistanceFn = Arc::new(|x: &DVector<f64>| Ok(if x[0] < 0.0 { 1.0 } else { 0.0 }));
        let member: Membership = Arc::new(|x: &DVector<f64>| x[0] >= 0.0);
        let set = CustomSet::new(1, member, dist);
        assert!(matches!(set.project(&v(&[-2.0])), Err(Error::Projection(_))));
    }

    #[test]
    fn boundary_samples_lie_on_boundary() {
        let sampler = SamplerConfig { seed: 11, ..Default::default() };
        let o = Orthant { dim: 2 };
        let pts = o.boundary_samples(50, &sampler).unwrap();
        assert_eq!(pts.len(), 50);
        for p in &pts {
            assert!(p.iter().any(|&c| c == 0.0));
            assert!(!o.analytic_normals(p).unwrap().is_empty());
        }
    }
}
