//! Polyhedral cone algebra: nonnegative least squares, generator enumeration,
//! and tangent/normal cones of finitely generated convex cones.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const CONE_TOL: f64 = 1e-9;

/// Lawson-Hanson nonnegative least squares: `argmin ||A l - b||` over `l >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut x = DVector::zeros(m);
    if m == 0 {
        return x;
    }
    let tol = 1e-12 * (1.0 + a.amax()) * (1.0 + b.amax());
    let mut passive = vec![false; m];
    let max_outer = 3 * m + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..m)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..(3 * m + 10) {
            let s = solve_on(a, b, &passive);
            if (0..m).all(|i| !passive[i] || s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..m {
                if passive[i] && s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            x += (s - &x) * alpha;
            for i in 0..m {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

fn solve_on(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = a.select_columns(&idx);
    let svd = sub.svd(true, true);
    let sol = svd.solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(idx.len()));
    let mut full = DVector::zeros(passive.len());
    for (k, &i) in idx.iter().enumerate() {
        full[i] = sol[k];
    }
    full
}

/// Orthonormal basis (columns) of `{y : M y = 0}` for an `m x n` matrix.
fn null_space(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if m.nrows() == 0 || m.amax() == 0.0 {
        return DMatrix::identity(n, n);
    }
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax.max(1e-300);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| svd.singular_values[k] <= cut)
        .map(|k| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn stack_rows(blocks: &[&DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, n);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.view_mut((r, 0), (b.nrows(), n)).copy_from(b);
            r += b.nrows();
        }
    }
    out
}

fn rows_of(vs: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(vs.len(), n);
    for (i, v) in vs.iter().enumerate() {
        m.set_row(i, &v.transpose());
    }
    m
}

/// A polyhedral cone written as `lin(lineality) + cone(rays)`.
#[derive(Clone, Debug, Default)]
pub struct ConeGenerators {
    /// Orthonormal basis of the largest subspace contained in the cone.
    pub lineality: Vec<DVector<f64>>,
    /// Unit extreme rays of the pointed part.
    pub rays: Vec<DVector<f64>>,
}

impl ConeGenerators {
    /// Lineality vectors in both signs followed by the rays.
    pub fn all_generators(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        for l in &self.lineality {
            out.push(l.clone());
            out.push(-l);
        }
        out.extend(self.rays.iter().cloned());
        out
    }

    pub fn is_trivial(&self) -> bool {
        self.lineality.is_empty() && self.rays.is_empty()
    }

    /// Membership via nonnegative least squares over all generators.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        let gens = self.all_generators();
        if gens.is_empty() {
            return v.norm() <= tol;
        }
        let a = DMatrix::from_columns(&gens);
        let coef = nnls(&a, v);
        (a * coef - v).norm() <= tol * (1.0 + v.norm())
    }
}

/// Generators of `{y : B y <= 0, E y = 0}` (rows of `ineq` and `eq`).
///
/// Extreme rays of the pointed part are found by brute force over subsets of
/// `f - 1` inequality rows, where `f` is the dimension of the pointed part's
/// ambient subspace. Intended for small cones.
pub fn enumerate_generators(ineq: &DMatrix<f64>, eq: &DMatrix<f64>, n: usize) -> ConeGenerators {
    let all = stack_rows(&[ineq, eq], n);
    let lin = null_space(&all, n);
    let lineality: Vec<DVector<f64>> = lin.column_iter().map(|c| c.into_owned()).collect();

    let lin_t = lin.transpose();
    let span_f = null_space(&stack_rows(&[eq, &lin_t], n), n);
    let f = span_f.ncols();
    let mut rays: Vec<DVector<f64>> = Vec::new();
    if f == 0 {
        return ConeGenerators { lineality, rays };
    }
    let bu = ineq * &span_f;
    let m = bu.nrows();
    let feasible = |y: &DVector<f64>| (ineq * y).iter().all(|&v| v <= CONE_TOL);
    let push = |y: DVector<f64>, rays: &mut Vec<DVector<f64>>| {
        if !rays.iter().any(|r| (r - &y).norm() < 1e-7) {
            rays.push(y);
        }
    };
    for subset in Combinations::new(m, f - 1) {
        let rows = bu.select_rows(&subset);
        let z = null_space(&rows, f);
        if z.ncols() != 1 {
            continue;
        }
        let y = &span_f * z.column(0);
        let norm = y.norm();
        if norm < 1e-12 {
            continue;
        }
        let y = y / norm;
        if feasible(&y) {
            push(y.clone(), &mut rays);
        }
        let neg = -y;
        if feasible(&neg) {
            push(neg, &mut rays);
        }
    }
    ConeGenerators { lineality, rays }
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in (i + 1)..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// A finitely generated closed convex cone.
#[derive(Clone, Debug)]
pub enum ConeSpec {
    /// `{x : <a_i, x> >= 0}` with the `a_i` as rows.
    Facets(DMatrix<f64>),
    /// `cone{g_j}` with the `g_j` as rows.
    Generators(DMatrix<f64>),
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        match self {
            ConeSpec::Facets(a) | ConeSpec::Generators(a) => a.ncols(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConeCones {
    pub tangent: ConeGenerators,
    pub normal: ConeGenerators,
}

/// Tangent cone `D + lin{x}` and normal cone `D° ∩ {x}^⊥` of a polyhedral cone.
pub fn cone_cones(spec: &ConeSpec, x: &DVector<f64>) -> Result<ConeCones> {
    let n = spec.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let scale = 1.0 + x.norm();
    match spec {
        ConeSpec::Facets(a) => {
            let vals = a * x;
            let worst = vals
                .iter()
                .zip(a.row_iter())
                .map(|(v, row)| -v / row.norm().max(1e-300))
                .fold(0.0_f64, f64::max);
            if worst > CONE_TOL * scale {
                return Err(Error::NotInSet { distance: worst });
            }
            let active: Vec<usize> = (0..a.nrows())
                .filter(|&i| vals[i] <= CONE_TOL * scale * a.row(i).norm())
                .collect();
            let tangent = enumerate_generators(&(-a.select_rows(&active)), &DMatrix::zeros(0, n), n);
            let normal = polar(&tangent, n);
            Ok(ConeCones { tangent, normal })
        }
        ConeSpec::Generators(g) => {
            let coef = nnls(&g.transpose(), x);
            let resid = (g.transpose() * coef - x).norm();
            if resid > CONE_TOL * scale {
                return Err(Error::NotInSet { distance: resid });
            }
            let eq = if x.norm() > 0.0 {
                rows_of(&[x.clone()], n)
            } else {
                DMatrix::zeros(0, n)
            };
            let normal = enumerate_generators(g, &eq, n);
            let tangent = polar(&normal, n);
            Ok(ConeCones { tangent, normal })
        }
    }
}

/// Polar `{y : <y, g> <= 0 for all generators g}` of a generated cone.
fn polar(cone: &ConeGenerators, n: usize) -> ConeGenerators {
    let ineq = rows_of(&cone.rays, n);
    let eq = rows_of(&cone.lineality, n);
    enumerate_generators(&ineq, &eq, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn nnls_simple() {
        let a = DMatrix::identity(2, 2);
        let l = nnls(&a, &v(&[1.0, -2.0]));
        assert!((l - v(&[1.0, 0.0])).norm() < 1e-12);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let l = nnls(&a, &v(&[2.0, 1.0]));
        assert!((l - v(&[1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn orthant_at_origin() {
        let c = cone_cones(&ConeSpec::Facets(DMatrix::identity(2, 2)), &v(&[0.0, 0.0])).unwrap();
        assert!(c.normal.lineality.is_empty());
        assert_eq!(c.normal.rays.len(), 2);
        assert!(c.normal.contains(&v(&[-1.0, 0.0]), 1e-9));
        assert!(c.normal.contains(&v(&[0.0, -1.0]), 1e-9));
        assert!(!c.normal.contains(&v(&[1.0, 0.0]), 1e-9));
    }

    #[test]
    fn orthant_on_face() {
        let c = cone_cones(&ConeSpec::Facets(DMatrix::identity(2, 2)), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(c.normal.rays.len(), 1);
        assert!(c.normal.lineality.is_empty());
        assert!((&c.normal.rays[0] - v(&[0.0, -1.0])).norm() < 1e-12);
        assert_eq!(c.tangent.lineality.len(), 1);
        assert!(c.tangent.lineality[0][0].abs() > 1.0 - 1e-12);
        assert_eq!(c.tangent.rays.len(), 1);
        assert!((&c.tangent.rays[0] - v(&[0.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn outside_point_rejected() {
        let err = cone_cones(&ConeSpec::Facets(DMatrix::identity(2, 2)), &v(&[-1.0, 0.0]));
        assert!(matches!(err, Err(Error::NotInSet { .. })));
        let err = cone_cones(&ConeSpec::Generators(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])), &v(&[1.0, 0.0]));
        assert!(matches!(err, Err(Error::NotInSet { .. })));
    }

    #[test]
    fn half_line_interior_point_polar_matches_grid() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let x = v(&[2.0, 4.0]);
        let c = cone_cones(&ConeSpec::Generators(g.clone()), &x).unwrap();
        // brute force: y is normal iff <g, y> <= 0 and <x, y> = 0
        for i in -20..=20 {
            for j in -20..=20 {
                let y = v(&[i as f64 / 10.0, j as f64 / 10.0]);
                let gy = 1.0 * y[0] + 2.0 * y[1];
                let xy = x.dot(&y);
                let expected = gy <= 1e-12 && xy.abs() <= 1e-12;
                assert_eq!(c.normal.contains(&y, 1e-9), expected, "{y:?}");
            }
        }
        assert_eq!(c.normal.lineality.len(), 1);
        assert_eq!(c.tangent.lineality.len(), 1);
        assert!(c.tangent.rays.is_empty());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(Combinations::new(5, 2).count(), 10);
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }
}
