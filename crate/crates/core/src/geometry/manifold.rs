use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type ParamMap = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type ParamJacobian = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

/// A chart `φ : V -> R^n` with `V` open in `R^m` or in the half-space
/// `{y_1 >= 0}` (manifold with boundary).
#[derive(Clone)]
pub struct Parametrization {
    pub param_dim: usize,
    pub ambient_dim: usize,
    pub map: ParamMap,
    pub jacobian: Option<ParamJacobian>,
    pub with_boundary: bool,
}

impl std::fmt::Debug for Parametrization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parametrization")
            .field("param_dim", &self.param_dim)
            .field("ambient_dim", &self.ambient_dim)
            .field("with_boundary", &self.with_boundary)
            .finish()
    }
}

impl Parametrization {
    pub fn new(param_dim: usize, ambient_dim: usize, map: ParamMap) -> Self {
        Self {
            param_dim,
            ambient_dim,
            map,
            jacobian: None,
            with_boundary: false,
        }
    }

    pub fn with_jacobian(mut self, jacobian: ParamJacobian) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    pub fn with_boundary(mut self) -> Self {
        self.with_boundary = true;
        self
    }

    /// `Dφ(y)`, by central differences when no closed form was supplied.
    pub fn jacobian_at(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(j) = &self.jacobian {
            return j(y);
        }
        let h = 1e-6 * (1.0 + y.norm());
        let mut jac = DMatrix::zeros(self.ambient_dim, self.param_dim);
        for k in 0..self.param_dim {
            let mut yp = y.clone();
            let mut ym = y.clone();
            // one-sided at the boundary so the chart stays in its domain
            let (fwd, bwd) = if self.with_boundary && k == 0 && y[0] < h { (2.0 * h, 0.0) } else { (h, h) };
            yp[k] += fwd;
            ym[k] -= bwd;
            let col = if bwd == 0.0 {
                let mid = {
                    let mut m = y.clone();
                    m[k] += h;
                    (self.map)(&m)?
                };
                (mid * 4.0 - (self.map)(&yp)? - (self.map)(y)? * 3.0) / (2.0 * h)
            } else {
                ((self.map)(&yp)? - (self.map)(&ym)?) / (fwd + bwd)
            };
            jac.set_column(k, &col);
        }
        Ok(jac)
    }
}

/// First-order cones of a parametrized manifold at `x = φ(y)`.
#[derive(Clone, Debug)]
pub struct ManifoldCones {
    pub point: DVector<f64>,
    /// Orthonormal basis of `T_x M`, one column per direction.
    pub tangent_basis: DMatrix<f64>,
    /// Orthonormal basis of `(T_x M)^⊥`.
    pub normal_space_basis: DMatrix<f64>,
    /// Unit outward normal `n_x` at boundary points.
    pub outward_normal: Option<DVector<f64>>,
    /// `<n_x, Dφ(y) e_1>`, negative at boundary points.
    pub kappa: Option<f64>,
}

impl ManifoldCones {
    pub fn at_boundary(&self) -> bool {
        self.outward_normal.is_some()
    }

    /// Generators of `𝒩 = (T_x M)^⊥ ⊕ lin⁺{n_x}`: both signs of each
    /// normal-space basis vector, then `n_x`.
    pub fn normal_generators(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        for c in self.normal_space_basis.column_iter() {
            out.push(c.into_owned());
            out.push(-c.into_owned());
        }
        if let Some(n) = &self.outward_normal {
            out.push(n.clone());
        }
        out
    }

    /// Membership in `T_x M`, or in `(T_x M)_+` at boundary points.
    pub fn tangent_contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        let off = (self.normal_space_basis.transpose() * v).norm();
        if off > tol * (1.0 + v.norm()) {
            return false;
        }
        match &self.outward_normal {
            Some(n) => n.dot(v) <= tol * (1.0 + v.norm()),
            None => true,
        }
    }

    pub fn normal_contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        let along = self.tangent_basis.transpose() * u;
        match &self.outward_normal {
            None => along.norm() <= tol * (1.0 + u.norm()),
            Some(n) => {
                let coef = n.dot(u);
                let rest = u - n * coef - &self.normal_space_basis * (self.normal_space_basis.transpose() * u);
                coef >= -tol * (1.0 + u.norm()) && rest.norm() <= tol * (1.0 + u.norm())
            }
        }
    }
}

const RANK_TOL: f64 = 1e-8;

pub fn manifold_cones(param: &Parametrization, y: &DVector<f64>) -> Result<ManifoldCones> {
    if y.len() != param.param_dim {
        return Err(Error::DimensionMismatch {
            expected: param.param_dim,
            got: y.len(),
        });
    }
    if param.with_boundary && y[0] < 0.0 {
        return Err(Error::InvalidArgument(format!("chart parameter y1 = {} lies outside the half-space", y[0])));
    }
    let point = (param.map)(y)?;
    let jac = param.jacobian_at(y)?;
    let (n, m) = (param.ambient_dim, param.param_dim);
    if jac.nrows() != n || jac.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: jac.nrows() * jac.ncols(),
        });
    }

    // full orthonormal frame of R^n whose first m columns span range(Dφ)
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, m)).copy_from(&jac);
    let svd = padded.svd(true, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax.max(1.0)).count();
    if rank < m || smax == 0.0 {
        return Err(Error::RankDeficient { rank, expected: m });
    }
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let tangent_basis = DMatrix::from_fn(n, m, |r, c| u[(r, order[c])]);
    let normal_space_basis = DMatrix::from_fn(n, n - m, |r, c| u[(r, order[m + c])]);

    let (outward_normal, kappa) = if param.with_boundary && y[0] == 0.0 {
        let first = jac.column(0).into_owned();
        let mut w = first.clone();
        if m > 1 {
            let rest = jac.columns(1, m - 1).into_owned();
            let q = rest.svd(true, false).u.expect("requested U");
            let q = q.columns(0, m - 1);
            w -= &q * (q.transpose() * &first);
        }
        let nx = -w.normalize();
        let kappa = nx.dot(&first);
        (Some(nx), Some(kappa))
    } else {
        (None, None)
    };

    Ok(ManifoldCones {
        point,
        tangent_basis,
        normal_space_basis,
        outward_normal,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn circle() -> Parametrization {
        Parametrization::new(1, 2, Arc::new(|y: &DVector<f64>| Ok(v(&[y[0].cos(), y[0].sin()]))))
    }

    #[test]
    fn circle_at_one_zero() {
        let c = manifold_cones(&circle(), &v(&[0.0])).unwrap();
        assert!((c.tangent_basis.column(0).abs() - v(&[0.0, 1.0])).norm() < 1e-9);
        let gens = c.normal_generators();
        assert_eq!(gens.len(), 2);
        assert!(gens.iter().any(|g| (g - v(&[1.0, 0.0])).norm() < 1e-9));
        assert!(gens.iter().any(|g| (g - v(&[-1.0, 0.0])).norm() < 1e-9));
        assert!(!c.at_boundary());
    }

    #[test]
    fn half_circle_boundary_normal_points_outward() {
        let p = circle().with_boundary();
        let c = manifold_cones(&p, &v(&[0.0])).unwrap();
        let n = c.outward_normal.clone().unwrap();
        assert!((n - v(&[0.0, -1.0])).norm() < 1e-8);
        assert!(c.kappa.unwrap() < 0.0);
        assert!(c.normal_contains(&v(&[3.0, -1.0]), 1e-8));
        assert!(c.normal_contains(&v(&[-3.0, -1.0]), 1e-8));
        assert!(!c.normal_contains(&v(&[0.0, 1.0]), 1e-8));
        assert!(c.tangent_contains(&v(&[0.0, 1.0]), 1e-8));
        assert!(!c.tangent_contains(&v(&[0.0, -1.0]), 1e-8));
        // interior parameter: no boundary normal
        assert!(!manifold_cones(&p, &v(&[1.0])).unwrap().at_boundary());
    }

    #[test]
    fn segment_in_space() {
        let seg = Parametrization::new(1, 3, Arc::new(|y: &DVector<f64>| Ok(v(&[y[0], 2.0 * y[0], -y[0]]))));
        let c = manifold_cones(&seg, &v(&[0.3])).unwrap();
        assert_eq!(c.normal_space_basis.ncols(), 2);
        let dir = v(&[1.0, 2.0, -1.0]);
        assert!((c.normal_space_basis.transpose() * &dir).norm() < 1e-8);
        assert!(c.normal_contains(&v(&[2.0, -1.0, 0.0]), 1e-8));
        assert!(!c.normal_contains(&dir, 1e-8));
    }

    #[test]
    fn degenerate_chart_is_rejected() {
        let cusp = Parametrization::new(1, 2, Arc::new(|y: &DVector<f64>| Ok(v(&[y[0].powi(3), y[0].powi(2)]))));
        assert!(matches!(manifold_cones(&cusp, &v(&[0.0])), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn closed_form_jacobian_matches_differences() {
        let with = circle().with_jacobian(Arc::new(|y: &DVector<f64>| {
            Ok(DMatrix::from_column_slice(2, 1, &[-y[0].sin(), y[0].cos()]))
        }));
        for t in [0.0, 0.7, 2.5] {
            let a = circle().jacobian_at(&v(&[t])).unwrap();
            let b = with.jacobian_at(&v(&[t])).unwrap();
            assert!((a - b).norm() < 1e-8);
        }
        let p = circle().with_boundary();
        let one_sided = p.jacobian_at(&v(&[0.0])).unwrap();
        assert!((one_sided - DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() < 1e-8);
    }
}
