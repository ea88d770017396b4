//! Central finite differences on scalar, vector and matrix fields.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative step bases; the step at `x` is `base * (1 + |x|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdSteps {
    pub first: f64,
    pub second: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            first: 1e-5,
            second: 1e-4,
        }
    }
}

impl FdSteps {
    pub fn first_at(&self, x: &DVector<f64>) -> f64 {
        self.first * (1.0 + x.norm())
    }

    pub fn second_at(&self, x: &DVector<f64>) -> f64 {
        self.second * (1.0 + x.norm())
    }
}

fn finite_scalar(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {v}")))
    }
}

fn finite_matrix(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(format!("{what} has non-finite entries")))
    }
}

fn shifted(x: &DVector<f64>, i: usize, by: f64) -> DVector<f64> {
    let mut y = x.clone();
    y[i] += by;
    y
}

pub fn gradient(f: &dyn Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let d = (f(&shifted(x, i, h))? - f(&shifted(x, i, -h))?) / (2.0 * h);
        g[i] = finite_scalar(d, "gradient")?;
    }
    Ok(g)
}

pub fn hessian(f: &dyn Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let f0 = f(x)?;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = (f(&shifted(x, i, h))? - 2.0 * f0 + f(&shifted(x, i, -h))?) / (h * h);
        hess[(i, i)] = finite_scalar(d, "hessian")?;
        for j in 0..i {
            let pp = f(&shifted(&shifted(x, i, h), j, h))?;
            let pm = f(&shifted(&shifted(x, i, h), j, -h))?;
            let mp = f(&shifted(&shifted(x, i, -h), j, h))?;
            let mm = f(&shifted(&shifted(x, i, -h), j, -h))?;
            let d = finite_scalar((pp - pm - mp + mm) / (4.0 * h * h), "hessian")?;
            hess[(i, j)] = d;
            hess[(j, i)] = d;
        }
    }
    Ok(hess)
}

/// Jacobian of a vector field; column `j` is the partial along `e_j`.
pub fn jacobian(
    field: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        cols.push((field(&shifted(x, j, h))? - field(&shifted(x, j, -h))?) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    finite_matrix(DMatrix::from_fn(rows, n, |r, c| cols[c][r]), "jacobian")
}

/// Derivative of a vector field along `dir`.
pub fn directional_vector(
    field: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let d = (field(&(x + dir * h))? - field(&(x - dir * h))?) / (2.0 * h);
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::NonFinite("directional derivative has non-finite entries".into()))
    }
}

/// Derivative of a matrix field along `dir`.
pub fn directional_matrix(
    field: &dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    finite_matrix(
        (field(&(x + dir * h))? - field(&(x - dir * h))?) / (2.0 * h),
        "matrix directional derivative",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn derivatives_of_a_cubic() {
        // f = x1^2 x2 + x2^3
        let f = |x: &DVector<f64>| Ok(x[0] * x[0] * x[1] + x[1].powi(3));
        let x = v(&[0.7, -1.2]);
        let g = gradient(&f, &x, 1e-5).unwrap();
        assert!((g - v(&[2.0 * 0.7 * -1.2, 0.49 + 3.0 * 1.44])).norm() < 1e-8);
        let h = hessian(&f, &x, 1e-4).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[2.0 * -1.2, 1.4, 1.4, 6.0 * -1.2]);
        assert!((h - exact).norm() < 1e-6);
    }

    #[test]
    fn jacobian_matches_directional() {
        let field = |x: &DVector<f64>| Ok(v(&[x[0].sin() * x[1], x[0] + x[1].exp()]));
        let x = v(&[0.3, 0.1]);
        let d = v(&[0.5, -2.0]);
        let j = jacobian(&field, &x, 1e-5).unwrap();
        let dd = directional_vector(&field, &x, &d, 1e-5).unwrap();
        assert!((j * &d - dd).norm() < 1e-8);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let f = |x: &DVector<f64>| Ok(1.0 / x[0]);
        assert!(matches!(gradient(&f, &v(&[0.0]), 0.0), Err(Error::NonFinite(_))));
    }
}
