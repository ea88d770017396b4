//! Dense symmetric operators on a truncated basis.
//!
//! [`SymOperator`] stores a symmetric matrix in the fixed coordinate basis
//! `e_1..e_n`. Everything here is built on one spectral decomposition whose
//! eigenvalues are ordered by decreasing magnitude, with a positive eigenvalue
//! placed before a negative one of the same magnitude.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Absolute+relative bound on `max|A_ij - A_ji|` accepted by [`SymOperator::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymOperator {
    entries: DMatrix<f64>,
}

impl SymOperator {
    /// Validates finiteness and symmetry, then stores `(A + A^T)/2`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOperator);
        }
        let defect = symmetry_defect(&entries);
        let tolerance = SYMMETRY_TOL * (1.0 + entries.amax());
        if defect > tolerance {
            return Err(Error::NotSymmetric { defect, tolerance });
        }
        let sym = (&entries + entries.transpose()) * 0.5;
        Ok(Self { entries: sym })
    }

    /// Symmetrizes without checking the defect. Used for matrices that are
    /// symmetric by construction up to rounding (products, FD quotients).
    pub fn symmetrized(entries: &DMatrix<f64>) -> Self {
        Self {
            entries: (entries + entries.transpose()) * 0.5,
        }
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        Self {
            entries: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut defect = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            defect = defect.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    defect
}

/// Eigenpairs with `|mu_k|` nonincreasing; columns of `eigenvectors` are the `q_k`.
#[derive(Clone, Debug)]
pub struct SpectralDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.amax()
    }

    /// Number of eigenvalues with `|mu| > rank_tol * max|mu|`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let cut = rank_tol * self.max_abs();
        self.eigenvalues.iter().filter(|m| m.abs() > cut).count()
    }

    /// `sum_k f(mu_k) q_k q_k^T` over the eigenpairs selected by `keep`.
    fn functional_calculus(&self, keep: impl Fn(f64) -> bool, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (k, &mu) in self.eigenvalues.iter().enumerate() {
            if !keep(mu) {
                continue;
            }
            let q = self.eigenvectors.column(k);
            out.ger(f(mu), &q, &q, 1.0);
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.functional_calculus(|_| true, |mu| mu)
    }
}

pub fn spectral(a: &SymOperator) -> SpectralDecomp {
    spectral_with_tol(a, DEFAULT_RANK_TOL)
}

/// Spectral decomposition with the magnitude ordering. Eigenvalues whose
/// magnitudes differ by at most `tie_tol * max|mu|` are treated as tied, and
/// inside a tie positives come first. Each eigenvector is signed so that its
/// first non-negligible coordinate is positive.
pub fn spectral_with_tol(a: &SymOperator, tie_tol: f64) -> SpectralDecomp {
    let n = a.dim();
    if n == 0 {
        return SpectralDecomp {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(a.matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .abs()
            .total_cmp(&eig.eigenvalues[i].abs())
            .then(eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]))
    });

    let max_abs = eig.eigenvalues.amax();
    let tie = tie_tol * max_abs;
    let mut start = 0;
    while start < n {
        let lead = eig.eigenvalues[order[start]].abs();
        let mut end = start + 1;
        while end < n && lead - eig.eigenvalues[order[end]].abs() <= tie {
            end += 1;
        }
        // stable: keeps the magnitude order among same-sign members
        order[start..end].sort_by_key(|&i| eig.eigenvalues[i] < 0.0);
        start = end;
    }

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[i];
        let mut q = eig.eigenvectors.column(i).into_owned();
        let norm = q.norm();
        if norm > 0.0 {
            q /= norm;
        }
        if let Some(first) = q.iter().find(|c| c.abs() > 1e-10) {
            if *first < 0.0 {
                q.neg_mut();
            }
        }
        vectors.set_column(k, &q);
    }
    SpectralDecomp {
        eigenvalues: values,
        eigenvectors: vectors,
    }
}

/// Moore-Penrose pseudoinverse of a symmetric operator.
pub fn pinv(a: &SymOperator, rank_tol: f64) -> SymOperator {
    let sd = spectral(a);
    let cut = rank_tol * sd.max_abs();
    let m = sd.functional_calculus(|mu| mu.abs() > cut && mu != 0.0, |mu| 1.0 / mu);
    SymOperator::symmetrized(&m)
}

/// Orthogonal projection onto the range, `A A^+`.
pub fn range_proj(a: &SymOperator, rank_tol: f64) -> SymOperator {
    let sd = spectral(a);
    range_proj_from(&sd, rank_tol)
}

pub fn range_proj_from(sd: &SpectralDecomp, rank_tol: f64) -> SymOperator {
    let cut = rank_tol * sd.max_abs();
    let m = sd.functional_calculus(|mu| mu.abs() > cut && mu != 0.0, |_| 1.0);
    SymOperator::symmetrized(&m)
}

/// `|A|^{1/2}`.
pub fn sqrt_abs(a: &SymOperator) -> SymOperator {
    let sd = spectral(a);
    SymOperator::symmetrized(&sd.functional_calculus(|_| true, |mu| mu.abs().sqrt()))
}

/// `|A| = (A^2)^{1/2}`.
pub fn abs(a: &SymOperator) -> SymOperator {
    let sd = spectral(a);
    SymOperator::symmetrized(&sd.functional_calculus(|_| true, f64::abs))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Norms {
    pub trace: f64,
    pub nuclear: f64,
    pub hilbert_schmidt: f64,
    pub operator: f64,
}

pub fn norms(a: &SymOperator) -> Norms {
    let sd = spectral(a);
    Norms {
        trace: a.trace(),
        nuclear: sd.eigenvalues.iter().map(|m| m.abs()).sum(),
        hilbert_schmidt: a.matrix().norm(),
        operator: if sd.dim() == 0 { 0.0 } else { sd.max_abs() },
    }
}

/// Max-abs residuals of the four Penrose identities:
/// `A X A = A`, `X A X = X`, `(A X)^T = A X`, `(X A)^T = X A`.
pub fn penrose_residuals(a: &DMatrix<f64>, x: &DMatrix<f64>) -> [f64; 4] {
    let ax = a * x;
    let xa = x * a;
    let max_abs = |m: DMatrix<f64>| if m.is_empty() { 0.0 } else { m.amax() };
    [
        max_abs(&ax * a - a),
        max_abs(&xa * x - x),
        max_abs(ax.transpose() - &ax),
        max_abs(xa.transpose() - &xa),
    ]
}
