//! Truncated diffusion models `dX = b(X) dt + σ(X) dW` with `W` a Q-Wiener
//! process, `Q = diag(λ)`.
//!
//! Internally `Σ(x) = σ(x) Q^{1/2}` and `C(x) = Σ(x) Σ(x)ᵀ`. A model gives
//! either the raw `σ` field or the `C` field directly.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::linop::{self, SymOperator};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    /// Raw `σ(x)`, expressed in the eigenbasis of `Q`.
    Sigma(MatrixField),
    /// `C(x)`; `Σ` is recovered as `|C|^{1/2}`.
    Dispersion(MatrixField),
}

#[derive(Clone)]
pub struct ModelSpec {
    id: String,
    q_eigs: Vec<f64>,
    drift: VectorField,
    diffusion: Diffusion,
    positive_part: bool,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("q_eigs", &self.q_eigs)
            .field("sigma_field", &self.has_sigma_field())
            .finish()
    }
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, q_eigs: Vec<f64>, drift: VectorField, diffusion: Diffusion) -> Result<Self> {
        if q_eigs.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one dimension".into()));
        }
        if let Some(bad) = q_eigs.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidArgument(format!("Q eigenvalues must be positive, got {bad}")));
        }
        Ok(Self {
            id: id.into(),
            q_eigs,
            drift,
            diffusion,
            positive_part: false,
        })
    }

    /// Marks that the diffusion field is evaluated at the positive part of
    /// the state (full truncation for square-root models).
    pub fn with_positive_part(mut self) -> Self {
        self.positive_part = true;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.q_eigs.len()
    }

    pub fn q_eigs(&self) -> &[f64] {
        &self.q_eigs
    }

    pub fn uses_positive_part(&self) -> bool {
        self.positive_part
    }

    pub fn has_sigma_field(&self) -> bool {
        matches!(self.diffusion, Diffusion::Sigma(_))
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_matrix(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: m.nrows().max(m.ncols()),
            });
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("diffusion field of `{}`", self.id)));
        }
        Ok(())
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let b = (self.drift)(x)?;
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.len(),
            });
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("drift of `{}`", self.id)));
        }
        Ok(b)
    }

    /// Raw `σ(x)` when the model carries a σ field.
    pub fn sigma_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        match &self.diffusion {
            Diffusion::Sigma(f) => Some(self.check_point(x).and_then(|_| {
                let m = f(x)?;
                self.check_matrix(&m)?;
                Ok(m)
            })),
            Diffusion::Dispersion(_) => None,
        }
    }

    /// `Σ(x)`; for C-field models this is `|C(x)|^{1/2}`.
    pub fn big_sigma(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.diffusion {
            Diffusion::Sigma(_) => {
                let s = self.sigma_raw(x).expect("sigma model")?;
                let root: Vec<f64> = self.q_eigs.iter().map(|l| l.sqrt()).collect();
                Ok(DMatrix::from_fn(self.dim(), self.dim(), |r, c| s[(r, c)] * root[c]))
            }
            Diffusion::Dispersion(_) => Ok(linop::sqrt_abs(&self.dispersion(x)?).into_matrix()),
        }
    }

    /// `C(x) = Σ(x) Σ(x)ᵀ`, or the supplied C field.
    pub fn dispersion(&self, x: &DVector<f64>) -> Result<SymOperator> {
        match &self.diffusion {
            Diffusion::Sigma(_) => {
                let s = self.big_sigma(x)?;
                Ok(SymOperator::symmetrized(&(&s * s.transpose())))
            }
            Diffusion::Dispersion(f) => {
                self.check_point(x)?;
                let c = f(x)?;
                self.check_matrix(&c)?;
                SymOperator::new(c)
            }
        }
    }

    /// Column `j` of `Σ(x)`, the mode `σ^j(x)`.
    pub fn sigma_column(&self, x: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        Ok(self.big_sigma(x)?.column(j).into_owned())
    }
}

/// Deviation of `Σ(x)` from symmetric positive semidefinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SigmaAudit {
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
}

pub fn sigma_audit(model: &ModelSpec, x: &DVector<f64>) -> Result<SigmaAudit> {
    let s = model.big_sigma(x)?;
    let sym = SymOperator::symmetrized(&s);
    let eig = linop::spectral(&sym);
    Ok(SigmaAudit {
        symmetry_defect: linop::symmetry_defect(&s),
        min_eigenvalue: eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// Audit of `C = Σ²` for C-field models at a PSD point.
pub fn square_root_residual(model: &ModelSpec, x: &DVector<f64>) -> Result<f64> {
    let c = model.dispersion(x)?;
    let s = model.big_sigma(x)?;
    Ok((&s * &s - c.matrix()).amax())
}

/// Smallest `L` with `|b(x)| + |Σ(x)|_HS <= L (1 + |x|)` on the given points.
pub fn linear_growth_constant(model: &ModelSpec, points: &[DVector<f64>]) -> Result<f64> {
    let mut l: f64 = 0.0;
    for x in points {
        let b = model.drift(x)?.norm();
        let s = model.big_sigma(x)?.norm();
        l = l.max((b + s) / (1.0 + x.norm()));
    }
    Ok(l)
}

/// Builds a model from JSON parameters.
pub trait ModelBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, params: &Value) -> Result<ModelSpec>;
}

/// Named model builders, selected at runtime.
pub struct ModelRegistry {
    builders: BTreeMap<&'static str, Box<dyn ModelBuilder>>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(CirBuilder));
        r.register(Box::new(OuBuilder));
        r.register(Box::new(LinearSigmaBuilder));
        r.register(Box::new(OrthantDiagBuilder));
        r.register(Box::new(RankDeficientBuilder));
        r.register(Box::new(ConstantBuilder));
        r.register(Box::new(ExprBuilder));
        r
    }

    pub fn register(&mut self, builder: Box<dyn ModelBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<ModelSpec> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::config(
                "model.kind",
                format!("unknown model `{name}` (known: {})", self.names().join(", ")),
            )
        })?;
        b.build(params)
    }
}

fn parse_params<T: for<'de> Deserialize<'de>>(params: &Value) -> Result<T> {
    let v = if params.is_null() { Value::Object(Default::default()) } else { params.clone() };
    serde_json::from_value(v).map_err(|e| Error::config("model.params", e.to_string()))
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn one() -> f64 {
    1.0
}

fn lambdas(given: Option<Vec<f64>>, dim: usize) -> Result<Vec<f64>> {
    match given {
        None => Ok(ones(dim)),
        Some(l) if l.len() == dim => Ok(l),
        Some(l) => Err(Error::config(
            "model.params.lambda",
            format!("expected {dim} eigenvalues, got {}", l.len()),
        )),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CirParams {
    a: f64,
    #[serde(default = "one")]
    b: f64,
    #[serde(default = "one")]
    sigma0: f64,
    #[serde(default = "one")]
    lambda: f64,
}

/// Square-root diffusion `dX = (a - b X) dt + σ0 sqrt(X⁺) dW` on the line.
pub fn cir(a: f64, b: f64, sigma0: f64, lambda: f64) -> Result<ModelSpec> {
    let drift: VectorField = Arc::new(move |x: &DVector<f64>| Ok(DVector::from_element(1, a - b * x[0])));
    let sigma: MatrixField =
        Arc::new(move |x: &DVector<f64>| Ok(DMatrix::from_element(1, 1, sigma0 * x[0].max(0.0).sqrt())));
    Ok(ModelSpec::new("cir", vec![lambda], drift, Diffusion::Sigma(sigma))?.with_positive_part())
}

struct CirBuilder;

impl ModelBuilder for CirBuilder {
    fn name(&self) -> &'static str {
        "cir"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: CirParams = parse_params(params)?;
        cir(p.a, p.b, p.sigma0, p.lambda)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OuParams {
    theta: f64,
    mu: f64,
    sigma0: f64,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
}

/// Ornstein-Uhlenbeck `dX = θ(μ - X) dt + σ0 dW`, coordinatewise.
pub fn ou(theta: f64, mu: f64, sigma0: f64, q_eigs: Vec<f64>) -> Result<ModelSpec> {
    let n = q_eigs.len();
    let drift: VectorField = Arc::new(move |x: &DVector<f64>| Ok(x.map(|v| theta * (mu - v))));
    let sigma: MatrixField = Arc::new(move |_: &DVector<f64>| Ok(DMatrix::identity(n, n) * sigma0));
    ModelSpec::new("ou", q_eigs, drift, Diffusion::Sigma(sigma))
}

struct OuBuilder;

impl ModelBuilder for OuBuilder {
    fn name(&self) -> &'static str {
        "ou"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: OuParams = parse_params(params)?;
        let dim = p.dim.or(p.lambda.as_ref().map(|l| l.len())).unwrap_or(1);
        ou(p.theta, p.mu, p.sigma0, lambdas(p.lambda, dim)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSigmaParams {
    dim: usize,
    s: f64,
    #[serde(default)]
    k: f64,
    #[serde(default)]
    beta: Option<Vec<f64>>,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
}

/// Geometric noise `σ(x) = s diag(x)` with drift `β - k x`.
pub fn linear_sigma(s: f64, k: f64, beta: Vec<f64>, q_eigs: Vec<f64>) -> Result<ModelSpec> {
    if beta.len() != q_eigs.len() {
        return Err(Error::config("model.params.beta", "length must equal dim"));
    }
    let beta = DVector::from_vec(beta);
    let drift: VectorField = Arc::new(move |x: &DVector<f64>| Ok(&beta - x * k));
    let sigma: MatrixField = Arc::new(move |x: &DVector<f64>| Ok(DMatrix::from_diagonal(&(x * s))));
    ModelSpec::new("linear_sigma", q_eigs, drift, Diffusion::Sigma(sigma))
}

struct LinearSigmaBuilder;

impl ModelBuilder for LinearSigmaBuilder {
    fn name(&self) -> &'static str {
        "linear_sigma"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: LinearSigmaParams = parse_params(params)?;
        linear_sigma(p.s, p.k, p.beta.unwrap_or_else(|| vec![0.0; p.dim]), lambdas(p.lambda, p.dim)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OrthantDiagParams {
    s: Vec<f64>,
    beta: Vec<f64>,
    #[serde(default)]
    k: Option<Vec<f64>>,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
}

/// Independent square-root coordinates: `C(x) = diag(s_i² λ_i x_i⁺)`,
/// drift `β_i - k_i x_i`. Given as a C field.
pub fn orthant_diag(s: Vec<f64>, beta: Vec<f64>, k: Vec<f64>, q_eigs: Vec<f64>) -> Result<ModelSpec> {
    let n = q_eigs.len();
    if s.len() != n || beta.len() != n || k.len() != n {
        return Err(Error::config("model.params", "s, beta, k and lambda must share one length"));
    }
    let scale: Vec<f64> = s.iter().zip(&q_eigs).map(|(s, l)| s * s * l).collect();
    let drift: VectorField = Arc::new(move |x: &DVector<f64>| Ok(DVector::from_fn(n, |i, _| beta[i] - k[i] * x[i])));
    let c: MatrixField = Arc::new(move |x: &DVector<f64>| {
        Ok(DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| scale[i] * x[i].max(0.0))))
    });
    Ok(ModelSpec::new("orthant_diag", q_eigs, drift, Diffusion::Dispersion(c))?.with_positive_part())
}

struct OrthantDiagBuilder;

impl ModelBuilder for OrthantDiagBuilder {
    fn name(&self) -> &'static str {
        "orthant_diag"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: OrthantDiagParams = parse_params(params)?;
        let n = p.s.len();
        orthant_diag(p.s, p.beta, p.k.unwrap_or_else(|| vec![0.0; n]), lambdas(p.lambda, n)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RankDeficientParams {
    #[serde(default)]
    twist: f64,
}

/// Rank-one planar noise `σ(x) = s(x) w(x) w(x)ᵀ` with `s = 1 + x1²/2` and
/// `w = (cos θ, sin θ)`, `θ = twist · x1`; drift `(-x1, 0)`, `Q = I`.
/// With `twist = 0` this is `diag(s(x), 0)`.
pub fn rank_deficient(twist: f64) -> Result<ModelSpec> {
    let drift: VectorField = Arc::new(|x: &DVector<f64>| Ok(DVector::from_column_slice(&[-x[0], 0.0])));
    let sigma: MatrixField = Arc::new(move |x: &DVector<f64>| {
        let s = 1.0 + 0.5 * x[0] * x[0];
        let (sin, cos) = (twist * x[0]).sin_cos();
        let w = DVector::from_column_slice(&[cos, sin]);
        Ok(&w * w.transpose() * s)
    });
    ModelSpec::new("rank_deficient", vec![1.0, 1.0], drift, Diffusion::Sigma(sigma))
}

/// Unit vector spanning `ker Σ(x)ᵀ` for [`rank_deficient`].
pub fn rank_deficient_kernel(twist: f64, x: &DVector<f64>) -> DVector<f64> {
    let (sin, cos) = (twist * x[0]).sin_cos();
    DVector::from_column_slice(&[-sin, cos])
}

struct RankDeficientBuilder;

impl ModelBuilder for RankDeficientBuilder {
    fn name(&self) -> &'static str {
        "rank_deficient"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: RankDeficientParams = parse_params(params)?;
        rank_deficient(p.twist)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    drift: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
}

/// Constant coefficients `b`, `σ`.
pub fn constant(drift: DVector<f64>, sigma: DMatrix<f64>, q_eigs: Vec<f64>) -> Result<ModelSpec> {
    let n = q_eigs.len();
    if drift.len() != n || sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::config("model.params", "drift, sigma and lambda must share one dimension"));
    }
    let b: VectorField = Arc::new(move |_: &DVector<f64>| Ok(drift.clone()));
    let s: MatrixField = Arc::new(move |_: &DVector<f64>| Ok(sigma.clone()));
    ModelSpec::new("constant", q_eigs, b, Diffusion::Sigma(s))
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(field, "matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

struct ConstantBuilder;

impl ModelBuilder for ConstantBuilder {
    fn name(&self) -> &'static str {
        "constant"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: ConstantParams = parse_params(params)?;
        let n = p.drift.len();
        let sigma = rows_to_matrix(&p.sigma, "model.params.sigma")?;
        constant(DVector::from_vec(p.drift), sigma, lambdas(p.lambda, n)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprParams {
    dim: usize,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
    drift: Vec<String>,
    #[serde(default)]
    sigma: Option<Vec<Vec<String>>>,
    #[serde(default)]
    c: Option<Vec<Vec<String>>>,
}

fn parse_vector(texts: &[String], dim: usize, field: &str) -> Result<Vec<Expression>> {
    if texts.len() != dim {
        return Err(Error::config(field, format!("expected {dim} entries, got {}", texts.len())));
    }
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Expression::parse(t, dim).map_err(|e| Error::config(format!("{field}[{i}]"), e.to_string())))
        .collect()
}

fn parse_matrix(rows: &[Vec<String>], dim: usize, field: &str) -> Result<Vec<Expression>> {
    if rows.len() != dim {
        return Err(Error::config(field, format!("expected {dim} rows, got {}", rows.len())));
    }
    let mut out = Vec::with_capacity(dim * dim);
    for (r, row) in rows.iter().enumerate() {
        out.extend(parse_vector(row, dim, &format!("{field}[{r}]"))?);
    }
    Ok(out)
}

fn matrix_field(entries: Vec<Expression>, dim: usize) -> MatrixField {
    Arc::new(move |x: &DVector<f64>| {
        let mut m = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                m[(r, c)] = entries[r * dim + c].eval(x.as_slice())?;
            }
        }
        Ok(m)
    })
}

/// Model given by expression strings over `x1..xn`.
pub fn expression_model(
    q_eigs: Vec<f64>,
    drift: &[String],
    sigma: Option<&[Vec<String>]>,
    c: Option<&[Vec<String>]>,
) -> Result<ModelSpec> {
    let dim = q_eigs.len();
    let drift_exprs = parse_vector(drift, dim, "model.params.drift")?;
    let b: VectorField = Arc::new(move |x: &DVector<f64>| {
        let vals: Result<Vec<f64>> = drift_exprs.iter().map(|e| e.eval(x.as_slice())).collect();
        Ok(DVector::from_vec(vals?))
    });
    let diffusion = match (sigma, c) {
        (Some(s), None) => Diffusion::Sigma(matrix_field(parse_matrix(s, dim, "model.params.sigma")?, dim)),
        (None, Some(c)) => Diffusion::Dispersion(matrix_field(parse_matrix(c, dim, "model.params.c")?, dim)),
        _ => {
            return Err(Error::config(
                "model.params",
                "exactly one of `sigma` and `c` must be given",
            ))
        }
    };
    ModelSpec::new("expr", q_eigs, b, diffusion)
}

struct ExprBuilder;

impl ModelBuilder for ExprBuilder {
    fn name(&self) -> &'static str {
        "expr"
    }
    fn build(&self, params: &Value) -> Result<ModelSpec> {
        let p: ExprParams = parse_params(params)?;
        expression_model(lambdas(p.lambda, p.dim)?, &p.drift, p.sigma.as_deref(), p.c.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn cir_dispersion_by_hand() {
        let m = cir(0.3, 1.0, 1.0, 1.0).unwrap();
        assert!((m.dispersion(&v(&[0.25])).unwrap().matrix()[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(m.dispersion(&v(&[-1.0])).unwrap().matrix()[(0, 0)], 0.0);
        assert_eq!(m.drift(&v(&[0.0])).unwrap()[0], 0.3);
        let m = cir(0.3, 1.0, 2.0, 0.5).unwrap();
        // C = σ0² λ x
        assert!((m.dispersion(&v(&[0.25])).unwrap().matrix()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_diffusion_and_c_field() {
        let m = constant(v(&[1.0, 0.0]), DMatrix::zeros(2, 2), vec![1.0, 1.0]).unwrap();
        assert_eq!(m.dispersion(&v(&[0.3, 0.2])).unwrap().matrix().amax(), 0.0);

        let diag = |s: &str| vec![vec![s.to_string(), "0".to_string()], vec!["0".to_string(), "1".to_string()]];
        let m = expression_model(vec![1.0, 1.0], &["0".into(), "0".into()], None, Some(&diag("4"))).unwrap();
        let x = v(&[0.0, 0.0]);
        assert_eq!(m.dispersion(&x).unwrap().matrix(), &DMatrix::from_diagonal(&v(&[4.0, 1.0])));
        assert!((m.big_sigma(&x).unwrap() - DMatrix::from_diagonal(&v(&[2.0, 1.0]))).amax() < 1e-14);
        assert!(square_root_residual(&m, &x).unwrap() < 1e-8);
        assert!(!m.has_sigma_field());
    }

    #[test]
    fn q_scales_columns() {
        let m = constant(v(&[0.0, 0.0]), DMatrix::identity(2, 2), vec![4.0, 9.0]).unwrap();
        let s = m.big_sigma(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(s, DMatrix::from_diagonal(&v(&[2.0, 3.0])));
    }

    #[test]
    fn registry_builds_and_rejects() {
        let r = ModelRegistry::with_builtins();
        assert!(r.names().contains(&"cir"));
        let m = r.build("cir", &json!({"a": 0.3})).unwrap();
        assert_eq!(m.dim(), 1);
        let m = r.build("orthant_diag", &json!({"s": [1.0, 2.0], "beta": [0.1, 0.2]})).unwrap();
        assert_eq!(m.dim(), 2);
        match r.build("nope", &json!({})) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.kind"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(r.build("cir", &json!({"a": 1, "zzz": 2})), Err(Error::Config { .. })));
        let both = json!({"dim": 1, "drift": ["0"], "sigma": [["1"]], "c": [["1"]]});
        assert!(matches!(r.build("expr", &both), Err(Error::Config { .. })));
        let bad_var = json!({"dim": 1, "drift": ["x2"], "sigma": [["1"]]});
        match r.build("expr", &bad_var) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.params.drift[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rank_deficient_kernel_is_kernel() {
        for twist in [0.0, 0.3, 1.7] {
            let m = rank_deficient(twist).unwrap();
            for x1 in [-1.0, 0.0, 0.4, 2.0] {
                let x = v(&[x1, 0.7]);
                let u = rank_deficient_kernel(twist, &x);
                assert!((m.big_sigma(&x).unwrap().transpose() * u).norm() < 1e-15);
                let audit = sigma_audit(&m, &x).unwrap();
                assert!(audit.symmetry_defect < 1e-15 && audit.min_eigenvalue > -1e-12);
            }
        }
    }

    #[test]
    fn linear_growth_of_ou() {
        let m = ou(2.0, 1.0, 0.5, vec![1.0]).unwrap();
        let pts: Vec<_> = (0..20).map(|k| v(&[k as f64 - 10.0])).collect();
        let l = linear_growth_constant(&m, &pts).unwrap();
        assert!(l > 0.0 && l <= 2.0 + 2.0 + 0.5);
    }
}
