//! Euler-Maruyama ensembles under truncated Q-Wiener noise, double Itô
//! integrals, and RK4 integration of deterministic viability systems.
//!
//! Noise contract: the standard normal for `(seed, path, step, mode)` comes
//! from the ChaCha8 stream `path` of the generator seeded with `seed`, at word
//! offset `4 (step · n + mode)`. Paths are independent, so ensembles are
//! identical under any degree of parallelism.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ClosedSet;
use crate::linop::{self, SymOperator};
use crate::model::ModelSpec;

const WORDS_PER_NORMAL: u128 = 4;

/// Sequential reader over one path's noise stream.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        rng.set_word_pos(0);
        Self { rng }
    }

    /// Next standard normal (Box-Muller, cosine branch only).
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Random access to the normal keyed by `(seed, path, step, mode)` for an
/// `n`-mode stream.
pub fn noise_normal(seed: u64, path: u64, step: u64, mode: usize, n: usize) -> f64 {
    let mut s = NoiseStream::new(seed, path);
    s.rng
        .set_word_pos(WORDS_PER_NORMAL * (step as u128 * n as u128 + mode as u128));
    s.next_normal()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub h: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub c_band: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            horizon: 1.0,
            n_paths: 1000,
            seed: 0,
            c_band: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<usize> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("simulate.h", "step must be positive"));
        }
        if !(self.horizon >= self.h) {
            return Err(Error::config("simulate.horizon", "horizon must be at least one step"));
        }
        if self.n_paths == 0 {
            return Err(Error::config("simulate.n_paths", "need at least one path"));
        }
        Ok((self.horizon / self.h).round() as usize)
    }
}

#[derive(Clone, Debug)]
pub struct Path {
    /// `states[k]` is `X` at time `k h`; shorter than the grid if aborted.
    pub states: Vec<DVector<f64>>,
    /// Message of the field error that stopped the path.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub h: f64,
    pub n_steps: usize,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| k as f64 * self.h).collect()
    }

    pub fn n_aborted(&self) -> usize {
        self.paths.iter().filter(|p| p.aborted.is_some()).count()
    }

    /// Trajectories as CSV with header `t,path,x1..xn`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let n = self.paths.first().and_then(|p| p.states.first()).map_or(0, |s| s.len());
        let header: Vec<String> = ["t".to_string(), "path".to_string()]
            .into_iter()
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (p, path) in self.paths.iter().enumerate() {
            for (k, s) in path.states.iter().enumerate() {
                write!(out, "{},{}", k as f64 * self.h, p)?;
                for v in s.iter() {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// `X_{k+1} = X_k + b(X_k) h + σ(X_k) ΔW_k`, `ΔW_k = sum_j sqrt(λ_j h) ξ_{k,j} e_j`.
pub fn simulate(model: &ModelSpec, x0: &DVector<f64>, cfg: &SimConfig) -> Result<PathEnsemble> {
    let n_steps = cfg.validate()?;
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| simulate_path(model, x0, cfg.h, n_steps, cfg.seed, p as u64))
        .collect();
    Ok(PathEnsemble {
        h: cfg.h,
        n_steps,
        paths,
    })
}

fn simulate_path(model: &ModelSpec, x0: &DVector<f64>, h: f64, n_steps: usize, seed: u64, path: u64) -> Path {
    let n = model.dim();
    let scale: Vec<f64> = model.q_eigs().iter().map(|l| (l * h).sqrt()).collect();
    let mut noise = NoiseStream::new(seed, path);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut x = x0.clone();
    states.push(x.clone());
    let mut dw = DVector::zeros(n);
    for _ in 0..n_steps {
        for j in 0..n {
            dw[j] = scale[j] * noise.next_normal();
        }
        let step = (|| -> Result<DVector<f64>> {
            let b = model.drift(&x)?;
            let sigma = match model.sigma_raw(&x) {
                Some(s) => s?,
                // C-field models: σ = Σ Q^{-1/2}
                None => {
                    let s = model.big_sigma(&x)?;
                    let inv: Vec<f64> = model.q_eigs().iter().map(|l| 1.0 / l.sqrt()).collect();
                    DMatrix::from_fn(n, n, |r, c| s[(r, c)] * inv[c])
                }
            };
            Ok(&x + b * h + sigma * &dw)
        })();
        match step {
            Ok(next) if next.iter().all(|v| v.is_finite()) => {
                x = next;
                states.push(x.clone());
            }
            Ok(_) => {
                return Path {
                    states,
                    aborted: Some("state became non-finite".into()),
                }
            }
            Err(e) => {
                return Path {
                    states,
                    aborted: Some(e.to_string()),
                }
            }
        }
    }
    Path { states, aborted: None }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceStats {
    pub band: f64,
    pub per_path_max: Vec<f64>,
    pub median_max: f64,
    pub max_max: f64,
    pub exceed_frequency: f64,
    /// First grid time with distance above the band, per path.
    pub first_exit_times: Vec<Option<f64>>,
    pub final_distances: Vec<f64>,
    pub n_aborted: usize,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Distance statistics of stored paths against the set and the band
/// `c_band sqrt(h)`.
pub fn invariance_stats(ensemble: &PathEnsemble, set: &dyn ClosedSet, c_band: f64) -> Result<InvarianceStats> {
    let band = c_band * ensemble.h.sqrt();
    let per_path: Vec<(f64, Option<f64>, f64)> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut max: f64 = 0.0;
            let mut exit = None;
            let mut last = 0.0;
            for (k, s) in p.states.iter().enumerate() {
                let d = set.distance(s)?;
                max = max.max(d);
                if exit.is_none() && d > band {
                    exit = Some(k as f64 * ensemble.h);
                }
                last = d;
            }
            Ok((max, exit, last))
        })
        .collect::<Result<_>>()?;
    let per_path_max: Vec<f64> = per_path.iter().map(|t| t.0).collect();
    let exceed = per_path.iter().filter(|t| t.1.is_some()).count();
    Ok(InvarianceStats {
        band,
        median_max: median(&per_path_max),
        max_max: per_path_max.iter().copied().fold(0.0, f64::max),
        exceed_frequency: exceed as f64 / per_path.len().max(1) as f64,
        first_exit_times: per_path.iter().map(|t| t.1).collect(),
        final_distances: per_path.iter().map(|t| t.2).collect(),
        per_path_max,
        n_aborted: ensemble.n_aborted(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DoubleIntegralEstimate {
    pub t: f64,
    pub mean: f64,
    pub std_err: f64,
    /// `|γ|²_HS t² / 2`.
    pub exact: f64,
}

/// Monte Carlo estimate of `E[I_t²]` for
/// `I_t = sum_{i,j} γ^{ij} ∫_0^t ∫_0^s dW^i_r dW^j_s` with independent
/// standard Brownian motions, via the nested Itô sum
/// `I = sum_k W_{t_k}ᵀ γ ΔW_k`. Every `t` must be a multiple of `h`.
pub fn double_integral_mc(
    gamma: &DMatrix<f64>,
    t_list: &[f64],
    n_paths: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<DoubleIntegralEstimate>> {
    let d = gamma.nrows();
    if gamma.ncols() != d {
        return Err(Error::InvalidArgument("γ must be square".into()));
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let mut checkpoints = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let k = (t / h).round();
        if !(t > 0.0) || (k * h - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidArgument(format!("t = {t} is not a positive multiple of h = {h}")));
        }
        checkpoints.push(k as usize);
    }
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let hs = gamma.norm_squared();
    let sqrt_h = h.sqrt();

    let samples: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = NoiseStream::new(seed, p as u64);
            let mut w = DVector::<f64>::zeros(d);
            let mut dw = DVector::<f64>::zeros(d);
            let mut integral = 0.0;
            let mut at = vec![0.0; checkpoints.len()];
            for k in 1..=last {
                for j in 0..d {
                    dw[j] = sqrt_h * noise.next_normal();
                }
                integral += w.dot(&(gamma * &dw));
                w += &dw;
                for (slot, &c) in checkpoints.iter().enumerate() {
                    if c == k {
                        at[slot] = integral;
                    }
                }
            }
            at
        })
        .collect();

    Ok(t_list
        .iter()
        .enumerate()
        .map(|(slot, &t)| {
            let sq: Vec<f64> = samples.iter().map(|s| s[slot] * s[slot]).collect();
            let mean = sq.iter().sum::<f64>() / n_paths as f64;
            let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
            DoubleIntegralEstimate {
                t,
                mean,
                std_err: (var / n_paths as f64).sqrt(),
                exact: hs * t * t / 2.0,
            }
        })
        .collect())
}

/// Least-squares slope of `log(E[I_t²] / t^{2δ})` against `log t`.
pub fn delta_scaling_slope(estimates: &[DoubleIntegralEstimate], delta: f64) -> f64 {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.mean > 0.0)
        .map(|e| (e.t.ln(), e.mean.ln() - 2.0 * delta * e.t.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub type OdeField = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// `(-y2, y1)`.
pub fn rotation_field() -> OdeField {
    Arc::new(|y: &DVector<f64>| Ok(DVector::from_column_slice(&[-y[1], y[0]])))
}

/// `y / |y|`.
pub fn radial_field() -> OdeField {
    Arc::new(|y: &DVector<f64>| {
        let n = y.norm();
        if n == 0.0 {
            return Err(Error::NonFinite("radial field at the origin".into()));
        }
        Ok(y / n)
    })
}

/// `y -> σ^j(y) = Σ(y) e_j`.
pub fn sigma_mode_field(model: Arc<ModelSpec>, j: usize) -> OdeField {
    Arc::new(move |y: &DVector<f64>| model.sigma_column(y, j))
}

/// Control field `a_j(x, y) = C(y) Σ(x)⁺ e_j` for a frozen `x`.
pub fn control_field(model: Arc<ModelSpec>, x: &DVector<f64>, j: usize, rank_tol: f64) -> Result<OdeField> {
    let s = SymOperator::symmetrized(&model.big_sigma(x)?);
    let direction = linop::pinv(&s, rank_tol).matrix().column(j).into_owned();
    Ok(Arc::new(move |y: &DVector<f64>| Ok(model.dispersion(y)?.apply(&direction))))
}

#[derive(Clone, Debug, Serialize)]
pub struct ViabilityResult {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub final_distance: f64,
    pub aborted: Option<String>,
}

/// Classical RK4 on `y' = a(y)` from `x0`; distance of each grid state to
/// the set.
pub fn ode_viability(
    field: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    set: &dyn ClosedSet,
    x0: &DVector<f64>,
    h: f64,
    horizon: f64,
) -> Result<ViabilityResult> {
    if !(h > 0.0) || !(horizon >= h) {
        return Err(Error::InvalidArgument("need 0 < h <= horizon".into()));
    }
    let n_steps = (horizon / h).round() as usize;
    let mut y = x0.clone();
    let mut times = vec![0.0];
    let mut distances = vec![set.distance(&y)?];
    let mut aborted = None;
    for k in 1..=n_steps {
        let step = (|| -> Result<DVector<f64>> {
            let k1 = field(&y)?;
            let k2 = field(&(&y + &k1 * (h / 2.0)))?;
            let k3 = field(&(&y + &k2 * (h / 2.0)))?;
            let k4 = field(&(&y + &k3 * h))?;
            Ok(&y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
        })();
        match step {
            Ok(next) if next.iter().all(|v| v.is_finite()) => y = next,
            Ok(_) => {
                aborted = Some("state became non-finite".to_string());
                break;
            }
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
        times.push(k as f64 * h);
        distances.push(set.distance(&y)?);
    }
    Ok(ViabilityResult {
        max_distance: distances.iter().copied().fold(0.0, f64::max),
        final_distance: *distances.last().expect("initial distance"),
        times,
        distances,
        aborted,
    })
}
