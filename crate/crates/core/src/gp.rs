//! Single-fidelity Gaussian-process regression with squared-exponential ARD
//! kernels, maximum-likelihood hyperparameter estimation and posterior
//! prediction. This is the base layer of the multifidelity recursion.
//!
//! Hyperparameters live in the model's normalized space: inputs are encoded
//! (angle columns become sin/cos pairs) and standardized per dimension,
//! outputs are standardized, and the constants are kept on the model.

use crate::dataset::{DatasetError, FidelityDataset, DUPLICATE_TOL};
use crate::encode::{InputEncoding, OutputScaler, Standardizer};
use crate::linalg::{cholesky_with_jitter, log_det, NotPositiveDefinite};
use crate::optim::{minimize, BfgsOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Observation-noise floor in normalized output units.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    NotPositiveDefinite(#[from] NotPositiveDefinite),
    #[error("all {restarts} optimizer restarts failed to produce a finite likelihood")]
    FitFailure { restarts: usize },
    #[error("invalid training data: {0}")]
    InvalidData(#[from] DatasetError),
}

/// Kernel amplitude and per-dimension inverse-squared-length weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// Signal variance (normalized output units squared).
    pub amplitude_var: f64,
    /// Nonnegative ARD weights, one per encoded input dimension.
    pub ard_weights: DVector<f64>,
    /// Observation noise variance, at least [`NOISE_FLOOR`].
    pub noise_var: f64,
}

impl GpHyperparams {
    pub fn new(amplitude_var: f64, ard_weights: Vec<f64>, noise_var: f64) -> Self {
        Self {
            amplitude_var,
            ard_weights: DVector::from_vec(ard_weights),
            noise_var,
        }
    }

    pub fn dim(&self) -> usize {
        self.ard_weights.len()
    }
}

/// Squared-exponential ARD covariance between two points.
///
/// `sigma^2 * exp(-1/2 * sum_i w_i (x_i - x'_i)^2)`, symmetric in its
/// arguments, equal to `sigma^2` at coincident points.
pub fn se_ard_kernel(
    x: &DVector<f64>,
    x_prime: &DVector<f64>,
    hp: &GpHyperparams,
) -> Result<f64, GpError> {
    let d = hp.dim();
    if x.len() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if x_prime.len() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: x_prime.len(),
        });
    }
    let mut q = 0.0;
    for i in 0..d {
        let dx = x[i] - x_prime[i];
        q += hp.ard_weights[i] * dx * dx;
    }
    Ok(hp.amplitude_var * (-0.5 * q).exp())
}

/// Batched kernel evaluation: entry (i, j) is `se_ard_kernel(X_i, X'_j)`.
pub fn kernel_matrix(
    x: &DMatrix<f64>,
    x_prime: &DMatrix<f64>,
    hp: &GpHyperparams,
) -> Result<DMatrix<f64>, GpError> {
    let d = hp.dim();
    if x.ncols() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: x.ncols(),
        });
    }
    if x_prime.ncols() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: x_prime.ncols(),
        });
    }
    let (n, m) = (x.nrows(), x_prime.nrows());
    let mut k = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut q = 0.0;
            for c in 0..d {
                let dx = x[(i, c)] - x_prime[(j, c)];
                q += hp.ard_weights[c] * dx * dx;
            }
            k[(i, j)] = hp.amplitude_var * (-0.5 * q).exp();
        }
    }
    Ok(k)
}

/// Per-dimension squared-difference matrices, reused by likelihood gradients.
fn sq_dists(x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    (0..d)
        .map(|c| {
            DMatrix::from_fn(n, n, |i, j| {
                let dx = x[(i, c)] - x[(j, c)];
                dx * dx
            })
        })
        .collect()
}

fn kernel_from_sq_dists(sqd: &[DMatrix<f64>], amp: f64, weights: &DVector<f64>) -> DMatrix<f64> {
    let n = sqd[0].nrows();
    let mut q = DMatrix::zeros(n, n);
    for (c, d) in sqd.iter().enumerate() {
        q += d * weights[c];
    }
    q.map(|v| amp * (-0.5 * v).exp())
}

/// Log marginal likelihood of a GP with the given hyperparameters, plus its
/// analytic gradient with respect to the log of each hyperparameter, laid out
/// as `[d/dlog amplitude, d/dlog w_1 .. d/dlog w_d, d/dlog noise]`.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hp: &GpHyperparams,
) -> Result<(f64, DVector<f64>), GpError> {
    if x.ncols() != hp.dim() {
        return Err(GpError::DimensionMismatch {
            expected: hp.dim(),
            got: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(GpError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let sqd = sq_dists(x);
    let k_se = kernel_from_sq_dists(&sqd, hp.amplitude_var, &hp.ard_weights);
    let (value, mut grad) = lml_core(&k_se, &sqd, &hp.ard_weights, hp.noise_var, y)?;
    // convert the noise entry from d/d sigma_n^2 to d/d log sigma_n^2
    let last = grad.len() - 1;
    grad[last] *= hp.noise_var;
    Ok((value, grad))
}

/// Shared likelihood core. The returned gradient is with respect to
/// `[log amplitude, log w_1.., sigma_n^2]`; callers rescale the noise entry
/// for their own noise parameterization.
fn lml_core(
    k_se: &DMatrix<f64>,
    sqd: &[DMatrix<f64>],
    weights: &DVector<f64>,
    noise_var: f64,
    y: &DVector<f64>,
) -> Result<(f64, DVector<f64>), GpError> {
    let n = y.len();
    let (chol, _jitter) = cholesky_with_jitter(k_se, noise_var)?;
    let alpha = chol.solve(y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * n as f64 * (2.0 * PI).ln();

    let k_inv = chol.inverse();
    // A = alpha alpha^T - K^-1; dL/dtheta = 1/2 tr(A dK/dtheta)
    let a = &alpha * alpha.transpose() - k_inv;

    let d = weights.len();
    let mut grad = DVector::zeros(d + 2);
    grad[0] = 0.5 * a.component_mul(k_se).sum();
    for c in 0..d {
        grad[1 + c] = -0.25 * weights[c] * a.component_mul(&sqd[c]).component_mul(k_se).sum();
    }
    grad[d + 1] = 0.5 * a.trace(); // d/d sigma_n^2
    Ok((value, grad))
}

/// Options for [`fit_gp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFitConfig {
    /// Raw input column layout; `None` means all columns linear.
    pub encoding: Option<InputEncoding>,
    /// Number of multi-start restarts, each from a seeded log-uniform draw.
    pub restarts: usize,
    /// Optimizer iteration cap per restart.
    pub max_iters: usize,
    pub seed: u64,
    /// When set and the dataset is larger, hyperparameters are searched on a
    /// seeded subset of this size; the final model still conditions on all rows.
    pub opt_subsample: Option<usize>,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            encoding: None,
            restarts: 10,
            max_iters: 80,
            seed: 0,
            opt_subsample: None,
        }
    }
}

/// Log-uniform multi-start span for hyperparameter draws (normalized units).
/// The search itself is softly confined to the same box; on degenerate data
/// (exactly linear outputs) the unconstrained likelihood climbs a ridge of
/// ever longer length scales whose kernel matrices are numerically singular.
const DRAW_SPAN: (f64, f64) = (1e-3, 1e3);

fn log_uniform(rng: &mut ChaCha12Rng) -> f64 {
    let (lo, hi) = DRAW_SPAN;
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Quadratic penalty outside the log-space draw box, with its gradient.
///
/// Kernel parameters (amplitude, ARD weights) are confined on both sides;
/// the trailing noise parameter is only capped from above so it can still
/// descend to the floor on noiseless data.
pub(crate) fn box_penalty(theta: &DVector<f64>) -> (f64, DVector<f64>) {
    let bound = DRAW_SPAN.1.ln();
    let strength = 10.0;
    let last = theta.len() - 1;
    let mut value = 0.0;
    let mut grad = DVector::zeros(theta.len());
    for (i, t) in theta.iter().enumerate() {
        let excess = if i == last { *t - bound } else { t.abs() - bound };
        if excess > 0.0 {
            value += strength * excess * excess;
            grad[i] = 2.0 * strength * excess * if i == last { 1.0 } else { t.signum() };
        }
    }
    (value, grad)
}

/// A trained single-fidelity GP. Immutable after fitting; prediction is
/// read-only and safe to call from many threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub hyperparams: GpHyperparams,
    pub encoding: InputEncoding,
    pub input_scaler: Standardizer,
    pub output_scaler: OutputScaler,
    /// Encoded, standardized training inputs.
    pub training_inputs: DMatrix<f64>,
    /// Standardized training outputs.
    pub training_outputs: DVector<f64>,
    /// Constant-mean fallback used when the outputs carried no variance.
    pub degenerate: bool,
    /// Jitter added to factorize `K + noise I`.
    pub jitter: f64,
    #[serde(skip)]
    pub chol_factor: DMatrix<f64>,
    #[serde(skip)]
    pub alpha: DVector<f64>,
}

impl GpModel {
    /// Recompute the Cholesky factor and weight vector from the stored data.
    /// Called after deserialization; deterministic, so a reloaded model
    /// predicts bit-identically.
    pub fn rebuild_factors(&mut self) -> Result<(), GpError> {
        if self.degenerate {
            self.chol_factor = DMatrix::zeros(0, 0);
            self.alpha = DVector::zeros(0);
            return Ok(());
        }
        let k_se = kernel_matrix(&self.training_inputs, &self.training_inputs, &self.hyperparams)?;
        let (chol, jitter) = cholesky_with_jitter(&k_se, self.hyperparams.noise_var)?;
        self.jitter = jitter;
        self.alpha = chol.solve(&self.training_outputs);
        self.chol_factor = chol.unpack();
        Ok(())
    }

    pub fn input_dim_raw(&self) -> usize {
        self.encoding.raw_dim()
    }

    /// Posterior mean and predictive variance (including observation noise)
    /// at raw query rows, in output units.
    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>), GpError> {
        let m = x_star.nrows();
        if self.degenerate {
            return Ok((
                DVector::from_element(m, self.output_scaler.mean),
                DVector::zeros(m),
            ));
        }
        let enc = self
            .encoding
            .apply(x_star)
            .map_err(|e| GpError::DimensionMismatch {
                expected: e.expected,
                got: e.got,
            })?;
        let z = self.input_scaler.apply(&enc);
        let k_star = kernel_matrix(&z, &self.training_inputs, &self.hyperparams)?;
        let mean_norm = &k_star * &self.alpha;

        // latent variance via one triangular solve against all queries
        let v = self
            .chol_factor
            .solve_lower_triangular(&k_star.transpose())
            .expect("stored factor is lower triangular with positive diagonal");
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        for j in 0..m {
            let mut latent = self.hyperparams.amplitude_var - v.column(j).norm_squared();
            if latent < -1e-10 {
                log::warn!("clamping negative posterior variance {latent:e} at query {j}");
            }
            if latent < 0.0 {
                latent = 0.0;
            }
            mean[j] = self.output_scaler.denormalize_mean(mean_norm[j]);
            var[j] = self
                .output_scaler
                .denormalize_var(latent + self.hyperparams.noise_var);
        }
        Ok((mean, var))
    }

    /// Posterior mean only, in output units.
    pub fn predict_mean(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>, GpError> {
        if self.degenerate {
            return Ok(DVector::from_element(x_star.nrows(), self.output_scaler.mean));
        }
        let enc = self
            .encoding
            .apply(x_star)
            .map_err(|e| GpError::DimensionMismatch {
                expected: e.expected,
                got: e.got,
            })?;
        let z = self.input_scaler.apply(&enc);
        let k_star = kernel_matrix(&z, &self.training_inputs, &self.hyperparams)?;
        let mean_norm = &k_star * &self.alpha;
        Ok(mean_norm.map(|v| self.output_scaler.denormalize_mean(v)))
    }
}

/// Deterministic seeded subset of `0..n` of size `m`, ascending.
fn seeded_subset(n: usize, m: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Maximum-likelihood fit with multi-start quasi-Newton search in log space.
///
/// Outputs with no variance produce a flagged constant-mean fallback model
/// rather than an error.
pub fn fit_gp(data: &FidelityDataset, config: &GpFitConfig) -> Result<GpModel, GpError> {
    data.validate(2, DUPLICATE_TOL)?;
    let encoding = config
        .encoding
        .clone()
        .unwrap_or_else(|| InputEncoding::linear(data.input_dim()));
    let enc = encoding
        .apply(&data.inputs)
        .map_err(|e| GpError::DimensionMismatch {
            expected: e.expected,
            got: e.got,
        })?;
    let input_scaler = Standardizer::fit(&enc);
    let x_norm = input_scaler.apply(&enc);
    let d = x_norm.ncols();

    if OutputScaler::is_constant(&data.outputs) {
        let output_scaler = OutputScaler {
            mean: data.outputs.mean(),
            std: 1.0,
        };
        return Ok(GpModel {
            hyperparams: GpHyperparams::new(1.0, vec![1.0; d], NOISE_FLOOR),
            encoding,
            input_scaler,
            output_scaler,
            training_inputs: x_norm,
            training_outputs: DVector::zeros(data.len()),
            degenerate: true,
            jitter: 0.0,
            chol_factor: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        });
    }

    let output_scaler = OutputScaler::fit(&data.outputs);
    let y_norm = output_scaler.normalize(&data.outputs);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let (x_opt, y_opt) = match config.opt_subsample {
        Some(m) if data.len() > m => {
            let rows = seeded_subset(data.len(), m, &mut rng);
            let xs = DMatrix::from_fn(m, d, |i, j| x_norm[(rows[i], j)]);
            let ys = DVector::from_fn(m, |i, _| y_norm[rows[i]]);
            (xs, ys)
        }
        _ => (x_norm.clone(), y_norm.clone()),
    };
    let sqd = sq_dists(&x_opt);

    let theta = run_multistart(&sqd, &y_opt, d, config, &mut rng)?;
    let hyperparams = theta_to_hyperparams(&theta, d);

    let k_se = kernel_matrix(&x_norm, &x_norm, &hyperparams)?;
    let (chol, jitter) = cholesky_with_jitter(&k_se, hyperparams.noise_var)?;
    let alpha = chol.solve(&y_norm);
    Ok(GpModel {
        hyperparams,
        encoding,
        input_scaler,
        output_scaler,
        training_inputs: x_norm,
        training_outputs: y_norm,
        degenerate: false,
        jitter,
        chol_factor: chol.unpack(),
        alpha,
    })
}

/// theta layout: [ln amplitude, ln w_1 .. ln w_d, u] with noise = floor + e^u.
fn theta_to_hyperparams(theta: &DVector<f64>, d: usize) -> GpHyperparams {
    GpHyperparams {
        amplitude_var: theta[0].exp(),
        ard_weights: DVector::from_fn(d, |i, _| theta[1 + i].exp()),
        noise_var: NOISE_FLOOR + theta[d + 1].exp(),
    }
}

fn run_multistart(
    sqd: &[DMatrix<f64>],
    y: &DVector<f64>,
    d: usize,
    config: &GpFitConfig,
    rng: &mut ChaCha12Rng,
) -> Result<DVector<f64>, GpError> {
    let objective = |theta: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let amp = theta[0].exp();
        let weights = DVector::from_fn(d, |i, _| theta[1 + i].exp());
        let eu = theta[d + 1].exp();
        if !amp.is_finite() || !eu.is_finite() {
            return None;
        }
        let k_se = kernel_from_sq_dists(sqd, amp, &weights);
        let (value, mut grad) = lml_core(&k_se, sqd, &weights, NOISE_FLOOR + eu, y).ok()?;
        if !value.is_finite() {
            return None;
        }
        let last = grad.len() - 1;
        grad[last] *= eu; // chain rule for the floored-exponential noise
        let (pv, pg) = box_penalty(theta);
        Some((-value + pv, -grad + pg))
    };

    let opts = BfgsOptions {
        max_iters: config.max_iters,
        ..Default::default()
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..config.restarts {
        let mut theta0 = DVector::zeros(d + 2);
        theta0[0] = log_uniform(rng).ln();
        for i in 0..d {
            theta0[1 + i] = log_uniform(rng).ln();
        }
        theta0[d + 1] = log_uniform(rng).ln();
        let Some(out) = minimize(objective, &theta0, &opts) else {
            continue;
        };
        let lml = -out.value;
        if !lml.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((best_lml, best_theta)) => {
                if (lml - best_lml).abs() <= 1e-9 * best_lml.abs().max(1.0) {
                    out.x.norm() < best_theta.norm()
                } else {
                    lml > *best_lml
                }
            }
        };
        if better {
            best = Some((lml, out.x));
        }
    }
    best.map(|(_, theta)| theta).ok_or(GpError::FitFailure {
        restarts: config.restarts,
    })
}
