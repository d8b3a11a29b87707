//! Nonlinear autoregressive multifidelity regression.
//!
//! Level 1 is a plain SE-ARD GP on the lowest-fidelity data. Every level
//! above it is a GP over augmented inputs `(x, f_prev(x))`, where `f_prev`
//! is the posterior mean of the level below, with a kernel that composes as
//!
//! `k(u, u') = k_rho(x, x') * k_f(f, f') + k_delta(x, x')`
//!
//! `k_rho` and `k_delta` are SE-ARD kernels on the input space; `k_f` is a
//! single-weight SE kernel on the previous-level posterior with its
//! amplitude fixed to 1 (a free amplitude would be unidentifiable in the
//! product). That fixes the free kernel hyperparameter count at `2d + 3`.
//!
//! Levels are trained strictly in order; prediction propagates the posterior
//! mean upward (default) or Monte-Carlo samples of the level-1 posterior.

use crate::dataset::{FidelityDataset, DUPLICATE_TOL};
use crate::encode::{InputEncoding, OutputScaler, Standardizer};
use crate::gp::{box_penalty, fit_gp, GpError, GpFitConfig, GpModel};
use crate::linalg::{cholesky_with_jitter, log_det};
use crate::optim::{minimize, BfgsOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NargpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fidelity levels must be listed in strictly increasing order (index {index})")]
    LevelOrder { index: usize },
    #[error("level {level} has {rows} rows, need at least 2")]
    EmptyLevel { level: usize, rows: usize },
    #[error("nested-design violation at level {level}: rows {rows:?} missing from the level below")]
    NestedViolation { level: usize, rows: Vec<usize> },
    #[error("fit failed at level {level}: {source}")]
    Fit { level: usize, source: GpError },
    #[error("monte-carlo sample count must be at least 2, got {0}")]
    InvalidSampleCount(usize),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Amplitude and ARD weights of one SE kernel component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeArdParams {
    pub amplitude_var: f64,
    pub weights: DVector<f64>,
}

/// Hyperparameters of the composite upper-level kernel.
///
/// Free kernel hyperparameters: `rho` (d weights + amplitude), `f_weight`
/// (1 weight, amplitude fixed to 1), `delta` (d weights + amplitude), i.e.
/// `2d + 3` in total, plus the observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeHyperparams {
    pub rho: SeArdParams,
    pub f_weight: f64,
    pub delta: SeArdParams,
    pub noise_var: f64,
}

impl CompositeHyperparams {
    pub fn input_dim(&self) -> usize {
        self.rho.weights.len()
    }

    /// Number of free kernel hyperparameters, excluding noise.
    pub fn free_kernel_param_count(&self) -> usize {
        2 * self.input_dim() + 3
    }
}

fn se_part(x: &DVector<f64>, x_prime: &DVector<f64>, weights: &DVector<f64>, d: usize) -> f64 {
    let mut q = 0.0;
    for i in 0..d {
        let dx = x[i] - x_prime[i];
        q += weights[i] * dx * dx;
    }
    (-0.5 * q).exp()
}

/// Composite covariance between two augmented points. The first `d` entries
/// of each vector are the inputs, the last entry is the previous-level
/// posterior value. At coincident points the value is
/// `rho.amplitude_var + delta.amplitude_var`.
pub fn composite_kernel(
    u: &DVector<f64>,
    u_prime: &DVector<f64>,
    hp: &CompositeHyperparams,
) -> Result<f64, NargpError> {
    let d = hp.input_dim();
    if u.len() != d + 1 {
        return Err(NargpError::DimensionMismatch {
            expected: d + 1,
            got: u.len(),
        });
    }
    if u_prime.len() != d + 1 {
        return Err(NargpError::DimensionMismatch {
            expected: d + 1,
            got: u_prime.len(),
        });
    }
    let k_rho = hp.rho.amplitude_var * se_part(u, u_prime, &hp.rho.weights, d);
    let df = u[d] - u_prime[d];
    let k_f = (-0.5 * hp.f_weight * df * df).exp();
    let k_delta = hp.delta.amplitude_var * se_part(u, u_prime, &hp.delta.weights, d);
    Ok(k_rho * k_f + k_delta)
}

/// Composite kernel matrix over augmented point rows.
pub fn composite_kernel_matrix(
    u: &DMatrix<f64>,
    u_prime: &DMatrix<f64>,
    hp: &CompositeHyperparams,
) -> Result<DMatrix<f64>, NargpError> {
    let d = hp.input_dim();
    if u.ncols() != d + 1 || u_prime.ncols() != d + 1 {
        return Err(NargpError::DimensionMismatch {
            expected: d + 1,
            got: u.ncols().max(u_prime.ncols()),
        });
    }
    let (n, m) = (u.nrows(), u_prime.nrows());
    let mut k = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut q_rho = 0.0;
            let mut q_delta = 0.0;
            for c in 0..d {
                let dx = u[(i, c)] - u_prime[(j, c)];
                q_rho += hp.rho.weights[c] * dx * dx;
                q_delta += hp.delta.weights[c] * dx * dx;
            }
            let df = u[(i, d)] - u_prime[(j, d)];
            k[(i, j)] = hp.rho.amplitude_var * (-0.5 * (q_rho + hp.f_weight * df * df)).exp()
                + hp.delta.amplitude_var * (-0.5 * q_delta).exp();
        }
    }
    Ok(k)
}

/// Nested-design handling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NestedMode {
    /// Higher-level inputs must literally appear in the level below.
    RawData,
    /// The lower level is an everywhere-evaluable surrogate, so nesting
    /// holds by construction.
    Surrogate,
}

#[derive(Debug, Clone)]
pub struct NestedReport {
    pub mode: NestedMode,
    pub note: Option<String>,
}

/// Confirm each level's inputs are a subset of the level below, within a
/// standardized distance tolerance. In surrogate mode this always succeeds
/// with an informational note.
pub fn validate_nested(
    datasets: &[FidelityDataset],
    mode: NestedMode,
    tol: f64,
) -> Result<NestedReport, NargpError> {
    for ds in datasets {
        if ds.len() < 2 {
            return Err(NargpError::EmptyLevel {
                level: ds.level,
                rows: ds.len(),
            });
        }
    }
    if mode == NestedMode::Surrogate {
        return Ok(NestedReport {
            mode,
            note: Some(
                "lower level is an evaluable surrogate; nesting holds by construction".into(),
            ),
        });
    }
    for t in 1..datasets.len() {
        let lower = &datasets[t - 1];
        let upper = &datasets[t];
        let scaler = Standardizer::fit(&lower.inputs);
        let zl = scaler.apply(&lower.inputs);
        let zu = scaler.apply(&upper.inputs);
        let mut missing = Vec::new();
        for i in 0..zu.nrows() {
            let found = (0..zl.nrows()).any(|j| {
                let dist2: f64 = (0..zl.ncols())
                    .map(|c| (zu[(i, c)] - zl[(j, c)]).powi(2))
                    .sum();
                dist2.sqrt() < tol
            });
            if !found {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            return Err(NargpError::NestedViolation {
                level: upper.level,
                rows: missing,
            });
        }
    }
    Ok(NestedReport { mode, note: None })
}

/// A trained upper level: a GP with the composite kernel over augmented
/// inputs. Immutable after fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelTwoGp {
    pub hyperparams: CompositeHyperparams,
    pub encoding: InputEncoding,
    /// Standardization over the augmented columns (encoded inputs, then f).
    pub aug_scaler: Standardizer,
    pub output_scaler: OutputScaler,
    /// Normalized augmented training inputs actually used for the fit.
    pub training_aug: DMatrix<f64>,
    pub training_outputs: DVector<f64>,
    pub jitter: f64,
    #[serde(skip)]
    pub chol_factor: DMatrix<f64>,
    #[serde(skip)]
    pub alpha: DVector<f64>,
}

impl LevelTwoGp {
    pub fn rebuild_factors(&mut self) -> Result<(), NargpError> {
        let k = composite_kernel_matrix(&self.training_aug, &self.training_aug, &self.hyperparams)?;
        let (chol, jitter) =
            cholesky_with_jitter(&k, self.hyperparams.noise_var).map_err(GpError::from)?;
        self.jitter = jitter;
        self.alpha = chol.solve(&self.training_outputs);
        self.chol_factor = chol.unpack();
        Ok(())
    }

    fn augment(&self, x_raw: &DMatrix<f64>, f: &DVector<f64>) -> Result<DMatrix<f64>, NargpError> {
        if x_raw.nrows() != f.len() {
            return Err(NargpError::DimensionMismatch {
                expected: x_raw.nrows(),
                got: f.len(),
            });
        }
        let enc = self
            .encoding
            .apply(x_raw)
            .map_err(|e| NargpError::DimensionMismatch {
                expected: e.expected,
                got: e.got,
            })?;
        let mut aug = DMatrix::zeros(enc.nrows(), enc.ncols() + 1);
        aug.view_mut((0, 0), (enc.nrows(), enc.ncols()))
            .copy_from(&enc);
        aug.set_column(enc.ncols(), f);
        Ok(self.aug_scaler.apply(&aug))
    }

    /// Posterior mean and predictive variance (including noise) given raw
    /// inputs and the previous-level posterior values at those inputs.
    pub fn predict(
        &self,
        x_raw: &DMatrix<f64>,
        f: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), NargpError> {
        let z = self.augment(x_raw, f)?;
        let k_star = composite_kernel_matrix(&z, &self.training_aug, &self.hyperparams)?;
        let mean_norm = &k_star * &self.alpha;
        let v = self
            .chol_factor
            .solve_lower_triangular(&k_star.transpose())
            .expect("stored factor is lower triangular with positive diagonal");
        let prior = self.hyperparams.rho.amplitude_var + self.hyperparams.delta.amplitude_var;
        let m = z.nrows();
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        for j in 0..m {
            let latent = (prior - v.column(j).norm_squared()).max(0.0);
            mean[j] = self.output_scaler.denormalize_mean(mean_norm[j]);
            var[j] = self
                .output_scaler
                .denormalize_var(latent + self.hyperparams.noise_var);
        }
        Ok((mean, var))
    }

    pub fn predict_mean(
        &self,
        x_raw: &DMatrix<f64>,
        f: &DVector<f64>,
    ) -> Result<DVector<f64>, NargpError> {
        let z = self.augment(x_raw, f)?;
        let k_star = composite_kernel_matrix(&z, &self.training_aug, &self.hyperparams)?;
        let mean_norm = &k_star * &self.alpha;
        Ok(mean_norm.map(|v| self.output_scaler.denormalize_mean(v)))
    }
}

/// theta layout: [ln s_rho, ln w_rho(d), ln w_f, ln s_delta, ln w_delta(d), u]
/// with noise = floor + e^u. Kernel block length is 2d + 3.
fn theta_to_composite(theta: &DVector<f64>, d: usize) -> CompositeHyperparams {
    CompositeHyperparams {
        rho: SeArdParams {
            amplitude_var: theta[0].exp(),
            weights: DVector::from_fn(d, |i, _| theta[1 + i].exp()),
        },
        f_weight: theta[1 + d].exp(),
        delta: SeArdParams {
            amplitude_var: theta[2 + d].exp(),
            weights: DVector::from_fn(d, |i, _| theta[3 + d + i].exp()),
        },
        noise_var: crate::gp::NOISE_FLOOR + theta[3 + 2 * d].exp(),
    }
}

/// Likelihood and gradient for the composite kernel on normalized data.
fn composite_lml(
    theta: &DVector<f64>,
    sqd_x: &[DMatrix<f64>],
    sqd_f: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    let d = sqd_x.len();
    let n = y.len();
    let hp = theta_to_composite(theta, d);
    if !hp.rho.amplitude_var.is_finite()
        || !hp.delta.amplitude_var.is_finite()
        || !hp.f_weight.is_finite()
    {
        return None;
    }

    let mut q_rho = DMatrix::zeros(n, n);
    let mut q_delta = DMatrix::zeros(n, n);
    for c in 0..d {
        q_rho += &sqd_x[c] * hp.rho.weights[c];
        q_delta += &sqd_x[c] * hp.delta.weights[c];
    }
    let k_rho = q_rho.map(|v| hp.rho.amplitude_var * (-0.5 * v).exp());
    let k_f = sqd_f.map(|v| (-0.5 * hp.f_weight * v).exp());
    let k_delta = q_delta.map(|v| hp.delta.amplitude_var * (-0.5 * v).exp());
    let k_rho_f = k_rho.component_mul(&k_f);
    let k = &k_rho_f + &k_delta;

    let (chol, _) = cholesky_with_jitter(&k, hp.noise_var).ok()?;
    let alpha = chol.solve(y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * n as f64 * (2.0 * PI).ln();
    if !value.is_finite() {
        return None;
    }
    let k_inv = chol.inverse();
    let a = &alpha * alpha.transpose() - k_inv;

    let mut grad = DVector::zeros(2 * d + 4);
    grad[0] = 0.5 * a.component_mul(&k_rho_f).sum();
    for c in 0..d {
        grad[1 + c] =
            -0.25 * hp.rho.weights[c] * a.component_mul(&sqd_x[c]).component_mul(&k_rho_f).sum();
    }
    grad[1 + d] = -0.25 * hp.f_weight * a.component_mul(sqd_f).component_mul(&k_rho_f).sum();
    grad[2 + d] = 0.5 * a.component_mul(&k_delta).sum();
    for c in 0..d {
        grad[3 + d + c] =
            -0.25 * hp.delta.weights[c] * a.component_mul(&sqd_x[c]).component_mul(&k_delta).sum();
    }
    let eu = theta[3 + 2 * d].exp();
    grad[3 + 2 * d] = 0.5 * a.trace() * eu;
    Some((value, grad))
}

/// Fit an upper level on raw inputs, previous-level posterior values and
/// observed outputs. Same multi-start protocol as the base GP.
pub fn fit_level_two(
    x_raw: &DMatrix<f64>,
    f_prev: &DVector<f64>,
    y: &DVector<f64>,
    encoding: &InputEncoding,
    config: &GpFitConfig,
) -> Result<LevelTwoGp, NargpError> {
    let n = x_raw.nrows();
    if f_prev.len() != n || y.len() != n {
        return Err(NargpError::DimensionMismatch {
            expected: n,
            got: f_prev.len().min(y.len()),
        });
    }
    let enc = encoding
        .apply(x_raw)
        .map_err(|e| NargpError::DimensionMismatch {
            expected: e.expected,
            got: e.got,
        })?;
    let d = enc.ncols();
    let mut aug = DMatrix::zeros(n, d + 1);
    aug.view_mut((0, 0), (n, d)).copy_from(&enc);
    aug.set_column(d, f_prev);
    let aug_scaler = Standardizer::fit(&aug);
    let z = aug_scaler.apply(&aug);

    let output_scaler = OutputScaler::fit(y);
    let y_norm = output_scaler.normalize(y);

    let sqd_x: Vec<DMatrix<f64>> = (0..d)
        .map(|c| {
            DMatrix::from_fn(n, n, |i, j| {
                let dx = z[(i, c)] - z[(j, c)];
                dx * dx
            })
        })
        .collect();
    let sqd_f = DMatrix::from_fn(n, n, |i, j| {
        let dx = z[(i, d)] - z[(j, d)];
        dx * dx
    });

    let objective = |theta: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let (value, grad) = composite_lml(theta, &sqd_x, &sqd_f, &y_norm)?;
        let (pv, pg) = box_penalty(theta);
        Some((-value + pv, -grad + pg))
    };

    let opts = BfgsOptions {
        max_iters: config.max_iters,
        ..Default::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let n_params = 2 * d + 4;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..config.restarts {
        let theta0 = DVector::from_fn(n_params, |_, _| rng.random_range(1e-3f64.ln()..1e3f64.ln()));
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
    let theta = best.map(|(_, t)| t).ok_or(NargpError::Fit {
        level: 2,
        source: GpError::FitFailure {
            restarts: config.restarts,
        },
    })?;
    let hyperparams = theta_to_composite(&theta, d);
    debug_assert_eq!(hyperparams.free_kernel_param_count(), 2 * d + 3);

    let mut model = LevelTwoGp {
        hyperparams,
        encoding: encoding.clone(),
        aug_scaler,
        output_scaler,
        training_aug: z,
        training_outputs: y_norm,
        jitter: 0.0,
        chol_factor: DMatrix::zeros(0, 0),
        alpha: DVector::zeros(0),
    };
    model.rebuild_factors()?;
    Ok(model)
}

/// Options for [`fit_nargp`].
#[derive(Debug, Clone)]
pub struct NargpConfig {
    pub base: GpFitConfig,
    pub mode: NestedMode,
    /// Standardized distance tolerance for the nested-design check.
    pub nested_tol: f64,
}

impl Default for NargpConfig {
    fn default() -> Self {
        Self {
            base: GpFitConfig::default(),
            mode: NestedMode::RawData,
            nested_tol: 1e-9,
        }
    }
}

/// The recursive multifidelity model: a base GP plus one composite-kernel GP
/// per additional level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NargpModel {
    pub level_one: GpModel,
    pub upper: Vec<LevelTwoGp>,
}

/// Prediction mode for [`predict_nargp`].
#[derive(Debug, Clone, Copy)]
pub enum PredictMode {
    /// Feed the posterior mean of each level into the next.
    MeanPropagation,
    /// Sample the level-1 posterior and propagate each sample.
    MonteCarlo { samples: usize, seed: u64 },
}

impl NargpModel {
    pub fn num_levels(&self) -> usize {
        1 + self.upper.len()
    }

    pub fn rebuild_factors(&mut self) -> Result<(), NargpError> {
        self.level_one.rebuild_factors()?;
        for lvl in &mut self.upper {
            lvl.rebuild_factors()?;
        }
        Ok(())
    }

    /// Posterior mean propagated through the first `levels` levels.
    fn propagate_mean(
        &self,
        x_raw: &DMatrix<f64>,
        levels: usize,
    ) -> Result<DVector<f64>, NargpError> {
        let mut mean = self.level_one.predict_mean(x_raw)?;
        for lvl in self.upper.iter().take(levels.saturating_sub(1)) {
            mean = lvl.predict_mean(x_raw, &mean)?;
        }
        Ok(mean)
    }
}

/// Train the full recursion. Datasets must be ordered by strictly increasing
/// fidelity; each level above the first is fitted on inputs augmented with
/// the posterior mean of the already-trained stack below it.
pub fn fit_nargp(
    datasets: &[FidelityDataset],
    config: &NargpConfig,
) -> Result<NargpModel, NargpError> {
    if datasets.is_empty() {
        return Err(NargpError::EmptyLevel { level: 1, rows: 0 });
    }
    for i in 1..datasets.len() {
        if datasets[i].level <= datasets[i - 1].level {
            return Err(NargpError::LevelOrder { index: i });
        }
    }
    validate_nested(datasets, config.mode, config.nested_tol)?;

    let level_one = fit_gp(&datasets[0], &config.base).map_err(|source| NargpError::Fit {
        level: datasets[0].level,
        source,
    })?;
    let encoding = level_one.encoding.clone();
    let mut model = NargpModel {
        level_one,
        upper: Vec::new(),
    };
    for (t, ds) in datasets.iter().enumerate().skip(1) {
        ds.validate(2, DUPLICATE_TOL).map_err(|e| NargpError::Fit {
            level: ds.level,
            source: GpError::InvalidData(e),
        })?;
        let f_prev = model.propagate_mean(&ds.inputs, t)?;
        let mut cfg = config.base.clone();
        cfg.seed = config.base.seed.wrapping_add(t as u64);
        let lvl =
            fit_level_two(&ds.inputs, &f_prev, &ds.outputs, &encoding, &cfg).map_err(|e| match e {
                NargpError::Fit { source, .. } => NargpError::Fit {
                    level: ds.level,
                    source,
                },
                other => other,
            })?;
        model.upper.push(lvl);
    }
    Ok(model)
}

/// Predict at query rows. Mean propagation feeds each level's posterior mean
/// into the next and reports the top level's conditional variance given the
/// propagated means. Monte-Carlo draws `samples` level-1 posterior samples
/// per query point, propagates each through the upper-level posterior means,
/// and reports their empirical mean plus the total variance (spread of the
/// propagated means plus the average top-level conditional variance).
pub fn predict_nargp(
    model: &NargpModel,
    x_star: &DMatrix<f64>,
    mode: PredictMode,
) -> Result<(DVector<f64>, DVector<f64>), NargpError> {
    match mode {
        PredictMode::MeanPropagation => {
            let (mut mean, mut var) = model.level_one.predict(x_star)?;
            for lvl in &model.upper {
                let (m, v) = lvl.predict(x_star, &mean)?;
                mean = m;
                var = v;
            }
            Ok((mean, var))
        }
        PredictMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(NargpError::InvalidSampleCount(samples));
            }
            if model.upper.is_empty() {
                return model.level_one.predict(x_star).map_err(Into::into);
            }
            let m = x_star.nrows();
            let (mean1, var1) = model.level_one.predict(x_star)?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);

            // stacked (m * samples) propagation through the upper levels
            let d_raw = x_star.ncols();
            let mut x_rep = DMatrix::zeros(m * samples, d_raw);
            let mut f = DVector::zeros(m * samples);
            for i in 0..m {
                let sd = var1[i].max(0.0).sqrt();
                for s in 0..samples {
                    let row = i * samples + s;
                    for c in 0..d_raw {
                        x_rep[(row, c)] = x_star[(i, c)];
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    f[row] = mean1[i] + sd * z;
                }
            }
            let mut cond_var = DVector::zeros(m * samples);
            for (li, lvl) in model.upper.iter().enumerate() {
                if li + 1 == model.upper.len() {
                    let (mn, vr) = lvl.predict(&x_rep, &f)?;
                    f = mn;
                    cond_var = vr;
                } else {
                    f = lvl.predict_mean(&x_rep, &f)?;
                }
            }

            let mut mean = DVector::zeros(m);
            let mut var = DVector::zeros(m);
            for i in 0..m {
                let slice: Vec<f64> = (0..samples).map(|s| f[i * samples + s]).collect();
                let mu = slice.iter().sum::<f64>() / samples as f64;
                let spread =
                    slice.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (samples - 1) as f64;
                let avg_cond =
                    (0..samples).map(|s| cond_var[i * samples + s]).sum::<f64>() / samples as f64;
                mean[i] = mu;
                var[i] = spread + avg_cond;
            }
            Ok((mean, var))
        }
    }
}
