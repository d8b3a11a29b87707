//! Synthetic high-fidelity truth: a fixed nonlinear discrepancy applied to
//! the low-fidelity solution.
//!
//! The map inflates displacement amplitudes (standing in for the higher
//! effective solidity of a fouled net), adds a quadratic term in the local
//! displacement magnitude, a smooth bias depending on the current direction,
//! and seeded heteroscedastic noise. Deterministic per seed; with all
//! coefficients zero it is the identity.

use super::equilibrium::{CageDeformation, MooringLoads};
use super::SeaState;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyParams {
    /// Displacement amplification factor.
    pub gain: f64,
    /// Quadratic coefficient on the per-node displacement magnitude (1/m).
    pub quad_coeff: f64,
    /// Relative direction-dependent bias amplitude.
    pub dir_bias: f64,
    /// Phase of the direction bias (deg).
    pub dir_phase_deg: f64,
    /// Relative noise on displacements.
    pub noise_rel: f64,
    /// Absolute noise floor on displacements (m).
    pub noise_abs: f64,
    /// Tension amplification factor.
    pub tension_gain: f64,
    /// Quadratic coefficient on tension (1/kN).
    pub tension_quad: f64,
    pub tension_noise_rel: f64,
    /// kN.
    pub tension_noise_abs: f64,
}

impl DiscrepancyParams {
    /// Identity map: no inflation, no bias, no noise.
    pub fn zero() -> Self {
        Self {
            gain: 1.0,
            quad_coeff: 0.0,
            dir_bias: 0.0,
            dir_phase_deg: 0.0,
            noise_rel: 0.0,
            noise_abs: 0.0,
            tension_gain: 1.0,
            tension_quad: 0.0,
            tension_noise_rel: 0.0,
            tension_noise_abs: 0.0,
        }
    }
}

/// Apply the discrepancy map to a low-fidelity solution.
pub fn synth_high_fidelity(
    lf: (&CageDeformation, &MooringLoads),
    sea: &SeaState,
    disc: &DiscrepancyParams,
    seed: u64,
) -> (CageDeformation, MooringLoads) {
    let (def, loads) = lf;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dir_term =
        1.0 + disc.dir_bias * (sea.current_dir - disc.dir_phase_deg).to_radians().cos();

    let n = def.displacements.nrows();
    let mut out = def.displacements.clone();
    for i in 0..n {
        let mag = def.displacements.row(i).norm();
        let factor = disc.gain * dir_term * (1.0 + disc.quad_coeff * mag);
        let sd = disc.noise_rel * mag + disc.noise_abs;
        for c in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            out[(i, c)] = def.displacements[(i, c)] * factor + sd * z;
        }
    }

    let tensions = loads
        .tensions
        .iter()
        .map(|&t| {
            let z: f64 = rng.sample(StandardNormal);
            let sd = disc.tension_noise_rel * t + disc.tension_noise_abs;
            (t * disc.tension_gain * dir_term * (1.0 + disc.tension_quad * t) + sd * z).max(0.0)
        })
        .collect();

    (
        CageDeformation {
            displacements: out,
            sea_state: sea.clone(),
        },
        MooringLoads { tensions },
    )
}
