//! Cloth material sampling and the wrinkle response laws driven by it.
//!
//! Stretch stiffness and bending stiffness span orders of magnitude, so they
//! are drawn log-uniformly; the Lamé coupling and areal density are drawn
//! uniformly. The wrinkle laws are normalised so that the mid-range material
//! reproduces the base amplitude/frequency/lag exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stretch stiffness mu (N/m), log-uniform.
pub const MU_RANGE: [f64; 2] = [15_909.0, 63_636.0];
/// Lamé lambda (N/m), uniform.
pub const LAMBDA_RANGE: [f64; 2] = [3_535.41, 93_333.74];
/// Bending stiffness kappa_b (N·m), log-uniform.
pub const KAPPA_RANGE: [f64; 2] = [6.37e-8, 1.31e-3];
/// Areal density rho (kg/m²), uniform.
pub const RHO_RANGE: [f64; 2] = [0.0434, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub mu: f64,
    pub lambda: f64,
    pub kappa_b: f64,
    pub rho: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mu", self.mu, MU_RANGE),
            ("lambda", self.lambda, LAMBDA_RANGE),
            ("kappa_b", self.kappa_b, KAPPA_RANGE),
            ("rho", self.rho, RHO_RANGE),
        ];
        for (name, value, [lo, hi]) in checks {
            if !value.is_finite() || value < lo || value > hi {
                return Err(Error::InvalidInput(format!(
                    "material {name} = {value} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// The mid-range material: every wrinkle law maps it to its base value.
    pub fn midpoint() -> Self {
        MaterialParams {
            mu: log_mid(MU_RANGE),
            lambda: 0.5 * (LAMBDA_RANGE[0] + LAMBDA_RANGE[1]),
            kappa_b: log_mid(KAPPA_RANGE),
            rho: 0.5 * (RHO_RANGE[0] + RHO_RANGE[1]),
        }
    }
}

fn log_mid([lo, hi]: [f64; 2]) -> f64 {
    (lo * hi).sqrt()
}

fn log_uniform(u: f64, [lo, hi]: [f64; 2]) -> f64 {
    lo * (hi / lo).powf(u)
}

fn uniform(u: f64, [lo, hi]: [f64; 2]) -> f64 {
    lo + u * (hi - lo)
}

/// Draw one material. Consumes exactly four uniforms in the order
/// mu, lambda, kappa_b, rho, so streams stay reproducible.
pub fn sample_material<R: Rng>(rng: &mut R) -> MaterialParams {
    let mu = log_uniform(rng.random::<f64>(), MU_RANGE);
    let lambda = uniform(rng.random::<f64>(), LAMBDA_RANGE);
    let kappa_b = log_uniform(rng.random::<f64>(), KAPPA_RANGE);
    let rho = uniform(rng.random::<f64>(), RHO_RANGE);
    MaterialParams {
        mu,
        lambda,
        kappa_b,
        rho,
    }
}

/// Wrinkle amplitude shrinks with stretch stiffness: base · sqrt(mu_mid/mu).
pub fn wrinkle_amplitude(base: f64, mu: f64) -> f64 {
    base * (log_mid(MU_RANGE) / mu).sqrt()
}

/// Wrinkle spatial frequency falls with bending stiffness:
/// base · (kappa_mid/kappa_b)^(1/4).
pub fn wrinkle_frequency(base: f64, kappa_b: f64) -> f64 {
    base * (log_mid(KAPPA_RANGE) / kappa_b).powf(0.25)
}

/// Temporal lag grows with density: base · rho/rho_mid.
pub fn wrinkle_lag_frames(base: f64, rho: f64) -> f64 {
    base * rho / (0.5 * (RHO_RANGE[0] + RHO_RANGE[1]))
}
