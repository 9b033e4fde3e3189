//! DPO loss kernel with analytic gradient.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoLoss {
    pub loss: f64,
    /// `beta * ((theta_p - ref_p) - (theta_r - ref_r))`.
    pub margin: f64,
    /// d loss / d (theta_p, ref_p, theta_r, ref_r).
    pub grad: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpoError {
    #[error("non-finite log-probability input")]
    NonFinite,
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log σ(margin)` for one preference pair.
pub fn dpo_loss(theta_p: f64, ref_p: f64, theta_r: f64, ref_r: f64, beta: f64) -> Result<DpoLoss, DpoError> {
    if ![theta_p, ref_p, theta_r, ref_r].iter().all(|x| x.is_finite()) {
        return Err(DpoError::NonFinite);
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(DpoError::BadBeta(beta));
    }
    let margin = beta * ((theta_p - ref_p) - (theta_r - ref_r));
    let dz = -sigmoid(-margin);
    Ok(DpoLoss {
        loss: softplus(-margin),
        margin,
        grad: [dz * beta, -dz * beta, -dz * beta, dz * beta],
    })
}
