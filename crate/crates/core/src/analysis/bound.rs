use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Inputs of the model-return gap bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Bound on the expected total variation between true and model transitions.
    pub epsilon_m: f64,
    /// Per-level policy divergence bounds, level 1 first.
    pub epsilon_pi: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma < 1.0, "gamma must be below 1 for the bound, got {}", self.gamma);
        ensure!(self.gamma > 0.0, "gamma must be positive, got {}", self.gamma);
        ensure!(self.r_max > 0.0 && self.r_max.is_finite(), "r_max must be positive, got {}", self.r_max);
        ensure!(
            self.epsilon_m >= 0.0 && self.epsilon_m.is_finite(),
            "epsilon_m must be nonnegative, got {}",
            self.epsilon_m
        );
        for (k, e) in self.epsilon_pi.iter().enumerate() {
            ensure!(*e >= 0.0 && e.is_finite(), "epsilon_pi[{k}] must be nonnegative, got {e}");
        }
        Ok(())
    }
}

/// Upper bound `C` on `|model return - true return|`:
///
/// `C = 2 gamma r_max (eps_m + 2 S) / (1 - gamma)^2 + 4 r_max S / (1 - gamma)`
/// with `S` the sum of the per-level policy divergences.
///
/// ```
/// use seqcomm::analysis::{theorem1_bound, BoundInputs};
/// let c = theorem1_bound(&BoundInputs {
///     epsilon_m: 0.1,
///     epsilon_pi: vec![0.05],
///     gamma: 0.95,
///     r_max: 1.0,
/// })
/// .unwrap();
/// assert!((c - 156.0).abs() < 1e-9);
/// ```
pub fn theorem1_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let s: f64 = inputs.epsilon_pi.iter().sum();
    let g = inputs.gamma;
    let r = inputs.r_max;
    Ok(2.0 * g * r * (inputs.epsilon_m + 2.0 * s) / (1.0 - g).powi(2) + 4.0 * r * s / (1.0 - g))
}
