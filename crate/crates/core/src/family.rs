//! Response families: link functions, the working response and IRLS weights
//! used by local scoring, and per-observation deviance.
//!
//! | family   | link     | working response `z`            | weight `w`  | deviance                              |
//! |----------|----------|---------------------------------|-------------|---------------------------------------|
//! | gaussian | identity | `y`                             | `1`         | `(y - mu)^2`                          |
//! | binomial | logit    | `eta + (y - mu) / (mu (1 - mu))`| `mu(1 - mu)`| `-2 (y ln mu + (1 - y) ln(1 - mu))`   |
//!
//! Binomial means are clamped into `[mu_clamp, 1 - mu_clamp]` wherever they
//! are produced, so weights stay positive and deviance stays finite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GannError, Result};

pub const DEFAULT_MU_CLAMP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Binomial,
}

impl FromStr for FamilyKind {
    type Err = GannError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(FamilyKind::Gaussian),
            "binomial" => Ok(FamilyKind::Binomial),
            other => Err(GannError::InvalidConfig(format!(
                "unsupported family `{other}` (expected gaussian or binomial)"
            ))),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Binomial => "binomial",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    /// Only used by the binomial family.
    pub mu_clamp: f64,
}

impl Family {
    pub fn gaussian() -> Self {
        Family {
            kind: FamilyKind::Gaussian,
            mu_clamp: DEFAULT_MU_CLAMP,
        }
    }

    pub fn binomial() -> Self {
        Family {
            kind: FamilyKind::Binomial,
            mu_clamp: DEFAULT_MU_CLAMP,
        }
    }

    pub fn new(kind: FamilyKind, mu_clamp: f64) -> Result<Self> {
        if !(mu_clamp > 0.0 && mu_clamp < 0.5) {
            return Err(GannError::InvalidConfig(format!(
                "mu_clamp must lie in (0, 0.5), got {mu_clamp}"
            )));
        }
        Ok(Family { kind, mu_clamp })
    }

    #[inline]
    fn clamp_mu(&self, mu: f64) -> f64 {
        mu.clamp(self.mu_clamp, 1.0 - self.mu_clamp)
    }

    pub fn link_scalar(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => mu,
            FamilyKind::Binomial => {
                let mu = self.clamp_mu(mu);
                (mu / (1.0 - mu)).ln()
            }
        }
    }

    pub fn inverse_link_scalar(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::Binomial => self.clamp_mu(1.0 / (1.0 + (-eta).exp())),
        }
    }

    pub fn link(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().map(|&m| self.link_scalar(m)).collect()
    }

    pub fn inverse_link(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter().map(|&e| self.inverse_link_scalar(e)).collect()
    }

    /// Adjusted dependent variable of the local-scoring step.
    pub fn adjusted_dependent(&self, y: &[f64], eta: &[f64], mu: &[f64]) -> Vec<f64> {
        debug_assert!(y.len() == eta.len() && y.len() == mu.len());
        match self.kind {
            FamilyKind::Gaussian => y.to_vec(),
            FamilyKind::Binomial => y
                .iter()
                .zip(eta)
                .zip(mu)
                .map(|((&y, &eta), &mu)| eta + (y - mu) / (mu * (1.0 - mu)))
                .collect(),
        }
    }

    pub fn irls_weights(&self, mu: &[f64]) -> Vec<f64> {
        match self.kind {
            FamilyKind::Gaussian => vec![1.0; mu.len()],
            FamilyKind::Binomial => mu.iter().map(|&m| m * (1.0 - m)).collect(),
        }
    }

    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => (y - mu).powi(2),
            FamilyKind::Binomial => -2.0 * (y * mu.ln() + (1.0 - y) * (1.0 - mu).ln()),
        }
    }

    /// Total deviance `sum_i DEV_i(y_i, mu_i)`.
    pub fn deviance(&self, y: &[f64], mu: &[f64]) -> Result<f64> {
        if y.len() != mu.len() {
            return Err(GannError::InvalidData(format!(
                "deviance: {} responses vs {} fitted values",
                y.len(),
                mu.len()
            )));
        }
        self.validate_response(y)?;
        Ok(y.iter().zip(mu).map(|(&y, &mu)| self.unit_deviance(y, mu)).sum())
    }

    pub fn validate_response(&self, y: &[f64]) -> Result<()> {
        match self.kind {
            FamilyKind::Gaussian => {
                if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                    return Err(GannError::InvalidResponse {
                        family: self.kind.to_string(),
                        detail: format!("non-finite value at row {i}"),
                    });
                }
            }
            FamilyKind::Binomial => {
                if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(GannError::InvalidResponse {
                        family: self.kind.to_string(),
                        detail: format!("value {} at row {i} is not 0 or 1", y[i]),
                    });
                }
            }
        }
        Ok(())
    }

    /// Local scoring is a single additive fit when the working response and
    /// weights cannot change between iterations.
    pub fn is_identity_gaussian(&self) -> bool {
        self.kind == FamilyKind::Gaussian
    }
}
