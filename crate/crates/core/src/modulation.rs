//! Prior-suppressing logit modulation.
//!
//! Given multimodal logits `l_m` and text-only logits `l_u`, the modulated
//! logits are `l_m + alpha * (l_m - l_u)`. The rate `alpha` is either a
//! constant or derived from the symmetric KL divergence `gamma` between the
//! two streams' distributions, so that near-identical streams (a decoder
//! running on its language prior) are pushed away from the prior hardest.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModulationError;
use crate::math::{softmax, LogitVector, ProbDist, StreamDivergence};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.8;

/// How the modulation rate is chosen at each step.
///
/// Serialized as `{"policy": "constant", "alpha": 1.0}`,
/// `{"policy": "kl_tanh", "beta": 0.8}` or `{"policy": "kl_sigmoid", "beta": 0.8}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaPolicy {
    Constant {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    KlTanh {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    KlSigmoid {
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Constant { alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Constant,
    KlTanh,
    KlSigmoid,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Constant => "constant",
            PolicyKind::KlTanh => "kl_tanh",
            PolicyKind::KlSigmoid => "kl_sigmoid",
        })
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(PolicyKind::Constant),
            "kl_tanh" => Ok(PolicyKind::KlTanh),
            "kl_sigmoid" => Ok(PolicyKind::KlSigmoid),
            other => Err(format!("unknown policy `{other}` (expected constant, kl_tanh or kl_sigmoid)")),
        }
    }
}

impl AlphaPolicy {
    pub fn constant(alpha: f64) -> Result<Self, ModulationError> {
        let p = AlphaPolicy::Constant { alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn kl_tanh(beta: f64) -> Result<Self, ModulationError> {
        let p = AlphaPolicy::KlTanh { beta };
        p.validate()?;
        Ok(p)
    }

    pub fn kl_sigmoid(beta: f64) -> Result<Self, ModulationError> {
        let p = AlphaPolicy::KlSigmoid { beta };
        p.validate()?;
        Ok(p)
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            AlphaPolicy::Constant { .. } => PolicyKind::Constant,
            AlphaPolicy::KlTanh { .. } => PolicyKind::KlTanh,
            AlphaPolicy::KlSigmoid { .. } => PolicyKind::KlSigmoid,
        }
    }

    pub fn validate(&self) -> Result<(), ModulationError> {
        match *self {
            AlphaPolicy::Constant { alpha } if !(alpha.is_finite() && alpha >= 0.0) => Err(
                ModulationError::InvalidPolicy(format!("constant alpha must be finite and >= 0, got {alpha}")),
            ),
            AlphaPolicy::KlTanh { beta } | AlphaPolicy::KlSigmoid { beta }
                if !(beta.is_finite() && beta > 0.0) =>
            {
                Err(ModulationError::InvalidPolicy(format!("beta must be finite and > 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// The rate this policy assigns to a step with divergence `gamma`.
    ///
    /// `gamma = 0` takes the limit of `1/gamma -> inf`, i.e. `2 * beta` for
    /// both adaptive kinds.
    pub fn alpha_for_gamma(&self, gamma: f64) -> f64 {
        match *self {
            AlphaPolicy::Constant { alpha } => alpha,
            AlphaPolicy::KlTanh { beta } => {
                if gamma <= 0.0 {
                    2.0 * beta
                } else {
                    beta * ((1.0 / gamma).tanh() + 1.0)
                }
            }
            AlphaPolicy::KlSigmoid { beta } => {
                if gamma <= 0.0 {
                    2.0 * beta
                } else {
                    2.0 * beta / (1.0 + (-1.0 / gamma).exp())
                }
            }
        }
    }
}

/// What the modulation did at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationRecord {
    pub alpha_used: f64,
    /// Symmetric KL between the two streams, in nats.
    pub gamma: f64,
    pub policy_kind: PolicyKind,
}

/// Symmetric KL divergence between `softmax(l_m)` and `softmax(l_u)`.
pub fn compute_gamma(l_m: &LogitVector, l_u: &LogitVector) -> Result<f64, ModulationError> {
    Ok(StreamDivergence::between(l_m, l_u)?.symmetric_kl())
}

pub fn compute_alpha(
    policy: &AlphaPolicy,
    l_m: &LogitVector,
    l_u: &LogitVector,
) -> Result<ModulationRecord, ModulationError> {
    policy.validate()?;
    let gamma = compute_gamma(l_m, l_u)?;
    Ok(ModulationRecord {
        alpha_used: policy.alpha_for_gamma(gamma),
        gamma,
        policy_kind: policy.kind(),
    })
}

/// `(1 + alpha) * l_m - alpha * l_u`, elementwise.
pub fn combine_logits(
    l_m: &LogitVector,
    l_u: &LogitVector,
    alpha: f64,
) -> Result<LogitVector, ModulationError> {
    if !alpha.is_finite() {
        return Err(ModulationError::NonFiniteAlpha(alpha));
    }
    l_m.ensure_same_size(l_u)?;
    let combined: Vec<f64> = l_m
        .as_slice()
        .iter()
        .zip(l_u.as_slice())
        .map(|(&m, &u)| m + alpha * (m - u))
        .collect();
    if let Some(index) = combined.iter().position(|v| !v.is_finite()) {
        return Err(ModulationError::Overflow { index });
    }
    Ok(LogitVector::new(combined)?)
}

/// The modulated next-token distribution plus the record of how it was formed.
pub fn nolan_distribution(
    l_m: &LogitVector,
    l_u: &LogitVector,
    policy: &AlphaPolicy,
) -> Result<(ProbDist, ModulationRecord), ModulationError> {
    let record = compute_alpha(policy, l_m, l_u)?;
    let combined = combine_logits(l_m, l_u, record.alpha_used)?;
    Ok((softmax(&combined), record))
}
