use serde::{Deserialize, Serialize};

use crate::engine::{Mode, SamplerConfig};
use crate::modulation::{AlphaPolicy, DEFAULT_BETA};

/// A named decoding configuration evaluated by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub policy: AlphaPolicy,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl Strategy {
    pub fn new(name: impl Into<String>, mode: Mode, policy: AlphaPolicy) -> Self {
        Self {
            name: name.into(),
            mode,
            policy,
            sampler: SamplerConfig::Greedy,
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn regular() -> Self {
        Self::new("regular", Mode::Regular, AlphaPolicy::Constant { alpha: 0.0 })
    }

    pub fn text_only() -> Self {
        Self::new("text_only", Mode::TextOnly, AlphaPolicy::Constant { alpha: 0.0 })
    }

    pub fn nolan_base() -> Self {
        Self::new("nolan_base", Mode::NoLan, AlphaPolicy::default())
    }

    pub fn nolan_plus() -> Self {
        Self::new("nolan_plus", Mode::NoLan, AlphaPolicy::KlTanh { beta: DEFAULT_BETA })
    }

    pub fn nolan_plus_sigmoid() -> Self {
        Self::new("nolan_plus_sigmoid", Mode::NoLan, AlphaPolicy::KlSigmoid { beta: DEFAULT_BETA })
    }

    /// Regular decoding run through the dual-stream path with `alpha = 0`:
    /// the same tokens as `regular`, with both streams' divergences traced.
    pub fn regular_diagnostic() -> Self {
        Self::new("regular", Mode::NoLan, AlphaPolicy::Constant { alpha: 0.0 })
    }

    /// Contrast against a distorted copy of the scene.
    pub fn contrast(policy: AlphaPolicy) -> Self {
        Self::new("contrast", Mode::GenericContrast, policy)
    }
}
