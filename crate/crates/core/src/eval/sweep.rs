use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{Mode, SamplerConfig};
use crate::error::EvalError;
use crate::eval::metrics::PopeMetrics;
use crate::eval::pope::{evaluate_pope, EvalOptions, SourceFactory};
use crate::eval::strategy::Strategy;
use crate::modulation::{AlphaPolicy, PolicyKind};
use crate::synthetic::PopeItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Constant modulation rate.
    Alpha,
    /// Scale of the divergence-driven rate.
    Beta,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        })
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(format!("unknown sweep parameter `{other}` (expected alpha or beta)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub model: String,
    pub metrics: PopeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub param: SweepParam,
    /// The baseline row first, then one row per requested value in order.
    pub rows: Vec<SweepRow>,
}

/// The strategy a sweep evaluates at `value`.
///
/// Alpha sweeps use a constant rate. Beta sweeps use `family` (tanh unless
/// the sigmoid variant is requested); `beta = 0` pins the rate to zero.
pub fn sweep_strategy(param: SweepParam, value: f64, family: PolicyKind, sampler: SamplerConfig) -> Result<Strategy, EvalError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(EvalError::InvalidSweep(format!("{param} must be a non-negative number, got {value}")));
    }
    let (name, policy) = match param {
        SweepParam::Alpha => ("nolan_base", AlphaPolicy::Constant { alpha: value }),
        SweepParam::Beta if value == 0.0 => ("nolan_plus", AlphaPolicy::Constant { alpha: 0.0 }),
        SweepParam::Beta => match family {
            PolicyKind::KlSigmoid => ("nolan_plus_sigmoid", AlphaPolicy::KlSigmoid { beta: value }),
            _ => ("nolan_plus", AlphaPolicy::KlTanh { beta: value }),
        },
    };
    Ok(Strategy::new(name, Mode::NoLan, policy).with_sampler(sampler))
}

/// Evaluates the suite at every value plus a Regular baseline row with
/// value 0.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    family: PolicyKind,
    sampler: SamplerConfig,
    suite: &[PopeItem],
    factory: &dyn SourceFactory,
    opts: &EvalOptions,
) -> Result<SweepTable, EvalError> {
    if values.is_empty() {
        return Err(EvalError::InvalidSweep("no values given".into()));
    }
    let strategies = values
        .iter()
        .map(|&v| sweep_strategy(param, v, family, sampler))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = Strategy::regular().with_sampler(sampler);
    let mut rows = vec![SweepRow {
        value: 0.0,
        model: baseline.name.clone(),
        metrics: evaluate_pope(suite, &baseline, factory, opts)?.metrics,
    }];
    for (&value, strategy) in values.iter().zip(&strategies) {
        rows.push(SweepRow {
            value,
            model: strategy.name.clone(),
            metrics: evaluate_pope(suite, strategy, factory, opts)?.metrics,
        });
    }
    Ok(SweepTable { param, rows })
}
