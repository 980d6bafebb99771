use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::math::ProbDist;
use crate::vocab::TokenId;

// Slack when comparing a cumulative prefix mass against `p`, so that a prefix
// whose exact mass equals `p` is not lost to rounding in the running sum.
const MASS_SLACK: f64 = 1e-12;

fn default_temperature() -> f64 {
    1.0
}

/// Token selection rule applied to the final next-token distribution.
///
/// Temperature, where present, reshapes the distribution before truncation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    #[default]
    Greedy,
    Temperature {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    TopK {
        k: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    TopP {
        p: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

impl SamplerConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidRequest(msg));
        let temperature = match *self {
            SamplerConfig::Greedy => return Ok(()),
            SamplerConfig::Temperature { temperature } => temperature,
            SamplerConfig::TopK { k, temperature } => {
                if k == 0 || k > vocab_size {
                    return bad(format!("top_k k must be in 1..={vocab_size}, got {k}"));
                }
                temperature
            }
            SamplerConfig::TopP { p, temperature } => {
                if !(p > 0.0 && p <= 1.0) {
                    return bad(format!("top_p p must be in (0, 1], got {p}"));
                }
                temperature
            }
        };
        if !(temperature.is_finite() && temperature > 0.0) {
            return bad(format!("temperature must be finite and > 0, got {temperature}"));
        }
        Ok(())
    }

    pub fn is_greedy(&self) -> bool {
        matches!(self, SamplerConfig::Greedy)
    }
}

impl fmt::Display for SamplerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SamplerConfig::Greedy => write!(f, "greedy"),
            SamplerConfig::Temperature { temperature } => write!(f, "temperature:{temperature}"),
            SamplerConfig::TopK { k, temperature } => write!(f, "top_k:{k}:{temperature}"),
            SamplerConfig::TopP { p, temperature } => write!(f, "top_p:{p}:{temperature}"),
        }
    }
}

/// Parses the compact command-line form: `greedy`, `temperature[:T]`,
/// `top_k:K[:T]`, `top_p:P[:T]`.
impl FromStr for SamplerConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, what: &str| -> Result<f64, String> {
            parts[i].parse::<f64>().map_err(|_| format!("invalid {what} `{}`", parts[i]))
        };
        let temperature = |i: usize| -> Result<f64, String> {
            if parts.len() > i {
                num(i, "temperature")
            } else {
                Ok(1.0)
            }
        };
        let arity = |lo: usize, hi: usize| -> Result<(), String> {
            if parts.len() < lo || parts.len() > hi {
                Err(format!("malformed sampler `{s}`"))
            } else {
                Ok(())
            }
        };
        match parts[0] {
            "greedy" => {
                arity(1, 1)?;
                Ok(SamplerConfig::Greedy)
            }
            "temperature" => {
                arity(1, 2)?;
                Ok(SamplerConfig::Temperature { temperature: temperature(1)? })
            }
            "top_k" => {
                arity(2, 3)?;
                let k = parts[1].parse::<usize>().map_err(|_| format!("invalid k `{}`", parts[1]))?;
                Ok(SamplerConfig::TopK { k, temperature: temperature(2)? })
            }
            "top_p" => {
                arity(2, 3)?;
                Ok(SamplerConfig::TopP { p: num(1, "p")?, temperature: temperature(2)? })
            }
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

/// `dist ** (1/T)`, renormalized, computed in log space.
fn tempered(dist: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return dist.to_vec();
    }
    let logs: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Token ids ordered by descending probability, ties by ascending id.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Inverse-CDF selection over `candidates`, whose weights need not sum to 1.
fn pick(probs: &[f64], candidates: &[usize], u: f64) -> usize {
    let total: f64 = candidates.iter().map(|&i| probs[i]).sum();
    let target = u * total;
    let mut cumulative = 0.0;
    let mut last_positive = candidates[0];
    for &i in candidates {
        if probs[i] <= 0.0 {
            continue;
        }
        last_positive = i;
        cumulative += probs[i];
        if target < cumulative {
            return i;
        }
    }
    last_positive
}

/// The candidate set and the weights a sampler draws from, before the draw.
///
/// Greedy yields the single argmax token with weight 1.
pub fn candidate_distribution(dist: &ProbDist, cfg: &SamplerConfig) -> Vec<(TokenId, f64)> {
    let probs = dist.as_slice();
    let (weights, candidates) = match *cfg {
        SamplerConfig::Greedy => return vec![(dist.argmax() as TokenId, 1.0)],
        SamplerConfig::Temperature { temperature } => {
            (tempered(probs, temperature), (0..probs.len()).collect::<Vec<_>>())
        }
        SamplerConfig::TopK { k, temperature } => {
            let w = tempered(probs, temperature);
            let mut order = ranked(&w);
            order.truncate(k);
            (w, order)
        }
        SamplerConfig::TopP { p, temperature } => {
            let w = tempered(probs, temperature);
            let order = ranked(&w);
            let mut cumulative = 0.0;
            let mut cut = order.len();
            for (n, &i) in order.iter().enumerate() {
                cumulative += w[i];
                if cumulative + MASS_SLACK >= p {
                    cut = n + 1;
                    break;
                }
            }
            let mut order = order;
            order.truncate(cut);
            (w, order)
        }
    };
    let total: f64 = candidates.iter().map(|&i| weights[i]).sum();
    candidates
        .into_iter()
        .map(|i| (i as TokenId, weights[i] / total))
        .collect()
}

/// Draws one token from `dist` using the single uniform draw `u` in `[0, 1)`.
pub fn sample(dist: &ProbDist, cfg: &SamplerConfig, u: f64) -> TokenId {
    let probs = dist.as_slice();
    match *cfg {
        SamplerConfig::Greedy => dist.argmax() as TokenId,
        SamplerConfig::Temperature { temperature } => {
            let w = tempered(probs, temperature);
            let all: Vec<usize> = (0..w.len()).collect();
            pick(&w, &all, u) as TokenId
        }
        SamplerConfig::TopK { .. } | SamplerConfig::TopP { .. } => {
            let candidates = candidate_distribution(dist, cfg);
            let weights: Vec<f64> = candidates.iter().map(|&(_, w)| w).collect();
            let slots: Vec<usize> = (0..candidates.len()).collect();
            candidates[pick(&weights, &slots, u)].0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng::CounterRng;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(sample(&pd(&[0.1, 0.7, 0.2]), &SamplerConfig::Greedy, 0.9), 1);
        assert_eq!(sample(&pd(&[0.5, 0.5]), &SamplerConfig::Greedy, 0.9), 0);
    }

    #[test]
    fn top_p_candidate_set() {
        let cfg = SamplerConfig::TopP { p: 0.6, temperature: 1.0 };
        let c = candidate_distribution(&pd(&[0.5, 0.3, 0.2]), &cfg);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].0, 0);
        assert_eq!(c[1].0, 1);
        assert!((c[0].1 - 0.625).abs() < 1e-12);
        assert!((c[1].1 - 0.375).abs() < 1e-12);
    }

    #[test]
    fn top_p_exact_boundary_keeps_prefix() {
        let cfg = SamplerConfig::TopP { p: 0.8, temperature: 1.0 };
        assert_eq!(candidate_distribution(&pd(&[0.5, 0.3, 0.2]), &cfg).len(), 2);
        let all = SamplerConfig::TopP { p: 1.0, temperature: 1.0 };
        assert_eq!(candidate_distribution(&pd(&[0.5, 0.3, 0.2]), &all).len(), 3);
    }

    #[test]
    fn top_p_frequencies() {
        let cfg = SamplerConfig::TopP { p: 0.6, temperature: 1.0 };
        let dist = pd(&[0.5, 0.3, 0.2]);
        let rng = CounterRng::new(2024);
        let n = 100_000u64;
        let mut counts = [0usize; 3];
        for step in 0..n {
            counts[sample(&dist, &cfg, rng.uniform(step)) as usize] += 1;
        }
        assert_eq!(counts[2], 0);
        let f0 = counts[0] as f64 / n as f64;
        let f1 = counts[1] as f64 / n as f64;
        assert!((f0 - 0.625).abs() < 0.01, "{f0}");
        assert!((f1 - 0.375).abs() < 0.01, "{f1}");
    }

    #[test]
    fn top_k_renormalizes() {
        let cfg = SamplerConfig::TopK { k: 2, temperature: 1.0 };
        let c = candidate_distribution(&pd(&[0.2, 0.5, 0.3]), &cfg);
        assert_eq!(c.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!((c[0].1 - 0.625).abs() < 1e-12);
        for u in [0.0, 0.3, 0.62, 0.63, 0.999] {
            let t = sample(&pd(&[0.2, 0.5, 0.3]), &cfg, u);
            assert_eq!(t, if u < 0.625 { 1 } else { 2 });
        }
    }

    #[test]
    fn temperature_reshapes() {
        let dist = pd(&[0.8, 0.2]);
        let cold = candidate_distribution(&dist, &SamplerConfig::Temperature { temperature: 0.5 });
        // 0.8^2 / (0.8^2 + 0.2^2)
        assert!((cold[0].1 - 0.64 / 0.68).abs() < 1e-12);
        let same = candidate_distribution(&dist, &SamplerConfig::Temperature { temperature: 1.0 });
        assert_eq!(same[0].1, 0.8);
        assert_eq!(sample(&dist, &SamplerConfig::Temperature { temperature: 1.0 }, 0.79), 0);
        assert_eq!(sample(&dist, &SamplerConfig::Temperature { temperature: 1.0 }, 0.81), 1);
    }

    #[test]
    fn zero_mass_tokens_never_drawn() {
        let dist = pd(&[0.0, 1.0, 0.0]);
        let cfg = SamplerConfig::Temperature { temperature: 2.0 };
        for u in [0.0, 0.5, 0.999_999] {
            assert_eq!(sample(&dist, &cfg, u), 1);
        }
    }

    #[test]
    fn validation() {
        assert!(SamplerConfig::TopK { k: 0, temperature: 1.0 }.validate(4).is_err());
        assert!(SamplerConfig::TopK { k: 5, temperature: 1.0 }.validate(4).is_err());
        assert!(SamplerConfig::TopP { p: 0.0, temperature: 1.0 }.validate(4).is_err());
        assert!(SamplerConfig::TopP { p: 1.0, temperature: 1.0 }.validate(4).is_ok());
        assert!(SamplerConfig::Temperature { temperature: 0.0 }.validate(4).is_err());
    }

    #[test]
    fn parse_and_wire_format() {
        assert_eq!("greedy".parse::<SamplerConfig>().unwrap(), SamplerConfig::Greedy);
        assert_eq!(
            "top_p:0.9".parse::<SamplerConfig>().unwrap(),
            SamplerConfig::TopP { p: 0.9, temperature: 1.0 }
        );
        assert_eq!(
            "top_k:5:0.7".parse::<SamplerConfig>().unwrap(),
            SamplerConfig::TopK { k: 5, temperature: 0.7 }
        );
        assert!("nucleus".parse::<SamplerConfig>().is_err());
        assert!("greedy:1".parse::<SamplerConfig>().is_err());
        let cfg: SamplerConfig = serde_json::from_str(r#"{"kind":"top_p","p":0.9}"#).unwrap();
        assert_eq!(cfg, SamplerConfig::TopP { p: 0.9, temperature: 1.0 });
        let back: SamplerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
