//! Trace-level analyses: divergence by answer correctness, entropy,
//! per-position divergence, the mutual-information estimate, and timing.

use serde::{Deserialize, Serialize};

use crate::engine::{step_counts, DecodeResult, DecodeStepRecord};
use crate::error::EvalError;

/// Mean stream divergences at the answer position over one subset of items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetDivergence {
    pub kl_m_u: f64,
    pub kl_u_m: f64,
    pub js: f64,
    pub n_items: usize,
}

/// `None` marks an empty subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetDivergenceReport {
    pub hallucination: Option<SubsetDivergence>,
    pub no_hallucination: Option<SubsetDivergence>,
}

fn dual(step: &DecodeStepRecord) -> Result<(f64, f64, f64), EvalError> {
    match (step.kl_m_u, step.kl_u_m, step.js) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(EvalError::SingleStreamTrace),
    }
}

fn subset_mean(rows: &[(f64, f64, f64)]) -> Option<SubsetDivergence> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(SubsetDivergence {
        kl_m_u: rows.iter().map(|r| r.0).sum::<f64>() / n,
        kl_u_m: rows.iter().map(|r| r.1).sum::<f64>() / n,
        js: rows.iter().map(|r| r.2).sum::<f64>() / n,
        n_items: rows.len(),
    })
}

/// Splits answers by correctness and averages the divergences recorded at
/// position 0. Items whose trace is empty carry no answer-position data
/// and are skipped.
pub fn subset_divergence_report<'a>(
    items: impl IntoIterator<Item = (bool, &'a DecodeResult)>,
) -> Result<SubsetDivergenceReport, EvalError> {
    let mut wrong = Vec::new();
    let mut right = Vec::new();
    for (correct, result) in items {
        let Some(first) = result.trace.first() else {
            continue;
        };
        let row = dual(first)?;
        if correct {
            right.push(row);
        } else {
            wrong.push(row);
        }
    }
    Ok(SubsetDivergenceReport {
        hallucination: subset_mean(&wrong),
        no_hallucination: subset_mean(&right),
    })
}

/// Mean of `entropy_final` over every step of every result.
pub fn mean_entropy<'a>(results: impl IntoIterator<Item = &'a DecodeResult>) -> Result<f64, EvalError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for step in results.into_iter().flat_map(|r| &r.trace) {
        sum += step.entropy_final;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoTraces);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub decoding: String,
    pub entropy: f64,
}

pub fn entropy_report<'a, I>(by_strategy: impl IntoIterator<Item = (String, I)>) -> Result<Vec<EntropyRow>, EvalError>
where
    I: IntoIterator<Item = &'a DecodeResult>,
{
    by_strategy
        .into_iter()
        .map(|(decoding, results)| {
            Ok(EntropyRow {
                decoding,
                entropy: mean_entropy(results)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub position: usize,
    pub kl_value: f64,
    pub n_traces: usize,
}

/// Mean `gamma` at each generated position, over the traces long enough
/// to reach it.
pub fn kl_by_position<'a>(results: impl IntoIterator<Item = &'a DecodeResult>) -> Result<Vec<PositionRow>, EvalError> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for result in results {
        for (i, step) in result.trace.iter().enumerate() {
            let gamma = step.gamma.ok_or(EvalError::SingleStreamTrace)?;
            if sums.len() <= i {
                sums.push((0.0, 0));
            }
            sums[i].0 += gamma;
            sums[i].1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(EvalError::NoTraces);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(position, (sum, n))| PositionRow {
            position,
            kl_value: sum / n as f64,
            n_traces: n,
        })
        .collect())
}

/// Empirical conditional mutual information between the image and the next
/// token: the mean of `KL(p_m || p_u)` over every recorded step. The
/// conditional mutual information `I(y; v | x)` equals the expectation of
/// that divergence over images, so averaging over scenes and steps
/// estimates it.
pub fn mutual_information_estimate<'a>(
    results: impl IntoIterator<Item = &'a DecodeResult>,
) -> Result<f64, EvalError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for step in results.into_iter().flat_map(|r| &r.trace) {
        sum += step.kl_m_u.ok_or(EvalError::SingleStreamTrace)?;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoTraces);
    }
    Ok(sum / n as f64)
}

/// `None` in both rates marks a strategy that produced no tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub decoding: String,
    pub seconds_per_token: Option<f64>,
    pub queries_per_token: Option<f64>,
    pub tokens: usize,
}

pub fn timing_row<'a>(decoding: String, results: impl IntoIterator<Item = &'a DecodeResult>) -> TimingRow {
    let (mut nanos, mut queries, mut tokens) = (0u128, 0usize, 0usize);
    for result in results {
        nanos += u128::from(result.total_wall_nanos());
        let counts = step_counts(result);
        queries += counts.multimodal_queries + counts.text_queries;
        tokens += result.trace.len();
    }
    let per_token = |x: f64| (tokens > 0).then(|| x / tokens as f64);
    TimingRow {
        decoding,
        seconds_per_token: per_token(nanos as f64 / 1e9),
        queries_per_token: per_token(queries as f64),
        tokens,
    }
}

pub fn timing_report<'a, I>(by_strategy: impl IntoIterator<Item = (String, I)>) -> Vec<TimingRow>
where
    I: IntoIterator<Item = &'a DecodeResult>,
{
    by_strategy.into_iter().map(|(name, results)| timing_row(name, results)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{FinishReason, Mode};

    fn step(position: usize, kl: Option<(f64, f64, f64)>, entropy: f64) -> DecodeStepRecord {
        DecodeStepRecord {
            position,
            token: 0,
            alpha_used: 0.0,
            gamma: kl.map(|k| 0.5 * (k.0 + k.1)),
            kl_m_u: kl.map(|k| k.0),
            kl_u_m: kl.map(|k| k.1),
            js: kl.map(|k| k.2),
            entropy_final: entropy,
            entropy_m: None,
            entropy_u: None,
            wall_nanos: 1_000,
        }
    }

    fn result(mode: Mode, trace: Vec<DecodeStepRecord>) -> DecodeResult {
        DecodeResult {
            tokens: trace.iter().map(|s| s.token).collect(),
            trace,
            finish_reason: FinishReason::MaxTokens,
            mode,
            error: None,
        }
    }

    #[test]
    fn all_correct_leaves_hallucination_empty() {
        let r = result(Mode::NoLan, vec![step(0, Some((1.0, 2.0, 0.3)), 0.5)]);
        let rep = subset_divergence_report([(true, &r), (true, &r)]).unwrap();
        assert!(rep.hallucination.is_none());
        assert_eq!(rep.no_hallucination.unwrap().n_items, 2);
    }

    #[test]
    fn single_stream_traces_are_rejected() {
        let r = result(Mode::Regular, vec![step(0, None, 0.5)]);
        assert!(matches!(subset_divergence_report([(true, &r)]), Err(EvalError::SingleStreamTrace)));
        assert!(matches!(mutual_information_estimate([&r]), Err(EvalError::SingleStreamTrace)));
        assert!(matches!(kl_by_position([&r]), Err(EvalError::SingleStreamTrace)));
    }

    #[test]
    fn uniform_and_one_hot_entropy() {
        let uniform = result(Mode::Regular, vec![step(0, None, 4f64.ln()), step(1, None, 4f64.ln())]);
        let sharp = result(Mode::Regular, vec![step(0, None, 0.0)]);
        let rows = entropy_report([("u".to_string(), vec![&uniform]), ("s".to_string(), vec![&sharp])]).unwrap();
        assert_eq!(rows[0].entropy, 4f64.ln());
        assert_eq!(rows[1].entropy, 0.0);
        assert!(matches!(mean_entropy([]), Err(EvalError::NoTraces)));
    }

    #[test]
    fn positions_average_over_long_enough_traces() {
        let kl = |g: f64| Some((g, g, 0.0));
        let a = result(Mode::NoLan, vec![step(0, kl(1.0), 0.0), step(1, kl(2.0), 0.0)]);
        let b = result(
            Mode::NoLan,
            (0..4).map(|i| step(i, kl(3.0 + i as f64), 0.0)).collect(),
        );
        let rows = kl_by_position([&a, &b]).unwrap();
        let values: Vec<(f64, usize)> = rows.iter().map(|r| (r.kl_value, r.n_traces)).collect();
        assert_eq!(values, [(2.0, 2), (3.0, 2), (5.0, 1), (6.0, 1)]);
    }

    #[test]
    fn timing_counts_queries_per_token() {
        let kl = Some((0.1, 0.1, 0.01));
        let dual = result(Mode::NoLan, vec![step(0, kl, 0.0), step(1, kl, 0.0)]);
        let single = result(Mode::Regular, vec![step(0, None, 0.0)]);
        let empty = result(Mode::NoLan, vec![]);
        let rows = timing_report([
            ("nolan".to_string(), vec![&dual]),
            ("regular".to_string(), vec![&single]),
            ("none".to_string(), vec![&empty]),
        ]);
        assert_eq!(rows[0].queries_per_token, Some(2.0));
        assert_eq!(rows[1].queries_per_token, Some(1.0));
        assert_eq!(rows[0].seconds_per_token, Some(1e-6));
        assert_eq!(rows[2].seconds_per_token, None);
        assert_eq!(rows[2].tokens, 0);
    }
}
