use serde::{Deserialize, Serialize};

use crate::error::SyntheticError;
use crate::math::LogitVector;
use crate::synthetic::corpus::Corpus;
use crate::vocab::TokenId;

pub const DEFAULT_SMOOTHING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Unigram,
    Bigram,
}

/// Add-k smoothed n-gram table standing in for a language decoder's prior.
///
/// Rows hold log-probabilities, so each row is already a normalized logit
/// vector. A bigram model conditions on the last context token only.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    kind: PriorKind,
    smoothing: f64,
    rows: Vec<LogitVector>,
}

impl PriorModel {
    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn vocab_size(&self) -> usize {
        self.rows[0].vocab_size()
    }

    /// Log-probability row used after `previous` (ignored for unigrams).
    pub fn row(&self, previous: Option<TokenId>) -> &LogitVector {
        match (self.kind, previous) {
            (PriorKind::Bigram, Some(t)) => &self.rows[t as usize],
            _ => &self.rows[0],
        }
    }

    /// The prior logits for the token following `context`.
    pub fn logits_for(&self, context: &[TokenId]) -> &LogitVector {
        self.row(context.last().copied())
    }
}

/// Builds an add-k prior from `corpus`.
///
/// Bigram transitions are counted within each document plus a final
/// transition from its last token to `eos`; no transition into the first
/// token is counted. Unigram counts are plain token counts.
pub fn compile_prior(
    corpus: &Corpus,
    vocab_size: usize,
    eos: TokenId,
    kind: PriorKind,
    smoothing: f64,
) -> Result<PriorModel, SyntheticError> {
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(SyntheticError::InvalidSmoothing(smoothing));
    }
    if corpus.is_empty() {
        return Err(SyntheticError::EmptyCorpus);
    }
    for &t in corpus.docs.iter().flatten().chain(std::iter::once(&eos)) {
        if t as usize >= vocab_size {
            return Err(SyntheticError::UnknownToken(format!("#{t}")));
        }
    }
    let n_rows = match kind {
        PriorKind::Unigram => 1,
        PriorKind::Bigram => vocab_size,
    };
    let mut counts = vec![vec![0u64; vocab_size]; n_rows];
    for doc in corpus.docs.iter().filter(|d| !d.is_empty()) {
        match kind {
            PriorKind::Unigram => {
                for &t in doc {
                    counts[0][t as usize] += 1;
                }
            }
            PriorKind::Bigram => {
                for pair in doc.windows(2) {
                    counts[pair[0] as usize][pair[1] as usize] += 1;
                }
                counts[*doc.last().unwrap() as usize][eos as usize] += 1;
            }
        }
    }
    let denom_extra = smoothing * vocab_size as f64;
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            let log_denom = (total as f64 + denom_extra).ln();
            let values = row.iter().map(|&c| (c as f64 + smoothing).ln() - log_denom).collect();
            LogitVector::new(values)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PriorModel { kind, smoothing, rows })
}
