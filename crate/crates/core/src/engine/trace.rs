use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::vocab::TokenId;

/// Which logit streams a decode combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Multimodal stream only.
    Regular,
    /// Text-only stream only.
    TextOnly,
    /// Multimodal stream contrasted against the same source's text-only stream.
    #[serde(rename = "nolan")]
    NoLan,
    /// Primary stream contrasted against a separate, caller-supplied source.
    GenericContrast,
}

impl Mode {
    pub fn is_dual(&self) -> bool {
        matches!(self, Mode::NoLan | Mode::GenericContrast)
    }

    pub fn uses_multimodal(&self) -> bool {
        !matches!(self, Mode::TextOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Regular => "regular",
            Mode::TextOnly => "text_only",
            Mode::NoLan => "nolan",
            Mode::GenericContrast => "generic_contrast",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regular" => Ok(Mode::Regular),
            "text_only" => Ok(Mode::TextOnly),
            "nolan" => Ok(Mode::NoLan),
            "generic_contrast" => Ok(Mode::GenericContrast),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Per-token trace entry.
///
/// Divergence fields and the per-stream entropy of a stream that was not
/// queried are `None` (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStepRecord {
    pub position: usize,
    pub token: TokenId,
    pub alpha_used: f64,
    pub gamma: Option<f64>,
    pub kl_m_u: Option<f64>,
    pub kl_u_m: Option<f64>,
    pub js: Option<f64>,
    pub entropy_final: f64,
    pub entropy_m: Option<f64>,
    pub entropy_u: Option<f64>,
    pub wall_nanos: u64,
}

impl DecodeStepRecord {
    /// Equality on everything except timing.
    pub fn same_values(&self, other: &Self) -> bool {
        let strip = |r: &Self| DecodeStepRecord { wall_nanos: 0, ..r.clone() };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Eos,
    MaxTokens,
    SourceError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    pub trace: Vec<DecodeStepRecord>,
    pub finish_reason: FinishReason,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DecodeResult {
    /// Equality ignoring `wall_nanos`.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.finish_reason == other.finish_reason
            && self.trace.len() == other.trace.len()
            && self.trace.iter().zip(&other.trace).all(|(a, b)| a.same_values(b))
    }

    pub fn total_wall_nanos(&self) -> u64 {
        self.trace.iter().map(|r| r.wall_nanos).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub multimodal_queries: usize,
    pub text_queries: usize,
}

/// Forward passes a decode made, derived from its mode and length.
pub fn step_counts(result: &DecodeResult) -> StepCounts {
    let n = result.tokens.len();
    let (multimodal_queries, text_queries) = match result.mode {
        Mode::Regular => (n, 0),
        Mode::TextOnly => (0, n),
        Mode::NoLan | Mode::GenericContrast => (n, n),
    };
    StepCounts {
        multimodal_queries,
        text_queries,
    }
}

/// Writes one JSON record per step.
pub fn write_trace<W: Write>(mut out: W, trace: &[DecodeStepRecord]) -> std::io::Result<()> {
    for record in trace {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> std::io::Result<Vec<DecodeStepRecord>> {
    let mut trace = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        trace.push(record);
    }
    Ok(trace)
}
