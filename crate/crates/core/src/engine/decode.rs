use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::rng::CounterRng;
use crate::engine::sampler::{sample, SamplerConfig};
use crate::engine::source::{LogitSource, Modality, Query};
use crate::engine::trace::{DecodeResult, DecodeStepRecord, FinishReason, Mode};
use crate::error::{EngineError, SourceError};
use crate::math::{entropy, softmax, LogitVector, ProbDist, StreamDivergence};
use crate::modulation::{combine_logits, AlphaPolicy};
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 512;

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRequest {
    #[serde(default)]
    pub prompt_tokens: Vec<TokenId>,
    #[serde(default)]
    pub visual_ref: Option<String>,
    #[serde(default)]
    pub policy: AlphaPolicy,
    pub mode: Mode,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DecodeRequest {
    pub fn new(mode: Mode) -> Self {
        Self {
            prompt_tokens: Vec::new(),
            visual_ref: None,
            policy: AlphaPolicy::default(),
            mode,
            sampler: SamplerConfig::Greedy,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: 0,
        }
    }
}

/// The distribution one step samples from, with everything the trace records
/// about how it was formed. `dist` is the modulated distribution before any
/// sampler temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub dist: ProbDist,
    pub alpha_used: f64,
    pub gamma: Option<f64>,
    pub kl_m_u: Option<f64>,
    pub kl_u_m: Option<f64>,
    pub js: Option<f64>,
    pub entropy_final: f64,
    pub entropy_m: Option<f64>,
    pub entropy_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepFailure {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Turns the logits queried at one step into the next-token distribution.
///
/// `l_m` is the primary stream (absent in `TextOnly` mode) and `l_u` the
/// contrast stream (absent in `Regular` mode).
pub fn step_distribution(
    mode: Mode,
    policy: &AlphaPolicy,
    l_m: Option<&LogitVector>,
    l_u: Option<&LogitVector>,
) -> Result<StepOutput, EngineError> {
    let missing = |what: &str| EngineError::InvalidRequest(format!("mode {mode} needs the {what} stream"));
    match mode {
        Mode::Regular | Mode::TextOnly => {
            let l = if mode == Mode::Regular {
                l_m.ok_or_else(|| missing("multimodal"))?
            } else {
                l_u.ok_or_else(|| missing("text-only"))?
            };
            let dist = softmax(l);
            let h = entropy(&dist);
            Ok(StepOutput {
                alpha_used: 0.0,
                gamma: None,
                kl_m_u: None,
                kl_u_m: None,
                js: None,
                entropy_final: h,
                entropy_m: (mode == Mode::Regular).then_some(h),
                entropy_u: (mode == Mode::TextOnly).then_some(h),
                dist,
            })
        }
        Mode::NoLan | Mode::GenericContrast => {
            let l_m = l_m.ok_or_else(|| missing("primary"))?;
            let l_u = l_u.ok_or_else(|| missing("contrast"))?;
            policy.validate()?;
            let div = StreamDivergence::between(l_m, l_u)?;
            let gamma = div.symmetric_kl();
            let alpha_used = policy.alpha_for_gamma(gamma);
            let dist = softmax(&combine_logits(l_m, l_u, alpha_used)?);
            Ok(StepOutput {
                alpha_used,
                gamma: Some(gamma),
                kl_m_u: Some(div.kl_forward),
                kl_u_m: Some(div.kl_reverse),
                js: Some(div.js),
                entropy_final: entropy(&dist),
                entropy_m: Some(div.entropy_first),
                entropy_u: Some(div.entropy_second),
                dist,
            })
        }
    }
}

/// Where each stream's logits come from.
enum Streams<'a> {
    /// Multimodal and text-only conditionals of one source.
    Own(&'a mut dyn LogitSource),
    /// Primary source against a separate contrast source, both queried with
    /// the visual reference.
    Contrast {
        primary: &'a mut dyn LogitSource,
        contrast: &'a mut dyn LogitSource,
    },
}

impl Streams<'_> {
    fn fetch(
        &mut self,
        mode: Mode,
        context: &[TokenId],
        visual_ref: Option<&str>,
        vocab_size: usize,
    ) -> Result<(Option<LogitVector>, Option<LogitVector>), SourceError> {
        let multimodal = Query {
            modality: Modality::Multimodal,
            context,
            visual_ref,
        };
        let text_only = Query {
            modality: Modality::TextOnly,
            context,
            visual_ref: None,
        };
        let (l_m, l_u) = match (self, mode) {
            (Streams::Own(src), Mode::Regular) => (Some(src.logits(&multimodal)?), None),
            (Streams::Own(src), Mode::TextOnly) => (None, Some(src.logits(&text_only)?)),
            (Streams::Own(src), _) => {
                let l_m = src.logits(&multimodal)?;
                (Some(l_m), Some(src.logits(&text_only)?))
            }
            (Streams::Contrast { primary, contrast }, _) => {
                let l_m = primary.logits(&multimodal)?;
                (Some(l_m), Some(contrast.logits(&multimodal)?))
            }
        };
        for l in l_m.iter().chain(l_u.iter()) {
            if l.vocab_size() != vocab_size {
                return Err(SourceError::new(
                    "engine",
                    format!("source returned {} logits, vocabulary has {vocab_size}", l.vocab_size()),
                ));
            }
        }
        Ok((l_m, l_u))
    }
}

/// Runs the dual-stream decoding loop against a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct Decoder {
    vocab: Vocabulary,
}

impl Decoder {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `BOS` followed by the prompt: the context of the first step.
    pub fn initial_context(&self, req: &DecodeRequest) -> Vec<TokenId> {
        let mut context = Vec::with_capacity(1 + req.prompt_tokens.len() + req.max_new_tokens);
        context.push(self.vocab.bos());
        context.extend_from_slice(&req.prompt_tokens);
        context
    }

    fn check_source(&self, src: &dyn LogitSource) -> Result<(), EngineError> {
        let source_size = src.descriptor().vocab_size;
        if source_size != self.vocab.size() {
            return Err(EngineError::VocabMismatch {
                engine: self.vocab.size(),
                source_size,
            });
        }
        Ok(())
    }

    fn validate(&self, req: &DecodeRequest, src: &dyn LogitSource) -> Result<(), EngineError> {
        self.check_source(src)?;
        if req.max_new_tokens == 0 {
            return Err(EngineError::InvalidRequest("max_new_tokens must be positive".into()));
        }
        if let Some(&bad) = req.prompt_tokens.iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(EngineError::TokenOutOfRange(bad));
        }
        req.policy.validate()?;
        req.sampler.validate(self.vocab.size())?;
        if req.mode.uses_multimodal() && src.descriptor().supports_visual && req.visual_ref.is_none() {
            return Err(EngineError::InvalidRequest(format!(
                "mode {} on a visual source needs a visual_ref",
                req.mode
            )));
        }
        Ok(())
    }

    /// Decodes with `src` supplying both streams. `GenericContrast` needs a
    /// separate contrast source; use [`Decoder::generic_contrast_decode`].
    pub fn decode(&self, req: &DecodeRequest, src: &mut dyn LogitSource) -> Result<DecodeResult, EngineError> {
        if req.mode == Mode::GenericContrast {
            return Err(EngineError::InvalidRequest(
                "generic_contrast mode needs a contrast source".into(),
            ));
        }
        self.validate(req, src)?;
        Ok(self.run(req, req.mode, Streams::Own(src)))
    }

    /// Decodes with `contrast` standing in for the text-only stream. The
    /// request's mode is ignored; the result reports `GenericContrast`.
    pub fn generic_contrast_decode(
        &self,
        req: &DecodeRequest,
        primary: &mut dyn LogitSource,
        contrast: &mut dyn LogitSource,
    ) -> Result<DecodeResult, EngineError> {
        let req_view = DecodeRequest {
            mode: Mode::GenericContrast,
            ..req.clone()
        };
        self.validate(&req_view, primary)?;
        self.check_source(contrast)?;
        Ok(self.run(req, Mode::GenericContrast, Streams::Contrast { primary, contrast }))
    }

    /// Computes the distribution for one step at an arbitrary `context`
    /// without sampling. `contrast` is required in `GenericContrast` mode and
    /// ignored otherwise.
    pub fn step(
        &self,
        req: &DecodeRequest,
        src: &mut dyn LogitSource,
        contrast: Option<&mut dyn LogitSource>,
        context: &[TokenId],
    ) -> Result<StepOutput, StepFailure> {
        self.check_source(src)?;
        let mut streams = match (req.mode, contrast) {
            (Mode::GenericContrast, Some(contrast)) => {
                self.check_source(contrast)?;
                Streams::Contrast { primary: src, contrast }
            }
            (Mode::GenericContrast, None) => {
                return Err(EngineError::InvalidRequest("generic_contrast mode needs a contrast source".into()).into())
            }
            _ => Streams::Own(src),
        };
        let (l_m, l_u) = streams.fetch(req.mode, context, req.visual_ref.as_deref(), self.vocab.size())?;
        Ok(step_distribution(req.mode, &req.policy, l_m.as_ref(), l_u.as_ref())?)
    }

    fn run(&self, req: &DecodeRequest, mode: Mode, mut streams: Streams<'_>) -> DecodeResult {
        let rng = CounterRng::new(req.seed);
        let mut context = self.initial_context(req);
        let mut tokens = Vec::new();
        let mut trace = Vec::new();
        let visual_ref = req.visual_ref.as_deref();
        let finish = |tokens, trace, finish_reason, error| DecodeResult {
            tokens,
            trace,
            finish_reason,
            mode,
            error,
        };

        for position in 0..req.max_new_tokens {
            let started = Instant::now();
            let outcome = streams
                .fetch(mode, &context, visual_ref, self.vocab.size())
                .map_err(StepFailure::from)
                .and_then(|(l_m, l_u)| Ok(step_distribution(mode, &req.policy, l_m.as_ref(), l_u.as_ref())?));
            let out = match outcome {
                Ok(out) => out,
                Err(e) => {
                    log::warn!("decode stopped at position {position}: {e}");
                    return finish(tokens, trace, FinishReason::SourceError, Some(e.to_string()));
                }
            };
            let token = sample(&out.dist, &req.sampler, rng.uniform(position as u64));
            let wall_nanos = started.elapsed().as_nanos() as u64;
            log::trace!(
                "step {position}: token {token} alpha {:.4} gamma {:?}",
                out.alpha_used,
                out.gamma
            );
            trace.push(DecodeStepRecord {
                position,
                token,
                alpha_used: out.alpha_used,
                gamma: out.gamma,
                kl_m_u: out.kl_m_u,
                kl_u_m: out.kl_u_m,
                js: out.js,
                entropy_final: out.entropy_final,
                entropy_m: out.entropy_m,
                entropy_u: out.entropy_u,
                wall_nanos,
            });
            tokens.push(token);
            context.push(token);
            if token == self.vocab.eos() {
                return finish(tokens, trace, FinishReason::Eos, None);
            }
        }
        finish(tokens, trace, FinishReason::MaxTokens, None)
    }
}
