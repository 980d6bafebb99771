use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{DecodeRequest, DecodeResult, Decoder, FinishReason, LogitSource, Mode};
use crate::error::EvalError;
use crate::eval::metrics::{Answer, Confusion, PopeMetrics};
use crate::eval::strategy::Strategy;
use crate::synthetic::{build_sources, Label, PopeItem, Scene, SyntheticLvlm, IS_TOKEN, NO_TOKEN, YES_TOKEN};
use crate::vocab::Vocabulary;

pub type BoxedSource<'a> = Box<dyn LogitSource + Send + 'a>;

/// Hands out one source per decode session, keyed by scene.
pub trait SourceFactory: Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Name of the underlying model for report rows.
    fn model_name(&self) -> String;

    fn source(&self, scene_id: &str) -> Result<BoxedSource<'_>, EvalError>;

    /// The contrast source used in `GenericContrast` mode, if this factory
    /// provides one.
    fn contrast(&self, _scene_id: &str) -> Result<Option<BoxedSource<'_>>, EvalError> {
        Ok(None)
    }
}

/// Sources over the scenes of a synthetic model. The contrast source is the
/// same scene with `contrast_distortion` applied.
#[derive(Debug, Clone)]
pub struct SyntheticFactory {
    model: Arc<SyntheticLvlm>,
    scenes: HashMap<String, Scene>,
    name: String,
    pub contrast_distortion: f64,
}

impl SyntheticFactory {
    pub fn new(model: Arc<SyntheticLvlm>, scenes: &[Scene], name: impl Into<String>) -> Self {
        Self {
            model,
            scenes: scenes.iter().map(|s| (s.scene_id.clone(), s.clone())).collect(),
            name: name.into(),
            contrast_distortion: 1.0,
        }
    }

    pub fn model(&self) -> &Arc<SyntheticLvlm> {
        &self.model
    }

    pub fn scene(&self, scene_id: &str) -> Result<&Scene, EvalError> {
        self.scenes.get(scene_id).ok_or_else(|| EvalError::UnknownScene(scene_id.to_string()))
    }
}

impl SourceFactory for SyntheticFactory {
    fn vocab(&self) -> &Vocabulary {
        self.model.grammar().vocab()
    }

    fn model_name(&self) -> String {
        self.name.clone()
    }

    fn source(&self, scene_id: &str) -> Result<BoxedSource<'_>, EvalError> {
        Ok(Box::new(build_sources(self.scene(scene_id)?, self.model.clone())?))
    }

    fn contrast(&self, scene_id: &str) -> Result<Option<BoxedSource<'_>>, EvalError> {
        let distorted = self.scene(scene_id)?.clone().with_distortion(self.contrast_distortion);
        Ok(Some(Box::new(build_sources(&distorted, self.model.clone())?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub runs: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            base_seed: 0,
            jobs: 0,
            max_new_tokens: 1,
        }
    }
}

impl EvalOptions {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.base_seed + r).collect()
    }
}

/// One decoded question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub scene_id: String,
    pub run: usize,
    pub seed: u64,
    pub label: Label,
    pub answer: Answer,
    pub correct: bool,
    pub result: DecodeResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopeEvaluation {
    pub strategy: Strategy,
    pub metrics: PopeMetrics,
    /// Ordered by run, then item id.
    pub outcomes: Vec<ItemOutcome>,
    pub source_failures: usize,
}

impl PopeEvaluation {
    pub fn results(&self) -> impl Iterator<Item = &DecodeResult> {
        self.outcomes.iter().map(|o| &o.result)
    }
}

/// Runs `f` on a pool of `jobs` threads (all cores for 0).
pub(crate) fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::Io(std::io::Error::other(e.to_string())))?;
    Ok(pool.install(f))
}

fn answer_tokens(vocab: &Vocabulary) -> Result<[u32; 3], EvalError> {
    let id = |t: &str| {
        vocab
            .id(t)
            .ok_or_else(|| EvalError::Synthetic(crate::error::SyntheticError::UnknownToken(t.to_string())))
    };
    Ok([id(IS_TOKEN)?, id(YES_TOKEN)?, id(NO_TOKEN)?])
}

/// Decodes every item of `suite` once per run and scores the first answer
/// token. Items decode in parallel; the reduction is sequential in
/// `(run, item_id)` order, so results do not depend on scheduling.
pub fn evaluate_pope(
    suite: &[PopeItem],
    strategy: &Strategy,
    factory: &dyn SourceFactory,
    opts: &EvalOptions,
) -> Result<PopeEvaluation, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    if opts.runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let decoder = Decoder::new(factory.vocab().clone());
    let [is, yes, no] = answer_tokens(factory.vocab())?;
    let work: Vec<(usize, &PopeItem)> = (0..opts.runs).flat_map(|r| suite.iter().map(move |i| (r, i))).collect();

    let decode_one = |(run, item): &(usize, &PopeItem)| -> Result<ItemOutcome, EvalError> {
        let object = factory
            .vocab()
            .id(&item.queried_object)
            .ok_or_else(|| crate::error::SyntheticError::UnknownToken(item.queried_object.clone()))?;
        let seed = opts.base_seed + *run as u64;
        let req = DecodeRequest {
            prompt_tokens: vec![is, object],
            visual_ref: Some(item.scene_id.clone()),
            policy: strategy.policy,
            mode: strategy.mode,
            sampler: strategy.sampler,
            max_new_tokens: opts.max_new_tokens,
            seed,
        };
        let mut src = factory.source(&item.scene_id)?;
        let result = if strategy.mode == Mode::GenericContrast {
            let mut contrast = factory
                .contrast(&item.scene_id)?
                .ok_or_else(|| EvalError::InvalidSweep("factory provides no contrast source".into()))?;
            decoder.generic_contrast_decode(&req, src.as_mut(), contrast.as_mut())?
        } else {
            decoder.decode(&req, src.as_mut())?
        };
        let answer = match result.tokens.first() {
            Some(&t) if t == yes => Answer::Yes,
            Some(&t) if t == no => Answer::No,
            _ => Answer::Other,
        };
        let label_yes = item.label == Label::Yes;
        Ok(ItemOutcome {
            item_id: item.item_id.clone(),
            scene_id: item.scene_id.clone(),
            run: *run,
            seed,
            label: item.label,
            answer,
            correct: answer == if label_yes { Answer::Yes } else { Answer::No },
            result,
        })
    };

    let decoded: Vec<Result<ItemOutcome, EvalError>> =
        with_pool(opts.jobs, || work.par_iter().map(decode_one).collect())?;
    let mut outcomes = decoded.into_iter().collect::<Result<Vec<_>, _>>()?;
    outcomes.sort_by(|a, b| (a.run, &a.item_id).cmp(&(b.run, &b.item_id)));

    let mut per_run = vec![Confusion::default(); opts.runs];
    let mut source_failures = 0;
    for o in &outcomes {
        per_run[o.run].record(o.label == Label::Yes, o.answer);
        if o.result.finish_reason == FinishReason::SourceError {
            source_failures += 1;
        }
    }
    log::info!(
        "{}: {} items x {} runs, {} source failures",
        strategy.name,
        suite.len(),
        opts.runs,
        source_failures
    );
    Ok(PopeEvaluation {
        strategy: strategy.clone(),
        metrics: PopeMetrics::from_runs(per_run),
        outcomes,
        source_failures,
    })
}
