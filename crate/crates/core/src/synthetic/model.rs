use std::collections::BTreeSet;
use std::sync::Arc;

use crate::engine::{LogitSource, Modality, Query, SourceDescriptor};
use crate::error::{SourceError, SyntheticError};
use crate::math::LogitVector;
use crate::synthetic::grammar::ToyGrammar;
use crate::synthetic::prior::PriorModel;
use crate::synthetic::scene::Scene;
use crate::synthetic::stats::ObjectStats;
use crate::vocab::TokenId;

/// How strongly co-occurrence with a present object weakens the visual
/// evidence that a queried object is absent.
pub const DEFAULT_CONFUSABILITY: f64 = 1.5;

/// A toy vision-language model: an n-gram language prior plus additive
/// visual evidence for a scene.
///
/// Outside questions, every present object's logit is raised by the scene's
/// effective boost. When the context ends in `is OBJECT`, the evidence goes
/// to the answer instead: `yes` gains the full boost if the object is
/// present; otherwise `no` gains the boost scaled by
/// `max(0, 1 - confusability * max_s P(OBJECT | s))` over present objects
/// `s`, so absent objects that usually accompany what is visible are hard to
/// rule out.
#[derive(Debug, Clone)]
pub struct SyntheticLvlm {
    grammar: ToyGrammar,
    prior: PriorModel,
    stats: ObjectStats,
    confusability: f64,
}

impl SyntheticLvlm {
    pub fn new(
        grammar: ToyGrammar,
        prior: PriorModel,
        stats: ObjectStats,
        confusability: f64,
    ) -> Result<Self, SyntheticError> {
        if prior.vocab_size() != grammar.vocab_size() {
            return Err(SyntheticError::InvalidScene {
                scene_id: String::new(),
                reason: format!(
                    "prior covers {} tokens, grammar has {}",
                    prior.vocab_size(),
                    grammar.vocab_size()
                ),
            });
        }
        if !(confusability.is_finite() && confusability >= 0.0) {
            return Err(SyntheticError::InvalidScene {
                scene_id: String::new(),
                reason: format!("confusability {confusability} must be finite and >= 0"),
            });
        }
        Ok(Self {
            grammar,
            prior,
            stats,
            confusability,
        })
    }

    pub fn grammar(&self) -> &ToyGrammar {
        &self.grammar
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn stats(&self) -> &ObjectStats {
        &self.stats
    }

    pub fn confusability(&self) -> f64 {
        self.confusability
    }

    /// Additive visual evidence `l_m - l_u` at `context`.
    pub fn evidence(&self, present: &BTreeSet<TokenId>, boost: f64, context: &[TokenId]) -> Vec<f64> {
        let mut e = vec![0.0; self.grammar.vocab_size()];
        match self.grammar.queried_object(context) {
            Some(o) if present.contains(&o) => e[self.grammar.yes() as usize] = boost,
            Some(o) => {
                if let Some(confusion) = present
                    .iter()
                    .map(|&s| self.stats.conditional(o, s))
                    .max_by(f64::total_cmp)
                {
                    e[self.grammar.no() as usize] = boost * (1.0 - self.confusability * confusion).max(0.0);
                }
            }
            None => {
                for &s in present {
                    e[s as usize] = boost;
                }
            }
        }
        e
    }
}

/// Wraps one scene of a [`SyntheticLvlm`] as a logit source.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    model: Arc<SyntheticLvlm>,
    scene_id: String,
    present: BTreeSet<TokenId>,
    boost: f64,
    descriptor: SourceDescriptor,
}

/// A deterministic source for `scene`: `l_u` is the prior row for the
/// context and `l_m` adds the scene's visual evidence.
pub fn build_sources(scene: &Scene, model: Arc<SyntheticLvlm>) -> Result<SyntheticSource, SyntheticError> {
    let present = scene.resolve(model.grammar())?;
    let descriptor = SourceDescriptor {
        vocab_size: model.grammar().vocab_size(),
        supports_visual: true,
        source_id: format!("synthetic:{}", scene.scene_id),
        deterministic: true,
        concurrent_reads: true,
    };
    Ok(SyntheticSource {
        model,
        scene_id: scene.scene_id.clone(),
        present,
        boost: scene.effective_boost(),
        descriptor,
    })
}

impl SyntheticSource {
    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn model(&self) -> &Arc<SyntheticLvlm> {
        &self.model
    }
}

impl LogitSource for SyntheticSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        if query.context.iter().any(|&t| !self.model.grammar.vocab().contains(t)) {
            return Err(SourceError::new(&self.descriptor.source_id, "context token outside vocabulary"));
        }
        if let Some(v) = query.visual_ref {
            if v != self.scene_id {
                return Err(SourceError::new(
                    &self.descriptor.source_id,
                    format!("visual_ref `{v}` does not name this scene"),
                ));
            }
        }
        let prior = self.model.prior.logits_for(query.context);
        if query.modality == Modality::TextOnly {
            return Ok(prior.clone());
        }
        let evidence = self.model.evidence(&self.present, self.boost, query.context);
        let values = prior.as_slice().iter().zip(&evidence).map(|(u, e)| u + e).collect();
        LogitVector::new(values).map_err(|e| SourceError::new(&self.descriptor.source_id, e.to_string()))
    }
}
