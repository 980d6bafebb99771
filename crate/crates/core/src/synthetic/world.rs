use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SyntheticError;
use crate::synthetic::corpus::Corpus;
use crate::synthetic::grammar::ToyGrammar;
use crate::synthetic::model::{SyntheticLvlm, DEFAULT_CONFUSABILITY};
use crate::synthetic::prior::{compile_prior, PriorKind, DEFAULT_SMOOTHING};
use crate::synthetic::scene::Scene;
use crate::synthetic::stats::ObjectStats;
use crate::vocab::TokenId;

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Generative recipe for scenes and the training corpora the priors are
/// compiled from.
///
/// A scene picks one theme, includes each theme object independently with
/// the matching rate in `theme_rates`, each ubiquitous object with
/// `ubiquitous_rate`, and each object of another theme with
/// `cross_theme_rate`. An empty draw falls back to the theme's first object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub themes: Vec<Vec<String>>,
    pub theme_rates: Vec<f64>,
    pub ubiquitous: Vec<String>,
    pub ubiquitous_rate: f64,
    pub cross_theme_rate: f64,
    /// Training scenes behind the corpora.
    pub train_scenes: usize,
    /// Expected number of `is OBJECT no` questions per present object in the
    /// question corpus.
    pub negative_rate: f64,
    pub smoothing: f64,
    pub confusability: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            themes: vec![
                strings(&["bear", "fish", "river", "rock", "eagle"]),
                strings(&["whale", "boat", "wave", "gull", "sand"]),
                strings(&["car", "road", "sign", "bus", "bike"]),
                strings(&["cat", "sofa", "lamp", "book", "cup"]),
            ],
            theme_rates: vec![0.8, 0.6, 0.5, 0.4, 0.3],
            ubiquitous: strings(&["person", "tree", "dog"]),
            ubiquitous_rate: 0.35,
            cross_theme_rate: 0.03,
            train_scenes: 20_000,
            negative_rate: 0.35,
            smoothing: DEFAULT_SMOOTHING,
            confusability: DEFAULT_CONFUSABILITY,
            seed: 0,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |reason: String| {
            Err(SyntheticError::InvalidScene {
                scene_id: "world".into(),
                reason,
            })
        };
        if self.themes.is_empty() || self.themes.iter().any(Vec::is_empty) {
            return bad("every world needs at least one non-empty theme".into());
        }
        if self.themes.iter().any(|t| t.len() > self.theme_rates.len()) {
            return bad("theme_rates must cover every theme position".into());
        }
        let rates = self
            .theme_rates
            .iter()
            .chain([&self.ubiquitous_rate, &self.cross_theme_rate, &self.negative_rate]);
        if let Some(r) = rates.into_iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("rate {r} outside [0, 1]"));
        }
        if self.train_scenes == 0 {
            return bad("train_scenes must be positive".into());
        }
        Ok(())
    }

    pub fn objects(&self) -> Vec<String> {
        self.themes.iter().flatten().chain(&self.ubiquitous).cloned().collect()
    }
}

/// A generated world: grammar, training corpora, and the models built on them.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub grammar: ToyGrammar,
    /// `describe o1 o2 ...` per training scene.
    pub captions: Corpus,
    /// `is o yes` / `is o no` questions about training scenes.
    pub questions: Corpus,
    pub stats: ObjectStats,
}

impl World {
    pub fn generate(config: WorldConfig) -> Result<Self, SyntheticError> {
        config.validate()?;
        let grammar = ToyGrammar::new(config.objects())?;
        let sampler = SceneSampler::new(&config, &grammar)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut captions = Vec::with_capacity(config.train_scenes);
        let mut questions = Vec::new();
        for _ in 0..config.train_scenes {
            let mut present = sampler.sample(&mut rng);
            present.shuffle(&mut rng);
            let mut caption = vec![grammar.describe()];
            caption.extend(&present);
            captions.push(caption);
            for &o in &present {
                questions.push(vec![grammar.is(), o, grammar.yes()]);
            }
            let absent: Vec<TokenId> = grammar.objects().iter().copied().filter(|o| !present.contains(o)).collect();
            let wanted = (0..present.len()).filter(|_| rng.gen_bool(config.negative_rate)).count();
            for &o in absent.choose_multiple(&mut rng, wanted.min(absent.len())) {
                questions.push(vec![grammar.is(), o, grammar.no()]);
            }
        }
        Self::from_corpora(config, grammar, Corpus::new(captions), Corpus::new(questions))
    }

    /// Rebuilds a world from previously written corpora.
    pub fn from_corpora(
        config: WorldConfig,
        grammar: ToyGrammar,
        captions: Corpus,
        questions: Corpus,
    ) -> Result<Self, SyntheticError> {
        let stats = ObjectStats::from_captions(&captions, &grammar);
        Ok(Self {
            config,
            grammar,
            captions,
            questions,
            stats,
        })
    }

    fn model(&self, corpus: &Corpus) -> Result<SyntheticLvlm, SyntheticError> {
        let prior = compile_prior(
            corpus,
            self.grammar.vocab_size(),
            self.grammar.eos(),
            PriorKind::Bigram,
            self.config.smoothing,
        )?;
        SyntheticLvlm::new(self.grammar.clone(), prior, self.stats.clone(), self.config.confusability)
    }

    /// The question-answering model: bigram prior over the question corpus.
    pub fn pope_model(&self) -> Result<Arc<SyntheticLvlm>, SyntheticError> {
        Ok(Arc::new(self.model(&self.questions)?))
    }

    /// The description model: bigram prior over the caption corpus.
    pub fn caption_model(&self) -> Result<Arc<SyntheticLvlm>, SyntheticError> {
        Ok(Arc::new(self.model(&self.captions)?))
    }

    /// Fresh evaluation scenes named `scene-0000`, `scene-0001`, ...
    pub fn sample_scenes(&self, n: usize, seed: u64, visual_boost: f64) -> Result<Vec<Scene>, SyntheticError> {
        let sampler = SceneSampler::new(&self.config, &self.grammar)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|i| {
                let mut present = sampler.sample(&mut rng);
                present.sort_unstable();
                Scene::new(
                    format!("scene-{i:04}"),
                    present.iter().map(|&o| self.grammar.name(o).to_string()),
                )
                .with_boost(visual_boost)
            })
            .collect())
    }
}

struct SceneSampler<'a> {
    config: &'a WorldConfig,
    themes: Vec<Vec<TokenId>>,
    ubiquitous: Vec<TokenId>,
}

impl<'a> SceneSampler<'a> {
    fn new(config: &'a WorldConfig, grammar: &ToyGrammar) -> Result<Self, SyntheticError> {
        let ids = |names: &[String]| names.iter().map(|o| grammar.object_id(o)).collect::<Result<Vec<_>, _>>();
        Ok(Self {
            config,
            themes: config.themes.iter().map(|t| ids(t)).collect::<Result<_, _>>()?,
            ubiquitous: ids(&config.ubiquitous)?,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        let theme = rng.gen_range(0..self.themes.len());
        let mut present = Vec::new();
        for (&o, &rate) in self.themes[theme].iter().zip(&self.config.theme_rates) {
            if rng.gen::<f64>() < rate {
                present.push(o);
            }
        }
        for &o in &self.ubiquitous {
            if rng.gen::<f64>() < self.config.ubiquitous_rate && !present.contains(&o) {
                present.push(o);
            }
        }
        for (t, objects) in self.themes.iter().enumerate() {
            if t == theme {
                continue;
            }
            for &o in objects {
                if rng.gen::<f64>() < self.config.cross_theme_rate && !present.contains(&o) {
                    present.push(o);
                }
            }
        }
        if present.is_empty() {
            present.push(self.themes[theme][0]);
        }
        present
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            train_scenes: 500,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = World::generate(small()).unwrap();
        let b = World::generate(small()).unwrap();
        assert_eq!(a.captions, b.captions);
        assert_eq!(a.questions, b.questions);
        let c = World::generate(WorldConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.captions, c.captions);
    }

    #[test]
    fn corpora_follow_the_grammar() {
        let w = World::generate(small()).unwrap();
        let g = &w.grammar;
        assert_eq!(g.vocab_size(), 6 + 23);
        assert_eq!(w.captions.len(), 500);
        for doc in &w.captions.docs {
            assert_eq!(doc[0], g.describe());
            assert!(doc.len() >= 2);
            assert!(doc[1..].iter().all(|&t| g.is_object(t)));
        }
        let yes = w.questions.docs.iter().filter(|d| d[2] == g.yes()).count();
        let no = w.questions.docs.iter().filter(|d| d[2] == g.no()).count();
        assert!(yes > 2 * no && no > 0, "yes {yes} no {no}");
    }

    #[test]
    fn theme_mates_cooccur() {
        let w = World::generate(small()).unwrap();
        let g = &w.grammar;
        let bear = g.object_id("bear").unwrap();
        let fish = g.object_id("fish").unwrap();
        let cup = g.object_id("cup").unwrap();
        assert!(w.stats.conditional(fish, bear) > 0.4);
        assert!(w.stats.conditional(cup, bear) < 0.1);
    }

    #[test]
    fn scenes_are_sorted_and_seeded() {
        let w = World::generate(small()).unwrap();
        let a = w.sample_scenes(20, 9, 4.0).unwrap();
        assert_eq!(a, w.sample_scenes(20, 9, 4.0).unwrap());
        for s in &a {
            let ids: Vec<TokenId> = s.objects.iter().map(|o| w.grammar.object_id(o).unwrap()).collect();
            assert!(ids.windows(2).all(|p| p[0] < p[1]));
            assert!(!ids.is_empty());
        }
        assert_eq!(a[3].scene_id, "scene-0003");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(World::generate(WorldConfig { themes: vec![], ..small() }).is_err());
        assert!(World::generate(WorldConfig { negative_rate: 1.5, ..small() }).is_err());
        assert!(World::generate(WorldConfig { train_scenes: 0, ..small() }).is_err());
    }
}
