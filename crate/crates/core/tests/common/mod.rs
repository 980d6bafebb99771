#![allow(dead_code)]

use std::sync::Arc;

use nolan_core::engine::{DecodeRequest, Decoder, LogitSource, Mode};
use nolan_core::math::ProbDist;
use nolan_core::modulation::AlphaPolicy;
use nolan_core::synthetic::{
    build_sources, compile_prior, Corpus, ObjectStats, PriorKind, Scene, SyntheticLvlm, ToyGrammar,
};
use nolan_core::vocab::TokenId;
use rand::seq::SliceRandom;
use rand::Rng;

pub const MODES: [(&str, Mode); 6] = [
    ("regular", Mode::Regular),
    ("text_only", Mode::TextOnly),
    ("nolan_constant", Mode::NoLan),
    ("nolan_kl_tanh", Mode::NoLan),
    ("nolan_kl_sigmoid", Mode::NoLan),
    ("generic_contrast", Mode::GenericContrast),
];

/// One randomized (scene, prior, context) triple plus a contrast scene.
pub struct Case {
    pub model: Arc<SyntheticLvlm>,
    pub scene: Scene,
    pub contrast: Scene,
    pub context: Vec<TokenId>,
}

fn random_scene<R: Rng>(rng: &mut R, g: &ToyGrammar, id: &str) -> Scene {
    let objects: Vec<&str> = g
        .objects()
        .iter()
        .filter(|_| rng.gen_bool(0.3))
        .map(|&o| g.name(o))
        .collect();
    let distortion = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..=1.0) };
    Scene::new(id, objects)
        .with_boost(rng.gen_range(0.0..8.0))
        .with_distortion(distortion)
}

/// A random world with at most `max_vocab` tokens.
pub fn random_case<R: Rng>(rng: &mut R, max_vocab: usize) -> Case {
    let n_objects = rng.gen_range(2..=max_vocab - 6);
    let names: Vec<String> = (0..n_objects).map(|i| format!("obj{i}")).collect();
    let g = ToyGrammar::new(names).unwrap();
    let objects = g.objects().to_vec();
    let docs: Vec<Vec<TokenId>> = (0..rng.gen_range(5..60))
        .map(|_| {
            if rng.gen_bool(0.5) {
                let k = rng.gen_range(1..=objects.len().min(6));
                let mut doc = vec![g.describe()];
                doc.extend(objects.choose_multiple(rng, k));
                doc
            } else {
                let answer = if rng.gen_bool(0.6) { g.yes() } else { g.no() };
                vec![g.is(), *objects.choose(rng).unwrap(), answer]
            }
        })
        .collect();
    let corpus = Corpus::new(docs);
    let kind = if rng.gen_bool(0.8) { PriorKind::Bigram } else { PriorKind::Unigram };
    let prior = compile_prior(&corpus, g.vocab_size(), g.eos(), kind, rng.gen_range(0.05..2.0)).unwrap();
    let stats = ObjectStats::from_captions(&corpus, &g);
    let model = Arc::new(SyntheticLvlm::new(g.clone(), prior, stats, rng.gen_range(0.0..3.0)).unwrap());
    let scene = random_scene(rng, &g, "case");
    let contrast = random_scene(rng, &g, "case");
    let mut context = vec![g.bos()];
    for _ in 0..rng.gen_range(0..5) {
        context.push(rng.gen_range(0..g.vocab_size() as TokenId));
    }
    if rng.gen_bool(0.5) {
        context.push(g.is());
        context.push(*objects.choose(rng).unwrap());
    }
    Case {
        model,
        scene,
        contrast,
        context,
    }
}

pub fn random_policy<R: Rng>(rng: &mut R, label: &str) -> AlphaPolicy {
    match label {
        "nolan_constant" => AlphaPolicy::Constant {
            alpha: rng.gen_range(0.0..3.0),
        },
        "nolan_kl_tanh" | "generic_contrast" => AlphaPolicy::KlTanh {
            beta: rng.gen_range(0.0..2.0),
        },
        "nolan_kl_sigmoid" => AlphaPolicy::KlSigmoid {
            beta: rng.gen_range(0.0..2.0),
        },
        _ => AlphaPolicy::Constant { alpha: 0.0 },
    }
}

/// The distribution the engine computes for one step of `case`.
pub fn engine_step(case: &Case, mode: Mode, policy: AlphaPolicy) -> ProbDist {
    let decoder = Decoder::new(case.model.grammar().vocab().clone());
    let mut src = build_sources(&case.scene, case.model.clone()).unwrap();
    let mut contrast = build_sources(&case.contrast, case.model.clone()).unwrap();
    let req = DecodeRequest {
        visual_ref: Some(case.scene.scene_id.clone()),
        policy,
        ..DecodeRequest::new(mode)
    };
    let contrast: Option<&mut dyn LogitSource> = if mode == Mode::GenericContrast {
        Some(&mut contrast)
    } else {
        None
    };
    decoder.step(&req, &mut src, contrast, &case.context).unwrap().dist
}
