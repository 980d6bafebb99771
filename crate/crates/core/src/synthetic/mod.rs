//! Toy vision-language models with explicit language priors, a brute-force
//! oracle for their decoding distributions, and an object-presence question
//! suite generator.

mod corpus;
mod grammar;
mod model;
mod oracle;
mod prior;
mod scene;
mod stats;
mod suite;
mod world;

/// Largest vocabulary the brute-force oracle accepts.
pub const ORACLE_MAX_VOCAB: usize = 1000;

pub use corpus::Corpus;
pub use grammar::{
    ToyGrammar, BOS_TOKEN, DESCRIBE_TOKEN, EOS_TOKEN, IS_TOKEN, NO_TOKEN, SPECIAL_TOKENS, YES_TOKEN,
};
pub use model::{build_sources, SyntheticLvlm, SyntheticSource, DEFAULT_CONFUSABILITY};
pub use oracle::oracle_step_distribution;
pub use prior::{compile_prior, PriorKind, PriorModel, DEFAULT_SMOOTHING};
pub use scene::{read_scenes, write_scenes, Scene, DEFAULT_VISUAL_BOOST};
pub use stats::ObjectStats;
pub use suite::{
    generate_pope_suite, read_suite, write_suite, Label, PopeItem, Setting, DEFAULT_ITEMS_PER_SCENE,
};
pub use world::{World, WorldConfig};
