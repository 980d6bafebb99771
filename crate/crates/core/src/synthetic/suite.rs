use std::cmp::Reverse;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SyntheticError;
use crate::synthetic::grammar::ToyGrammar;
use crate::synthetic::scene::Scene;
use crate::synthetic::stats::ObjectStats;
use crate::vocab::TokenId;

pub const DEFAULT_ITEMS_PER_SCENE: usize = 3;

/// How negative (absent-object) questions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Uniformly among absent objects.
    Random,
    /// Most frequent absent objects first.
    Popular,
    /// Absent objects most often mentioned next to the present ones first.
    Adversarial,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Random => "random",
            Setting::Popular => "popular",
            Setting::Adversarial => "adversarial",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Setting::Random),
            "popular" => Ok(Setting::Popular),
            "adversarial" => Ok(Setting::Adversarial),
            other => Err(format!("unknown setting `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
}

/// One yes/no object-presence question about a scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopeItem {
    pub item_id: String,
    pub scene_id: String,
    pub queried_object: String,
    pub label: Label,
    pub sampling_setting: Setting,
}

/// Absent objects of one scene in the order `setting` prefers them.
fn rank_negatives(
    present: &[TokenId],
    absent: Vec<TokenId>,
    setting: Setting,
    stats: &ObjectStats,
    rng: &mut ChaCha8Rng,
) -> Vec<TokenId> {
    let mut ranked = absent;
    match setting {
        Setting::Random => ranked.shuffle(rng),
        Setting::Popular => ranked.sort_by_key(|&o| (Reverse(stats.frequency(o)), o)),
        Setting::Adversarial => ranked.sort_by_key(|&o| {
            let affinity: u64 = present.iter().map(|&s| stats.adjacency(o, s)).sum();
            (Reverse(affinity), o)
        }),
    }
    ranked
}

/// Builds a balanced question suite over `scenes`.
///
/// Each scene contributes `n = min(items_per_scene, |present|, |absent|)`
/// yes-questions about randomly chosen present objects and `n`
/// no-questions about absent objects ranked per `setting`. Output order is
/// scene order, yes-items before no-items.
pub fn generate_pope_suite(
    scenes: &[Scene],
    grammar: &ToyGrammar,
    stats: &ObjectStats,
    setting: Setting,
    items_per_scene: usize,
    seed: u64,
) -> Result<Vec<PopeItem>, SyntheticError> {
    if grammar.objects().len() < 2 {
        return Err(SyntheticError::Infeasible("need at least two distinct objects".into()));
    }
    let resolved = scenes
        .iter()
        .map(|s| Ok(s.resolve(grammar)?.into_iter().collect::<Vec<TokenId>>()))
        .collect::<Result<Vec<_>, SyntheticError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for (scene, present) in scenes.iter().zip(&resolved) {
        let absent: Vec<TokenId> = grammar.objects().iter().copied().filter(|o| !present.contains(o)).collect();
        if absent.is_empty() {
            return Err(SyntheticError::Infeasible(format!(
                "scene `{}` contains every object; no negatives can be drawn",
                scene.scene_id
            )));
        }
        let n = items_per_scene.min(present.len()).min(absent.len());
        let mut positives = present.clone();
        positives.shuffle(&mut rng);
        let negatives = rank_negatives(present, absent, setting, stats, &mut rng);
        let labelled = positives[..n]
            .iter()
            .map(|&o| (o, Label::Yes))
            .chain(negatives[..n].iter().map(|&o| (o, Label::No)));
        for (k, (object, label)) in labelled.enumerate() {
            items.push(PopeItem {
                item_id: format!("{setting}-{}-{k:02}", scene.scene_id),
                scene_id: scene.scene_id.clone(),
                queried_object: grammar.name(object).to_string(),
                label,
                sampling_setting: setting,
            });
        }
    }
    if items.is_empty() {
        return Err(SyntheticError::Infeasible("no scene yields a question".into()));
    }
    Ok(items)
}

pub fn write_suite<W: Write>(mut out: W, items: &[PopeItem]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_suite<R: BufRead>(input: R) -> Result<Vec<PopeItem>, SyntheticError> {
    let mut items = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| SyntheticError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}
