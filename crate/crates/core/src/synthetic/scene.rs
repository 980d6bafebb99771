use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::SyntheticError;
use crate::synthetic::grammar::ToyGrammar;
use crate::vocab::TokenId;

pub const DEFAULT_VISUAL_BOOST: f64 = 4.0;

fn default_boost() -> f64 {
    DEFAULT_VISUAL_BOOST
}

/// Ground truth for one synthetic image: which objects it shows and how
/// strongly the visual stream signals them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<String>,
    #[serde(default = "default_boost")]
    pub visual_boost: f64,
    #[serde(default)]
    pub distortion_level: f64,
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, objects: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            scene_id: scene_id.into(),
            objects: objects.into_iter().map(Into::into).collect(),
            visual_boost: DEFAULT_VISUAL_BOOST,
            distortion_level: 0.0,
        }
    }

    pub fn with_boost(mut self, visual_boost: f64) -> Self {
        self.visual_boost = visual_boost;
        self
    }

    pub fn with_distortion(mut self, distortion_level: f64) -> Self {
        self.distortion_level = distortion_level;
        self
    }

    /// `visual_boost * (1 - distortion_level)`.
    pub fn effective_boost(&self) -> f64 {
        self.visual_boost * (1.0 - self.distortion_level)
    }

    fn invalid(&self, reason: impl Into<String>) -> SyntheticError {
        SyntheticError::InvalidScene {
            scene_id: self.scene_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the numeric fields and resolves the objects to token ids.
    pub fn resolve(&self, grammar: &ToyGrammar) -> Result<BTreeSet<TokenId>, SyntheticError> {
        if !(self.visual_boost.is_finite() && self.visual_boost >= 0.0) {
            return Err(self.invalid(format!("visual_boost {} must be finite and >= 0", self.visual_boost)));
        }
        if !(0.0..=1.0).contains(&self.distortion_level) {
            return Err(self.invalid(format!("distortion_level {} outside [0, 1]", self.distortion_level)));
        }
        let mut ids = BTreeSet::new();
        for name in &self.objects {
            if !ids.insert(grammar.object_id(name)?) {
                return Err(self.invalid(format!("object `{name}` listed twice")));
            }
        }
        Ok(ids)
    }
}

pub fn write_scenes<W: Write>(mut out: W, scenes: &[Scene]) -> std::io::Result<()> {
    for scene in scenes {
        serde_json::to_writer(&mut out, scene)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scenes<R: BufRead>(input: R) -> Result<Vec<Scene>, SyntheticError> {
    let mut scenes = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(serde_json::from_str(&line).map_err(|e| SyntheticError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(scenes)
}
