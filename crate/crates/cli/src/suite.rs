//! The on-disk suite directory written by `gen-suite` and read by every
//! evaluation command.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use nolan_core::eval::{CalibratedSuite, Calibration, SuiteConfig};
use nolan_core::synthetic::{
    read_scenes, read_suite, write_scenes, write_suite, Corpus, PopeItem, Scene, SyntheticLvlm, ToyGrammar, World,
};

use crate::error::CliError;
use crate::run::sha256_file;

pub const SUITE_CONFIG: &str = "suite_config.json";
pub const GRAMMAR: &str = "grammar.json";
pub const CAPTIONS: &str = "captions.txt";
pub const QUESTIONS: &str = "questions.txt";
pub const SCENES: &str = "scenes.jsonl";
pub const ITEMS: &str = "suite.jsonl";
pub const CALIBRATION: &str = "calibration.json";

/// Files that define a suite, in the order they are hashed into manifests.
pub const SUITE_FILES: [&str; 7] = [SUITE_CONFIG, GRAMMAR, CAPTIONS, QUESTIONS, SCENES, ITEMS, CALIBRATION];

#[derive(Debug, Clone)]
pub struct LoadedSuite {
    pub config: SuiteConfig,
    pub world: World,
    pub scenes: Vec<Scene>,
    pub items: Vec<PopeItem>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>, CliError> {
    let path = dir.join(name);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| CliError::config(format!("cannot open {}: {e}", path.display())))
}

fn json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, CliError> {
    serde_json::from_reader(open(dir, name)?).map_err(|e| CliError::config(format!("{name}: {e}")))
}

fn invalid(name: &str) -> impl Fn(nolan_core::error::SyntheticError) -> CliError + '_ {
    move |e| CliError::config(format!("{name}: {e}"))
}

impl LoadedSuite {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let config: SuiteConfig = json(dir, SUITE_CONFIG)?;
        let grammar: ToyGrammar = json(dir, GRAMMAR)?;
        let captions = Corpus::parse(open(dir, CAPTIONS)?, grammar.vocab()).map_err(invalid(CAPTIONS))?;
        let questions = Corpus::parse(open(dir, QUESTIONS)?, grammar.vocab()).map_err(invalid(QUESTIONS))?;
        let world = World::from_corpora(config.world.clone(), grammar, captions, questions)?;
        let scenes = read_scenes(open(dir, SCENES)?).map_err(invalid(SCENES))?;
        let items = read_suite(open(dir, ITEMS)?).map_err(invalid(ITEMS))?;
        let calibration = json(dir, CALIBRATION)?;
        if items.is_empty() {
            return Err(CliError::config(format!("{} has no items", dir.join(ITEMS).display())));
        }
        Ok(Self {
            config,
            world,
            scenes,
            items,
            calibration,
        })
    }

    pub fn pope_model(&self) -> Result<Arc<SyntheticLvlm>, CliError> {
        Ok(self.world.pope_model()?)
    }

    pub fn caption_model(&self) -> Result<Arc<SyntheticLvlm>, CliError> {
        Ok(self.world.caption_model()?)
    }

    pub fn scene(&self, id: &str) -> Result<&Scene, CliError> {
        self.scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| CliError::config(format!("no scene `{id}` in the suite")))
    }
}

/// Hashes of the suite files, for the run manifest.
pub fn input_hashes(dir: &Path) -> Result<Vec<InputFile>, CliError> {
    SUITE_FILES
        .iter()
        .map(|name| {
            Ok(InputFile {
                path: name.to_string(),
                sha256: sha256_file(&dir.join(name))?,
            })
        })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Writes every file of [`SUITE_FILES`] into `dir`.
pub fn write_suite_dir(dir: &Path, config: &SuiteConfig, suite: &CalibratedSuite) -> Result<(), CliError> {
    let vocab = suite.world.grammar.vocab();
    write_json(dir, SUITE_CONFIG, config)?;
    write_json(dir, GRAMMAR, &suite.world.grammar)?;
    let mut out = create(dir, CAPTIONS)?;
    suite.world.captions.write(&mut out, vocab)?;
    out.flush()?;
    let mut out = create(dir, QUESTIONS)?;
    suite.world.questions.write(&mut out, vocab)?;
    out.flush()?;
    let mut out = create(dir, SCENES)?;
    write_scenes(&mut out, &suite.scenes)?;
    out.flush()?;
    let mut out = create(dir, ITEMS)?;
    write_suite(&mut out, &suite.suite)?;
    out.flush()?;
    write_json(dir, CALIBRATION, &suite.calibration)
}
