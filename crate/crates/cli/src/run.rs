//! One directory per run, holding a manifest and the run's artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use nolan_core::eval::{config_hash, ENGINE_VERSION};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::suite::InputFile;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const TRACE: &str = "trace.jsonl";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to repeat a run: the resolved configuration, the
/// software versions, the seeds, and digests of every input file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub engine_version: &'static str,
    pub cli_version: &'static str,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: &'a RunConfig,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    /// Creates `<parent>/<command>-NNNN` with the first free number. An
    /// existing directory is never reused.
    pub fn create(parent: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::config(format!("output directory {}: {e}", parent.display())))?;
        for n in 1..=9999u32 {
            let path = parent.join(format!("{command}-{n:04}"));
            match fs::create_dir(&path) {
                Ok(()) => {
                    log::info!("run directory {}", path.display());
                    return Ok(Self {
                        path,
                        outputs: Vec::new(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::config(format!("output directory {}: {e}", path.display()))),
            }
        }
        Err(CliError::config(format!("no free run directory under {}", parent.display())))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// A writer for `name`, recorded in the manifest's output list.
    pub fn writer(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.path.join(name))?))
    }

    pub fn note_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let mut out = self.writer(name)?;
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn finish(mut self, config: &RunConfig, inputs: Vec<InputFile>, exit_code: i32) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: &config.command,
            engine_version: ENGINE_VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(config),
            seeds: config.seeds.seeds(),
            config,
            inputs,
            outputs: std::mem::take(&mut self.outputs),
            exit_code,
        };
        self.write_json(MANIFEST, &manifest)?;
        Ok(self.path)
    }
}
