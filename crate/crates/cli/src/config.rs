//! Command-line flags, configuration files, and their merge into one
//! resolved [`RunConfig`]. A flag beats the file, and the file beats the
//! built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use nolan_core::engine::{Mode, SamplerConfig};
use nolan_core::eval::{ReportFormat, SuiteConfig, SweepParam};
use nolan_core::modulation::{AlphaPolicy, PolicyKind, DEFAULT_ALPHA, DEFAULT_BETA};
use nolan_core::synthetic::Setting;

use crate::error::CliError;

pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_OUT: &str = "runs";
pub const DEFAULT_DECODE_TOKENS: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "nolan", version, about = "Prior-suppressing decoding for vision-language models")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON or TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// regular, text_only, nolan or generic_contrast
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// constant, kl_tanh or kl_sigmoid
    #[arg(long, global = true)]
    pub policy: Option<PolicyKind>,
    /// Constant modulation rate; implies `--policy constant` unless a policy is given
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Adaptive modulation scale; implies `--policy kl_tanh` unless a policy is given
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// greedy, temperature[:T], top_k:K[:T] or top_p:P[:T]
    #[arg(long, global = true)]
    pub sampler: Option<SamplerConfig>,
    /// Base seed; runs use base, base+1, ...
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// records, table or csv
    #[arg(long, global = true)]
    pub format: Option<ReportFormat>,
    /// Parent directory for run directories
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suite directory written by `gen-suite`
    #[arg(long, global = true)]
    pub suite: Option<PathBuf>,
    /// Adapter endpoint: `tcp://HOST:PORT` or a command line
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Decode one prompt against one scene
    Decode {
        #[arg(long)]
        scene: Option<String>,
        /// Prompt words, e.g. "describe" or "is bear"
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Object-presence evaluation over a suite
    EvalPope,
    /// Metrics over a range of alpha or beta values
    Sweep {
        #[arg(long)]
        param: Option<SweepParam>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Divergence, entropy, per-position, timing and mutual-information analyses
    Analyze {
        /// Length of the descriptions decoded for the per-position analysis
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Check that an adapter speaks the bridge protocol correctly
    ServeCheck {
        /// Probe context token ids
        #[arg(long, value_delimiter = ',')]
        context: Option<Vec<u32>>,
        #[arg(long)]
        visual_ref: Option<String>,
    },
    /// Generate a calibrated synthetic suite
    GenSuite {
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        train_scenes: Option<usize>,
    },
    /// Serve a suite's scenes over the bridge protocol (stdio unless --tcp)
    Serve {
        #[arg(long)]
        tcp: Option<String>,
        #[arg(long, value_enum, default_value_t = ServedModel::Pope)]
        model: ServedModel,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Decode { .. } => "decode",
            Command::EvalPope => "eval-pope",
            Command::Sweep { .. } => "sweep",
            Command::Analyze { .. } => "analyze",
            Command::ServeCheck { .. } => "serve-check",
            Command::GenSuite { .. } => "gen-suite",
            Command::Serve { .. } => "serve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedModel {
    /// Question-answering prior
    Pope,
    /// Description prior
    Caption,
}

/// A policy in a config file: either a bare kind or the full tagged form.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum PolicySpec {
    Full(AlphaPolicy),
    Kind(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum SamplerSpec {
    Full(SamplerConfig),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineFile {
    mode: Option<Mode>,
    policy: Option<PolicySpec>,
    alpha: Option<f64>,
    beta: Option<f64>,
    sampler: Option<SamplerSpec>,
    max_new_tokens: Option<usize>,
    prompt: Option<String>,
    scene: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum SourceFile {
    Synthetic { suite: PathBuf },
    Bridge { endpoint: String, suite: Option<PathBuf> },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    dir: Option<PathBuf>,
    format: Option<ReportFormat>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedsFile {
    base: Option<u64>,
    count: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    param: Option<SweepParam>,
    values: Option<Vec<f64>>,
}

/// The on-disk configuration. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    command: Option<String>,
    #[serde(default)]
    engine: EngineFile,
    source: Option<SourceFile>,
    #[serde(default)]
    output: OutputFile,
    #[serde(default)]
    seeds: SeedsFile,
    jobs: Option<usize>,
    suite: Option<SuiteConfig>,
    #[serde(default)]
    sweep: SweepFile,
}

impl FileConfig {
    /// Reads `.toml` files as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "toml"))
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str, toml_format: bool) -> Result<Self, String> {
        if toml_format {
            toml::from_str(text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(text).map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineConfig {
    pub mode: Mode,
    pub policy: AlphaPolicy,
    pub sampler: SamplerConfig,
    pub max_new_tokens: usize,
    pub prompt: Option<String>,
    pub scene: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceConfig {
    Synthetic { suite: PathBuf },
    Bridge { endpoint: String, suite: Option<PathBuf> },
}

impl SourceConfig {
    pub fn suite(&self) -> Option<&Path> {
        match self {
            SourceConfig::Synthetic { suite } => Some(suite),
            SourceConfig::Bridge { suite, .. } => suite.as_deref(),
        }
    }

    pub fn endpoint(&self) -> Option<&str> {
        match self {
            SourceConfig::Bridge { endpoint, .. } => Some(endpoint),
            SourceConfig::Synthetic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedConfig {
    pub base: u64,
    pub count: usize,
}

impl SeedConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServeCheckConfig {
    pub context: Option<Vec<u32>>,
    pub visual_ref: Option<String>,
}

/// Everything a run needs, after merging flags, file and defaults. Its
/// hash identifies the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub engine: EngineConfig,
    pub source: Option<SourceConfig>,
    pub output: OutputConfig,
    pub seeds: SeedConfig,
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub serve_check: Option<ServeCheckConfig>,
}

fn resolve_policy(flags: &Flags, file: &EngineFile) -> Result<AlphaPolicy, CliError> {
    let (file_kind, file_alpha, file_beta) = match &file.policy {
        Some(PolicySpec::Full(p)) => {
            let (a, b) = match *p {
                AlphaPolicy::Constant { alpha } => (Some(alpha), None),
                AlphaPolicy::KlTanh { beta } | AlphaPolicy::KlSigmoid { beta } => (None, Some(beta)),
            };
            (Some(p.kind()), a.or(file.alpha), b.or(file.beta))
        }
        Some(PolicySpec::Kind(k)) => (
            Some(k.parse::<PolicyKind>().map_err(CliError::Config)?),
            file.alpha,
            file.beta,
        ),
        None => (None, file.alpha, file.beta),
    };
    let implied = match (flags.alpha, flags.beta) {
        (Some(_), None) => Some(PolicyKind::Constant),
        (None, Some(_)) if file_kind == Some(PolicyKind::KlSigmoid) => Some(PolicyKind::KlSigmoid),
        (None, Some(_)) => Some(PolicyKind::KlTanh),
        _ => None,
    };
    let kind = flags.policy.or(implied).or(file_kind).unwrap_or(PolicyKind::KlTanh);
    let alpha = flags.alpha.or(file_alpha).unwrap_or(DEFAULT_ALPHA);
    let beta = flags.beta.or(file_beta).unwrap_or(DEFAULT_BETA);
    let policy = match kind {
        PolicyKind::Constant => AlphaPolicy::constant(alpha),
        PolicyKind::KlTanh => AlphaPolicy::kl_tanh(beta),
        PolicyKind::KlSigmoid => AlphaPolicy::kl_sigmoid(beta),
    };
    policy.map_err(|e| CliError::config(e.to_string()))
}

fn resolve_sampler(flags: &Flags, file: &EngineFile) -> Result<SamplerConfig, CliError> {
    let sampler = match (&flags.sampler, &file.sampler) {
        (Some(s), _) => *s,
        (None, Some(SamplerSpec::Full(s))) => *s,
        (None, Some(SamplerSpec::Text(t))) => t.parse().map_err(CliError::Config)?,
        (None, None) => SamplerConfig::Greedy,
    };
    sampler.validate(usize::MAX).map_err(|e| CliError::config(e.to_string()))?;
    Ok(sampler)
}

fn resolve_source(flags: &Flags, file: Option<&SourceFile>) -> Option<SourceConfig> {
    let (file_endpoint, file_suite) = match file {
        Some(SourceFile::Synthetic { suite }) => (None, Some(suite.clone())),
        Some(SourceFile::Bridge { endpoint, suite }) => (Some(endpoint.clone()), suite.clone()),
        None => (None, None),
    };
    let suite = flags.suite.clone().or(file_suite);
    match flags.endpoint.clone().or(file_endpoint) {
        Some(endpoint) => Some(SourceConfig::Bridge { endpoint, suite }),
        None => suite.map(|suite| SourceConfig::Synthetic { suite }),
    }
}

/// Merges `flags`, the optional file and the defaults for `command`.
pub fn resolve(command: &Command, flags: &Flags, file: &FileConfig) -> Result<RunConfig, CliError> {
    if let Some(named) = &file.command {
        if named != command.name() {
            return Err(CliError::config(format!(
                "config file is for `{named}`, but `{}` was requested",
                command.name()
            )));
        }
    }
    let e = &file.engine;
    let default_tokens = match command {
        Command::EvalPope | Command::Sweep { .. } => 1,
        _ => DEFAULT_DECODE_TOKENS,
    };
    let flag_tokens = match command {
        Command::Decode { max_new_tokens, .. } | Command::Analyze { max_new_tokens } => *max_new_tokens,
        _ => None,
    };
    let (flag_scene, flag_prompt) = match command {
        Command::Decode { scene, prompt, .. } => (scene.clone(), prompt.clone()),
        _ => (None, None),
    };
    let engine = EngineConfig {
        mode: flags.mode.or(e.mode).unwrap_or(Mode::NoLan),
        policy: resolve_policy(flags, e)?,
        sampler: resolve_sampler(flags, e)?,
        max_new_tokens: flag_tokens.or(e.max_new_tokens).unwrap_or(default_tokens),
        prompt: flag_prompt.or(e.prompt.clone()),
        scene: flag_scene.or(e.scene.clone()),
    };
    if engine.max_new_tokens == 0 {
        return Err(CliError::config("max_new_tokens must be at least 1"));
    }
    let seeds = SeedConfig {
        base: flags.seed.or(file.seeds.base).unwrap_or(0),
        count: flags.runs.or(file.seeds.count).unwrap_or(DEFAULT_RUNS),
    };
    if seeds.count == 0 {
        return Err(CliError::config("runs must be at least 1"));
    }
    let output = OutputConfig {
        dir: flags.out.clone().or(file.output.dir.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        format: flags.format.or(file.output.format).unwrap_or(ReportFormat::Table),
    };
    let source = resolve_source(flags, file.source.as_ref());
    let mut run = RunConfig {
        command: command.name().to_string(),
        engine,
        source,
        output,
        seeds,
        jobs: flags.jobs.or(file.jobs).unwrap_or(0),
        suite: None,
        sweep: None,
        serve_check: None,
    };

    let need_suite = |run: &RunConfig| {
        if run.source.as_ref().and_then(SourceConfig::suite).is_none() {
            return Err(CliError::config(format!("`{}` needs --suite (a gen-suite directory)", run.command)));
        }
        Ok(())
    };
    match command {
        Command::Decode { .. } | Command::EvalPope | Command::Analyze { .. } | Command::Serve { .. } => need_suite(&run)?,
        Command::Sweep { param, values } => {
            need_suite(&run)?;
            let param = param
                .or(file.sweep.param)
                .ok_or_else(|| CliError::config("sweep needs --param alpha|beta"))?;
            let values = values
                .clone()
                .or(file.sweep.values.clone())
                .ok_or_else(|| CliError::config("sweep needs --values"))?;
            if values.is_empty() {
                return Err(CliError::config("sweep needs at least one value"));
            }
            run.sweep = Some(SweepConfig { param, values });
        }
        Command::ServeCheck { context, visual_ref } => {
            if run.source.as_ref().and_then(SourceConfig::endpoint).is_none() {
                return Err(CliError::config("serve-check needs --endpoint"));
            }
            run.serve_check = Some(ServeCheckConfig {
                context: context.clone(),
                visual_ref: visual_ref.clone(),
            });
        }
        Command::GenSuite {
            setting,
            scenes,
            train_scenes,
        } => {
            let mut suite = file.suite.clone().unwrap_or_default();
            if let Some(s) = setting {
                suite.setting = *s;
            }
            if let Some(n) = scenes {
                suite.n_scenes = *n;
            }
            if let Some(n) = train_scenes {
                suite.world.train_scenes = *n;
            }
            if let Some(seed) = flags.seed {
                suite.suite_seed = seed;
            }
            run.suite = Some(suite);
        }
    }
    if matches!(command, Command::Serve { .. }) && run.source.as_ref().and_then(SourceConfig::endpoint).is_some() {
        return Err(CliError::config("serve takes --suite, not --endpoint"));
    }
    Ok(run)
}
