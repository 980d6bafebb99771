use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use nolan_core::bridge::{serve_check, serve_connection, BridgeSource, Endpoint, SceneSetSource, ServeCheckOptions};
use nolan_core::engine::{write_trace, DecodeRequest, Decoder, FinishReason, Mode};
use nolan_core::eval::{
    config_hash, divergence_table, entropy_report, evaluate_pope, kl_by_position, mutual_information_estimate,
    pope_report, position_table, subset_divergence_report, sweep, sweep_report, timing_report, timing_table,
    CalibratedSuite, EntropyRow, EvalOptions, PopeEvaluation, PositionRow, Report, ReportHeader, SourceFactory,
    Strategy, SubsetDivergenceReport, SyntheticFactory, TimingRow,
};
use nolan_core::modulation::{AlphaPolicy, PolicyKind};
use nolan_core::synthetic::{build_sources, SyntheticLvlm, DESCRIBE_TOKEN};

use crate::config::{RunConfig, ServedModel, SourceConfig};
use crate::error::CliError;
use crate::pool::BridgeFactory;
use crate::run::{RunDir, METRICS, TRACE};
use crate::suite::{input_hashes, write_suite_dir, LoadedSuite, InputFile, SUITE_FILES};

/// What a finished command leaves behind.
#[derive(Debug)]
pub struct Outcome {
    pub run_dir: Option<PathBuf>,
    pub exit_code: i32,
    /// Human-readable summary for stdout.
    pub summary: String,
}

fn strategy_name(mode: Mode, policy: AlphaPolicy) -> &'static str {
    match (mode, policy.kind()) {
        (Mode::Regular, _) => "regular",
        (Mode::TextOnly, _) => "text_only",
        (Mode::GenericContrast, _) => "contrast",
        (Mode::NoLan, PolicyKind::Constant) => "nolan_base",
        (Mode::NoLan, PolicyKind::KlTanh) => "nolan_plus",
        (Mode::NoLan, PolicyKind::KlSigmoid) => "nolan_plus_sigmoid",
    }
}

fn configured_strategy(run: &RunConfig) -> Strategy {
    let e = &run.engine;
    Strategy::new(strategy_name(e.mode, e.policy), e.mode, e.policy).with_sampler(e.sampler)
}

fn eval_options(run: &RunConfig) -> EvalOptions {
    EvalOptions {
        runs: run.seeds.count,
        base_seed: run.seeds.base,
        jobs: run.jobs,
        max_new_tokens: run.engine.max_new_tokens,
    }
}

fn source(run: &RunConfig) -> &SourceConfig {
    run.source.as_ref().expect("validated during resolution")
}

fn load_suite(run: &RunConfig) -> Result<(LoadedSuite, Vec<InputFile>), CliError> {
    let dir = source(run).suite().expect("validated during resolution");
    Ok((LoadedSuite::load(dir)?, input_hashes(dir)?))
}

fn endpoint(text: &str) -> Result<Endpoint, CliError> {
    text.parse().map_err(|e: String| CliError::config(format!("endpoint `{text}`: {e}")))
}

fn factory(run: &RunConfig, model: Arc<SyntheticLvlm>, suite: &LoadedSuite) -> Result<Box<dyn SourceFactory>, CliError> {
    Ok(match source(run) {
        SourceConfig::Synthetic { .. } => Box::new(SyntheticFactory::new(model, &suite.scenes, "synthetic")),
        SourceConfig::Bridge { endpoint: e, .. } => {
            if run.engine.mode == Mode::GenericContrast {
                return Err(CliError::config("generic_contrast needs a synthetic source"));
            }
            Box::new(BridgeFactory::new(endpoint(e)?, suite.world.grammar.vocab().clone()))
        }
    })
}

fn header(run: &RunConfig) -> ReportHeader {
    ReportHeader::new(config_hash(run), run.seeds.seeds()).with_meta("command", run.command.clone())
}

fn write_report(dir: &mut RunDir, run: &RunConfig, stem: &str, report: &Report) -> Result<(), CliError> {
    let format = run.output.format;
    dir.write_text(&format!("{stem}.{}", format.extension()), &report.emit(format))
}

fn write_outcomes(dir: &mut RunDir, evals: &[&PopeEvaluation]) -> Result<(), CliError> {
    let mut out = dir.writer(TRACE)?;
    for eval in evals {
        for o in &eval.outcomes {
            #[derive(Serialize)]
            struct Line<'a> {
                strategy: &'a str,
                #[serde(flatten)]
                outcome: &'a nolan_core::eval::ItemOutcome,
            }
            serde_json::to_writer(
                &mut out,
                &Line {
                    strategy: &eval.strategy.name,
                    outcome: o,
                },
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn eval_pope(run: &RunConfig) -> Result<Outcome, CliError> {
    let (suite, inputs) = load_suite(run)?;
    let factory = factory(run, suite.pope_model()?, &suite)?;
    let eval = evaluate_pope(&suite.items, &configured_strategy(run), factory.as_ref(), &eval_options(run))?;
    let report = pope_report(header(run), suite.config.setting, std::slice::from_ref(&eval))?;

    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    dir.write_json(METRICS, &eval.metrics)?;
    write_report(&mut dir, run, "report", &report)?;
    write_outcomes(&mut dir, &[&eval])?;
    let exit_code = if eval.source_failures > 0 {
        log::error!("{} decodes hit a source failure", eval.source_failures);
        1
    } else {
        0
    };
    Ok(Outcome {
        run_dir: Some(dir.finish(run, inputs, exit_code)?),
        exit_code,
        summary: report.emit(nolan_core::eval::ReportFormat::Table),
    })
}

pub fn sweep_cmd(run: &RunConfig) -> Result<Outcome, CliError> {
    let spec = run.sweep.as_ref().expect("validated during resolution");
    let (suite, inputs) = load_suite(run)?;
    let factory = factory(run, suite.pope_model()?, &suite)?;
    let family = match run.engine.policy.kind() {
        PolicyKind::Constant => PolicyKind::KlTanh,
        kind => kind,
    };
    let table = sweep(
        spec.param,
        &spec.values,
        family,
        run.engine.sampler,
        &suite.items,
        factory.as_ref(),
        &eval_options(run),
    )?;
    let report = sweep_report(header(run), &table)?;
    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    dir.write_json(METRICS, &table)?;
    write_report(&mut dir, run, "report", &report)?;
    Ok(Outcome {
        run_dir: Some(dir.finish(run, inputs, 0)?),
        exit_code: 0,
        summary: report.emit(nolan_core::eval::ReportFormat::Table),
    })
}

#[derive(Debug, Serialize)]
struct Analysis {
    mutual_information: f64,
    divergence: SubsetDivergenceReport,
    entropy: Vec<EntropyRow>,
    positions: Vec<PositionRow>,
    timing: Vec<TimingRow>,
}

pub fn analyze(run: &RunConfig) -> Result<Outcome, CliError> {
    let (suite, inputs) = load_suite(run)?;
    let pope = factory(run, suite.pope_model()?, &suite)?;
    let opts = EvalOptions {
        max_new_tokens: 1,
        ..eval_options(run)
    };
    let sampler = run.engine.sampler;
    let configured = match run.engine.mode {
        Mode::NoLan => configured_strategy(run),
        _ => Strategy::nolan_plus().with_sampler(sampler),
    };
    let regular = evaluate_pope(&suite.items, &Strategy::regular().with_sampler(sampler), pope.as_ref(), &opts)?;
    let mut dual = Strategy::regular_diagnostic().with_sampler(sampler);
    dual.name = "regular_dual".into();
    let diagnostic = evaluate_pope(&suite.items, &dual, pope.as_ref(), &opts)?;
    let modulated = evaluate_pope(&suite.items, &configured, pope.as_ref(), &opts)?;

    let divergence = subset_divergence_report(diagnostic.outcomes.iter().map(|o| (o.correct, &o.result)))?;
    let mutual_information = mutual_information_estimate(diagnostic.results())?;
    let entropy = entropy_report([
        (regular.strategy.name.clone(), regular.results()),
        (modulated.strategy.name.clone(), modulated.results()),
    ])?;
    let timing = timing_report([
        (regular.strategy.name.clone(), regular.results()),
        (modulated.strategy.name.clone(), modulated.results()),
    ]);

    // Per-position divergence needs long outputs, so it decodes descriptions
    // rather than one-token answers.
    let captions = match source(run) {
        SourceConfig::Synthetic { .. } => factory(run, suite.caption_model()?, &suite)?,
        SourceConfig::Bridge { .. } => pope,
    };
    let decoder = Decoder::new(captions.vocab().clone());
    let describe = captions
        .vocab()
        .id(DESCRIBE_TOKEN)
        .ok_or_else(|| CliError::config("suite vocabulary lacks the describe token"))?;
    let mut descriptions = Vec::with_capacity(suite.scenes.len());
    for scene in &suite.scenes {
        let req = DecodeRequest {
            prompt_tokens: vec![describe],
            visual_ref: Some(scene.scene_id.clone()),
            policy: AlphaPolicy::Constant { alpha: 0.0 },
            sampler,
            max_new_tokens: run.engine.max_new_tokens,
            seed: run.seeds.base,
            ..DecodeRequest::new(Mode::NoLan)
        };
        let mut src = captions.source(&scene.scene_id)?;
        descriptions.push(decoder.decode(&req, src.as_mut()).map_err(|e| CliError::Runtime(e.to_string()))?);
    }
    let positions = kl_by_position(&descriptions)?;

    let analysis = Analysis {
        mutual_information,
        divergence,
        entropy,
        positions,
        timing,
    };
    let head = header(run).with_meta("mutual_information", format!("{mutual_information:.6e}"));
    let reports = [
        ("divergence", divergence_table(head.clone(), &analysis.divergence)?),
        ("entropy", nolan_core::eval::entropy_table(head.clone(), &analysis.entropy)?),
        ("position", position_table(head.clone(), &analysis.positions)?),
        ("timing", timing_table(head, &analysis.timing)?),
    ];
    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    dir.write_json(METRICS, &analysis)?;
    let mut summary = format!("mutual information estimate: {mutual_information:.6}\n");
    for (stem, report) in &reports {
        write_report(&mut dir, run, stem, report)?;
        summary.push_str(&report.emit(nolan_core::eval::ReportFormat::Table));
    }
    write_outcomes(&mut dir, &[&regular, &diagnostic, &modulated])?;
    let failures = regular.source_failures + diagnostic.source_failures + modulated.source_failures;
    let exit_code = i32::from(failures > 0 || descriptions.iter().any(|d| d.finish_reason == FinishReason::SourceError));
    Ok(Outcome {
        run_dir: Some(dir.finish(run, inputs, exit_code)?),
        exit_code,
        summary,
    })
}

#[derive(Debug, Serialize)]
struct DecodeSummary<'a> {
    scene: &'a str,
    prompt: &'a str,
    text: String,
    tokens: &'a [u32],
    finish_reason: FinishReason,
    steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn decode(run: &RunConfig) -> Result<Outcome, CliError> {
    let (suite, inputs) = load_suite(run)?;
    let grammar = &suite.world.grammar;
    let scene = match &run.engine.scene {
        Some(id) => suite.scene(id)?,
        None => suite.scenes.first().ok_or_else(|| CliError::config("suite has no scenes"))?,
    };
    let prompt = run.engine.prompt.as_deref().unwrap_or(DESCRIBE_TOKEN);
    let prompt_tokens = grammar.encode(prompt).map_err(|e| CliError::config(format!("prompt: {e}")))?;
    let model = if prompt_tokens.first() == Some(&grammar.describe()) {
        suite.caption_model()?
    } else {
        suite.pope_model()?
    };
    let e = &run.engine;
    let req = DecodeRequest {
        prompt_tokens,
        visual_ref: Some(scene.scene_id.clone()),
        policy: e.policy,
        mode: e.mode,
        sampler: e.sampler,
        max_new_tokens: e.max_new_tokens,
        seed: run.seeds.base,
    };
    let decoder = Decoder::new(grammar.vocab().clone());
    let engine_err = |e: nolan_core::error::EngineError| CliError::config(e.to_string());
    let result = match source(run) {
        SourceConfig::Synthetic { .. } => {
            let mut src = build_sources(scene, model.clone())?;
            if e.mode == Mode::GenericContrast {
                let mut contrast = build_sources(&scene.clone().with_distortion(1.0), model)?;
                decoder.generic_contrast_decode(&req, &mut src, &mut contrast)
            } else {
                decoder.decode(&req, &mut src)
            }
        }
        SourceConfig::Bridge { endpoint: text, .. } => {
            if e.mode == Mode::GenericContrast {
                return Err(CliError::config("generic_contrast needs a synthetic source"));
            }
            let options = nolan_core::bridge::BridgeOptions {
                expected_vocab: Some(grammar.vocab_size()),
                ..Default::default()
            };
            let mut src = BridgeSource::connect(&endpoint(text)?, options)?;
            decoder.decode(&req, &mut src)
        }
    }
    .map_err(engine_err)?;

    let text = grammar.decode(&result.tokens);
    let summary = DecodeSummary {
        scene: &scene.scene_id,
        prompt,
        text: text.clone(),
        tokens: &result.tokens,
        finish_reason: result.finish_reason,
        steps: result.trace.len(),
        error: result.error.as_deref(),
    };
    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    dir.write_json(METRICS, &summary)?;
    let mut out = dir.writer(TRACE)?;
    write_trace(&mut out, &result.trace)?;
    out.flush()?;
    drop(out);
    let exit_code = i32::from(result.finish_reason == FinishReason::SourceError);
    Ok(Outcome {
        run_dir: Some(dir.finish(run, inputs, exit_code)?),
        exit_code,
        summary: format!("{prompt} -> {text}\n"),
    })
}

pub fn serve_check_cmd(run: &RunConfig) -> Result<Outcome, CliError> {
    let src = source(run);
    let target = endpoint(src.endpoint().expect("validated during resolution"))?;
    let check = run.serve_check.as_ref().expect("validated during resolution");
    let (suite, inputs) = match src.suite() {
        Some(dir) => (Some(LoadedSuite::load(dir)?), input_hashes(dir)?),
        None => (None, Vec::new()),
    };
    let defaults = ServeCheckOptions::default();
    let options = ServeCheckOptions {
        context: check
            .context
            .clone()
            .or_else(|| suite.as_ref().map(|s| vec![s.world.grammar.bos()]))
            .unwrap_or(defaults.context),
        visual_ref: check
            .visual_ref
            .clone()
            .or_else(|| suite.as_ref().and_then(|s| s.scenes.first()).map(|s| s.scene_id.clone()))
            .unwrap_or(defaults.visual_ref),
        bridge: defaults.bridge,
    };
    let report = serve_check(&target, &options);
    let mut summary = String::new();
    for c in &report.checks {
        summary.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let exit_code = i32::from(!report.passed());
    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    dir.write_json(METRICS, &report)?;
    Ok(Outcome {
        run_dir: Some(dir.finish(run, inputs, exit_code)?),
        exit_code,
        summary,
    })
}

pub fn gen_suite(run: &RunConfig) -> Result<Outcome, CliError> {
    let config = run.suite.as_ref().expect("validated during resolution");
    let built = CalibratedSuite::build(config, run.jobs)?;
    let mut dir = RunDir::create(&run.output.dir, &run.command)?;
    write_suite_dir(dir.path(), config, &built)?;
    for name in SUITE_FILES {
        dir.note_output(name);
    }
    dir.write_json(METRICS, &built.calibration)?;
    let summary = format!(
        "{} scenes, {} items, {} setting; boost {} gives regular accuracy {:.4}\n",
        built.scenes.len(),
        built.suite.len(),
        config.setting,
        built.calibration.boost,
        built.calibration.regular_accuracy
    );
    Ok(Outcome {
        run_dir: Some(dir.finish(run, Vec::new(), 0)?),
        exit_code: 0,
        summary,
    })
}

/// Serves until the peer shuts down (stdio) or forever (TCP). Writes no run
/// directory: stdout belongs to the protocol.
pub fn serve(run: &RunConfig, tcp: Option<&str>, served: ServedModel) -> Result<Outcome, CliError> {
    let (suite, _) = load_suite(run)?;
    let model = match served {
        ServedModel::Pope => suite.pope_model()?,
        ServedModel::Caption => suite.caption_model()?,
    };
    let mut source = SceneSetSource::new(model, &suite.scenes)?;
    match tcp {
        None => {
            let stdin = std::io::stdin();
            let stats = serve_connection(&mut source, stdin.lock(), std::io::stdout().lock())?;
            log::info!("served {stats:?}");
        }
        Some(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| CliError::config(format!("cannot listen on {addr}: {e}")))?;
            eprintln!("listening on tcp://{}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                match serve_connection(&mut source, reader, stream) {
                    Ok(stats) => log::info!("connection closed: {stats:?}"),
                    Err(e) => log::warn!("connection failed: {e}"),
                }
            }
        }
    }
    Ok(Outcome {
        run_dir: None,
        exit_code: 0,
        summary: String::new(),
    })
}
