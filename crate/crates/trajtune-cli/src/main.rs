//! Command-line front end for the corpus toolkit. Each subcommand wires one
//! library stage to files; `run` drives the whole pipeline from a TOML
//! config. Every command prints a JSON summary on stdout.
//!
//! Exit codes: 0 success, 2 invalid usage or configuration, 3 processing
//! failure (unreadable input, stage error).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use trajtune::agenth::{build_benchmark, score, BenchmarkItem, DetectorConfig};
use trajtune::align::{
    align_to_chat, build_format_instruction_pairs, render_react, AlignOptions, ElicitTemplateSet,
};
use trajtune::capability::{split_by_capability, tag_capabilities, CapabilityTag};
use trajtune::chat::ChatConversation;
use trajtune::container::{read_jsonl, write_jsonl, RawRecord};
use trajtune::ingest::{corpus_stats, ingest_records, FewShotPolicy, FilterPolicy, MarkerGrammar};
use trajtune::loss::{aggregate_curves, convergence_summary, format_content_gap, LossRecord};
use trajtune::mixture::{compose_mixture, MixError, MixSources, MixSpec};
use trajtune::negative::{
    synthesize, to_conversation, ExternalGenerator, ExternalGeneratorConfig, NegativeConfig,
    QuadrantLabel, ResponseGenerator, TemplateGenerator,
};
use trajtune::pipeline::{load_config, run_pipeline, PipelineError, StageDrop};
use trajtune::seed::derive_seed;
use trajtune::tokenizer::ApproxTokenCounter;
use trajtune::trajectory::{ReactTrajectory, ToolSchema};

#[derive(Parser)]
#[command(
    name = "trajtune",
    version,
    about = "Corpus engineering for agent fine-tuning",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw agent corpora into trajectories and filter defects.
    Ingest(IngestArgs),
    /// Transform trajectories into training conversations.
    Align(AlignArgs),
    /// Split aligned conversations into per-capability buckets.
    Decompose(DecomposeArgs),
    /// Compose a training mixture from channel files.
    Mix(MixArgs),
    /// Synthesize tool-refusal negatives from a trajectory corpus.
    Negatives(NegativesArgs),
    /// Build or score the hallucination benchmark.
    #[command(subcommand)]
    Agenth(AgenthCommand),
    /// Smooth training-loss logs and report convergence and tail gaps.
    LossCurves(LossCurvesArgs),
    /// Run the whole pipeline from a TOML config.
    Run(RunArgs),
}

/// A failed command: `code` picks the process exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(err: E) -> Self {
        Self {
            code: 3,
            err: err.into(),
        }
    }
}

fn invalid(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        err: err.into(),
    }
}

fn violations(context: &str, list: &[String]) -> Failure {
    invalid(anyhow::anyhow!("{context}:\n  {}", list.join("\n  ")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.err);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Align(args) => cmd_align(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Mix(args) => cmd_mix(args),
        Command::Negatives(args) => cmd_negatives(args),
        Command::Agenth(AgenthCommand::Build(args)) => cmd_agenth_build(args),
        Command::Agenth(AgenthCommand::Score(args)) => cmd_agenth_score(args),
        Command::LossCurves(args) => cmd_loss_curves(args),
        Command::Run(args) => cmd_run(args),
    }
}

fn read_input<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    read_jsonl(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)
}

fn write_output<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    write_jsonl(path, items)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::from)
}

fn print_summary<T: Serialize>(summary: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(summary).expect("summaries serialize")
    );
}

/// Parses a small TOML config file into the given type; absence of the
/// path yields the default.
fn load_toml_or_default<T: DeserializeOwned + Default>(
    path: Option<&PathBuf>,
    what: &str,
) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {} {}", what, path.display()))?;
    toml::from_str(&text).map_err(|e| invalid(anyhow::anyhow!("{} {}: {e}", what, path.display())))
}

fn load_detector(path: Option<&PathBuf>) -> Result<DetectorConfig, Failure> {
    let config: DetectorConfig = load_toml_or_default(path, "detector config")?;
    config
        .validate()
        .map_err(|e| invalid(anyhow::anyhow!("detector config: {e}")))?;
    Ok(config)
}

#[derive(Args)]
struct IngestArgs {
    /// Raw corpus file (JSONL); repeat for multiple corpora.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Parsed trajectories (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Where to log dropped records (JSONL).
    #[arg(long)]
    drop_log: Option<PathBuf>,
    /// What to do with system prompts that embed worked examples.
    #[arg(long, value_enum, default_value_t = FewShotArg::Strip)]
    few_shot: FewShotArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FewShotArg {
    Strip,
    Drop,
}

impl From<FewShotArg> for FewShotPolicy {
    fn from(arg: FewShotArg) -> Self {
        match arg {
            FewShotArg::Strip => FewShotPolicy::Strip,
            FewShotArg::Drop => FewShotPolicy::Drop,
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), Failure> {
    let mut records: Vec<RawRecord> = Vec::new();
    for input in &args.inputs {
        records.extend(read_input::<RawRecord>(input)?);
    }
    let policy = FilterPolicy {
        few_shot: args.few_shot.into(),
    };
    let outcome = ingest_records(&records, &MarkerGrammar::default(), &policy);
    write_output(&args.out, &outcome.kept)?;
    if let Some(drop_log) = &args.drop_log {
        write_output(drop_log, &outcome.drops)?;
    }
    print_summary(&serde_json::json!({
        "inputs": records.len(),
        "kept": outcome.kept.len(),
        "dropped": outcome.drops.len(),
        "sources": corpus_stats(&outcome.kept, &ApproxTokenCounter),
    }));
    Ok(())
}

#[derive(Args)]
struct AlignArgs {
    /// Trajectory corpus (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Output conversation style.
    #[arg(long, value_enum)]
    style: StyleArg,
    /// Aligned conversations (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Where to log trajectories the transform rejected (JSONL).
    #[arg(long)]
    drop_log: Option<PathBuf>,
    /// Elicit template set (JSON); defaults to the built-in set.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Reject steps whose argument keys drift from the tool schema.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Chat,
    React,
}

fn cmd_align(args: AlignArgs) -> Result<(), Failure> {
    let trajectories: Vec<ReactTrajectory> = read_input(&args.input)?;
    let templates = match &args.templates {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading templates {}", path.display()))?;
            let set = ElicitTemplateSet::from_json(&text)
                .map_err(|e| invalid(anyhow::anyhow!("templates {}: {e}", path.display())))?;
            Box::leak(Box::new(set)) as &ElicitTemplateSet
        }
        None => ElicitTemplateSet::builtin(),
    };

    let mut aligned: Vec<ChatConversation> = Vec::new();
    let mut drops: Vec<StageDrop> = Vec::new();
    match args.style {
        StyleArg::Chat => {
            let options = AlignOptions {
                strict: args.strict,
            };
            for traj in &trajectories {
                match align_to_chat(traj, templates, options) {
                    Ok(conv) => aligned.push(conv),
                    Err(e) => drops.push(StageDrop {
                        id: traj.raw_id.clone(),
                        detail: e.to_string(),
                    }),
                }
            }
        }
        StyleArg::React => {
            let grammar = MarkerGrammar::default();
            aligned.extend(trajectories.iter().map(|t| render_react(t, &grammar)));
        }
    }
    write_output(&args.out, &aligned)?;
    if let Some(drop_log) = &args.drop_log {
        write_output(drop_log, &drops)?;
    }
    print_summary(&serde_json::json!({
        "inputs": trajectories.len(),
        "aligned": aligned.len(),
        "dropped": drops.len(),
    }));
    Ok(())
}

#[derive(Args)]
struct DecomposeArgs {
    /// Aligned chat conversations (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Directory for the per-capability bucket files.
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), Failure> {
    let corpus: Vec<ChatConversation> = read_input(&args.input)?;
    let tagged: Vec<ChatConversation> = corpus
        .iter()
        .map(tag_capabilities)
        .collect::<Result<_, _>>()
        .context("tagging capabilities")?;
    let split = split_by_capability(&tagged).context("splitting by capability")?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (tag, bucket) in &split.buckets {
        write_output(&args.out_dir.join(format!("{tag}.jsonl")), bucket)?;
    }
    print_summary(&serde_json::json!({
        "conversations": corpus.len(),
        "turn_counts": split.turn_counts,
        "total_turns": split.total_turns(),
    }));
    Ok(())
}

#[derive(Args)]
struct MixArgs {
    /// Directory holding per-capability bucket files (<tag>.jsonl).
    #[arg(long)]
    capability_dir: Option<PathBuf>,
    /// ReAct-style conversations (JSONL).
    #[arg(long)]
    react: Option<PathBuf>,
    /// Format-instruction pairs (JSONL). When omitted, the recipe's
    /// `instruction_pairs` count is synthesized from the recipe seed.
    #[arg(long)]
    format: Option<PathBuf>,
    /// Negative samples rendered as conversations (JSONL).
    #[arg(long)]
    negatives: Option<PathBuf>,
    /// General chat conversations (JSONL).
    #[arg(long)]
    general: Option<PathBuf>,
    /// Mixture recipe (TOML); defaults to the built-in recipe.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Composed corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Where to write the mixture manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn cmd_mix(args: MixArgs) -> Result<(), Failure> {
    let spec: MixSpec = load_toml_or_default(args.spec.as_ref(), "mixture spec")?;

    let mut sources = MixSources::default();
    if let Some(dir) = &args.capability_dir {
        for tag in CapabilityTag::ALL {
            let path = dir.join(format!("{tag}.jsonl"));
            if path.exists() {
                sources.capability.insert(tag, read_input(&path)?);
            }
        }
    }
    if let Some(path) = &args.react {
        sources.react = read_input(path)?;
    }
    sources.format_pairs = match &args.format {
        Some(path) => read_input(path)?,
        None => build_format_instruction_pairs(
            spec.instruction_pairs,
            derive_seed(spec.seed, "format-pairs"),
        ),
    };
    if let Some(path) = &args.negatives {
        sources.negatives = read_input(path)?;
    }
    if let Some(path) = &args.general {
        sources.general = read_input(path)?;
    }

    let output = compose_mixture(&sources, &spec).map_err(|e| match e {
        MixError::InvalidSpec(list) => violations("mixture spec", &list),
        other => Failure::from(anyhow::Error::from(other)),
    })?;
    write_output(&args.out, &output.corpus)?;
    if let Some(path) = &args.manifest {
        let bytes = serde_json::to_vec_pretty(&output.manifest).expect("manifest serializes");
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    print_summary(&output.manifest);
    Ok(())
}

#[derive(Args)]
struct NegativesArgs {
    /// Trajectory corpus supplying queries and the tool pool (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Synthesized samples (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Where to also write the samples rendered as training conversations
    /// (JSONL), ready for the mix negatives channel.
    #[arg(long)]
    conversations: Option<PathBuf>,
    /// Where to log queries whose generations kept failing (JSONL).
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// How many queries to draw into the pool.
    #[arg(long, default_value_t = NegativeConfig::default().count)]
    count: usize,
    /// Irrelevant tools appended to each quadrant-B sample.
    #[arg(long, default_value_t = NegativeConfig::default().tools_per_sample)]
    tools_per_sample: usize,
    /// Validation retries before a sample is dropped.
    #[arg(long, default_value_t = NegativeConfig::default().retries)]
    retries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Template)]
    generator: GeneratorArg,
    /// Endpoint URL for the external generator.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the external generator.
    #[arg(long)]
    model: Option<String>,
    /// Detector config used to validate generations (TOML).
    #[arg(long)]
    detector: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Template,
    External,
}

fn cmd_negatives(args: NegativesArgs) -> Result<(), Failure> {
    let corpus: Vec<ReactTrajectory> = read_input(&args.corpus)?;
    let detector = load_detector(args.detector.as_ref())?;
    if args.tools_per_sample == 0 && args.count > 0 {
        return Err(invalid(anyhow::anyhow!(
            "tools-per-sample must be at least 1"
        )));
    }

    // First-wins union of every tool schema the corpus declares.
    let mut pool: BTreeMap<String, ToolSchema> = BTreeMap::new();
    for traj in &corpus {
        for tool in &traj.tools {
            pool.entry(tool.name.clone())
                .or_insert_with(|| tool.clone());
        }
    }
    let tool_pool: Vec<ToolSchema> = pool.into_values().collect();

    let generator: Box<dyn ResponseGenerator> = match args.generator {
        GeneratorArg::Template => Box::new(TemplateGenerator),
        GeneratorArg::External => {
            let (Some(endpoint), Some(model)) = (args.endpoint, args.model) else {
                return Err(invalid(anyhow::anyhow!(
                    "--generator external requires --endpoint and --model"
                )));
            };
            let config: ExternalGeneratorConfig =
                serde_json::from_value(serde_json::json!({ "endpoint": endpoint, "model": model }))
                    .expect("defaults fill the remaining fields");
            Box::new(ExternalGenerator::new(config))
        }
    };

    let config = NegativeConfig {
        count: args.count,
        tools_per_sample: args.tools_per_sample,
        retries: args.retries,
        seed: args.seed,
    };
    let outcome = synthesize(&corpus, &tool_pool, &config, generator.as_ref(), &detector)
        .context("synthesizing negatives")?;
    write_output(&args.out, &outcome.samples)?;
    if let Some(path) = &args.conversations {
        let rendered: Vec<ChatConversation> = outcome
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| to_conversation(s, i))
            .collect();
        write_output(path, &rendered)?;
    }
    if let Some(path) = &args.dropped {
        write_output(path, &outcome.dropped)?;
    }

    let b = outcome
        .samples
        .iter()
        .filter(|s| s.quadrant == QuadrantLabel::BToolsNormalQuery)
        .count();
    print_summary(&serde_json::json!({
        "samples": outcome.samples.len(),
        "quadrants": { "b": b, "c": outcome.samples.len() - b },
        "dropped": outcome.dropped.len(),
        "template_fallbacks": outcome.template_fallbacks,
        "all_c_fallback": outcome.all_c_fallback,
    }));
    Ok(())
}

#[derive(Subcommand)]
enum AgenthCommand {
    /// Classify a function-calling corpus into benchmark items.
    Build(AgenthBuildArgs),
    /// Score a prediction set against a built benchmark.
    Score(AgenthScoreArgs),
}

#[derive(Args)]
struct AgenthBuildArgs {
    /// Function-calling corpus (JSONL of raw records).
    #[arg(long)]
    corpus: PathBuf,
    /// Benchmark items (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Detector config used to classify references (TOML).
    #[arg(long)]
    detector: Option<PathBuf>,
}

fn cmd_agenth_build(args: AgenthBuildArgs) -> Result<(), Failure> {
    let corpus: Vec<RawRecord> = read_input(&args.corpus)?;
    let detector = load_detector(args.detector.as_ref())?;
    let outcome = build_benchmark(&corpus, &detector).context("building benchmark")?;
    write_output(&args.out, &outcome.items)?;
    print_summary(&serde_json::json!({
        "items": outcome.items.len(),
        "raw_response": outcome.raw_count(),
        "function_call": outcome.call_count(),
        "ambiguous": outcome.ambiguous_ids,
    }));
    Ok(())
}

#[derive(Args)]
struct AgenthScoreArgs {
    /// Benchmark items (JSONL).
    #[arg(long)]
    benchmark: PathBuf,
    /// Model outputs to score (JSONL of {"id", "response"}).
    #[arg(long)]
    predictions: PathBuf,
    /// Detector config (TOML).
    #[arg(long)]
    detector: Option<PathBuf>,
    /// Where to write per-item audit records (JSONL).
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PredictionLine {
    id: String,
    response: String,
}

fn cmd_agenth_score(args: AgenthScoreArgs) -> Result<(), Failure> {
    let benchmark: Vec<BenchmarkItem> = read_input(&args.benchmark)?;
    let lines: Vec<PredictionLine> = read_input(&args.predictions)?;
    let detector = load_detector(args.detector.as_ref())?;
    let mut predictions = BTreeMap::new();
    for line in lines {
        if predictions.insert(line.id.clone(), line.response).is_some() {
            return Err(Failure::from(anyhow::anyhow!(
                "duplicate prediction for {}",
                line.id
            )));
        }
    }
    let report = score(&predictions, &benchmark, &detector).context("scoring predictions")?;
    if let Some(path) = &args.audit {
        write_output(path, &report.audits)?;
    }
    print_summary(&serde_json::json!({
        "n_raw": report.n_raw,
        "n_react_halluc": report.n_react_halluc,
        "n_general_halluc": report.n_general_halluc,
        "h_react_percent": report.h_react_percent(),
        "h_general_percent": report.h_general_percent(),
        "h_score_percent": report.h_score_percent(),
    }));
    Ok(())
}

#[derive(Args)]
struct LossCurvesArgs {
    /// Loss log (JSONL of {"step", "label", "loss"}).
    #[arg(long)]
    log: PathBuf,
    /// Centered moving-average window.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Convergence threshold on the smoothed loss.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Label of the format-style curve for the tail-gap report.
    #[arg(long, requires = "content_label")]
    format_label: Option<String>,
    /// Label of the content-style curve for the tail-gap report.
    #[arg(long, requires = "format_label")]
    content_label: Option<String>,
    /// Tail ratio at which the format/content gap is flagged.
    #[arg(long, default_value_t = 5.0)]
    gap_threshold: f64,
    /// Where to write the smoothed curves (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_loss_curves(args: LossCurvesArgs) -> Result<(), Failure> {
    if args.window == 0 {
        return Err(invalid(anyhow::anyhow!("window must be at least 1")));
    }
    let records: Vec<LossRecord> = read_input(&args.log)?;
    let curves = aggregate_curves(&records, args.window).context("aggregating curves")?;
    if let Some(path) = &args.out {
        let bytes = serde_json::to_vec_pretty(&curves).expect("curves serialize");
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let gap = match (&args.format_label, &args.content_label) {
        (Some(format_label), Some(content_label)) => Some(
            format_content_gap(&curves, format_label, content_label, args.gap_threshold)
                .ok_or_else(|| {
                    Failure::from(anyhow::anyhow!(
                        "curves for {format_label:?} and {content_label:?} not both present"
                    ))
                })?,
        ),
        _ => None,
    };
    print_summary(&serde_json::json!({
        "labels": curves.len(),
        "convergence": convergence_summary(&curves, args.threshold),
        "gap": gap,
    }));
    Ok(())
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_config(&args.config).map_err(pipeline_failure)?;
    let manifest = run_pipeline(&config).map_err(pipeline_failure)?;
    print_summary(&manifest);
    Ok(())
}

fn pipeline_failure(err: PipelineError) -> Failure {
    match err {
        PipelineError::Config(list) => violations("pipeline config", &list),
        other => Failure::from(anyhow::Error::from(other)),
    }
}
