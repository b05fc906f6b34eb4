//! End-to-end corpus pipeline.
//!
//! One TOML config and one seed drive every stage: ingest raw trajectory
//! records, align them into multi-turn chat, render the ReAct remix,
//! decompose by capability, synthesize negatives and format pairs, load
//! general chat data, and compose the final mixture. Stages communicate
//! through files under the output directory; every file is written
//! atomically and the run manifest lands last, so a finished manifest
//! marks a complete, reproducible run. Two runs from the same config
//! produce byte-identical trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agenth::DetectorConfig;
use crate::align::{
    align_to_chat, build_format_instruction_pairs, render_react, AlignOptions, ElicitTemplateSet,
};
use crate::capability::{split_by_capability, tag_capabilities};
use crate::chat::{ChatConversation, ChatError, ChatTurn, Origin, Style, TurnKind};
use crate::container::{atomic_write, read_jsonl, write_jsonl, ContainerError, RawRecord};
use crate::ingest::{corpus_stats, ingest_records, FilterPolicy, MarkerGrammar, SourceStats};
use crate::mixture::{compose_mixture, MixManifest, MixSources, MixSpec};
use crate::negative::{
    synthesize, to_conversation, ExternalGenerator, ExternalGeneratorConfig, NegativeConfig,
    ResponseGenerator, TemplateGenerator,
};
use crate::seed::derive_seed;
use crate::tokenizer::ApproxTokenCounter;
use crate::trajectory::ToolSchema;

pub const GENERAL_TRANSFORM: &str = "general-v1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    /// Single-blob instruction-tuned trajectories.
    pub agentinstruct: Option<PathBuf>,
    /// Multi-turn tool-call trajectories.
    pub toolbench: Option<PathBuf>,
    /// Plain chat records for the general channel.
    pub general: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignStageConfig {
    /// Elicit template file; the built-in set applies when absent.
    pub templates: Option<PathBuf>,
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    #[default]
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegativesStageConfig {
    pub count: usize,
    pub generator: GeneratorChoice,
    pub tools_per_sample: usize,
    pub retries: usize,
    pub external: Option<ExternalGeneratorConfig>,
}

impl Default for NegativesStageConfig {
    fn default() -> Self {
        let base = NegativeConfig::default();
        Self {
            count: base.count,
            generator: GeneratorChoice::Template,
            tools_per_sample: base.tools_per_sample,
            retries: base.retries,
            external: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub inputs: InputsConfig,
    #[serde(default)]
    pub filters: FilterPolicy,
    #[serde(default)]
    pub align: AlignStageConfig,
    /// Mixture recipe. Its `seed` field is derived from the root seed at
    /// run time and must stay unset here.
    #[serde(default)]
    pub mix: MixSpec,
    #[serde(default)]
    pub negatives: NegativesStageConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
}

impl PipelineConfig {
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage_err<E>(stage: &'static str) -> impl Fn(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

/// Reads a TOML config. Relative paths inside the file resolve against
/// the file's own directory, so a config travels with its data.
pub fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
    let mut config: PipelineConfig = toml::from_str(&text)
        .map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    if config.out_dir.is_relative() {
        config.out_dir = base.join(&config.out_dir);
    }
    for p in [
        &mut config.inputs.agentinstruct,
        &mut config.inputs.toolbench,
        &mut config.inputs.general,
        &mut config.align.templates,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(config)
}

/// Collects every constraint violation, naming the offending key. An
/// empty result means the config is runnable.
pub fn validate_config(config: &PipelineConfig) -> Vec<String> {
    let mut violations = Vec::new();
    if config.inputs.agentinstruct.is_none() && config.inputs.toolbench.is_none() {
        violations
            .push("inputs: at least one of agentinstruct or toolbench is required".to_string());
    }
    for (key, path) in [
        ("inputs.agentinstruct", &config.inputs.agentinstruct),
        ("inputs.toolbench", &config.inputs.toolbench),
        ("inputs.general", &config.inputs.general),
        ("align.templates", &config.align.templates),
    ] {
        if let Some(path) = path {
            if !path.is_file() {
                violations.push(format!("{key}: no such file: {}", path.display()));
            }
        }
    }
    for v in config.mix.validate() {
        violations.push(format!("mix.{v}"));
    }
    if config.mix.seed != 0 {
        violations.push(
            "mix.seed: remove it; the pipeline derives the mix seed from the top-level seed"
                .to_string(),
        );
    }
    if config.negatives.count > 0 && config.negatives.tools_per_sample == 0 {
        violations.push("negatives.tools_per_sample: must be at least 1".to_string());
    }
    if config.negatives.generator == GeneratorChoice::External
        && config.negatives.external.is_none()
    {
        violations.push(
            "negatives.external: required when negatives.generator = \"external\"".to_string(),
        );
    }
    if let Err(detail) = config.detector.validate() {
        violations.push(format!("detector: {detail}"));
    }
    violations
}

/// Counts for one stage. Filter-style stages satisfy
/// `inputs == outputs + drops`; selection stages (the mix) keep unpicked
/// samples on disk rather than dropping them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub inputs: usize,
    pub outputs: usize,
    pub drops: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativesSummary {
    pub quadrants: BTreeMap<String, usize>,
    pub template_fallbacks: usize,
    pub all_c_fallback: bool,
}

/// Full accounting for one run. Serializes deterministically: rerunning
/// the same config writes the identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageCounts>,
    /// Per-source sample and token totals over the kept trajectories.
    pub source_stats: BTreeMap<String, SourceStats>,
    pub negatives: NegativesSummary,
    pub mix: MixManifest,
}

/// Drop log entry for stages that reject whole samples with free-form
/// reasons (alignment, general-chat conversion).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDrop {
    pub id: String,
    pub detail: String,
}

/// Converts a plain chat record into a conversation for the general
/// channel. The system field and any leading system turns fold into one
/// system turn; everything after must alternate user/assistant.
pub fn general_conversation(record: &RawRecord) -> Result<ChatConversation, ChatError> {
    let mut system_parts: Vec<&str> = Vec::new();
    if !record.system.is_empty() {
        system_parts.push(&record.system);
    }
    let mut rest = record.conversations.as_slice();
    while let Some((first, tail)) = rest.split_first() {
        if first.role == "system" {
            system_parts.push(&first.content);
            rest = tail;
        } else {
            break;
        }
    }
    let mut turns = Vec::with_capacity(rest.len() + 1);
    if !system_parts.is_empty() {
        turns.push(ChatTurn::system(system_parts.join("\n")));
    }
    for turn in rest {
        match turn.role.as_str() {
            "user" | "human" => turns.push(ChatTurn::user(turn.content.clone(), TurnKind::Plain)),
            "assistant" | "gpt" => {
                turns.push(ChatTurn::assistant(turn.content.clone(), TurnKind::Plain))
            }
            other => return Err(ChatError::UnknownRole(other.to_string())),
        }
    }
    let source = if record.source.is_empty() {
        "general"
    } else {
        record.source.as_str()
    };
    ChatConversation::new(
        record.id.clone(),
        source,
        Style::Chat,
        Origin {
            raw_id: Some(record.id.clone()),
            transform: GENERAL_TRANSFORM.to_string(),
        },
        record.tools.clone(),
        turns,
    )
}

fn write_stage_file<T: Serialize>(
    dir: &Path,
    name: &str,
    items: &[T],
) -> Result<(), ContainerError> {
    fs::create_dir_all(dir).map_err(|e| ContainerError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    write_jsonl(&dir.join(name), items)
}

/// Runs every stage and writes all artifacts under `config.out_dir`:
///
/// ```text
/// ingest/trajectories.jsonl   kept trajectories    ingest/drops.jsonl
/// align/chat.jsonl            aligned multi-turn   align/react.jsonl, drops.jsonl
/// capability/<tag>.jsonl      decomposed buckets
/// negatives/samples.jsonl     refusal data         negatives/dropped.jsonl
/// format/pairs.jsonl          format-instruction pairs
/// general/chat.jsonl          general channel      general/drops.jsonl
/// mixture/corpus.jsonl        final training mix
/// manifest.json               run accounting (written last)
/// ```
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(PipelineError::Config(violations));
    }
    let root = config.seed;
    let grammar = MarkerGrammar::default();
    let counter = ApproxTokenCounter;
    let out = &config.out_dir;
    let mut stages: BTreeMap<String, StageCounts> = BTreeMap::new();

    // Ingest: parse and filter raw records from every trajectory input.
    let mut raw: Vec<RawRecord> = Vec::new();
    for path in [&config.inputs.agentinstruct, &config.inputs.toolbench]
        .into_iter()
        .flatten()
    {
        raw.extend(read_jsonl::<RawRecord>(path).map_err(stage_err("ingest"))?);
    }
    let ingested = ingest_records(&raw, &grammar, &config.filters);
    let ingest_dir = out.join("ingest");
    write_stage_file(&ingest_dir, "trajectories.jsonl", &ingested.kept)
        .map_err(stage_err("ingest"))?;
    write_stage_file(&ingest_dir, "drops.jsonl", &ingested.drops).map_err(stage_err("ingest"))?;
    stages.insert(
        "ingest".to_string(),
        StageCounts {
            inputs: raw.len(),
            outputs: ingested.kept.len(),
            drops: ingested.drops.len(),
        },
    );
    let source_stats = corpus_stats(&ingested.kept, &counter);

    // Align: each kept trajectory becomes one chat conversation and one
    // ReAct rendering; schema-drift rejections land in the drop log.
    let templates = match &config.align.templates {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::Stage {
                stage: "align",
                source: Box::new(ContainerError::Io {
                    path: path.clone(),
                    source: e,
                }),
            })?;
            ElicitTemplateSet::from_json(&text).map_err(stage_err("align"))?
        }
        None => ElicitTemplateSet::builtin().clone(),
    };
    let options = AlignOptions {
        strict: config.align.strict,
    };
    let mut chat = Vec::new();
    let mut react = Vec::new();
    let mut align_drops: Vec<StageDrop> = Vec::new();
    for traj in &ingested.kept {
        match align_to_chat(traj, &templates, options) {
            Ok(conv) => {
                chat.push(conv);
                react.push(render_react(traj, &grammar));
            }
            Err(e) => align_drops.push(StageDrop {
                id: traj.raw_id.clone(),
                detail: e.to_string(),
            }),
        }
    }
    let align_dir = out.join("align");
    write_stage_file(&align_dir, "chat.jsonl", &chat).map_err(stage_err("align"))?;
    write_stage_file(&align_dir, "react.jsonl", &react).map_err(stage_err("align"))?;
    write_stage_file(&align_dir, "drops.jsonl", &align_drops).map_err(stage_err("align"))?;
    stages.insert(
        "align".to_string(),
        StageCounts {
            inputs: ingested.kept.len(),
            outputs: chat.len(),
            drops: align_drops.len(),
        },
    );

    // Decompose: tag loss turns with capabilities and split into buckets
    // with narrowed loss masks.
    let tagged: Vec<ChatConversation> = chat
        .iter()
        .map(tag_capabilities)
        .collect::<Result<_, _>>()
        .map_err(stage_err("decompose"))?;
    let split = split_by_capability(&tagged).map_err(stage_err("decompose"))?;
    let capability_dir = out.join("capability");
    for (tag, bucket) in &split.buckets {
        write_stage_file(&capability_dir, &format!("{tag}.jsonl"), bucket)
            .map_err(stage_err("decompose"))?;
    }
    stages.insert(
        "decompose".to_string(),
        StageCounts {
            inputs: chat.len(),
            outputs: split.buckets.values().map(Vec::len).sum(),
            drops: 0,
        },
    );

    // Negatives: refuse unanswerable tool queries, validated against the
    // hallucination detector.
    let mut tool_index: BTreeMap<String, ToolSchema> = BTreeMap::new();
    for traj in &ingested.kept {
        for tool in &traj.tools {
            tool_index
                .entry(tool.name.clone())
                .or_insert_with(|| tool.clone());
        }
    }
    let tool_pool: Vec<ToolSchema> = tool_index.into_values().collect();
    let neg_config = NegativeConfig {
        count: config.negatives.count,
        tools_per_sample: config.negatives.tools_per_sample,
        retries: config.negatives.retries,
        seed: root,
    };
    let generator: Box<dyn ResponseGenerator> = match config.negatives.generator {
        GeneratorChoice::Template => Box::new(TemplateGenerator),
        GeneratorChoice::External => Box::new(ExternalGenerator::new(
            config
                .negatives
                .external
                .clone()
                .expect("validated: external config present"),
        )),
    };
    let synthesis = synthesize(
        &ingested.kept,
        &tool_pool,
        &neg_config,
        generator.as_ref(),
        &config.detector,
    )
    .map_err(stage_err("negatives"))?;
    let negatives: Vec<ChatConversation> = synthesis
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| to_conversation(s, i))
        .collect();
    let negatives_dir = out.join("negatives");
    write_stage_file(&negatives_dir, "samples.jsonl", &negatives)
        .map_err(stage_err("negatives"))?;
    write_stage_file(&negatives_dir, "dropped.jsonl", &synthesis.dropped)
        .map_err(stage_err("negatives"))?;
    stages.insert(
        "negatives".to_string(),
        StageCounts {
            inputs: config.negatives.count,
            outputs: synthesis.samples.len(),
            drops: synthesis.dropped.len(),
        },
    );
    let mut quadrants: BTreeMap<String, usize> = BTreeMap::new();
    for sample in &synthesis.samples {
        *quadrants
            .entry(sample.quadrant.as_str().to_string())
            .or_default() += 1;
    }
    let negatives_summary = NegativesSummary {
        quadrants,
        template_fallbacks: synthesis.template_fallbacks,
        all_c_fallback: synthesis.all_c_fallback,
    };

    // Format pairs: synthesized fresh each run from a derived seed.
    let pairs = build_format_instruction_pairs(
        config.mix.instruction_pairs,
        derive_seed(root, "format-pairs"),
    );
    write_stage_file(&out.join("format"), "pairs.jsonl", &pairs).map_err(stage_err("format"))?;
    stages.insert(
        "format".to_string(),
        StageCounts {
            inputs: 0,
            outputs: pairs.len(),
            drops: 0,
        },
    );

    // General channel: plain chat records converted as-is.
    let mut general = Vec::new();
    let mut general_drops: Vec<StageDrop> = Vec::new();
    let mut general_inputs = 0usize;
    if let Some(path) = &config.inputs.general {
        let records: Vec<RawRecord> = read_jsonl(path).map_err(stage_err("general"))?;
        general_inputs = records.len();
        for record in &records {
            match general_conversation(record) {
                Ok(conv) => general.push(conv),
                Err(e) => general_drops.push(StageDrop {
                    id: record.id.clone(),
                    detail: e.to_string(),
                }),
            }
        }
        let general_dir = out.join("general");
        write_stage_file(&general_dir, "chat.jsonl", &general).map_err(stage_err("general"))?;
        write_stage_file(&general_dir, "drops.jsonl", &general_drops)
            .map_err(stage_err("general"))?;
    }
    stages.insert(
        "general".to_string(),
        StageCounts {
            inputs: general_inputs,
            outputs: general.len(),
            drops: general_drops.len(),
        },
    );

    // Mix: compose the final corpus under a derived seed.
    let mut spec = config.mix.clone();
    spec.seed = derive_seed(root, "mix");
    let sources = MixSources {
        capability: split.buckets,
        react,
        format_pairs: pairs,
        negatives,
        general,
    };
    let mixed = compose_mixture(&sources, &spec).map_err(stage_err("mix"))?;
    write_stage_file(&out.join("mixture"), "corpus.jsonl", &mixed.corpus)
        .map_err(stage_err("mix"))?;
    stages.insert(
        "mix".to_string(),
        StageCounts {
            inputs: sources_len(&sources),
            outputs: mixed.corpus.len(),
            drops: 0,
        },
    );

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: root,
        config_sha256: config.sha256(),
        stages,
        source_stats,
        negatives: negatives_summary,
        mix: mixed.manifest,
    };
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    body.push(b'\n');
    atomic_write(&out.join("manifest.json"), &body).map_err(stage_err("manifest"))?;
    Ok(manifest)
}

fn sources_len(sources: &MixSources) -> usize {
    sources.capability.values().map(Vec::len).sum::<usize>()
        + sources.react.len()
        + sources.format_pairs.len()
        + sources.negatives.len()
        + sources.general.len()
}
