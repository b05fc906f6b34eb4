//! Negative-sample synthesis: teaching the model when not to call tools.
//!
//! Two failure circumstances get dedicated training data. Quadrant B: tools
//! are provided but the query is ordinary, so the reply must ignore them.
//! Quadrant C: the query asks for tool-like help but no tools exist, so the
//! reply must decline. Queries come from the kept agent corpus; responses
//! come from a pluggable generator, and every emitted sample must pass the
//! hallucination detectors, keeping synthesis and evaluation consistent.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agenth::{detect_hallucination, DetectorConfig, GroundTruthKind};
use crate::chat::{ChatConversation, ChatTurn, Origin, Style, TurnKind};
use crate::seed::derive_seed;
use crate::trajectory::{ReactTrajectory, ToolSchema};

/// Cell of the 2x2 space: tools provided? x query requests tools?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadrantLabel {
    #[serde(rename = "a_no_tools_normal_query")]
    ANoToolsNormalQuery,
    #[serde(rename = "b_tools_normal_query")]
    BToolsNormalQuery,
    #[serde(rename = "c_no_tools_tool_query")]
    CNoToolsToolQuery,
    #[serde(rename = "d_tools_tool_query")]
    DToolsToolQuery,
}

impl QuadrantLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuadrantLabel::ANoToolsNormalQuery => "a_no_tools_normal_query",
            QuadrantLabel::BToolsNormalQuery => "b_tools_normal_query",
            QuadrantLabel::CNoToolsToolQuery => "c_no_tools_tool_query",
            QuadrantLabel::DToolsToolQuery => "d_tools_tool_query",
        }
    }
}

/// A candidate query plus enough provenance to enforce tool irrelevance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRef {
    pub text: String,
    pub origin_id: String,
    /// Tool names declared or invoked by the originating trajectory.
    pub origin_tool_names: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum NegativeError {
    #[error("query pool holds {available} distinct queries, {requested} requested")]
    TooFewQueries { available: usize, requested: usize },
    #[error("query {origin_id}: every pool tool is relevant to its trajectory")]
    NoIrrelevantTools { origin_id: String },
    #[error("generation failed for query {origin_id}: {detail}")]
    Generation { origin_id: String, detail: String },
}

/// Samples `n` distinct queries from the kept corpus, deterministically
/// under `seed`. Duplicated query text collapses to its first occurrence.
pub fn extract_query_pool(
    corpus: &[ReactTrajectory],
    n: usize,
    seed: u64,
) -> Result<Vec<QueryRef>, NegativeError> {
    let mut seen = std::collections::HashSet::new();
    let mut pool: Vec<QueryRef> = Vec::new();
    for traj in corpus {
        if !seen.insert(traj.query.clone()) {
            continue;
        }
        let mut names: Vec<String> = traj.tools.iter().map(|t| t.name.clone()).collect();
        for step in &traj.steps {
            if !names.contains(&step.action) {
                names.push(step.action.clone());
            }
        }
        pool.push(QueryRef {
            text: traj.query.clone(),
            origin_id: traj.raw_id.clone(),
            origin_tool_names: names,
        });
    }
    if pool.len() < n {
        return Err(NegativeError::TooFewQueries {
            available: pool.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    Ok(pool)
}

/// One query with its assigned quadrant and (for B) appended tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub query: QueryRef,
    pub quadrant: QuadrantLabel,
    pub tools: Vec<ToolSchema>,
}

#[derive(Debug, Default)]
pub struct AssignmentOutcome {
    pub assignments: Vec<Assignment>,
    /// Set when an empty tool pool forced every query into quadrant C.
    pub all_c_fallback: bool,
}

/// Assigns ceil(n/2) queries to quadrant B with `k` irrelevant tools each,
/// the rest to quadrant C with none. Output preserves input order; only
/// the choice of which queries become B and which tools attach is random.
/// A tool is irrelevant when its name appears nowhere in the query's
/// originating trajectory.
pub fn assign_quadrants(
    queries: &[QueryRef],
    tool_pool: &[ToolSchema],
    k: usize,
    seed: u64,
) -> Result<AssignmentOutcome, NegativeError> {
    let mut outcome = AssignmentOutcome::default();
    if tool_pool.is_empty() {
        outcome.all_c_fallback = true;
        outcome.assignments = queries
            .iter()
            .map(|q| Assignment {
                query: q.clone(),
                quadrant: QuadrantLabel::CNoToolsToolQuery,
                tools: vec![],
            })
            .collect();
        return Ok(outcome);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = queries.len();
    let n_b = n.div_ceil(2);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut is_b = vec![false; n];
    for &i in indices.iter().take(n_b) {
        is_b[i] = true;
    }

    for (i, query) in queries.iter().enumerate() {
        if !is_b[i] {
            outcome.assignments.push(Assignment {
                query: query.clone(),
                quadrant: QuadrantLabel::CNoToolsToolQuery,
                tools: vec![],
            });
            continue;
        }
        let eligible: Vec<&ToolSchema> = tool_pool
            .iter()
            .filter(|t| !query.origin_tool_names.contains(&t.name))
            .collect();
        if eligible.is_empty() {
            return Err(NegativeError::NoIrrelevantTools {
                origin_id: query.origin_id.clone(),
            });
        }
        let take = k.min(eligible.len());
        let picked = rand::seq::index::sample(&mut rng, eligible.len(), take);
        let tools: Vec<ToolSchema> = picked.iter().map(|j| eligible[j].clone()).collect();
        outcome.assignments.push(Assignment {
            query: query.clone(),
            quadrant: QuadrantLabel::BToolsNormalQuery,
            tools,
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Template,
    External,
}

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed completion: {0}")]
    BadCompletion(String),
}

/// Text generator behind negative-response synthesis. One operation:
/// prompt in, reply out.
pub trait ResponseGenerator: Sync {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError>;
    fn kind(&self) -> GeneratorKind;
    /// Upper bound on in-flight generate calls.
    fn max_concurrency(&self) -> usize {
        1
    }
}

const STOPWORDS: &[&str] = &[
    "about", "after", "also", "back", "been", "being", "could", "does", "find", "from", "give",
    "have", "help", "into", "just", "know", "like", "list", "look", "make", "need", "over",
    "please", "show", "some", "tell", "that", "their", "them", "then", "there", "these", "they",
    "this", "want", "what", "when", "where", "which", "will", "with", "would", "your",
];

/// Refusal schemas, one chosen per query by content hash. Wordings must
/// stay clear of the hallucination detectors: no tool-urge phrases, no
/// line-anchored markers.
const REFUSALS: &[&str] = &[
    "I'm sorry, but I don't have real-time data or external service access, so I can't help with {topic} directly. A dedicated website or app should have what you're after.",
    "Unfortunately I can't look up {topic} for you, since no data source is reachable from here. A quick search on a trusted site should answer it.",
    "I don't have a way to fetch live information on {topic}. For up-to-date details, the provider's official page is your best bet.",
    "That request depends on external information about {topic}, which I'm unable to retrieve. I'm happy to explain general background instead if that helps.",
    "None of the capabilities available to me fit a request about {topic}, so I can't complete it. You could try a specialized service for this.",
];

/// Deterministic offline generator: a refusal schema keyed by query hash,
/// parameterized with topic keywords from the query.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateGenerator;

impl TemplateGenerator {
    fn topic(query: &str) -> String {
        let words: Vec<String> = query
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 3)
            .map(|w| w.to_lowercase())
            .filter(|w| !STOPWORDS.contains(&w.as_str()))
            .take(2)
            .collect();
        if words.is_empty() {
            "this request".to_string()
        } else {
            words.join(" ")
        }
    }
}

impl ResponseGenerator for TemplateGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError> {
        let digest = Sha256::digest(prompt.as_bytes());
        let pick = digest[0] as usize % REFUSALS.len();
        Ok(REFUSALS[pick].replace("{topic}", &Self::topic(prompt)))
    }

    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Template
    }
}

/// Connection settings for an external text-generation endpoint. The
/// request body is `{"model", "prompt"}` and the reply must carry a string
/// `completion` field; the credential is read from the named environment
/// variable and sent as a bearer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_credential_env() -> String {
    "TRAJTUNE_GENERATOR_TOKEN".to_string()
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_retries() -> usize {
    2
}

fn default_concurrency() -> usize {
    4
}

pub struct ExternalGenerator {
    config: ExternalGeneratorConfig,
    agent: ureq::Agent,
}

impl ExternalGenerator {
    pub fn new(config: ExternalGeneratorConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    fn request_once(&self, prompt: &str) -> Result<String, GeneratorError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
        });
        let mut request = self.agent.post(&self.config.endpoint);
        if let Ok(token) = std::env::var(&self.config.credential_env) {
            request = request.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| GeneratorError::BadCompletion(e.to_string()))?;
        value
            .get("completion")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                GeneratorError::BadCompletion("reply lacks a string `completion` field".into())
            })
    }
}

impl ResponseGenerator for ExternalGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GeneratorError> {
        let mut last = None;
        for _ in 0..=self.config.retries {
            match self.request_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn kind(&self) -> GeneratorKind {
        GeneratorKind::External
    }

    fn max_concurrency(&self) -> usize {
        self.config.concurrency.max(1)
    }
}

/// One synthesized refusal sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub quadrant: QuadrantLabel,
    pub system_tools: Vec<ToolSchema>,
    pub query: String,
    pub response: String,
    pub generator: GeneratorKind,
    pub origin_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisDrop {
    pub origin_id: String,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct SynthesisOutcome {
    pub samples: Vec<NegativeSample>,
    /// Queries whose generations kept failing detector validation.
    pub dropped: Vec<SynthesisDrop>,
    /// How many samples fell back to the template generator after external
    /// transport failures.
    pub template_fallbacks: usize,
    pub all_c_fallback: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NegativeConfig {
    /// How many queries to draw into the pool.
    pub count: usize,
    /// Irrelevant tools appended to each quadrant-B sample.
    pub tools_per_sample: usize,
    /// Validation retries before a sample is dropped.
    pub retries: usize,
    pub seed: u64,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            count: 761,
            tools_per_sample: 2,
            retries: 2,
            seed: 0,
        }
    }
}

fn generation_prompt(assignment: &Assignment) -> String {
    let mut prompt = String::new();
    if !assignment.tools.is_empty() {
        prompt.push_str(
            "Reply to the user directly, in plain language, without invoking any function.\n",
        );
        prompt.push_str("Available functions (do not use them):\n");
        for tool in &assignment.tools {
            prompt.push_str(&format!("- {}: {}\n", tool.name, tool.description));
        }
    } else {
        prompt.push_str(
            "No tools are available. Reply to the user directly in plain language, declining anything that needs live data.\n",
        );
    }
    prompt.push_str("User query: ");
    prompt.push_str(&assignment.query.text);
    prompt
}

fn generate_validated(
    assignment: &Assignment,
    generator: &dyn ResponseGenerator,
    detector: &DetectorConfig,
    retries: usize,
    fallbacks: &AtomicUsize,
) -> Result<NegativeSample, SynthesisDrop> {
    let prompt = generation_prompt(assignment);
    let mut kind = generator.kind();
    let mut last_detail = String::new();
    for _ in 0..=retries {
        let text = match generator.generate(&prompt) {
            Ok(text) => text,
            Err(GeneratorError::Transport(detail)) => {
                // Transport trouble is not the sample's fault: complete the
                // run offline rather than dropping data.
                fallbacks.fetch_add(1, Ordering::Relaxed);
                kind = GeneratorKind::Template;
                match TemplateGenerator.generate(&prompt) {
                    Ok(text) => text,
                    Err(e) => {
                        last_detail = format!("template fallback failed after {detail}: {e}");
                        continue;
                    }
                }
            }
            Err(e) => {
                last_detail = e.to_string();
                continue;
            }
        };
        let flags = detect_hallucination(&text, GroundTruthKind::RawResponse, detector);
        if flags.any() {
            last_detail = format!(
                "generated response raised hallucination flags (react={}, general={})",
                flags.react, flags.general
            );
            continue;
        }
        return Ok(NegativeSample {
            quadrant: assignment.quadrant,
            system_tools: assignment.tools.clone(),
            query: assignment.query.text.clone(),
            response: text,
            generator: kind,
            origin_id: assignment.query.origin_id.clone(),
        });
    }
    Err(SynthesisDrop {
        origin_id: assignment.query.origin_id.clone(),
        detail: last_detail,
    })
}

/// Runs the full synthesis: query pool, quadrant assignment, generation,
/// detector validation. Generation runs with bounded concurrency (per the
/// generator) and results keep input order.
pub fn synthesize(
    corpus: &[ReactTrajectory],
    tool_pool: &[ToolSchema],
    config: &NegativeConfig,
    generator: &dyn ResponseGenerator,
    detector: &DetectorConfig,
) -> Result<SynthesisOutcome, NegativeError> {
    let pool = extract_query_pool(
        corpus,
        config.count,
        derive_seed(config.seed, "negatives/pool"),
    )?;
    let assigned = assign_quadrants(
        &pool,
        tool_pool,
        config.tools_per_sample,
        derive_seed(config.seed, "negatives/assign"),
    )?;

    let workers = generator.max_concurrency().max(1);
    let fallbacks = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<NegativeSample, SynthesisDrop>>>> =
        Mutex::new((0..assigned.assignments.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= assigned.assignments.len() {
                    break;
                }
                let result = generate_validated(
                    &assigned.assignments[i],
                    generator,
                    detector,
                    config.retries,
                    &fallbacks,
                );
                results.lock().expect("no panics hold the lock")[i] = Some(result);
            });
        }
    });

    let mut outcome = SynthesisOutcome {
        all_c_fallback: assigned.all_c_fallback,
        template_fallbacks: fallbacks.into_inner(),
        ..SynthesisOutcome::default()
    };
    for slot in results.into_inner().expect("threads joined") {
        match slot.expect("every index visited") {
            Ok(sample) => outcome.samples.push(sample),
            Err(drop) => outcome.dropped.push(drop),
        }
    }
    Ok(outcome)
}

/// Renders the tool context of a quadrant-B sample as a system prompt.
fn tools_system_prompt(tools: &[ToolSchema]) -> String {
    let mut text = String::from("You have access to the following functions:\n");
    for tool in tools {
        let params: Vec<String> = tool
            .parameters
            .iter()
            .map(|p| format!("{}: {}", p.name, p.type_label))
            .collect();
        text.push_str(&format!(
            "- {} ({}): {}\n",
            tool.name,
            params.join(", "),
            tool.description
        ));
    }
    text.trim_end().to_string()
}

/// Serializes one negative sample as a training conversation.
pub fn to_conversation(sample: &NegativeSample, index: usize) -> ChatConversation {
    let mut turns = Vec::new();
    if !sample.system_tools.is_empty() {
        turns.push(ChatTurn::system(tools_system_prompt(&sample.system_tools)));
    }
    turns.push(ChatTurn::user(
        sample.query.clone(),
        TurnKind::Query { elicit: false },
    ));
    turns.push(ChatTurn::assistant(
        sample.response.clone(),
        TurnKind::Refusal,
    ));
    let generator = match sample.generator {
        GeneratorKind::Template => "template",
        GeneratorKind::External => "external",
    };
    ChatConversation::new(
        format!("neg-{index:06}"),
        "synthetic:negative",
        Style::Negative,
        Origin {
            raw_id: Some(sample.origin_id.clone()),
            transform: format!("negative-{generator}-v1"),
        },
        sample.system_tools.clone(),
        turns,
    )
    .expect("negative sample shape is valid by construction")
    .with_quadrant(sample.quadrant)
}
