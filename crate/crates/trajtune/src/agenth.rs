//! Hallucination benchmark construction and scoring.
//!
//! The benchmark asks one question per item: given a query whose ground
//! truth is a plain prose answer, does the model hallucinate a tool
//! invocation anyway? Two detector families flag offenders: ReAct-format
//! markers and general tool-urge phrases. Scores aggregate only over items
//! whose ground truth is a raw response; items that genuinely require a
//! function call never contribute.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::RawRecord;
use crate::trajectory::ToolSchema;

/// Keyword lists and their matching policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Matched as line-anchored prefixes.
    #[serde(default = "default_react_keywords")]
    pub react_keywords: Vec<String>,
    /// Matched as substrings anywhere in the response.
    #[serde(default = "default_general_phrases")]
    pub general_phrases: Vec<String>,
    #[serde(default)]
    pub react_case_insensitive: bool,
    #[serde(default = "default_true")]
    pub general_case_insensitive: bool,
}

fn default_true() -> bool {
    true
}

fn default_react_keywords() -> Vec<String> {
    vec!["Thought:".to_string(), "Action:".to_string()]
}

fn default_general_phrases() -> Vec<String> {
    vec!["I will use".to_string(), "I need to call".to_string()]
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            react_keywords: default_react_keywords(),
            general_phrases: default_general_phrases(),
            react_case_insensitive: false,
            general_case_insensitive: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.react_keywords.is_empty() {
            return Err("react_keywords is empty".to_string());
        }
        if self.general_phrases.is_empty() {
            return Err("general_phrases is empty".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    /// The correct reply is plain prose.
    RawResponse,
    /// The correct reply invokes a tool.
    FunctionCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    #[serde(default)]
    pub system_tools: Vec<ToolSchema>,
    pub query: String,
    pub ground_truth_kind: GroundTruthKind,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HallucinationFlags {
    pub react: bool,
    pub general: bool,
}

impl HallucinationFlags {
    pub fn any(&self) -> bool {
        self.react || self.general
    }
}

/// Flags tool-invocation signals in a response. Only raw-response ground
/// truths can hallucinate: when the truth is a function call, emitting call
/// syntax is correct behavior and both flags stay false.
pub fn detect_hallucination(
    response: &str,
    truth_kind: GroundTruthKind,
    config: &DetectorConfig,
) -> HallucinationFlags {
    if truth_kind == GroundTruthKind::FunctionCall {
        return HallucinationFlags::default();
    }
    let react = response.lines().any(|line| {
        let line = line.trim_start();
        config.react_keywords.iter().any(|kw| {
            if config.react_case_insensitive {
                line.len() >= kw.len() && line[..kw.len()].eq_ignore_ascii_case(kw)
            } else {
                line.starts_with(kw.as_str())
            }
        })
    });
    let general = if config.general_case_insensitive {
        let lowered = response.to_lowercase();
        config
            .general_phrases
            .iter()
            .any(|p| lowered.contains(&p.to_lowercase()))
    } else {
        config
            .general_phrases
            .iter()
            .any(|p| response.contains(p.as_str()))
    };
    HallucinationFlags { react, general }
}

/// True when the reference text embeds a structured tool call: a JSON
/// object with a "name" field, an explicit function-call tag, or ReAct
/// markers.
fn invokes_tool(reference: &str, config: &DetectorConfig) -> bool {
    let trimmed = reference.trim();
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(trimmed) {
        if map.contains_key("name") {
            return true;
        }
    }
    if trimmed.contains("<functioncall>") {
        return true;
    }
    // Reuse the ReAct detector on the reference itself.
    detect_hallucination(reference, GroundTruthKind::RawResponse, config).react
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub items: Vec<BenchmarkItem>,
    /// Items whose reference mixes prose with call syntax; labeled
    /// FunctionCall and reported for audit.
    pub ambiguous_ids: Vec<String>,
}

impl BuildOutcome {
    pub fn raw_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.ground_truth_kind == GroundTruthKind::RawResponse)
            .count()
    }

    pub fn call_count(&self) -> usize {
        self.items.len() - self.raw_count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("record {id}: expected a user query followed by an assistant reference")]
    BadShape { id: String },
}

/// Classifies a function-calling corpus into benchmark items. Each record
/// must hold a user query and an assistant reference reply (an optional
/// leading system turn is folded into the tool context).
pub fn build_benchmark(
    corpus: &[RawRecord],
    config: &DetectorConfig,
) -> Result<BuildOutcome, BenchmarkError> {
    let mut outcome = BuildOutcome::default();
    for record in corpus {
        let turns: Vec<_> = record
            .conversations
            .iter()
            .filter(|t| t.role != "system")
            .collect();
        let (query, reference) = match turns.as_slice() {
            [q, r] if q.role == "user" && r.role == "assistant" => (&q.content, &r.content),
            _ => {
                return Err(BenchmarkError::BadShape {
                    id: record.id.clone(),
                })
            }
        };
        let calls = invokes_tool(reference, config);
        let pure_json = serde_json::from_str::<Value>(reference.trim())
            .map(|v| v.is_object())
            .unwrap_or(false);
        if calls && !pure_json {
            outcome.ambiguous_ids.push(record.id.clone());
        }
        outcome.items.push(BenchmarkItem {
            id: record.id.clone(),
            system_tools: record.tools.clone(),
            query: query.trim().to_string(),
            ground_truth_kind: if calls {
                GroundTruthKind::FunctionCall
            } else {
                GroundTruthKind::RawResponse
            },
            reference: reference.trim().to_string(),
        });
    }
    Ok(outcome)
}

/// Per-item detection record kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAudit {
    pub id: String,
    pub truth_kind: GroundTruthKind,
    pub flags: HallucinationFlags,
}

/// Aggregate hallucination metrics. Rates are fractions in [0, 1]; the
/// conventional display scale multiplies by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub n_raw: usize,
    pub n_react_halluc: usize,
    pub n_general_halluc: usize,
    pub h_react: f64,
    pub h_general: f64,
    /// Reverse average of the two rates: 0.5 x ((1 - H_ReAct) + (1 - H_General)).
    pub h_score: f64,
    pub audits: Vec<ItemAudit>,
}

impl HallucinationReport {
    pub fn h_react_percent(&self) -> f64 {
        self.h_react * 100.0
    }

    pub fn h_general_percent(&self) -> f64 {
        self.h_general * 100.0
    }

    pub fn h_score_percent(&self) -> f64 {
        self.h_score * 100.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("predictions missing for {} benchmark item(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("benchmark has no raw-response items; hallucination rates are undefined")]
    NoRawItems,
}

/// Scores a prediction set against the benchmark. Every benchmark id must
/// have a prediction; rates aggregate over raw-response items only.
pub fn score(
    predictions: &BTreeMap<String, String>,
    benchmark: &[BenchmarkItem],
    config: &DetectorConfig,
) -> Result<HallucinationReport, ScoreError> {
    let missing: Vec<String> = benchmark
        .iter()
        .filter(|item| !predictions.contains_key(&item.id))
        .map(|item| item.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ScoreError::MissingPredictions(missing));
    }
    let mut n_raw = 0;
    let mut n_react = 0;
    let mut n_general = 0;
    let mut audits = Vec::with_capacity(benchmark.len());
    for item in benchmark {
        let response = &predictions[&item.id];
        let flags = detect_hallucination(response, item.ground_truth_kind, config);
        if item.ground_truth_kind == GroundTruthKind::RawResponse {
            n_raw += 1;
            n_react += usize::from(flags.react);
            n_general += usize::from(flags.general);
        }
        audits.push(ItemAudit {
            id: item.id.clone(),
            truth_kind: item.ground_truth_kind,
            flags,
        });
    }
    if n_raw == 0 {
        return Err(ScoreError::NoRawItems);
    }
    let h_react = n_react as f64 / n_raw as f64;
    let h_general = n_general as f64 / n_raw as f64;
    Ok(HallucinationReport {
        n_raw,
        n_react_halluc: n_react,
        n_general_halluc: n_general,
        h_react,
        h_general,
        h_score: 0.5 * ((1.0 - h_react) + (1.0 - h_general)),
        audits,
    })
}
