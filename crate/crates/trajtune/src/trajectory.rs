//! Core domain types: tool schemas, ReAct steps, and parsed trajectories.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;

/// One declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    /// Free-form type label as declared by the source corpus ("string",
    /// "integer", ...). Not validated against argument values.
    #[serde(rename = "type", default)]
    pub type_label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub required: bool,
}

/// A callable tool as presented to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ToolParam>,
}

impl ToolSchema {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters: Vec::new(),
        }
    }

    pub fn with_param(mut self, name: &str, type_label: &str, description: &str) -> Self {
        self.parameters.push(ToolParam {
            name: name.to_string(),
            type_label: type_label.to_string(),
            description: description.to_string(),
            required: true,
        });
        self
    }
}

/// One reason-act-observe cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactStep {
    pub thought: String,
    pub action: String,
    /// Parsed argument object. Non-JSON argument text is wrapped as
    /// `{"raw": <text>}` at parse time.
    pub action_input: Value,
    /// Empty when the source omitted the observation (common on the step
    /// that terminates the episode).
    #[serde(default)]
    pub observation: String,
}

/// Where a trajectory came from. The label partitions corpora for mixture
/// accounting and survives round-trips through serialized records.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Source {
    /// Held-out single-tool agent task corpus; `task` names the subtask
    /// family ("os", "db", "kg", ... or "general" when unlabelled).
    AgentInstruct { task: String },
    /// Multi-tool API-call corpus.
    ToolBench,
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::AgentInstruct { task } => format!("agentinstruct:{task}"),
            Source::ToolBench => "toolbench".to_string(),
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        if label == "toolbench" {
            return Some(Source::ToolBench);
        }
        if label == "agentinstruct" {
            return Some(Source::AgentInstruct {
                task: "general".to_string(),
            });
        }
        label
            .strip_prefix("agentinstruct:")
            .map(|task| Source::AgentInstruct {
                task: task.to_string(),
            })
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Source::parse(&label)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown source label: {label}")))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A fully parsed ReAct trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactTrajectory {
    /// Identifier of the raw record this was parsed from.
    pub raw_id: String,
    pub source: Source,
    /// System prompt with any few-shot demonstrations already stripped.
    #[serde(default)]
    pub system_prompt: String,
    /// The user's task statement.
    pub query: String,
    #[serde(default)]
    pub tools: Vec<ToolSchema>,
    pub steps: Vec<ReactStep>,
    /// Thought emitted between the last observation and the final answer,
    /// when the source kept them separate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closing_thought: Option<String>,
    /// Present on complete episodes; parsing drops records without one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
}

impl ReactTrajectory {
    /// Looks up a tool schema by exact name.
    pub fn tool(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.name == name)
    }
}

/// Why a raw record was excluded during ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCode {
    /// Markers out of order, missing, or interleaved with stray text.
    MalformedFormat,
    /// System prompt embeds worked examples and policy says drop.
    FewShotExample,
    /// Episode never reaches a final answer.
    NoFinalAnswer,
    /// Search-tree rollout restarted mid-episode; the transcript splices
    /// unrelated attempts together.
    DfsdtRestart,
    /// Action input is neither valid JSON nor plain text.
    UnparseableArgs,
}

impl DropCode {
    pub const ALL: [DropCode; 5] = [
        DropCode::MalformedFormat,
        DropCode::FewShotExample,
        DropCode::NoFinalAnswer,
        DropCode::DfsdtRestart,
        DropCode::UnparseableArgs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropCode::MalformedFormat => "malformed_format",
            DropCode::FewShotExample => "few_shot_example",
            DropCode::NoFinalAnswer => "no_final_answer",
            DropCode::DfsdtRestart => "dfsdt_restart",
            DropCode::UnparseableArgs => "unparseable_args",
        }
    }
}

impl fmt::Display for DropCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A drop decision with human-readable context, logged to the sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReason {
    pub code: DropCode,
    pub detail: String,
}

impl DropReason {
    pub fn new(code: DropCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}
