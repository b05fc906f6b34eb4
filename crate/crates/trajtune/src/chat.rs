//! Conversation data model for training corpora.
//!
//! Every stage downstream of ingest speaks [`ChatConversation`]: an ordered
//! list of role/content turns with per-turn loss masks, capability tags, and
//! the structural metadata that makes alignment reversible. Conversations
//! validate their shape at construction, so downstream code never re-checks
//! role order or mask placement.

use serde::{Deserialize, Serialize};

use crate::capability::CapabilityTag;
use crate::negative::QuadrantLabel;
use crate::tokenizer::TokenCounter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Which corpus channel a conversation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    /// Multi-turn aligned dialogue (the main training format).
    Chat,
    /// Classical single-block ReAct serialization.
    React,
    /// User requests a reply format, assistant complies.
    FormatInstruction,
    /// Refusal samples teaching when not to invoke tools.
    Negative,
}

impl Style {
    pub fn as_str(&self) -> &'static str {
        match self {
            Style::Chat => "chat",
            Style::React => "react",
            Style::FormatInstruction => "format-instruction",
            Style::Negative => "negative",
        }
    }
}

/// Reply format named in a format-instruction exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyFormat {
    React,
    Json,
}

/// Structural role of a turn within its conversation. This is the
/// inversion metadata: it pins each turn to the trajectory component it
/// renders, so alignment can be undone exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnKind {
    /// Leading system prompt.
    System,
    /// The user's task statement; `elicit` marks an appended thought elicit.
    Query { elicit: bool },
    /// Assistant states the reasoning for step `step`.
    Thought { step: usize },
    /// User asks which tool to call for step `step`.
    ActionElicit { step: usize },
    /// Assistant names the tool for step `step`.
    ActionName { step: usize },
    /// User asks for the value of argument `key` of step `step`.
    ArgElicit { step: usize, key: String },
    /// Assistant supplies argument `key`; `raw` means the source value was
    /// a bare string rendered without JSON quoting.
    ArgValue { step: usize, key: String, raw: bool },
    /// User relays the environment result of step `step`; `elicit` marks an
    /// appended thought elicit.
    ObservationWrap { step: usize, elicit: bool },
    /// Assistant's reasoning between the last observation and the answer.
    ClosingThought,
    /// User asks for the final answer after a closing thought.
    AnswerElicit,
    /// Assistant's final answer.
    FinalAnswer,
    /// User requests a specific reply format.
    FormatRequest { format: ReplyFormat },
    /// Assistant replies in the requested format.
    FormatReply { format: ReplyFormat },
    /// Assistant declines to invoke tools for an out-of-scope query.
    Refusal,
    /// Single-block ReAct text (style = react).
    ReactBlock,
    /// Ordinary chat content with no trajectory structure behind it.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    /// True when this turn contributes to the training loss.
    pub loss_mask: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability: Option<CapabilityTag>,
    #[serde(rename = "inversion_meta")]
    pub meta: TurnKind,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            loss_mask: false,
            capability: None,
            meta: TurnKind::System,
        }
    }

    pub fn user(content: impl Into<String>, meta: TurnKind) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            loss_mask: false,
            capability: None,
            meta,
        }
    }

    pub fn assistant(content: impl Into<String>, meta: TurnKind) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            loss_mask: true,
            capability: None,
            meta,
        }
    }
}

/// Provenance of a conversation: the raw record it descends from (when any)
/// and the versioned transform that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_id: Option<String>,
    pub transform: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChatError {
    #[error("conversation has no turns")]
    Empty,
    #[error("turn 0 must be system or user, found assistant")]
    BadFirstRole,
    #[error("turn {0}: system turns may only lead the conversation")]
    SystemAfterStart(usize),
    #[error("turn {index}: expected {expected} in user/assistant alternation")]
    NonAlternating {
        index: usize,
        expected: &'static str,
    },
    #[error("turn {0}: loss mask set on a non-assistant turn")]
    LossOnNonAssistant(usize),
    #[error("conversation has no assistant turn")]
    NoAssistantTurn,
    #[error("unknown chat role {0:?}")]
    UnknownRole(String),
}

/// One serialized training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatConversation {
    pub id: String,
    /// Source label partitioning corpora for mixture accounting
    /// ("toolbench", "agentinstruct:os", "general", ...).
    pub source: String,
    pub style: Style,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<crate::trajectory::ToolSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<QuadrantLabel>,
    pub turns: Vec<ChatTurn>,
}

impl ChatConversation {
    /// Validates shape on construction: non-empty, optional single leading
    /// system turn, strict user/assistant alternation, loss masks only on
    /// assistant turns, and at least one assistant turn.
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        style: Style,
        origin: Origin,
        tools: Vec<crate::trajectory::ToolSchema>,
        turns: Vec<ChatTurn>,
    ) -> Result<Self, ChatError> {
        validate_turns(&turns)?;
        Ok(Self {
            id: id.into(),
            source: source.into(),
            style,
            origin,
            tools,
            quadrant: None,
            turns,
        })
    }

    pub fn with_quadrant(mut self, quadrant: QuadrantLabel) -> Self {
        self.quadrant = Some(quadrant);
        self
    }

    /// Re-checks the turn invariants, for conversations read from files.
    pub fn validate(&self) -> Result<(), ChatError> {
        validate_turns(&self.turns)
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &ChatTurn> {
        self.turns.iter().filter(|t| t.role == Role::Assistant)
    }

    pub fn loss_turns(&self) -> impl Iterator<Item = &ChatTurn> {
        self.turns.iter().filter(|t| t.loss_mask)
    }

    /// Stable content digest used to prove mixing never mutates samples.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("conversation serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tokens<C: TokenCounter>(&self, counter: &C) -> usize {
        self.turns.iter().map(|t| counter.count(&t.content)).sum()
    }
}

fn validate_turns(turns: &[ChatTurn]) -> Result<(), ChatError> {
    if turns.is_empty() {
        return Err(ChatError::Empty);
    }
    if turns[0].role == Role::Assistant {
        return Err(ChatError::BadFirstRole);
    }
    let body_start = usize::from(turns[0].role == Role::System);
    let mut saw_assistant = false;
    for (index, turn) in turns.iter().enumerate() {
        if turn.loss_mask && turn.role != Role::Assistant {
            return Err(ChatError::LossOnNonAssistant(index));
        }
        if index < body_start {
            continue;
        }
        let expected = if (index - body_start) % 2 == 0 {
            Role::User
        } else {
            Role::Assistant
        };
        match turn.role {
            Role::System => return Err(ChatError::SystemAfterStart(index)),
            role if role == expected => {}
            _ => {
                return Err(ChatError::NonAlternating {
                    index,
                    expected: if expected == Role::User {
                        "user"
                    } else {
                        "assistant"
                    },
                })
            }
        }
        saw_assistant |= turn.role == Role::Assistant;
    }
    if !saw_assistant {
        return Err(ChatError::NoAssistantTurn);
    }
    Ok(())
}
