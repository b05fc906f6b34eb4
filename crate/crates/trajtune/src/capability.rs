//! Capability tagging and corpus decomposition.
//!
//! Each loss-bearing turn of an aligned conversation exercises exactly one
//! of four capabilities. Tagging is purely structural: it reads the turn's
//! inversion metadata, never the text, so it is deterministic and immune to
//! phrasing changes. Splitting produces one sub-corpus per capability by
//! narrowing loss masks, leaving conversation content untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatConversation, Role, Style, TurnKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityTag {
    Reasoning,
    Retrieval,
    Understanding,
    InstructionFollowing,
}

impl CapabilityTag {
    pub const ALL: [CapabilityTag; 4] = [
        CapabilityTag::Reasoning,
        CapabilityTag::Retrieval,
        CapabilityTag::Understanding,
        CapabilityTag::InstructionFollowing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CapabilityTag::Reasoning => "reasoning",
            CapabilityTag::Retrieval => "retrieval",
            CapabilityTag::Understanding => "understanding",
            CapabilityTag::InstructionFollowing => "instruction_following",
        }
    }
}

impl std::fmt::Display for CapabilityTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CapabilityError {
    #[error("conversation {id} turn {index}: no capability rule for this turn kind")]
    MissingMeta { id: String, index: usize },
    #[error("conversation {id}: {style} conversations are not capability-tagged")]
    WrongStyle { id: String, style: &'static str },
    #[error("conversation {id} turn {index}: assistant turn is untagged")]
    Untagged { id: String, index: usize },
}

/// Capability exercised by an assistant turn of the given kind. Thoughts
/// and answers are free-form synthesis; naming a tool is lookup; supplying
/// an argument value is query understanding; emitting a requested format is
/// instruction following.
fn capability_for(kind: &TurnKind) -> Option<CapabilityTag> {
    match kind {
        TurnKind::Thought { .. } | TurnKind::ClosingThought | TurnKind::FinalAnswer => {
            Some(CapabilityTag::Reasoning)
        }
        TurnKind::ActionName { .. } => Some(CapabilityTag::Retrieval),
        TurnKind::ArgValue { .. } => Some(CapabilityTag::Understanding),
        TurnKind::FormatReply { .. } => Some(CapabilityTag::InstructionFollowing),
        _ => None,
    }
}

/// Fills the capability tag of every assistant turn. Accepts aligned chat
/// and format-instruction conversations; react blocks, refusals, and plain
/// chat have no per-turn structure to tag and are rejected.
pub fn tag_capabilities(conv: &ChatConversation) -> Result<ChatConversation, CapabilityError> {
    match conv.style {
        Style::Chat | Style::FormatInstruction => {}
        Style::React | Style::Negative => {
            return Err(CapabilityError::WrongStyle {
                id: conv.id.clone(),
                style: conv.style.as_str(),
            })
        }
    }
    let mut tagged = conv.clone();
    for (index, turn) in tagged.turns.iter_mut().enumerate() {
        if turn.role != Role::Assistant {
            continue;
        }
        turn.capability =
            Some(
                capability_for(&turn.meta).ok_or_else(|| CapabilityError::MissingMeta {
                    id: conv.id.clone(),
                    index,
                })?,
            );
    }
    Ok(tagged)
}

/// One sub-corpus per capability plus loss-bearing turn counts.
#[derive(Debug, Default, Serialize)]
pub struct CapabilitySplit {
    pub buckets: BTreeMap<CapabilityTag, Vec<ChatConversation>>,
    /// Loss-bearing turns assigned to each capability across the input.
    pub turn_counts: BTreeMap<CapabilityTag, usize>,
}

impl CapabilitySplit {
    pub fn total_turns(&self) -> usize {
        self.turn_counts.values().sum()
    }
}

/// Partitions loss-bearing turns by capability. Each input conversation is
/// copied into the bucket of every capability it exercises, with loss masks
/// narrowed to that capability's turns; copies carry a capability-suffixed
/// id. Conversations contribute nothing to buckets they do not exercise.
pub fn split_by_capability(
    corpus: &[ChatConversation],
) -> Result<CapabilitySplit, CapabilityError> {
    let mut split = CapabilitySplit::default();
    for tag in CapabilityTag::ALL {
        split.buckets.entry(tag).or_default();
        split.turn_counts.entry(tag).or_insert(0);
    }
    for conv in corpus {
        for (index, turn) in conv.turns.iter().enumerate() {
            if !turn.loss_mask {
                continue;
            }
            let tag = turn.capability.ok_or_else(|| CapabilityError::Untagged {
                id: conv.id.clone(),
                index,
            })?;
            *split.turn_counts.get_mut(&tag).expect("prefilled") += 1;
        }
        for tag in CapabilityTag::ALL {
            let mut narrowed = conv.clone();
            let mut kept = 0;
            for turn in &mut narrowed.turns {
                let matches = turn.loss_mask && turn.capability == Some(tag);
                turn.loss_mask = matches;
                kept += usize::from(matches);
            }
            if kept > 0 {
                narrowed.id = format!("{}::{}", conv.id, tag.as_str());
                split
                    .buckets
                    .get_mut(&tag)
                    .expect("prefilled")
                    .push(narrowed);
            }
        }
    }
    Ok(split)
}
