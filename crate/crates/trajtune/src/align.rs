//! Trajectory-to-conversation transforms.
//!
//! Three renderers share this module: `align_to_chat` decomposes each ReAct
//! step into elicited user/assistant exchanges, `render_react` emits the
//! classical single-block serialization, and `build_format_instruction_pairs`
//! synthesizes exchanges where the user demands a specific reply format.
//! `align_to_chat` is exactly invertible via `invert_alignment`, which both
//! proves the transform loss-free and lets audits reconstruct sources.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::sync::OnceLock;

use crate::chat::{
    ChatConversation, ChatError, ChatTurn, Origin, ReplyFormat, Role, Style, TurnKind,
};
use crate::container::{RawRecord, RawTurn};
use crate::ingest::MarkerGrammar;
use crate::trajectory::{ReactStep, ReactTrajectory, Source};

/// Alignment transform version; bumped when the turn layout changes.
const ALIGN_TRANSFORM: &str = "align-v1";
const REACT_TRANSFORM: &str = "react-v1";
const FORMAT_TRANSFORM: &str = "format-pairs-v1";

/// The elicit wordings inserted between trajectory components. Thought and
/// action elicits rotate through their lists by step ordinal, so repeated
/// steps read less mechanically while staying deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitTemplateSet {
    /// Version id, recorded in every conversation's provenance.
    pub id: String,
    pub thought_elicit: Vec<String>,
    pub action_elicit: Vec<String>,
    /// Must contain the `{param}` slot exactly once.
    pub arg_elicit: String,
    /// Must contain the `{observation}` slot exactly once.
    pub observation_wrapper: String,
    pub answer_elicit: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template set is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl ElicitTemplateSet {
    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let invalid = |msg: String| Err(TemplateError::Invalid(msg));
        if self.id.trim().is_empty() {
            return invalid("template id is empty".into());
        }
        for (name, list) in [
            ("thought_elicit", &self.thought_elicit),
            ("action_elicit", &self.action_elicit),
        ] {
            if list.is_empty() {
                return invalid(format!("{name} list is empty"));
            }
            if list.iter().any(|t| t.trim().is_empty()) {
                return invalid(format!("{name} contains an empty template"));
            }
        }
        if self.arg_elicit.matches("{param}").count() != 1 {
            return invalid("arg_elicit must contain {param} exactly once".into());
        }
        if self.observation_wrapper.matches("{observation}").count() != 1 {
            return invalid("observation_wrapper must contain {observation} exactly once".into());
        }
        if self.answer_elicit.trim().is_empty() {
            return invalid("answer_elicit is empty".into());
        }
        Ok(())
    }

    /// The template set shipped with the crate.
    pub fn builtin() -> &'static ElicitTemplateSet {
        static BUILTIN: OnceLock<ElicitTemplateSet> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            ElicitTemplateSet::from_json(include_str!("../assets/elicit_templates.json"))
                .expect("bundled template set is valid")
        })
    }

    fn thought_elicit_for(&self, ordinal: usize) -> &str {
        &self.thought_elicit[ordinal % self.thought_elicit.len()]
    }

    fn action_elicit_for(&self, step: usize) -> &str {
        &self.action_elicit[step % self.action_elicit.len()]
    }

    fn arg_elicit_for(&self, key: &str) -> String {
        self.arg_elicit.replace("{param}", key)
    }

    fn wrapper_parts(&self) -> (&str, &str) {
        self.observation_wrapper
            .split_once("{observation}")
            .expect("validated wrapper slot")
    }

    fn wrap_observation(&self, observation: &str) -> String {
        let (pre, suf) = self.wrapper_parts();
        format!("{pre}{observation}{suf}")
    }

    fn transform_tag(&self) -> String {
        format!("{ALIGN_TRANSFORM}:{}", self.id)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlignOptions {
    /// Reject steps whose argument keys are not declared by the matched
    /// tool schema. Off by default: real corpora drift.
    pub strict: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("{raw_id} step {step}: argument {key} not declared by tool {action} (schema drift)")]
    SchemaDrift {
        raw_id: String,
        step: usize,
        key: String,
        action: String,
    },
    #[error("{raw_id}: {source}")]
    Shape {
        raw_id: String,
        #[source]
        source: ChatError,
    },
}

/// Renders one argument value for an assistant turn. Bare strings stay
/// bare (flagged `raw` for inversion); everything else serializes as
/// canonical JSON.
fn render_arg_value(value: &Value) -> (String, bool) {
    match value {
        Value::String(s) => (s.clone(), true),
        other => (other.to_string(), false),
    }
}

/// Sorted top-level argument keys of one step.
fn arg_keys(step: &ReactStep) -> Vec<&String> {
    match &step.action_input {
        Value::Object(map) => map.keys().collect(),
        _ => Vec::new(),
    }
}

/// Decomposes a trajectory into a multi-turn conversation: every thought,
/// action name, and argument value becomes its own loss-bearing assistant
/// turn, drawn out by a user elicit; observations return through the user
/// channel. Turn metadata records the originating component, making the
/// transform reversible.
pub fn align_to_chat(
    traj: &ReactTrajectory,
    templates: &ElicitTemplateSet,
    options: AlignOptions,
) -> Result<ChatConversation, AlignError> {
    if options.strict {
        for (i, step) in traj.steps.iter().enumerate() {
            if let Some(schema) = traj.tool(&step.action) {
                for key in arg_keys(step) {
                    if !schema.parameters.iter().any(|p| &p.name == key) {
                        return Err(AlignError::SchemaDrift {
                            raw_id: traj.raw_id.clone(),
                            step: i,
                            key: key.clone(),
                            action: step.action.clone(),
                        });
                    }
                }
            }
        }
    }

    let step_count = traj.steps.len();
    let has_closing = traj.closing_thought.is_some();
    let has_answer = traj.final_answer.is_some();
    let mut turns = Vec::new();

    if !traj.system_prompt.is_empty() {
        turns.push(ChatTurn::system(traj.system_prompt.clone()));
    }

    // The query elicits the first thought when any thought follows.
    let first_is_thought = step_count > 0 || has_closing;
    let query_content = if first_is_thought {
        format!("{}\n{}", traj.query, templates.thought_elicit_for(0))
    } else {
        traj.query.clone()
    };
    turns.push(ChatTurn::user(
        query_content,
        TurnKind::Query {
            elicit: first_is_thought,
        },
    ));

    for (i, step) in traj.steps.iter().enumerate() {
        turns.push(ChatTurn::assistant(
            step.thought.clone(),
            TurnKind::Thought { step: i },
        ));
        turns.push(ChatTurn::user(
            templates.action_elicit_for(i).to_string(),
            TurnKind::ActionElicit { step: i },
        ));
        turns.push(ChatTurn::assistant(
            step.action.clone(),
            TurnKind::ActionName { step: i },
        ));
        for key in arg_keys(step) {
            turns.push(ChatTurn::user(
                templates.arg_elicit_for(key),
                TurnKind::ArgElicit {
                    step: i,
                    key: key.clone(),
                },
            ));
            let (content, raw) = render_arg_value(&step.action_input[key]);
            turns.push(ChatTurn::assistant(
                content,
                TurnKind::ArgValue {
                    step: i,
                    key: key.clone(),
                    raw,
                },
            ));
        }
        // The observation turn keeps the dialogue alternating whenever more
        // assistant content follows; a trailing non-empty observation is
        // kept so inversion stays exact.
        let last_step = i + 1 == step_count;
        let followed = !last_step || has_closing || has_answer;
        if followed || !step.observation.is_empty() {
            let elicits_thought = !last_step || has_closing;
            let mut content = templates.wrap_observation(&step.observation);
            if elicits_thought {
                content.push('\n');
                content.push_str(templates.thought_elicit_for(i + 1));
            }
            turns.push(ChatTurn::user(
                content,
                TurnKind::ObservationWrap {
                    step: i,
                    elicit: elicits_thought,
                },
            ));
        }
    }

    if let Some(ct) = &traj.closing_thought {
        turns.push(ChatTurn::assistant(ct.clone(), TurnKind::ClosingThought));
        if has_answer {
            turns.push(ChatTurn::user(
                templates.answer_elicit.clone(),
                TurnKind::AnswerElicit,
            ));
        }
    }
    if let Some(fa) = &traj.final_answer {
        turns.push(ChatTurn::assistant(fa.clone(), TurnKind::FinalAnswer));
    }

    ChatConversation::new(
        format!("{}::chat", traj.raw_id),
        traj.source.label(),
        Style::Chat,
        Origin {
            raw_id: Some(traj.raw_id.clone()),
            transform: templates.transform_tag(),
        },
        traj.tools.clone(),
        turns,
    )
    .map_err(|source| AlignError::Shape {
        raw_id: traj.raw_id.clone(),
        source,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum InvertError {
    #[error("conversation {id} has style {style}, expected chat")]
    NotChatStyle { id: String, style: &'static str },
    #[error("conversation {id} was produced by {found}, expected {expected}")]
    WrongTransform {
        id: String,
        found: String,
        expected: String,
    },
    #[error("conversation {id} records no source record id")]
    MissingRawId { id: String },
    #[error("conversation {id} has unknown source label {label}")]
    UnknownSource { id: String, label: String },
    #[error("turn {index}: expected {expected}, found {found}")]
    UnexpectedTurn {
        index: usize,
        expected: &'static str,
        found: String,
    },
    #[error("conversation ends early: expected {expected}")]
    UnexpectedEnd { expected: &'static str },
    #[error("turn {index}: content does not match the {what} template")]
    TemplateMismatch { index: usize, what: &'static str },
    #[error("turn {index}: argument value is not valid JSON: {source}")]
    BadJsonValue {
        index: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn kind_label(kind: &TurnKind) -> String {
    match kind {
        TurnKind::System => "system".into(),
        TurnKind::Query { .. } => "query".into(),
        TurnKind::Thought { step } => format!("thought[{step}]"),
        TurnKind::ActionElicit { step } => format!("action_elicit[{step}]"),
        TurnKind::ActionName { step } => format!("action_name[{step}]"),
        TurnKind::ArgElicit { step, key } => format!("arg_elicit[{step}].{key}"),
        TurnKind::ArgValue { step, key, .. } => format!("arg_value[{step}].{key}"),
        TurnKind::ObservationWrap { step, .. } => format!("observation[{step}]"),
        TurnKind::ClosingThought => "closing_thought".into(),
        TurnKind::AnswerElicit => "answer_elicit".into(),
        TurnKind::FinalAnswer => "final_answer".into(),
        TurnKind::FormatRequest { .. } => "format_request".into(),
        TurnKind::FormatReply { .. } => "format_reply".into(),
        TurnKind::Refusal => "refusal".into(),
        TurnKind::ReactBlock => "react_block".into(),
        TurnKind::Plain => "plain".into(),
    }
}

struct TurnReader<'a> {
    turns: &'a [ChatTurn],
    pos: usize,
}

impl<'a> TurnReader<'a> {
    fn peek(&self) -> Option<&'a ChatTurn> {
        self.turns.get(self.pos)
    }

    fn next_expecting(
        &mut self,
        expected: &'static str,
    ) -> Result<(usize, &'a ChatTurn), InvertError> {
        let index = self.pos;
        let turn = self
            .turns
            .get(index)
            .ok_or(InvertError::UnexpectedEnd { expected })?;
        self.pos += 1;
        Ok((index, turn))
    }
}

fn strip_elicit_suffix<'a>(
    content: &'a str,
    elicit: &str,
    index: usize,
    what: &'static str,
) -> Result<&'a str, InvertError> {
    content
        .strip_suffix(elicit)
        .and_then(|rest| rest.strip_suffix('\n'))
        .ok_or(InvertError::TemplateMismatch { index, what })
}

fn unwrap_observation(
    content: &str,
    templates: &ElicitTemplateSet,
    index: usize,
) -> Result<String, InvertError> {
    let (pre, suf) = templates.wrapper_parts();
    content
        .strip_prefix(pre)
        .and_then(|rest| rest.strip_suffix(suf))
        .map(str::to_string)
        .ok_or(InvertError::TemplateMismatch {
            index,
            what: "observation wrapper",
        })
}

/// Reconstructs the trajectory a conversation was aligned from. The
/// conversation must carry intact inversion metadata and have been produced
/// by `align_to_chat` under the same template set; every structural or
/// template mismatch is reported with its turn index.
pub fn invert_alignment(
    conv: &ChatConversation,
    templates: &ElicitTemplateSet,
) -> Result<ReactTrajectory, InvertError> {
    if conv.style != Style::Chat {
        return Err(InvertError::NotChatStyle {
            id: conv.id.clone(),
            style: conv.style.as_str(),
        });
    }
    let expected_transform = templates.transform_tag();
    if conv.origin.transform != expected_transform {
        return Err(InvertError::WrongTransform {
            id: conv.id.clone(),
            found: conv.origin.transform.clone(),
            expected: expected_transform,
        });
    }
    let raw_id = conv
        .origin
        .raw_id
        .clone()
        .ok_or_else(|| InvertError::MissingRawId {
            id: conv.id.clone(),
        })?;
    let source = Source::parse(&conv.source).ok_or_else(|| InvertError::UnknownSource {
        id: conv.id.clone(),
        label: conv.source.clone(),
    })?;

    let mut reader = TurnReader {
        turns: &conv.turns,
        pos: 0,
    };

    let system_prompt = match reader.peek() {
        Some(turn) if turn.meta == TurnKind::System => {
            reader.pos += 1;
            turn.content.clone()
        }
        _ => String::new(),
    };

    let (q_index, q_turn) = reader.next_expecting("query")?;
    let query = match q_turn.meta {
        TurnKind::Query { elicit: false } => q_turn.content.clone(),
        TurnKind::Query { elicit: true } => strip_elicit_suffix(
            &q_turn.content,
            templates.thought_elicit_for(0),
            q_index,
            "thought elicit",
        )?
        .to_string(),
        _ => {
            return Err(InvertError::UnexpectedTurn {
                index: q_index,
                expected: "query",
                found: kind_label(&q_turn.meta),
            })
        }
    };

    let mut steps: Vec<ReactStep> = Vec::new();
    let mut closing_thought = None;
    let mut final_answer = None;

    while let Some(turn) = reader.peek() {
        let index = reader.pos;
        match &turn.meta {
            TurnKind::Thought { step } if *step == steps.len() => {
                let step_idx = *step;
                reader.pos += 1;
                let thought = turn.content.clone();

                let (ae_index, ae_turn) = reader.next_expecting("action elicit")?;
                if ae_turn.meta != (TurnKind::ActionElicit { step: step_idx }) {
                    return Err(InvertError::UnexpectedTurn {
                        index: ae_index,
                        expected: "action elicit",
                        found: kind_label(&ae_turn.meta),
                    });
                }
                if ae_turn.content != templates.action_elicit_for(step_idx) {
                    return Err(InvertError::TemplateMismatch {
                        index: ae_index,
                        what: "action elicit",
                    });
                }

                let (an_index, an_turn) = reader.next_expecting("action name")?;
                if an_turn.meta != (TurnKind::ActionName { step: step_idx }) {
                    return Err(InvertError::UnexpectedTurn {
                        index: an_index,
                        expected: "action name",
                        found: kind_label(&an_turn.meta),
                    });
                }
                let action = an_turn.content.clone();

                let mut args = serde_json::Map::new();
                while let Some(next) = reader.peek() {
                    let TurnKind::ArgElicit { step, key } = &next.meta else {
                        break;
                    };
                    if *step != step_idx {
                        break;
                    }
                    let key = key.clone();
                    let elicit_index = reader.pos;
                    if next.content != templates.arg_elicit_for(&key) {
                        return Err(InvertError::TemplateMismatch {
                            index: elicit_index,
                            what: "argument elicit",
                        });
                    }
                    reader.pos += 1;
                    let (av_index, av_turn) = reader.next_expecting("argument value")?;
                    let TurnKind::ArgValue {
                        step: av_step,
                        key: av_key,
                        raw,
                    } = &av_turn.meta
                    else {
                        return Err(InvertError::UnexpectedTurn {
                            index: av_index,
                            expected: "argument value",
                            found: kind_label(&av_turn.meta),
                        });
                    };
                    if *av_step != step_idx || *av_key != key {
                        return Err(InvertError::UnexpectedTurn {
                            index: av_index,
                            expected: "argument value",
                            found: kind_label(&av_turn.meta),
                        });
                    }
                    let value = if *raw {
                        Value::String(av_turn.content.clone())
                    } else {
                        serde_json::from_str(&av_turn.content).map_err(|source| {
                            InvertError::BadJsonValue {
                                index: av_index,
                                source,
                            }
                        })?
                    };
                    args.insert(key, value);
                }

                let observation = match reader.peek() {
                    Some(obs_turn) => match obs_turn.meta {
                        TurnKind::ObservationWrap { step, elicit } if step == step_idx => {
                            let obs_index = reader.pos;
                            reader.pos += 1;
                            let body = if elicit {
                                strip_elicit_suffix(
                                    &obs_turn.content,
                                    templates.thought_elicit_for(step_idx + 1),
                                    obs_index,
                                    "thought elicit",
                                )?
                            } else {
                                &obs_turn.content
                            };
                            unwrap_observation(body, templates, obs_index)?
                        }
                        _ => {
                            return Err(InvertError::UnexpectedTurn {
                                index: reader.pos,
                                expected: "observation",
                                found: kind_label(&obs_turn.meta),
                            })
                        }
                    },
                    // Alignment omits the wrapper only when the episode ends
                    // right here with an empty observation.
                    None => String::new(),
                };

                steps.push(ReactStep {
                    thought,
                    action,
                    action_input: Value::Object(args),
                    observation,
                });
            }
            TurnKind::ClosingThought => {
                reader.pos += 1;
                closing_thought = Some(turn.content.clone());
                match reader.peek() {
                    None => break,
                    Some(next) if next.meta == TurnKind::AnswerElicit => {
                        let ae_index = reader.pos;
                        if next.content != templates.answer_elicit {
                            return Err(InvertError::TemplateMismatch {
                                index: ae_index,
                                what: "answer elicit",
                            });
                        }
                        reader.pos += 1;
                        let (fa_index, fa_turn) = reader.next_expecting("final answer")?;
                        if fa_turn.meta != TurnKind::FinalAnswer {
                            return Err(InvertError::UnexpectedTurn {
                                index: fa_index,
                                expected: "final answer",
                                found: kind_label(&fa_turn.meta),
                            });
                        }
                        final_answer = Some(fa_turn.content.clone());
                        break;
                    }
                    Some(next) => {
                        return Err(InvertError::UnexpectedTurn {
                            index: reader.pos,
                            expected: "answer elicit",
                            found: kind_label(&next.meta),
                        })
                    }
                }
            }
            TurnKind::FinalAnswer => {
                reader.pos += 1;
                final_answer = Some(turn.content.clone());
                break;
            }
            other => {
                return Err(InvertError::UnexpectedTurn {
                    index,
                    expected: "thought, closing thought, or final answer",
                    found: kind_label(other),
                })
            }
        }
    }

    if let Some(turn) = reader.peek() {
        return Err(InvertError::UnexpectedTurn {
            index: reader.pos,
            expected: "end of conversation",
            found: kind_label(&turn.meta),
        });
    }

    Ok(ReactTrajectory {
        raw_id,
        source,
        system_prompt,
        query,
        tools: conv.tools.clone(),
        steps,
        closing_thought,
        final_answer,
    })
}

/// Renders the classical single-block serialization: one assistant turn per
/// step carrying the marker triad, observations as marked user turns, and a
/// final marker block for the answer.
pub fn render_react(traj: &ReactTrajectory, grammar: &MarkerGrammar) -> ChatConversation {
    use crate::ingest::SegmentKind as K;
    let m = |k| grammar.canonical(k);
    let step_count = traj.steps.len();
    let has_tail = traj.final_answer.is_some();
    let mut turns = Vec::new();

    if !traj.system_prompt.is_empty() {
        turns.push(ChatTurn::system(traj.system_prompt.clone()));
    }
    turns.push(ChatTurn::user(
        traj.query.clone(),
        TurnKind::Query { elicit: false },
    ));

    for (i, step) in traj.steps.iter().enumerate() {
        let block = format!(
            "{} {}\n{} {}\n{} {}",
            m(K::Thought),
            step.thought,
            m(K::Action),
            step.action,
            m(K::ActionInput),
            step.action_input
        );
        turns.push(ChatTurn::assistant(block, TurnKind::ReactBlock));
        let last_step = i + 1 == step_count;
        if !last_step || has_tail || !step.observation.is_empty() {
            turns.push(ChatTurn::user(
                format!("{} {}", m(K::Observation), step.observation),
                TurnKind::ObservationWrap {
                    step: i,
                    elicit: false,
                },
            ));
        }
    }

    if let Some(fa) = &traj.final_answer {
        let block = match &traj.closing_thought {
            Some(ct) => format!("{} {}\n{} {}", m(K::Thought), ct, m(K::FinalAnswer), fa),
            None => format!("{} {}", m(K::FinalAnswer), fa),
        };
        turns.push(ChatTurn::assistant(block, TurnKind::ReactBlock));
    }

    ChatConversation::new(
        format!("{}::react", traj.raw_id),
        traj.source.label(),
        Style::React,
        Origin {
            raw_id: Some(traj.raw_id.clone()),
            transform: REACT_TRANSFORM.to_string(),
        },
        traj.tools.clone(),
        turns,
    )
    .expect("react rendering produces a valid conversation shape")
}

/// Recasts a rendered conversation as a raw record, e.g. to feed the parser
/// for round-trip checks or to export in the source container format.
pub fn to_raw_record(conv: &ChatConversation) -> RawRecord {
    let mut system = String::new();
    let mut conversations = Vec::new();
    for turn in &conv.turns {
        let role = match turn.role {
            Role::System => {
                if system.is_empty() {
                    system = turn.content.clone();
                } else {
                    system.push('\n');
                    system.push_str(&turn.content);
                }
                continue;
            }
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        conversations.push(RawTurn::new(role, turn.content.clone()));
    }
    RawRecord {
        id: conv
            .origin
            .raw_id
            .clone()
            .unwrap_or_else(|| conv.id.clone()),
        source: conv.source.clone(),
        system,
        tools: conv.tools.clone(),
        conversations,
    }
}

/// Small deterministic task pool for format-instruction synthesis.
const FORMAT_TASKS: &[(&str, &str, &str, &str)] = &[
    (
        "check the weather in {x}",
        "weather_lookup",
        "city",
        "I need the current weather for {x}.",
    ),
    (
        "find the population of {x}",
        "encyclopedia_search",
        "topic",
        "I should look up population figures for {x}.",
    ),
    (
        "convert 250 grams of {x} to ounces",
        "convert_weight",
        "item",
        "A unit conversion is required for {x}.",
    ),
    (
        "get the latest news about {x}",
        "news_search",
        "query",
        "I will search recent articles about {x}.",
    ),
    (
        "book a table for two in {x}",
        "restaurant_booking",
        "location",
        "I need to reserve a restaurant in {x}.",
    ),
    (
        "translate the word {x} into French",
        "translate_text",
        "text",
        "The user wants {x} translated.",
    ),
];

const FORMAT_FILLERS: &[&str] = &[
    "Paris", "Tokyo", "Berlin", "Nairobi", "Lisbon", "Oslo", "Madrid", "Seoul", "Cairo", "Denver",
    "flour", "honey", "coffee", "silver",
];

const REACT_REQUESTS: &[&str] = &[
    "Answer strictly in the ReAct format: a Thought line, an Action line, then an Action Input line.",
    "Use the ReAct layout (Thought / Action / Action Input) for your reply.",
    "Respond with ReAct-formatted output only.",
];

const JSON_REQUESTS: &[&str] = &[
    "Reply with a single JSON object containing the tool name and arguments, nothing else.",
    "Answer as one JSON object with keys \"tool\" and \"arguments\".",
    "Respond in JSON format only.",
];

/// Synthesizes `n` exchanges where the user demands a reply format and the
/// assistant complies. Requests alternate ReAct/JSON by index, so the split
/// is exactly 1:1 (±1) for every n; the seed varies only the task wording.
pub fn build_format_instruction_pairs(n: usize, seed: u64) -> Vec<ChatConversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let (task_tpl, tool, param, thought_tpl) =
            FORMAT_TASKS[rng.random_range(0..FORMAT_TASKS.len())];
        let filler = FORMAT_FILLERS[rng.random_range(0..FORMAT_FILLERS.len())];
        let task = task_tpl.replace("{x}", filler);
        let thought = thought_tpl.replace("{x}", filler);
        let format = if i % 2 == 0 {
            ReplyFormat::React
        } else {
            ReplyFormat::Json
        };
        let (request, reply) = match format {
            ReplyFormat::React => {
                let phrasing = REACT_REQUESTS[rng.random_range(0..REACT_REQUESTS.len())];
                let reply = format!(
                    "Thought: {thought}\nAction: {tool}\nAction Input: {}",
                    serde_json::json!({ param: filler })
                );
                (phrasing, reply)
            }
            ReplyFormat::Json => {
                let phrasing = JSON_REQUESTS[rng.random_range(0..JSON_REQUESTS.len())];
                let reply = serde_json::json!({
                    "tool": tool,
                    "arguments": { param: filler }
                })
                .to_string();
                (phrasing, reply)
            }
        };
        let user = format!("{request}\nTask: please {task}.");
        let conv = ChatConversation::new(
            format!("format-{i:06}"),
            "synthetic:format",
            Style::FormatInstruction,
            Origin {
                raw_id: None,
                transform: FORMAT_TRANSFORM.to_string(),
            },
            vec![],
            vec![
                ChatTurn::user(user, TurnKind::FormatRequest { format }),
                ChatTurn::assistant(reply, TurnKind::FormatReply { format }),
            ],
        )
        .expect("format pair shape is valid by construction");
        pairs.push(conv);
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ToolSchema;
    use serde_json::json;

    fn sample_traj() -> ReactTrajectory {
        ReactTrajectory {
            raw_id: "tb-7".to_string(),
            source: Source::ToolBench,
            system_prompt: "You can call tools.".to_string(),
            query: "Weather in Paris, and pack advice?".to_string(),
            tools: vec![ToolSchema::new("weather_lookup", "weather by city")
                .with_param("city", "string", "city name")
                .with_param("units", "string", "unit system")],
            steps: vec![ReactStep {
                thought: "Look up the weather first.".to_string(),
                action: "weather_lookup".to_string(),
                action_input: json!({"city": "Paris", "units": "metric"}),
                observation: "18C, light rain".to_string(),
            }],
            closing_thought: Some("Rain means a jacket.".to_string()),
            final_answer: Some("18C with rain; pack a light jacket.".to_string()),
        }
    }

    #[test]
    fn alignment_layout_one_step() {
        let conv = align_to_chat(
            &sample_traj(),
            ElicitTemplateSet::builtin(),
            AlignOptions::default(),
        )
        .unwrap();
        let kinds: Vec<String> = conv.turns.iter().map(|t| kind_label(&t.meta)).collect();
        assert_eq!(
            kinds,
            [
                "system",
                "query",
                "thought[0]",
                "action_elicit[0]",
                "action_name[0]",
                "arg_elicit[0].city",
                "arg_value[0].city",
                "arg_elicit[0].units",
                "arg_value[0].units",
                "observation[0]",
                "closing_thought",
                "answer_elicit",
                "final_answer",
            ]
        );
        // Assistant turns carry exactly the component texts, free of markers.
        let assistant: Vec<&str> = conv.assistant_turns().map(|t| t.content.as_str()).collect();
        assert_eq!(
            assistant,
            [
                "Look up the weather first.",
                "weather_lookup",
                "Paris",
                "metric",
                "Rain means a jacket.",
                "18C with rain; pack a light jacket.",
            ]
        );
        for turn in conv.assistant_turns() {
            assert!(!turn.content.contains("Thought:"));
            assert!(!turn.content.contains("Action Input:"));
        }
    }

    #[test]
    fn alignment_round_trip() {
        let traj = sample_traj();
        let conv =
            align_to_chat(&traj, ElicitTemplateSet::builtin(), AlignOptions::default()).unwrap();
        let back = invert_alignment(&conv, ElicitTemplateSet::builtin()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn degenerate_episode_is_two_turns() {
        let traj = ReactTrajectory {
            raw_id: "ai-1".to_string(),
            source: Source::AgentInstruct {
                task: "general".to_string(),
            },
            system_prompt: String::new(),
            query: "Name a prime number.".to_string(),
            tools: vec![],
            steps: vec![],
            closing_thought: None,
            final_answer: Some("7".to_string()),
        };
        let conv =
            align_to_chat(&traj, ElicitTemplateSet::builtin(), AlignOptions::default()).unwrap();
        assert_eq!(conv.turns.len(), 2);
        assert_eq!(conv.turns[0].meta, TurnKind::Query { elicit: false });
        assert_eq!(conv.turns[1].meta, TurnKind::FinalAnswer);
        let back = invert_alignment(&conv, ElicitTemplateSet::builtin()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn missing_turn_reported_with_position() {
        let traj = sample_traj();
        let mut conv =
            align_to_chat(&traj, ElicitTemplateSet::builtin(), AlignOptions::default()).unwrap();
        // Delete the action-name turn and its elicit to keep alternation legal.
        conv.turns.remove(4);
        conv.turns.remove(3);
        let err = invert_alignment(&conv, ElicitTemplateSet::builtin()).unwrap_err();
        match err {
            InvertError::UnexpectedTurn { expected, .. } => {
                assert_eq!(expected, "action elicit")
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn strict_mode_flags_schema_drift() {
        let mut traj = sample_traj();
        traj.steps[0]
            .action_input
            .as_object_mut()
            .unwrap()
            .insert("undeclared".to_string(), json!(1));
        let err = align_to_chat(
            &traj,
            ElicitTemplateSet::builtin(),
            AlignOptions { strict: true },
        )
        .unwrap_err();
        assert!(matches!(err, AlignError::SchemaDrift { step: 0, .. }));
        // Non-strict alignment keeps the drifted key and still round-trips.
        let conv =
            align_to_chat(&traj, ElicitTemplateSet::builtin(), AlignOptions::default()).unwrap();
        let back = invert_alignment(&conv, ElicitTemplateSet::builtin()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn wrong_template_set_rejected() {
        let conv = align_to_chat(
            &sample_traj(),
            ElicitTemplateSet::builtin(),
            AlignOptions::default(),
        )
        .unwrap();
        let mut other = ElicitTemplateSet::builtin().clone();
        other.id = "custom-v9".to_string();
        assert!(matches!(
            invert_alignment(&conv, &other),
            Err(InvertError::WrongTransform { .. })
        ));
    }

    #[test]
    fn react_rendering_and_reparse() {
        let traj = sample_traj();
        let grammar = MarkerGrammar::default();
        let conv = render_react(&traj, &grammar);
        assert_eq!(conv.style, Style::React);
        let first_block = &conv.turns[2].content;
        let t = first_block.find("Thought:").unwrap();
        let a = first_block.find("Action:").unwrap();
        let i = first_block.find("Action Input:").unwrap();
        assert!(t < a && a < i);
        let back = crate::ingest::parse_react(&to_raw_record(&conv), &grammar).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn format_pairs_split_evenly_and_parse() {
        let pairs = build_format_instruction_pairs(101, 9);
        assert_eq!(pairs.len(), 101);
        let react_count = pairs
            .iter()
            .filter(|p| {
                matches!(
                    p.turns[0].meta,
                    TurnKind::FormatRequest {
                        format: ReplyFormat::React
                    }
                )
            })
            .count();
        assert_eq!(react_count, 51);
        let grammar = MarkerGrammar::default();
        for pair in &pairs {
            let reply = &pair.turns[1];
            match reply.meta {
                TurnKind::FormatReply {
                    format: ReplyFormat::Json,
                } => {
                    let v: Value = serde_json::from_str(&reply.content).unwrap();
                    assert!(v.is_object());
                }
                TurnKind::FormatReply {
                    format: ReplyFormat::React,
                } => {
                    let (pre, segs) = grammar.segment(&reply.content);
                    assert!(pre.is_empty());
                    assert_eq!(segs.len(), 3);
                }
                _ => panic!("unexpected reply meta"),
            }
        }
    }

    #[test]
    fn format_pairs_deterministic_under_seed() {
        assert_eq!(
            build_format_instruction_pairs(40, 5),
            build_format_instruction_pairs(40, 5)
        );
        assert_ne!(
            build_format_instruction_pairs(40, 5),
            build_format_instruction_pairs(40, 6)
        );
    }

    #[test]
    fn builtin_templates_validate() {
        ElicitTemplateSet::builtin().validate().unwrap();
    }

    #[test]
    fn template_validation_catches_bad_slots() {
        let mut set = ElicitTemplateSet::builtin().clone();
        set.arg_elicit = "What now?".to_string();
        assert!(set.validate().is_err());
        let mut set = ElicitTemplateSet::builtin().clone();
        set.observation_wrapper = "{observation} or {observation}".to_string();
        assert!(set.validate().is_err());
    }
}
