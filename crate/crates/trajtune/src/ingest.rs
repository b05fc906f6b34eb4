//! Raw-record parsing and corpus filtering.
//!
//! Raw corpus records arrive as role/content conversations whose assistant
//! turns carry ReAct-serialized text. Parsing segments that text on
//! line-anchored markers, validates the thought/action/action-input cycle,
//! and either yields a [`ReactTrajectory`] or a [`DropReason`] naming the
//! rule that fired. Filters then drop or repair records the trainer must
//! not see (missing final answers, embedded few-shot demonstrations).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::{DropLogEntry, RawRecord};
use crate::tokenizer::TokenCounter;
use crate::trajectory::{DropCode, DropReason, ReactStep, ReactTrajectory, Source};

/// Marker vocabulary of the ReAct serialization. Aliases let one grammar
/// read corpora with minor dialect differences; the first alias of each
/// list is the canonical form used when rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerGrammar {
    pub thought: Vec<String>,
    pub action: Vec<String>,
    pub action_input: Vec<String>,
    pub observation: Vec<String>,
    pub final_answer: Vec<String>,
    /// Actions that end the episode instead of calling a tool.
    pub finish_actions: Vec<String>,
    /// Keys searched in a finish action's arguments for the answer text,
    /// used when no explicit final-answer marker is present.
    pub final_answer_keys: Vec<String>,
    /// Sentence injected by search-tree rollouts when they restart; its
    /// presence means the transcript splices unrelated attempts.
    pub restart_marker: String,
}

impl Default for MarkerGrammar {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            thought: list(&["Thought:"]),
            action: list(&["Action:"]),
            action_input: list(&["Action Input:"]),
            observation: list(&["Observation:"]),
            final_answer: list(&["Final Answer:"]),
            finish_actions: list(&["Finish"]),
            final_answer_keys: list(&["final_answer"]),
            restart_marker: "This is not the first time you try this task".to_string(),
        }
    }
}

/// Kind of one marker-delimited text segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SegmentKind {
    Thought,
    Action,
    ActionInput,
    Observation,
    FinalAnswer,
}

#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub kind: SegmentKind,
    pub content: String,
    /// Byte offset of the marker line within the segmented text.
    pub offset: usize,
}

impl MarkerGrammar {
    /// Canonical rendering form of each marker.
    pub(crate) fn canonical(&self, kind: SegmentKind) -> &str {
        let list = match kind {
            SegmentKind::Thought => &self.thought,
            SegmentKind::Action => &self.action,
            SegmentKind::ActionInput => &self.action_input,
            SegmentKind::Observation => &self.observation,
            SegmentKind::FinalAnswer => &self.final_answer,
        };
        list.first().map(String::as_str).unwrap_or("")
    }

    pub fn is_finish_action(&self, action: &str) -> bool {
        self.finish_actions.iter().any(|f| f == action)
    }

    /// All aliases sorted longest-first, so "Action Input:" wins over
    /// "Action:" when both anchor the same line.
    fn alias_table(&self) -> Vec<(&str, SegmentKind)> {
        let mut table = Vec::new();
        let lists = [
            (&self.thought, SegmentKind::Thought),
            (&self.action, SegmentKind::Action),
            (&self.action_input, SegmentKind::ActionInput),
            (&self.observation, SegmentKind::Observation),
            (&self.final_answer, SegmentKind::FinalAnswer),
        ];
        for (list, kind) in lists {
            for alias in list {
                table.push((alias.as_str(), kind));
            }
        }
        table.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        table
    }

    /// Splits text into marker-anchored segments. Returns any text before
    /// the first marker (the preamble) plus the segments in order. Lines
    /// that start no marker continue the current segment.
    pub(crate) fn segment(&self, text: &str) -> (String, Vec<Segment>) {
        let table = self.alias_table();
        let mut preamble = String::new();
        let mut segments: Vec<Segment> = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let stripped = line.trim_start();
            let hit = table.iter().find(|(alias, _)| stripped.starts_with(alias));
            match hit {
                Some(&(alias, kind)) => segments.push(Segment {
                    kind,
                    content: stripped[alias.len()..].to_string(),
                    offset,
                }),
                None => match segments.last_mut() {
                    Some(last) => last.content.push_str(line),
                    None => preamble.push_str(line),
                },
            }
            offset += line.len();
        }
        for seg in &mut segments {
            seg.content = seg.content.trim().to_string();
        }
        (preamble.trim().to_string(), segments)
    }
}

fn malformed(detail: impl Into<String>) -> DropReason {
    DropReason::new(DropCode::MalformedFormat, detail)
}

fn snippet(text: &str) -> String {
    text.chars().take(48).collect()
}

/// Parses the action-input block: empty means no arguments, JSON-looking
/// text must parse to an object, anything else is a single unlabeled
/// string argument stored under `"raw"`.
fn parse_action_input(text: &str) -> Result<Value, DropReason> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    if text.starts_with('{') || text.starts_with('[') {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Ok(Value::Object(map)),
            Ok(_) => Err(DropReason::new(
                DropCode::UnparseableArgs,
                format!("action input is not a key-value tree: {}", snippet(text)),
            )),
            Err(e) => Err(DropReason::new(
                DropCode::UnparseableArgs,
                format!("action input is not valid JSON ({e}): {}", snippet(text)),
            )),
        }
    } else {
        Ok(serde_json::json!({ "raw": text }))
    }
}

/// Parses one raw record into a trajectory, or reports why it cannot be.
///
/// The record's conversation may interleave user observation turns with
/// assistant ReAct turns, or pack the whole transcript into one assistant
/// blob; both reduce to the same segment stream. Unmarked non-assistant
/// turns after the query are read as observations.
pub fn parse_react(
    record: &RawRecord,
    grammar: &MarkerGrammar,
) -> Result<ReactTrajectory, DropReason> {
    let source = Source::parse(&record.source)
        .ok_or_else(|| malformed(format!("unknown source label: {}", snippet(&record.source))))?;

    for turn in &record.conversations {
        if turn.role != "system" && turn.content.contains(&grammar.restart_marker) {
            return Err(DropReason::new(
                DropCode::DfsdtRestart,
                format!("restart marker in {} turn", turn.role),
            ));
        }
    }

    let mut system_parts: Vec<&str> = Vec::new();
    let trimmed_system = record.system.trim();
    if !trimmed_system.is_empty() {
        system_parts.push(trimmed_system);
    }
    let mut idx = 0;
    while idx < record.conversations.len() && record.conversations[idx].role == "system" {
        let content = record.conversations[idx].content.trim();
        if !content.is_empty() {
            system_parts.push(content);
        }
        idx += 1;
    }
    let system_prompt = system_parts.join("\n");

    let query_turn = record
        .conversations
        .get(idx)
        .ok_or_else(|| malformed("conversation has no user query turn"))?;
    if query_turn.role != "user" {
        return Err(malformed(format!(
            "expected user query, found {} turn",
            query_turn.role
        )));
    }
    let query = query_turn.content.trim().to_string();
    if query.is_empty() {
        return Err(malformed("user query is empty"));
    }
    idx += 1;

    let mut segments: Vec<Segment> = Vec::new();
    for turn in &record.conversations[idx..] {
        let (preamble, segs) = grammar.segment(&turn.content);
        match turn.role.as_str() {
            "system" => return Err(malformed("system turn after conversation start")),
            "assistant" => {
                if !preamble.is_empty() {
                    return Err(malformed(format!(
                        "text before first marker in assistant turn: {}",
                        snippet(&preamble)
                    )));
                }
                if segs.is_empty() {
                    return Err(malformed("assistant turn contains no markers"));
                }
                segments.extend(segs);
            }
            // Environment results arrive as user (or function/tool) turns,
            // either marked "Observation:" or as bare result text.
            _ => {
                if segs.is_empty() {
                    segments.push(Segment {
                        kind: SegmentKind::Observation,
                        content: turn.content.trim().to_string(),
                        offset: 0,
                    });
                } else if preamble.is_empty() {
                    segments.extend(segs);
                } else {
                    return Err(malformed(format!(
                        "text before first marker in {} turn: {}",
                        turn.role,
                        snippet(&preamble)
                    )));
                }
            }
        }
    }

    let mut steps: Vec<ReactStep> = Vec::new();
    let mut pending_thought: Option<String> = None;
    let mut pending_action: Option<(String, String)> = None;
    let mut closing_thought: Option<String> = None;
    let mut final_answer: Option<String> = None;

    for (pos, seg) in segments.into_iter().enumerate() {
        if final_answer.is_some() {
            return Err(malformed(format!("segment {pos} follows the final answer")));
        }
        match seg.kind {
            SegmentKind::Thought => {
                if pending_thought.is_some() || pending_action.is_some() {
                    return Err(malformed(format!(
                        "segment {pos}: thought interrupts an unfinished step"
                    )));
                }
                pending_thought = Some(seg.content);
            }
            SegmentKind::Action => {
                let thought = pending_thought.take().ok_or_else(|| {
                    malformed(format!("segment {pos}: action without preceding thought"))
                })?;
                if seg.content.is_empty() {
                    return Err(malformed(format!("segment {pos}: empty action name")));
                }
                pending_action = Some((thought, seg.content));
            }
            SegmentKind::ActionInput => {
                let (thought, action) = pending_action.take().ok_or_else(|| {
                    malformed(format!(
                        "segment {pos}: action input without preceding action"
                    ))
                })?;
                steps.push(ReactStep {
                    thought,
                    action,
                    action_input: parse_action_input(&seg.content)?,
                    observation: String::new(),
                });
            }
            SegmentKind::Observation => {
                if pending_thought.is_some() || pending_action.is_some() {
                    return Err(malformed(format!(
                        "segment {pos}: observation interrupts an unfinished step"
                    )));
                }
                let step = steps.last_mut().ok_or_else(|| {
                    malformed(format!("segment {pos}: observation before any step"))
                })?;
                if step.observation.is_empty() {
                    step.observation = seg.content;
                } else {
                    step.observation.push('\n');
                    step.observation.push_str(&seg.content);
                }
            }
            SegmentKind::FinalAnswer => {
                if pending_action.is_some() {
                    return Err(malformed(format!(
                        "segment {pos}: final answer interrupts an unfinished step"
                    )));
                }
                closing_thought = pending_thought.take();
                final_answer = Some(seg.content);
            }
        }
    }

    if pending_thought.is_some() {
        return Err(malformed("trailing thought without action or final answer"));
    }
    if pending_action.is_some() {
        return Err(malformed("trailing action without action input"));
    }

    // A finish action may carry the answer in its arguments instead of an
    // explicit marker. The argument is copied, not moved, so the parsed
    // value still mirrors the source text.
    if final_answer.is_none() {
        if let Some(last) = steps.last() {
            if grammar.is_finish_action(&last.action) {
                final_answer = grammar
                    .final_answer_keys
                    .iter()
                    .find_map(|key| last.action_input.get(key))
                    .and_then(Value::as_str)
                    .map(str::to_string);
            }
        }
    }

    if steps.is_empty() && final_answer.is_none() {
        return Err(malformed("no steps and no final answer"));
    }

    if !record.tools.is_empty() {
        for (i, step) in steps.iter().enumerate() {
            let known = grammar.is_finish_action(&step.action)
                || record.tools.iter().any(|t| t.name == step.action);
            if !known {
                return Err(malformed(format!(
                    "step {i}: action {} names no declared tool",
                    snippet(&step.action)
                )));
            }
        }
    }

    Ok(ReactTrajectory {
        raw_id: record.id.clone(),
        source,
        system_prompt,
        query,
        tools: record.tools.clone(),
        steps,
        closing_thought,
        final_answer,
    })
}

/// What to do with records whose system prompt embeds worked examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotPolicy {
    /// Cut the demonstrations out of the system prompt and keep the record.
    #[default]
    Strip,
    /// Drop the whole record.
    Drop,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    #[serde(default)]
    pub few_shot: FewShotPolicy,
}

/// Byte offsets of full thought/action/action-input cycles within a prompt.
/// One cycle may be a format illustration; a second one means the prompt
/// embeds worked demonstrations.
fn demo_cycle_offsets(prompt: &str, grammar: &MarkerGrammar) -> Vec<usize> {
    let (_, segments) = grammar.segment(prompt);
    let mut offsets = Vec::new();
    let mut i = 0;
    while i + 2 < segments.len() {
        if segments[i].kind == SegmentKind::Thought
            && segments[i + 1].kind == SegmentKind::Action
            && segments[i + 2].kind == SegmentKind::ActionInput
        {
            offsets.push(segments[i].offset);
            i += 3;
        } else {
            i += 1;
        }
    }
    offsets
}

/// Applies the corpus filters to a parsed trajectory. Returns the kept
/// (possibly repaired) trajectory or the reason it must be dropped.
pub fn apply_filters(
    mut traj: ReactTrajectory,
    policy: &FilterPolicy,
    grammar: &MarkerGrammar,
) -> Result<ReactTrajectory, DropReason> {
    if traj.source == Source::ToolBench && traj.final_answer.is_none() {
        return Err(DropReason::new(
            DropCode::NoFinalAnswer,
            "episode never reaches a final answer",
        ));
    }

    // Few-shot demonstrations only occur in the single-tool task corpus;
    // the multi-tool corpus uses its prompt for tool declarations.
    if matches!(traj.source, Source::AgentInstruct { .. }) {
        let cycles = demo_cycle_offsets(&traj.system_prompt, grammar);
        if cycles.len() >= 2 {
            match policy.few_shot {
                FewShotPolicy::Strip => {
                    traj.system_prompt.truncate(cycles[1]);
                    let stripped = traj.system_prompt.trim_end().len();
                    traj.system_prompt.truncate(stripped);
                }
                FewShotPolicy::Drop => {
                    return Err(DropReason::new(
                        DropCode::FewShotExample,
                        format!("system prompt embeds {} worked cycles", cycles.len()),
                    ));
                }
            }
        }
    }

    Ok(traj)
}

/// Parse + filter over a whole record batch. Every input record lands in
/// exactly one of the two outputs.
#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub kept: Vec<ReactTrajectory>,
    pub drops: Vec<DropLogEntry>,
}

pub fn ingest_records(
    records: &[RawRecord],
    grammar: &MarkerGrammar,
    policy: &FilterPolicy,
) -> IngestOutcome {
    let mut outcome = IngestOutcome::default();
    for record in records {
        let result = parse_react(record, grammar).and_then(|t| apply_filters(t, policy, grammar));
        match result {
            Ok(traj) => outcome.kept.push(traj),
            Err(reason) => outcome.drops.push(DropLogEntry {
                id: record.id.clone(),
                reason,
            }),
        }
    }
    outcome
}

/// Per-source sample and token totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub samples: usize,
    pub tokens: usize,
}

/// Approximate token size of one trajectory across all its text fields.
pub fn trajectory_tokens<C: TokenCounter>(traj: &ReactTrajectory, counter: &C) -> usize {
    let mut total = counter.count(&traj.system_prompt) + counter.count(&traj.query);
    for step in &traj.steps {
        total += counter.count(&step.thought)
            + counter.count(&step.action)
            + counter.count(&step.action_input.to_string())
            + counter.count(&step.observation);
    }
    if let Some(ct) = &traj.closing_thought {
        total += counter.count(ct);
    }
    if let Some(fa) = &traj.final_answer {
        total += counter.count(fa);
    }
    total
}

/// Groups sample and token counts by source label. Keys are sorted, so the
/// report serializes deterministically.
pub fn corpus_stats<'a, I, C>(trajectories: I, counter: &C) -> BTreeMap<String, SourceStats>
where
    I: IntoIterator<Item = &'a ReactTrajectory>,
    C: TokenCounter,
{
    let mut stats: BTreeMap<String, SourceStats> = BTreeMap::new();
    for traj in trajectories {
        let entry = stats.entry(traj.source.label()).or_default();
        entry.samples += 1;
        entry.tokens += trajectory_tokens(traj, counter);
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::RawTurn;
    use crate::tokenizer::ApproxTokenCounter;
    use serde_json::json;

    fn record(id: &str, source: &str, turns: Vec<RawTurn>) -> RawRecord {
        RawRecord {
            id: id.to_string(),
            source: source.to_string(),
            system: String::new(),
            tools: vec![],
            conversations: turns,
        }
    }

    #[test]
    fn parses_single_blob_episode() {
        let rec = record(
            "r1",
            "toolbench",
            vec![
                RawTurn::new("user", "Find the capital of France."),
                RawTurn::new(
                    "assistant",
                    "Thought: I should search.\nAction: search\nAction Input: {\"q\": \"capital of France\"}\nObservation: Paris\nThought: I know the answer.\nFinal Answer: Paris.",
                ),
            ],
        );
        let traj = parse_react(&rec, &MarkerGrammar::default()).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].action, "search");
        assert_eq!(
            traj.steps[0].action_input,
            json!({"q": "capital of France"})
        );
        assert_eq!(traj.steps[0].observation, "Paris");
        assert_eq!(traj.closing_thought.as_deref(), Some("I know the answer."));
        assert_eq!(traj.final_answer.as_deref(), Some("Paris."));
    }

    #[test]
    fn parses_multi_turn_episode_with_bare_observations() {
        let rec = record(
            "r2",
            "toolbench",
            vec![
                RawTurn::new("system", "You can call tools."),
                RawTurn::new("user", "What is 2+2?"),
                RawTurn::new(
                    "assistant",
                    "Thought: Use the calculator.\nAction: calc\nAction Input: {\"expr\": \"2+2\"}",
                ),
                RawTurn::new("user", "4"),
                RawTurn::new("assistant", "Final Answer: 4"),
            ],
        );
        let traj = parse_react(&rec, &MarkerGrammar::default()).unwrap();
        assert_eq!(traj.system_prompt, "You can call tools.");
        assert_eq!(traj.query, "What is 2+2?");
        assert_eq!(traj.steps[0].observation, "4");
        assert_eq!(traj.closing_thought, None);
        assert_eq!(traj.final_answer.as_deref(), Some("4"));
    }

    #[test]
    fn restart_marker_drops_record() {
        let rec = record(
            "r3",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new(
                    "user",
                    "This is not the first time you try this task, all previous trails failed.",
                ),
            ],
        );
        let err = parse_react(&rec, &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::DfsdtRestart);
    }

    #[test]
    fn missing_action_input_is_malformed() {
        let rec = record(
            "r4",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new("assistant", "Thought: t\nAction: search\nObservation: nope"),
            ],
        );
        let err = parse_react(&rec, &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::MalformedFormat);
    }

    #[test]
    fn broken_json_args_reported() {
        let rec = record(
            "r5",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new(
                    "assistant",
                    "Thought: t\nAction: search\nAction Input: {\"q\": broken\nFinal Answer: x",
                ),
            ],
        );
        let err = parse_react(&rec, &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::UnparseableArgs);
    }

    #[test]
    fn plain_text_args_stored_under_raw() {
        assert_eq!(
            parse_action_input("ls -la /tmp").unwrap(),
            json!({"raw": "ls -la /tmp"})
        );
        assert_eq!(parse_action_input("  ").unwrap(), json!({}));
        assert_eq!(
            parse_action_input("[1, 2]").unwrap_err().code,
            DropCode::UnparseableArgs
        );
    }

    #[test]
    fn finish_action_arguments_supply_final_answer() {
        let rec = record(
            "r6",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new(
                    "assistant",
                    "Thought: done\nAction: Finish\nAction Input: {\"return_type\": \"give_answer\", \"final_answer\": \"42\"}",
                ),
            ],
        );
        let traj = parse_react(&rec, &MarkerGrammar::default()).unwrap();
        assert_eq!(traj.final_answer.as_deref(), Some("42"));
        // The argument stays in place; extraction copies it.
        assert_eq!(traj.steps[0].action_input["final_answer"], "42");
    }

    #[test]
    fn give_up_finish_has_no_final_answer() {
        let rec = record(
            "r7",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new(
                    "assistant",
                    "Thought: hopeless\nAction: Finish\nAction Input: {\"return_type\": \"give_up_and_restart\"}",
                ),
            ],
        );
        let traj = parse_react(&rec, &MarkerGrammar::default()).unwrap();
        assert_eq!(traj.final_answer, None);
        let err =
            apply_filters(traj, &FilterPolicy::default(), &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::NoFinalAnswer);
    }

    #[test]
    fn unknown_action_rejected_when_tools_declared() {
        let mut rec = record(
            "r8",
            "toolbench",
            vec![
                RawTurn::new("user", "task"),
                RawTurn::new(
                    "assistant",
                    "Thought: t\nAction: mystery\nAction Input: {}\nFinal Answer: x",
                ),
            ],
        );
        rec.tools = vec![crate::trajectory::ToolSchema::new("search", "find things")];
        let err = parse_react(&rec, &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::MalformedFormat);
        // Without declared tools the same record passes.
        rec.tools.clear();
        assert!(parse_react(&rec, &MarkerGrammar::default()).is_ok());
    }

    fn demo_prompt() -> String {
        [
            "Answer using tools.",
            "For example:",
            "Thought: demo thinking",
            "Action: demo_tool",
            "Action Input: {\"x\": 1}",
            "Observation: demo result",
            "Thought: another demo",
            "Action: demo_tool",
            "Action Input: {\"x\": 2}",
        ]
        .join("\n")
    }

    fn agentinstruct_with_prompt(prompt: &str) -> ReactTrajectory {
        let rec = RawRecord {
            id: "r9".to_string(),
            source: "agentinstruct:os".to_string(),
            system: prompt.to_string(),
            tools: vec![],
            conversations: vec![
                RawTurn::new("user", "list files"),
                RawTurn::new(
                    "assistant",
                    "Thought: run ls\nAction: bash\nAction Input: ls\nObservation: a.txt\nFinal Answer: a.txt",
                ),
            ],
        };
        parse_react(&rec, &MarkerGrammar::default()).unwrap()
    }

    #[test]
    fn few_shot_strip_truncates_at_second_cycle() {
        let traj = agentinstruct_with_prompt(&demo_prompt());
        let grammar = MarkerGrammar::default();
        let kept = apply_filters(traj, &FilterPolicy::default(), &grammar).unwrap();
        assert!(kept.system_prompt.contains("demo thinking"));
        assert!(!kept.system_prompt.contains("another demo"));
        // Re-filtering is a no-op: at most one cycle remains.
        let again = apply_filters(kept.clone(), &FilterPolicy::default(), &grammar).unwrap();
        assert_eq!(again, kept);
    }

    #[test]
    fn few_shot_drop_policy_rejects() {
        let traj = agentinstruct_with_prompt(&demo_prompt());
        let policy = FilterPolicy {
            few_shot: FewShotPolicy::Drop,
        };
        let err = apply_filters(traj, &policy, &MarkerGrammar::default()).unwrap_err();
        assert_eq!(err.code, DropCode::FewShotExample);
    }

    #[test]
    fn single_cycle_prompt_kept_intact() {
        let prompt =
            "Respond as:\nThought: your reasoning\nAction: tool name\nAction Input: arguments";
        let traj = agentinstruct_with_prompt(prompt);
        let kept = apply_filters(
            traj.clone(),
            &FilterPolicy::default(),
            &MarkerGrammar::default(),
        )
        .unwrap();
        assert_eq!(kept, traj);
    }

    #[test]
    fn ingest_accounts_for_every_record() {
        let records = vec![
            record(
                "ok",
                "toolbench",
                vec![
                    RawTurn::new("user", "q"),
                    RawTurn::new(
                        "assistant",
                        "Thought: t\nAction: a\nAction Input: {}\nFinal Answer: done",
                    ),
                ],
            ),
            record("bad", "toolbench", vec![RawTurn::new("user", "q")]),
        ];
        let outcome = ingest_records(
            &records,
            &MarkerGrammar::default(),
            &FilterPolicy::default(),
        );
        assert_eq!(outcome.kept.len() + outcome.drops.len(), records.len());
        assert_eq!(outcome.drops[0].id, "bad");
    }

    #[test]
    fn stats_group_by_source() {
        let mut trajs = [
            agentinstruct_with_prompt("p"),
            agentinstruct_with_prompt("p"),
        ];
        trajs[1].source = Source::ToolBench;
        let stats = corpus_stats(trajs.iter(), &ApproxTokenCounter);
        assert_eq!(stats["agentinstruct:os"].samples, 1);
        assert_eq!(stats["toolbench"].samples, 1);
        assert!(stats["toolbench"].tokens > 0);
    }

    #[test]
    fn empty_stream_stats_empty() {
        let stats = corpus_stats(std::iter::empty(), &ApproxTokenCounter);
        assert!(stats.is_empty());
    }
}
