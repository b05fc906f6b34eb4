//! Transform inversion over a generated corpus: every trajectory must
//! survive chat alignment and ReAct re-rendering unchanged.

mod common;

use common::random_trajectory;
use trajtune::align::{
    align_to_chat, invert_alignment, render_react, to_raw_record, AlignOptions, ElicitTemplateSet,
};
use trajtune::chat::Style;
use trajtune::ingest::{parse_react, MarkerGrammar};
use trajtune::seed::stage_rng;

#[test]
fn two_hundred_trajectories_survive_both_round_trips() {
    let templates = ElicitTemplateSet::builtin();
    let grammar = MarkerGrammar::default();
    let mut rng = stage_rng(2024, "roundtrip-corpus");

    for i in 0..200 {
        let traj = random_trajectory(&mut rng, i);

        let conv = align_to_chat(&traj, templates, AlignOptions::default())
            .unwrap_or_else(|e| panic!("align {i}: {e}"));
        assert_eq!(conv.style, Style::Chat);
        assert!(
            conv.loss_turns().count() > 0,
            "conversation {i} trains nothing"
        );
        let back = invert_alignment(&conv, templates).unwrap_or_else(|e| panic!("invert {i}: {e}"));
        assert_eq!(
            back, traj,
            "chat alignment round trip changed trajectory {i}"
        );

        let react = render_react(&traj, &grammar);
        assert_eq!(react.style, Style::React);
        let record = to_raw_record(&react);
        let reparsed = parse_react(&record, &grammar)
            .unwrap_or_else(|e| panic!("reparse {i}: {} ({})", e.code.as_str(), e.detail));
        assert_eq!(
            reparsed, traj,
            "react rendering round trip changed trajectory {i}"
        );
    }
}

#[test]
fn tampered_conversations_fail_inversion_loudly() {
    let templates = ElicitTemplateSet::builtin();
    let mut rng = stage_rng(7, "tamper");
    let traj = loop {
        let t = random_trajectory(&mut rng, 0);
        if t.final_answer.is_some() && !t.steps.is_empty() {
            break t;
        }
    };
    let conv = align_to_chat(&traj, templates, AlignOptions::default()).unwrap();

    // Dropping a turn breaks the expected sequence.
    let mut truncated = conv.clone();
    truncated.turns.pop();
    assert!(invert_alignment(&truncated, templates).is_err());

    // Extra turns after the final answer must be reported, not absorbed.
    let mut extended = conv.clone();
    let last = extended.turns.last().unwrap().clone();
    let second_last = extended.turns[extended.turns.len() - 2].clone();
    extended.turns.push(second_last);
    extended.turns.push(last);
    assert!(invert_alignment(&extended, templates).is_err());

    // Rewriting an elicit to off-template text is tampering too.
    let mut reworded = conv.clone();
    if let Some(turn) = reworded
        .turns
        .iter_mut()
        .find(|t| matches!(t.meta, trajtune::chat::TurnKind::ActionElicit { .. }))
    {
        turn.content = "Just do whatever seems right.".to_string();
        assert!(invert_alignment(&reworded, templates).is_err());
    }
}
