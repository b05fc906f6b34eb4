//! Shared corpus generator for integration suites. Draws trajectory
//! shapes the real corpora exhibit (multi-line text, empty observations,
//! answerless episodes, argument values of every JSON type) while
//! honoring the parser's structural invariants.

use rand::Rng;
use serde_json::{json, Map, Value};
use trajtune::trajectory::{ReactStep, ReactTrajectory, Source, ToolSchema};

pub const SUBJECTS: &[&str] = &[
    "the deployment",
    "our order",
    "the sensor grid",
    "tomorrow's schedule",
    "the invoice",
    "this dataset",
    "the cluster",
    "the booking",
];
pub const VERBS: &[&str] = &[
    "needs",
    "shows",
    "returned",
    "confirmed",
    "lists",
    "reports",
];
pub const OBJECTS: &[&str] = &[
    "three warnings",
    "a stable reading",
    "two matches",
    "an updated total",
    "a partial result",
    "no anomalies",
    "one pending item",
];
pub const TOOL_NAMES: &[&str] = &[
    "query_metrics",
    "fetch_record",
    "lookup_schedule",
    "scan_logs",
    "resolve_owner",
];
pub const ARG_KEYS: &[&str] = &["target", "limit", "verbose", "filter", "window"];
pub const TASKS: &[&str] = &["os", "db", "webshop", "kg", "general"];

pub fn pick<'a, T>(rng: &mut impl Rng, pool: &'a [T]) -> &'a T {
    &pool[rng.random_range(0..pool.len())]
}

pub fn sentence(rng: &mut impl Rng) -> String {
    format!(
        "{} {} {}",
        pick(rng, SUBJECTS),
        pick(rng, VERBS),
        pick(rng, OBJECTS)
    )
}

fn arg_value(rng: &mut impl Rng) -> Value {
    match rng.random_range(0..6) {
        0 => Value::String(sentence(rng)),
        1 => json!(rng.random_range(-50i64..5000)),
        2 => json!(rng.random_range(0..400) as f64 + 0.5),
        3 => json!(rng.random_range(0..2) == 0),
        4 => json!([pick(rng, OBJECTS), pick(rng, SUBJECTS)]),
        _ => json!({"unit": "ms", "scale": rng.random_range(1..10)}),
    }
}

/// One plausible trajectory; the index keeps ids and queries distinct
/// across a generated corpus.
pub fn random_trajectory(rng: &mut impl Rng, i: usize) -> ReactTrajectory {
    let source = if rng.random_range(0..2) == 0 {
        Source::ToolBench
    } else {
        Source::AgentInstruct {
            task: pick(rng, TASKS).to_string(),
        }
    };

    let tools: Vec<ToolSchema> = if rng.random_range(0..4) == 0 {
        Vec::new()
    } else {
        let n = rng.random_range(1..=3);
        (0..n)
            .map(|t| ToolSchema::new(TOOL_NAMES[t], format!("Tool for {}.", sentence(rng))))
            .collect()
    };

    let n_steps = rng.random_range(0..=4);
    // The parser only ever yields answerless episodes for the single-tool
    // corpus; it also requires an answer when there are no steps.
    let final_answer = if n_steps == 0 || source == Source::ToolBench || rng.random_range(0..10) < 7
    {
        let mut answer = format!("{}, and {}.", sentence(rng), sentence(rng));
        if rng.random_range(0..4) == 0 {
            answer.push_str(&format!("\nIn short: {}.", sentence(rng)));
        }
        Some(answer)
    } else {
        None
    };
    let closing_thought = if final_answer.is_some() && rng.random_range(0..2) == 0 {
        Some(format!("{} now, so the task is complete.", sentence(rng)))
    } else {
        None
    };

    let steps = (0..n_steps)
        .map(|s| {
            let action = if tools.is_empty() {
                pick(rng, TOOL_NAMES).to_string()
            } else {
                tools[rng.random_range(0..tools.len())].name.clone()
            };
            let mut args = Map::new();
            for key in ARG_KEYS.iter().take(rng.random_range(0..=3)) {
                args.insert(key.to_string(), arg_value(rng));
            }
            let thought = if rng.random_range(0..5) == 0 {
                format!("{}.\nAlso, {}.", sentence(rng), sentence(rng))
            } else {
                format!("{}, so I will call {} next.", sentence(rng), action)
            };
            let observation = match rng.random_range(0..5) {
                0 => String::new(),
                1 => format!("{}.\n{}.", sentence(rng), sentence(rng)),
                _ => format!("{{\"note\": \"{}\", \"step\": {s}}}", sentence(rng)),
            };
            ReactStep {
                thought,
                action,
                action_input: Value::Object(args),
                observation,
            }
        })
        .collect();

    ReactTrajectory {
        raw_id: format!("rt-{i:04}"),
        source,
        system_prompt: if rng.random_range(0..10) < 3 {
            String::new()
        } else {
            format!(
                "You operate the {} console. Work step by step and report back.",
                pick(rng, SUBJECTS)
            )
        },
        query: format!(
            "Can you verify {} for {}? (ticket {i:04})",
            pick(rng, OBJECTS),
            pick(rng, SUBJECTS)
        ),
        tools,
        steps,
        closing_thought,
        final_answer,
    }
}
