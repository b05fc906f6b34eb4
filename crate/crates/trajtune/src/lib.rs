//! Corpus engineering for tool-using agent trainers.
//!
//! `trajtune` turns raw ReAct-style agent trajectories into chat-aligned
//! training data: it parses and filters marker-formatted records, rewrites
//! each reasoning step into an elicited multi-turn exchange (reversibly,
//! with loss masks on the assistant side), decomposes conversations by the
//! capability each turn exercises, synthesizes refusal negatives and
//! format-instruction pairs, and composes everything into a deterministic,
//! seed-reproducible training mixture. Companion analytics score model
//! responses for tool-call hallucination and summarize training-loss
//! convergence per capability.
//!
//! Modules follow the data path:
//!
//! - [`container`]: JSONL record I/O with atomic writes
//! - [`trajectory`], [`ingest`]: ReAct parsing, filtering, drop accounting
//! - [`chat`], [`align`]: the chat data model and the reversible
//!   trajectory-to-chat transform, plus ReAct re-rendering and synthetic
//!   format-instruction pairs
//! - [`capability`]: loss-mask decomposition by exercised capability
//! - [`negative`]: refusal synthesis for unanswerable tool queries
//! - [`mixture`]: apportioned, seeded corpus composition
//! - [`agenth`]: hallucination benchmark construction and scoring
//! - [`loss`]: loss-curve aggregation and convergence ranking
//! - [`pipeline`]: the config-driven end-to-end run
//! - [`seed`], [`tokenizer`]: per-stage RNG derivation and approximate
//!   token accounting

pub mod agenth;
pub mod align;
pub mod capability;
pub mod chat;
pub mod container;
pub mod ingest;
pub mod loss;
pub mod mixture;
pub mod negative;
pub mod pipeline;
pub mod seed;
pub mod tokenizer;
pub mod trajectory;
