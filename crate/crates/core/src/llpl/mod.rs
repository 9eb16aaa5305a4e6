//! Lifelong policy learning: A-GEM constrained updates gated by knowledge
//! evaluation of incremental data, and episodic-memory maintenance.

mod agem;
mod memory;
mod online;
mod update;

pub use agem::{agem_project, ProjectionOutcome, MIN_REF_NORM};
pub use memory::{
    init_memory, screen_incremental, similarity, update_memory, EpisodicMemory, EvalScore,
};
pub use online::{
    run_llpl_loop, run_protocol, Environment, Learner, LlplLearner, LoopReport, Schedule, Segment,
    TriggerReport,
};
pub use update::{constrained_update, lifelong_update, Constraint, EvalConfig, UpdateReport};
