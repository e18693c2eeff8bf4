//! Core algorithms for large-scale multi-task vision-and-language training,
//! reduced to desk scale.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO:
//!
//! - [`audit`]: cross-dataset test-image contamination and split cleaning.
//! - [`sched`]: round-robin ordering, Dynamic Stop-and-Go, curriculum phases,
//!   warm-up and loss-scaling heuristics, and the schedule engine.
//! - [`model`]: a shared trunk with task tokens, the four task-head families,
//!   region co-masking and a small reverse-mode tape for gradients.
//! - [`bench`]: a seeded synthetic multi-task benchmark and its metrics.
//! - [`learner`]: glue that turns benchmark instances into losses, gradient
//!   steps and evaluations.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audit;
pub mod bench;
pub mod learner;
pub mod model;
pub mod rng;
pub mod sched;

pub use audit::{clean_registry, compute_overlap_matrix, AuditError, DatasetSplits, OverlapMatrix};
pub use sched::{
    build_hyper_plan, curriculum_phases, round_robin_order, run_schedule, warmup_lr_multiplier,
    DsgMode, DsgState, HyperPlan, SchedulerConfig, StepDecision, StepReason,
};
