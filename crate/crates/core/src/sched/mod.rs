//! Deterministic multi-task scheduling.
//!
//! One multi-task iteration visits every task once in registration order.
//! Each task carries a Dynamic Stop-and-Go controller: in `go` mode it steps
//! every iteration, in `stop` mode only on iterations divisible by the
//! iteration gap. Controllers change mode only when a validation score is
//! observed, once per task epoch.

mod curriculum;
mod dsg;
mod engine;
mod hyper;

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

pub use curriculum::{curriculum_phases, CurriculumMode, Phase};
pub use dsg::{
    dsg_observe_validation, dsg_should_step, DsgMode, DsgState, ScorePolarity, Transition,
};
pub use engine::{
    run_schedule, RunError, ScheduleEvent, ScheduleOutcome, ScheduledTask, StepContext,
    StepDecision, StepReason, TaskCallbacks,
};
pub use hyper::{build_hyper_plan, warmup_lr_multiplier, HyperPlan, TaskHyper, TaskPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("task list is empty")]
    NoTasks,
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
    #[error("non-finite validation score {0}")]
    NonFiniteScore(f64),
    #[error("warm-up length {warmup} must be below total iterations {total}")]
    WarmupTooLong { warmup: u64, total: u64 },
    #[error("iteration {iteration} outside 1..={total}")]
    IterationOutOfRange { iteration: u64, total: u64 },
    #[error("learning rate for task `{0}` must be positive and finite")]
    BadLearningRate(String),
    #[error("unknown task group `{0}`")]
    UnknownGroup(String),
    #[error("curriculum warm group {0} has no registered tasks")]
    EmptyWarmGroup(TaskGroup),
    #[error("hyper plan does not match the task list")]
    PlanMismatch,
}

/// The four task groups: vocab-based VQA, image retrieval, referring
/// expressions and multi-modal verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TaskGroup {
    G1,
    G2,
    G3,
    G4,
}

impl TaskGroup {
    pub const ALL: [TaskGroup; 4] = [TaskGroup::G1, TaskGroup::G2, TaskGroup::G3, TaskGroup::G4];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskGroup::G1 => "G1",
            TaskGroup::G2 => "G2",
            TaskGroup::G3 => "G3",
            TaskGroup::G4 => "G4",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskGroup {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "G1" | "g1" => Ok(TaskGroup::G1),
            "G2" | "g2" => Ok(TaskGroup::G2),
            "G3" | "g3" => Ok(TaskGroup::G3),
            "G4" | "g4" => Ok(TaskGroup::G4),
            _ => Err(SchedError::UnknownGroup(s.into())),
        }
    }
}

/// Scheduler settings. Thresholds are relative fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    /// Iteration gap in stop mode.
    pub delta: u64,
    pub converge_window: usize,
    pub converge_eps: f64,
    pub diverge_eps: f64,
    pub max_iter: u64,
    pub curriculum: CurriculumMode,
    pub warm_group: Option<TaskGroup>,
    pub warm_iters: u64,
    pub eta: f64,
    /// With DSG off every task steps every iteration (plain round-robin).
    pub dsg_enabled: bool,
    pub polarity: ScorePolarity,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            delta: 4,
            converge_window: 2,
            converge_eps: 0.001,
            diverge_eps: 0.005,
            max_iter: 1000,
            curriculum: CurriculumMode::None,
            warm_group: None,
            warm_iters: 0,
            eta: 0.1,
            dsg_enabled: true,
            polarity: ScorePolarity::HigherIsBetter,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: &str| Err(SchedError::InvalidConfig(m.into()));
        if self.delta < 1 {
            return bad("delta must be >= 1");
        }
        if self.converge_window < 1 {
            return bad("converge_window must be >= 1");
        }
        if !(self.converge_eps > 0.0
            && self.converge_eps < self.diverge_eps
            && self.diverge_eps < 1.0)
        {
            return bad("need 0 < converge_eps < diverge_eps < 1");
        }
        if self.max_iter < 1 {
            return bad("max_iter must be >= 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and non-negative");
        }
        Ok(())
    }
}

/// Registration order is the visiting order of every multi-task iteration.
pub fn round_robin_order<T: Clone>(
    tasks: &[T],
    _iteration: u64,
) -> Result<alloc::vec::Vec<T>, SchedError> {
    if tasks.is_empty() {
        return Err(SchedError::NoTasks);
    }
    Ok(tasks.to_vec())
}
