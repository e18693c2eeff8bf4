use alloc::string::String;
use alloc::vec::Vec;

use super::{
    curriculum_phases, DsgMode, DsgState, HyperPlan, SchedError, SchedulerConfig, TaskGroup,
    Transition,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTask {
    pub name: String,
    pub group: TaskGroup,
    /// Iterations per task epoch; validation cadence.
    pub iters_per_epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepReason {
    GoMode,
    StopModeGatedIn,
    StopModeGatedOut,
    PhaseExcluded,
}

impl StepReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StepReason::GoMode => "go_mode",
            StepReason::StopModeGatedIn => "stop_mode_gated_in",
            StepReason::StopModeGatedOut => "stop_mode_gated_out",
            StepReason::PhaseExcluded => "phase_excluded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub iteration: u64,
    pub task: usize,
    pub stepped: bool,
    pub reason: StepReason,
}

/// What a training step needs to know about the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub iteration: u64,
    pub lr_multiplier: f64,
    /// `base_lr * lr_multiplier`.
    pub lr: f64,
    pub loss_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleEvent {
    Phase {
        name: String,
        start_iter: u64,
    },
    Step {
        decision: StepDecision,
        /// Unscaled task loss, present iff the task stepped.
        loss: Option<f64>,
        lr_multiplier: f64,
        loss_scale: f64,
        mode: DsgMode,
    },
    Validation {
        iteration: u64,
        task: usize,
        epoch: u32,
        score: f64,
        mode_after: DsgMode,
        transition: Option<Transition>,
    },
}

pub trait TaskCallbacks {
    type Error;
    /// One forward/backward/update on `task`; returns the unscaled loss.
    fn train_step(&mut self, task: usize, ctx: &StepContext) -> Result<f64, Self::Error>;
    fn validate(&mut self, task: usize, iteration: u64) -> Result<f64, Self::Error>;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError<E> {
    #[error(transparent)]
    Config(#[from] SchedError),
    #[error("run aborted at iteration {iteration}, task {task}")]
    Aborted {
        iteration: u64,
        task: usize,
        source: E,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub states: Vec<DsgState>,
    pub step_counts: Vec<u64>,
}

/// Runs the stop-and-go multi-task loop.
///
/// Every iteration visits all tasks in registration order. Each visit emits
/// exactly one step event; validations happen on iterations divisible by the
/// task's epoch length. `sink` sees each event as soon as it happens, so a
/// failing callback leaves a complete prefix behind.
pub fn run_schedule<C, S>(
    tasks: &[ScheduledTask],
    config: &SchedulerConfig,
    plan: &HyperPlan,
    callbacks: &mut C,
    sink: &mut S,
) -> Result<ScheduleOutcome, RunError<C::Error>>
where
    C: TaskCallbacks,
    S: FnMut(&ScheduleEvent) -> Result<(), C::Error>,
{
    config.validate()?;
    if tasks.is_empty() {
        return Err(SchedError::NoTasks.into());
    }
    if plan.tasks.len() != tasks.len()
        || plan.tasks.iter().zip(tasks).any(|(p, t)| p.name != t.name)
        || plan.total_iters != config.max_iter
    {
        return Err(SchedError::PlanMismatch.into());
    }
    let groups: Vec<TaskGroup> = tasks.iter().map(|t| t.group).collect();
    let phases = curriculum_phases(
        config.curriculum,
        &groups,
        config.warm_group,
        config.warm_iters,
        config.max_iter,
    )?;

    let mut states: Vec<DsgState> = tasks
        .iter()
        .map(|t| DsgState::new(t.iters_per_epoch))
        .collect();
    let mut step_counts = alloc::vec![0u64; tasks.len()];
    let mut active = alloc::vec![false; tasks.len()];
    let mut phase_idx = usize::MAX;

    macro_rules! emit {
        ($ev:expr, $it:expr, $t:expr) => {
            sink(&$ev).map_err(|source| RunError::Aborted {
                iteration: $it,
                task: $t,
                source,
            })?
        };
    }

    for i in 1..=config.max_iter {
        let p = phases
            .iter()
            .position(|p| p.contains(i))
            .unwrap_or(phases.len() - 1);
        if p != phase_idx {
            phase_idx = p;
            active.iter_mut().for_each(|a| *a = false);
            for &t in &phases[p].active {
                active[t] = true;
            }
            emit!(
                ScheduleEvent::Phase {
                    name: phases[p].name.clone(),
                    start_iter: i
                },
                i,
                0
            );
        }
        let lr_multiplier = plan.lr_multiplier(i)?;
        for t in 0..tasks.len() {
            let loss_scale = plan.tasks[t].loss_scale;
            let mode = states[t].mode;
            if !active[t] {
                let decision = StepDecision {
                    iteration: i,
                    task: t,
                    stepped: false,
                    reason: StepReason::PhaseExcluded,
                };
                emit!(
                    ScheduleEvent::Step {
                        decision,
                        loss: None,
                        lr_multiplier,
                        loss_scale,
                        mode
                    },
                    i,
                    t
                );
                continue;
            }
            let stepped = states[t].should_step(i, config);
            let reason = match (mode, stepped) {
                (DsgMode::Go, _) => StepReason::GoMode,
                (DsgMode::Stop, true) => StepReason::StopModeGatedIn,
                (DsgMode::Stop, false) => StepReason::StopModeGatedOut,
            };
            let loss = if stepped {
                let ctx = StepContext {
                    iteration: i,
                    lr_multiplier,
                    lr: plan.base_lr * lr_multiplier,
                    loss_scale,
                };
                let l = callbacks
                    .train_step(t, &ctx)
                    .map_err(|source| RunError::Aborted {
                        iteration: i,
                        task: t,
                        source,
                    })?;
                step_counts[t] += 1;
                Some(l)
            } else {
                None
            };
            let decision = StepDecision {
                iteration: i,
                task: t,
                stepped,
                reason,
            };
            emit!(
                ScheduleEvent::Step {
                    decision,
                    loss,
                    lr_multiplier,
                    loss_scale,
                    mode
                },
                i,
                t
            );

            if states[t].is_validation_iter(i) {
                let score = callbacks
                    .validate(t, i)
                    .map_err(|source| RunError::Aborted {
                        iteration: i,
                        task: t,
                        source,
                    })?;
                let (next, transition) = states[t].observe(i, score, config)?;
                states[t] = next;
                let ev = ScheduleEvent::Validation {
                    iteration: i,
                    task: t,
                    epoch: states[t].epochs_observed,
                    score,
                    mode_after: states[t].mode,
                    transition,
                };
                emit!(ev, i, t);
            }
        }
    }
    Ok(ScheduleOutcome {
        states,
        step_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::{build_hyper_plan, CurriculumMode, TaskHyper};
    use alloc::vec;

    /// Scores are scripted per task; a task whose script is exhausted repeats
    /// the last value.
    struct Scripted {
        scores: Vec<Vec<f64>>,
        seen: Vec<usize>,
        fail_at: Option<u64>,
    }

    impl TaskCallbacks for Scripted {
        type Error = &'static str;
        fn train_step(&mut self, task: usize, ctx: &StepContext) -> Result<f64, Self::Error> {
            if Some(ctx.iteration) == self.fail_at {
                return Err("boom");
            }
            Ok(1.0 / (ctx.iteration as f64 + task as f64))
        }
        fn validate(&mut self, task: usize, _iteration: u64) -> Result<f64, Self::Error> {
            let s = &self.scores[task];
            let k = self.seen[task].min(s.len() - 1);
            self.seen[task] += 1;
            Ok(s[k])
        }
    }

    fn setup(
        n: usize,
        max_iter: u64,
        epoch: u64,
    ) -> (Vec<ScheduledTask>, HyperPlan, SchedulerConfig) {
        let tasks: Vec<ScheduledTask> = (0..n)
            .map(|i| ScheduledTask {
                name: alloc::format!("t{i}"),
                group: TaskGroup::ALL[i % 4],
                iters_per_epoch: epoch,
            })
            .collect();
        let hyper: Vec<TaskHyper> = tasks
            .iter()
            .map(|t| TaskHyper {
                name: t.name.clone(),
                target_lr: 0.1,
                batch_size: 4,
                single_task_iters: 10,
            })
            .collect();
        let cfg = SchedulerConfig {
            max_iter,
            ..Default::default()
        };
        let plan = build_hyper_plan(&hyper, cfg.eta, max_iter).unwrap();
        (tasks, plan, cfg)
    }

    #[test]
    fn one_decision_per_task_per_iteration() {
        let (tasks, plan, cfg) = setup(3, 20, 5);
        let mut cb = Scripted {
            scores: vec![vec![10.0, 20.0, 30.0, 40.0]; 3],
            seen: vec![0; 3],
            fail_at: None,
        };
        let mut log = Vec::new();
        let out = run_schedule(&tasks, &cfg, &plan, &mut cb, &mut |e: &ScheduleEvent| {
            log.push(e.clone());
            Ok(())
        })
        .unwrap();
        let steps: Vec<_> = log
            .iter()
            .filter_map(|e| match e {
                ScheduleEvent::Step { decision, .. } => Some(*decision),
                _ => None,
            })
            .collect();
        assert_eq!(steps.len(), 60);
        for (k, d) in steps.iter().enumerate() {
            assert_eq!(d.iteration, 1 + k as u64 / 3);
            assert_eq!(d.task, k % 3);
        }
        assert_eq!(out.step_counts, vec![20, 20, 20]);
    }

    #[test]
    fn stopped_task_steps_every_delta() {
        let (tasks, plan, cfg) = setup(1, 100, 10);
        // flat scores: converged at epoch 3 (iteration 30), never diverges
        let mut cb = Scripted {
            scores: vec![vec![50.0]],
            seen: vec![0],
            fail_at: None,
        };
        let out = run_schedule(
            &tasks,
            &cfg,
            &plan,
            &mut cb,
            &mut |_: &ScheduleEvent| Ok(()),
        )
        .unwrap();
        // 30 go steps, then iterations 31..=100 gated by delta=4: 32,36,...,100
        assert_eq!(out.step_counts[0], 30 + 18);
        assert_eq!(out.states[0].mode, DsgMode::Stop);
    }

    #[test]
    fn callback_failure_keeps_prefix() {
        let (tasks, plan, cfg) = setup(2, 10, 2);
        let mut cb = Scripted {
            scores: vec![vec![1.0, 2.0, 3.0]; 2],
            seen: vec![0; 2],
            fail_at: Some(4),
        };
        let mut log = Vec::new();
        let err = run_schedule(&tasks, &cfg, &plan, &mut cb, &mut |e: &ScheduleEvent| {
            log.push(e.clone());
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(
            err,
            RunError::Aborted {
                iteration: 4,
                task: 0,
                source: "boom"
            }
        ));
        let last_step_iter = log
            .iter()
            .filter_map(|e| match e {
                ScheduleEvent::Step { decision, .. } => Some(decision.iteration),
                _ => None,
            })
            .max();
        assert_eq!(last_step_iter, Some(3));
    }

    #[test]
    fn warm_phase_excludes_other_groups() {
        let (tasks, plan, mut cfg) = setup(4, 20, 5);
        cfg.curriculum = CurriculumMode::AntiCurriculum;
        cfg.warm_group = Some(TaskGroup::G1);
        cfg.warm_iters = 5;
        let mut cb = Scripted {
            scores: vec![vec![10.0, 20.0, 30.0, 40.0]; 4],
            seen: vec![0; 4],
            fail_at: None,
        };
        let mut log = Vec::new();
        let out = run_schedule(&tasks, &cfg, &plan, &mut cb, &mut |e: &ScheduleEvent| {
            log.push(e.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(out.step_counts, vec![20, 15, 15, 15]);
        let phases: Vec<_> = log
            .iter()
            .filter_map(|e| match e {
                ScheduleEvent::Phase { name, start_iter } => Some((name.clone(), *start_iter)),
                _ => None,
            })
            .collect();
        assert_eq!(phases, vec![("warm:G1".into(), 1), ("all".into(), 6)]);
    }

    #[test]
    fn plan_mismatch_rejected() {
        let (tasks, plan, _) = setup(2, 20, 5);
        let cfg = SchedulerConfig {
            max_iter: 21,
            ..Default::default()
        };
        let mut cb = Scripted {
            scores: vec![vec![1.0]; 2],
            seen: vec![0; 2],
            fail_at: None,
        };
        let r = run_schedule(
            &tasks,
            &cfg,
            &plan,
            &mut cb,
            &mut |_: &ScheduleEvent| Ok(()),
        );
        assert!(matches!(r, Err(RunError::Config(SchedError::PlanMismatch))));
    }
}
