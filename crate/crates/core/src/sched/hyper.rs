use alloc::string::String;
use alloc::vec::Vec;

use super::SchedError;

/// Learning-rate multiplier: linear ramp to 1 over the warm-up, then linear
/// decay to 0 at `total_iters`.
pub fn warmup_lr_multiplier(
    iteration: u64,
    warmup_iters: u64,
    total_iters: u64,
) -> Result<f64, SchedError> {
    if warmup_iters >= total_iters {
        return Err(SchedError::WarmupTooLong {
            warmup: warmup_iters,
            total: total_iters,
        });
    }
    if iteration < 1 || iteration > total_iters {
        return Err(SchedError::IterationOutOfRange {
            iteration,
            total: total_iters,
        });
    }
    Ok(if iteration <= warmup_iters {
        iteration as f64 / warmup_iters as f64
    } else {
        (total_iters - iteration) as f64 / (total_iters - warmup_iters) as f64
    })
}

/// Single-task settings for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHyper {
    pub name: String,
    pub target_lr: f64,
    pub batch_size: usize,
    pub single_task_iters: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub name: String,
    pub batch_size: usize,
    pub target_lr: f64,
    /// `target_lr / base_lr`, always >= 1.
    pub loss_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperPlan {
    pub tasks: Vec<TaskPlan>,
    pub base_lr: f64,
    pub eta: f64,
    /// Largest single-task iteration count.
    pub n_max: u64,
    pub warmup_iters: u64,
    pub total_iters: u64,
}

impl HyperPlan {
    pub fn lr_multiplier(&self, iteration: u64) -> Result<f64, SchedError> {
        warmup_lr_multiplier(iteration, self.warmup_iters, self.total_iters)
    }

    pub fn task(&self, name: &str) -> Option<&TaskPlan> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

/// `ceil(eta * n)` computed without letting a rounding error in the product
/// push an exact integer up by one.
pub(crate) fn warmup_len(eta: f64, n: u64) -> u64 {
    let prod = eta * n as f64;
    let r = libm::round(prod);
    if libm::fabs(prod - r) <= 1e-9 * libm::fmax(1.0, prod) {
        r as u64
    } else {
        libm::ceil(prod) as u64
    }
}

/// Derives base learning rate, per-task loss scales and warm-up length from
/// the single-task settings.
pub fn build_hyper_plan(
    tasks: &[TaskHyper],
    eta: f64,
    total_iters: u64,
) -> Result<HyperPlan, SchedError> {
    if tasks.is_empty() {
        return Err(SchedError::NoTasks);
    }
    for t in tasks {
        if !(t.target_lr > 0.0 && t.target_lr.is_finite()) {
            return Err(SchedError::BadLearningRate(t.name.clone()));
        }
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(SchedError::InvalidConfig(
            "eta must be finite and non-negative".into(),
        ));
    }
    let base_lr = tasks
        .iter()
        .map(|t| t.target_lr)
        .fold(f64::INFINITY, f64::min);
    let n_max = tasks.iter().map(|t| t.single_task_iters).max().unwrap_or(0);
    let warmup_iters = warmup_len(eta, n_max);
    if warmup_iters >= total_iters {
        return Err(SchedError::WarmupTooLong {
            warmup: warmup_iters,
            total: total_iters,
        });
    }
    Ok(HyperPlan {
        tasks: tasks
            .iter()
            .map(|t| TaskPlan {
                name: t.name.clone(),
                batch_size: t.batch_size,
                target_lr: t.target_lr,
                loss_scale: t.target_lr / base_lr,
            })
            .collect(),
        base_lr,
        eta,
        n_max,
        warmup_iters,
        total_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    fn th(name: &str, lr: f64, iters: u64) -> TaskHyper {
        TaskHyper {
            name: name.into(),
            target_lr: lr,
            batch_size: 8,
            single_task_iters: iters,
        }
    }

    #[test]
    fn warmup_examples() {
        let w = warmup_len(0.1, 40_000);
        assert_eq!(w, 4_000);
        assert_eq!(warmup_lr_multiplier(4_000, w, 40_000).unwrap(), 1.0);
        assert_eq!(warmup_lr_multiplier(2_000, w, 40_000).unwrap(), 0.5);
        assert_eq!(warmup_lr_multiplier(40_000, w, 40_000).unwrap(), 0.0);
        assert_eq!(warmup_lr_multiplier(22_000, w, 40_000).unwrap(), 0.5);
    }

    #[test]
    fn warmup_errors() {
        assert!(warmup_lr_multiplier(1, 10, 10).is_err());
        assert!(warmup_lr_multiplier(0, 1, 10).is_err());
        assert!(warmup_lr_multiplier(11, 1, 10).is_err());
    }

    #[test]
    fn zero_warmup_is_pure_decay() {
        assert_eq!(warmup_lr_multiplier(1, 0, 4).unwrap(), 0.75);
    }

    #[test]
    fn plan_scales_by_min_lr() {
        let plan = build_hyper_plan(&[th("a", 4e-5, 100), th("b", 2e-5, 100)], 0.1, 1000).unwrap();
        assert_eq!(plan.base_lr, 2e-5);
        assert_eq!(plan.tasks[0].loss_scale, 2.0);
        assert_eq!(plan.tasks[1].loss_scale, 1.0);
    }

    #[test]
    fn plan_uniform_lr() {
        let plan = build_hyper_plan(&[th("a", 1e-3, 10), th("b", 1e-3, 10)], 0.1, 100).unwrap();
        assert!(plan.tasks.iter().all(|t| t.loss_scale == 1.0));
    }

    #[test]
    fn plan_warmup_from_longest_task() {
        let plan = build_hyper_plan(
            &[th("ref", 1e-4, 5_000), th("vqa", 4e-5, 84_000)],
            0.1,
            200_000,
        )
        .unwrap();
        assert_eq!(plan.n_max, 84_000);
        assert_eq!(plan.warmup_iters, 8_400);
    }

    #[test]
    fn plan_errors() {
        assert_eq!(build_hyper_plan(&[], 0.1, 10), Err(SchedError::NoTasks));
        assert!(build_hyper_plan(&[th("a", 0.0, 10)], 0.1, 10).is_err());
        assert!(build_hyper_plan(&[th("a", 1.0, 1000)], 0.1, 100).is_err());
    }
}
