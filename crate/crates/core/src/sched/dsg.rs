use alloc::vec::Vec;

use super::{SchedError, SchedulerConfig};

/// Guard against division by a score of ~0 in the relative thresholds.
const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DsgMode {
    Go,
    Stop,
}

impl DsgMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DsgMode::Go => "go",
            DsgMode::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScorePolarity {
    HigherIsBetter,
    LowerIsBetter,
}

impl ScorePolarity {
    fn orient(self, s: f64) -> f64 {
        match self {
            ScorePolarity::HigherIsBetter => s,
            ScorePolarity::LowerIsBetter => -s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// go -> stop
    Converged,
    /// stop -> go
    Diverged,
}

/// Per-task stop-and-go controller.
#[derive(Debug, Clone, PartialEq)]
pub struct DsgState {
    pub mode: DsgMode,
    /// Best score so far under the configured polarity; `None` before the
    /// first validation.
    pub best_score: Option<f64>,
    /// `(epoch, score)`, epochs numbered from 1.
    pub score_history: Vec<(u32, f64)>,
    pub epochs_observed: u32,
    pub iters_per_epoch: u64,
    pub last_validation_iter: u64,
}

impl DsgState {
    pub fn new(iters_per_epoch: u64) -> Self {
        DsgState {
            mode: DsgMode::Go,
            best_score: None,
            score_history: Vec::new(),
            epochs_observed: 0,
            iters_per_epoch: iters_per_epoch.max(1),
            last_validation_iter: 0,
        }
    }

    pub fn should_step(&self, iteration: u64, config: &SchedulerConfig) -> bool {
        !config.dsg_enabled || self.mode == DsgMode::Go || iteration.is_multiple_of(config.delta)
    }

    pub fn is_validation_iter(&self, iteration: u64) -> bool {
        iteration.is_multiple_of(self.iters_per_epoch)
    }

    /// Records a validation score taken at `iteration` and applies the
    /// convergence / divergence rules.
    pub fn observe(
        &self,
        iteration: u64,
        score: f64,
        config: &SchedulerConfig,
    ) -> Result<(DsgState, Option<Transition>), SchedError> {
        if !score.is_finite() {
            return Err(SchedError::NonFiniteScore(score));
        }
        let pol = config.polarity;
        let mut next = self.clone();
        next.epochs_observed += 1;
        next.last_validation_iter = iteration;
        next.score_history.push((next.epochs_observed, score));

        let mut transition = None;
        if config.dsg_enabled {
            match self.mode {
                DsgMode::Go => {
                    let n = next.score_history.len();
                    let w = config.converge_window;
                    if n > w {
                        let now = pol.orient(score);
                        let then = pol.orient(next.score_history[n - 1 - w].1);
                        let gain = (now - then) / libm::fmax(libm::fabs(then), REL_FLOOR);
                        if gain < config.converge_eps {
                            next.mode = DsgMode::Stop;
                            transition = Some(Transition::Converged);
                        }
                    }
                }
                DsgMode::Stop => {
                    if let Some(best) = self.best_score {
                        let best = pol.orient(best);
                        let drop =
                            (best - pol.orient(score)) / libm::fmax(libm::fabs(best), REL_FLOOR);
                        if drop >= config.diverge_eps {
                            next.mode = DsgMode::Go;
                            transition = Some(Transition::Diverged);
                        }
                    }
                }
            }
        }

        next.best_score = Some(match self.best_score {
            Some(b) if pol.orient(b) >= pol.orient(score) => b,
            _ => score,
        });
        Ok((next, transition))
    }
}

/// True iff the task updates at `iteration`.
pub fn dsg_should_step(state: &DsgState, iteration: u64, config: &SchedulerConfig) -> bool {
    state.should_step(iteration, config)
}

/// Observes a score at the next epoch boundary (`last_validation_iter + n_t`).
pub fn dsg_observe_validation(
    state: &DsgState,
    score: f64,
    config: &SchedulerConfig,
) -> Result<DsgState, SchedError> {
    let it = state.last_validation_iter + state.iters_per_epoch;
    state.observe(it, score, config).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feed(cfg: &SchedulerConfig, scores: &[f64]) -> Vec<DsgMode> {
        let mut s = DsgState::new(10);
        scores
            .iter()
            .map(|&x| {
                s = dsg_observe_validation(&s, x, cfg).unwrap();
                s.mode
            })
            .collect()
    }

    #[test]
    fn step_gate() {
        let cfg = SchedulerConfig {
            delta: 4,
            ..Default::default()
        };
        let mut s = DsgState::new(5);
        assert!(dsg_should_step(&s, 7, &cfg));
        s.mode = DsgMode::Stop;
        assert!(dsg_should_step(&s, 8, &cfg));
        assert!(!dsg_should_step(&s, 7, &cfg));
        let cfg1 = SchedulerConfig {
            delta: 1,
            ..Default::default()
        };
        assert!((1..50).all(|i| dsg_should_step(&s, i, &cfg1)));
    }

    #[test]
    fn small_gain_over_window_stops() {
        let cfg = SchedulerConfig::default();
        assert_eq!(
            feed(&cfg, &[60.30, 60.32, 60.33]),
            vec![DsgMode::Go, DsgMode::Go, DsgMode::Stop]
        );
    }

    #[test]
    fn drop_from_best_resumes() {
        let cfg = SchedulerConfig::default();
        let modes = feed(&cfg, &[60.30, 60.32, 60.33, 59.90]);
        assert_eq!(modes[3], DsgMode::Go);
    }

    #[test]
    fn fast_improvement_keeps_going() {
        let cfg = SchedulerConfig::default();
        assert_eq!(feed(&cfg, &[50.0, 55.0, 60.0]), vec![DsgMode::Go; 3]);
    }

    #[test]
    fn best_tracks_max_and_history_is_ordered() {
        let cfg = SchedulerConfig::default();
        let mut s = DsgState::new(3);
        for x in [1.0, 3.0, 2.0] {
            s = dsg_observe_validation(&s, x, &cfg).unwrap();
        }
        assert_eq!(s.best_score, Some(3.0));
        assert_eq!(s.score_history, vec![(1, 1.0), (2, 3.0), (3, 2.0)]);
        assert_eq!(s.last_validation_iter, 9);
    }

    #[test]
    fn non_finite_score_rejected() {
        let s = DsgState::new(3);
        let cfg = SchedulerConfig::default();
        assert!(dsg_observe_validation(&s, f64::NAN, &cfg).is_err());
        assert!(dsg_observe_validation(&s, f64::INFINITY, &cfg).is_err());
    }

    #[test]
    fn lower_is_better_polarity() {
        let cfg = SchedulerConfig {
            polarity: ScorePolarity::LowerIsBetter,
            ..Default::default()
        };
        // losses flatten out
        let modes = feed(&cfg, &[2.0, 1.9995, 1.9990]);
        assert_eq!(modes[2], DsgMode::Stop);
        let mut s = DsgState::new(1);
        for x in [2.0, 1.9995, 1.9990] {
            s = dsg_observe_validation(&s, x, &cfg).unwrap();
        }
        assert_eq!(s.best_score, Some(1.9990));
        let s = dsg_observe_validation(&s, 2.1, &cfg).unwrap();
        assert_eq!(s.mode, DsgMode::Go);
    }

    #[test]
    fn disabled_never_transitions() {
        let cfg = SchedulerConfig {
            dsg_enabled: false,
            ..Default::default()
        };
        assert_eq!(feed(&cfg, &[1.0, 1.0, 1.0, 1.0]), vec![DsgMode::Go; 4]);
    }
}
