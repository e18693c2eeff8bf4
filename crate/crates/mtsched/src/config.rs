//! Experiment configuration (TOML). Unknown keys are rejected.

use std::path::Path;

use mtsched_core::bench::{BenchmarkConfig, InstanceConfig, SceneConfig, TaskKind};
use mtsched_core::model::TaskTokenMode;
use mtsched_core::sched::{CurriculumMode, SchedulerConfig, ScorePolarity, TaskGroup};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "MTSCHED_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{SEED_ENV}={0} is not a 64-bit unsigned integer")]
    BadSeedEnv(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub delta: u64,
    pub converge_window: usize,
    pub converge_eps: f64,
    pub diverge_eps: f64,
    pub max_iter: u64,
    pub curriculum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_group: Option<String>,
    pub warm_iters: u64,
    pub eta: f64,
    /// Stop-and-go on/off; off means every task steps every iteration.
    pub dsg: bool,
    /// `higher` or `lower`.
    pub polarity: String,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        SchedulerSection {
            delta: d.delta,
            converge_window: d.converge_window,
            converge_eps: d.converge_eps,
            diverge_eps: d.diverge_eps,
            max_iter: d.max_iter,
            curriculum: "none".into(),
            warm_group: None,
            warm_iters: 0,
            eta: d.eta,
            dsg: true,
            polarity: "higher".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
    pub hidden: usize,
    pub task_tokens: String,
    pub init_scale: f64,
    /// Extra learning-rate factor on head tensors.
    pub head_lr_mult: f64,
    pub mask_rate: f64,
    pub iou_threshold: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: 16,
            hidden: 16,
            task_tokens: "per_dataset".into(),
            init_scale: 1.0,
            head_lr_mult: 1.0,
            mask_rate: 0.15,
            iou_threshold: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub min_objects: usize,
    pub max_objects: usize,
    pub feature_noise: f64,
    pub annotator_accuracy: f64,
    pub negation_rate: f64,
    pub val_count: usize,
    pub test_count: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            min_objects: 2,
            max_objects: 4,
            feature_noise: 0.3,
            annotator_accuracy: 0.9,
            negation_rate: 0.3,
            val_count: 200,
            test_count: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub enabled: bool,
    pub iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub pairs: usize,
    /// Skip the masked-modelling loss on misaligned caption pairs.
    pub gate_on_negatives: bool,
    /// Also mask regions overlapping a masked region.
    pub co_mask: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            enabled: false,
            iters: 200,
            batch_size: 16,
            lr: 0.05,
            pairs: 2000,
            gate_on_negatives: true,
            co_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub iters: u64,
    /// Factor on each task's `target_lr` while fine-tuning.
    pub lr_scale: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            iters: 200,
            lr_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    /// Task template; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Must agree with the kind's group when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Head binding; defaults to the kind's standard head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    pub target_lr: f64,
    pub batch_size: usize,
    pub single_task_iters: u64,
    pub train_count: usize,
    #[serde(default)]
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    pub tasks: Vec<TaskEntry>,
}

/// A task entry with names resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTask {
    pub name: String,
    pub kind: TaskKind,
    pub group: TaskGroup,
    pub head: String,
    pub target_lr: f64,
    pub batch_size: usize,
    pub single_task_iters: u64,
    pub train_count: usize,
    pub label_noise: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Like [`ExperimentConfig::load`], then applies the seed override
    /// from the environment.
    pub fn load_with_env(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::load(path)?;
        cfg.apply_seed_env(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadSeedEnv(v.into()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tasks.is_empty() {
            return invalid("no tasks registered");
        }
        let tasks = self.resolved_tasks()?;
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|o| o.name == t.name) {
                return invalid(format!("duplicate task `{}`", t.name));
            }
            if let Some(o) = tasks[..i].iter().find(|o| o.head == t.head) {
                if o.kind.head_kind() != t.kind.head_kind() {
                    return invalid(format!(
                        "tasks `{}` and `{}` share head `{}` with different shapes",
                        o.name, t.name, t.head
                    ));
                }
            }
            if !(t.target_lr > 0.0 && t.target_lr.is_finite()) {
                return invalid(format!("task `{}`: target_lr must be positive", t.name));
            }
            if t.batch_size == 0 || t.train_count == 0 || t.single_task_iters == 0 {
                return invalid(format!(
                    "task `{}`: batch_size, train_count and single_task_iters must be positive",
                    t.name
                ));
            }
            if !(0.0..1.0).contains(&t.label_noise) {
                return invalid(format!("task `{}`: label_noise must be in [0,1)", t.name));
            }
        }
        if tasks.iter().any(|t| t.name == PRETRAIN_TASK) {
            return invalid(format!("`{PRETRAIN_TASK}` is reserved"));
        }
        self.scheduler_config()?;
        self.token_mode()?;
        let m = &self.model;
        if m.dim == 0 || m.hidden == 0 {
            return invalid("model dims must be positive");
        }
        if !(m.mask_rate > 0.0 && m.mask_rate < 1.0) {
            return invalid("mask_rate must be in (0,1)");
        }
        if !(m.head_lr_mult > 0.0 && m.head_lr_mult.is_finite()) {
            return invalid("head_lr_mult must be positive");
        }
        let b = &self.benchmark;
        if b.min_objects == 0 || b.min_objects > b.max_objects || b.max_objects > 9 {
            return invalid("need 1 <= min_objects <= max_objects <= 9");
        }
        if b.val_count == 0 || b.test_count == 0 {
            return invalid("val_count and test_count must be positive");
        }
        if !(0.0..=1.0).contains(&b.annotator_accuracy) || !(0.0..=1.0).contains(&b.negation_rate) {
            return invalid("annotator_accuracy and negation_rate must be in [0,1]");
        }
        if !(b.feature_noise >= 0.0 && b.feature_noise.is_finite()) {
            return invalid("feature_noise must be >= 0");
        }
        let p = &self.pretrain;
        if p.enabled
            && (p.iters == 0 || p.batch_size == 0 || p.pairs == 0 || p.lr.is_nan() || p.lr <= 0.0)
        {
            return invalid("pretrain iters, batch_size, pairs and lr must be positive");
        }
        let f = &self.finetune;
        if !(f.lr_scale > 0.0 && f.lr_scale.is_finite()) {
            return invalid("finetune lr_scale must be positive");
        }
        Ok(())
    }

    pub fn resolved_tasks(&self) -> Result<Vec<ResolvedTask>, ConfigError> {
        self.tasks
            .iter()
            .map(|t| {
                let kind: TaskKind = t
                    .kind
                    .as_deref()
                    .unwrap_or(&t.name)
                    .parse()
                    .map_err(ConfigError::Invalid)?;
                if let Some(g) = &t.group {
                    let g: TaskGroup = g
                        .parse()
                        .map_err(|e| ConfigError::Invalid(format!("{e}")))?;
                    if g != kind.group() {
                        return invalid(format!(
                            "task `{}`: group {g} does not match kind {kind}",
                            t.name
                        ));
                    }
                }
                Ok(ResolvedTask {
                    name: t.name.clone(),
                    kind,
                    group: kind.group(),
                    head: t.head.clone().unwrap_or_else(|| kind.default_head().into()),
                    target_lr: t.target_lr,
                    batch_size: t.batch_size,
                    single_task_iters: t.single_task_iters,
                    train_count: t.train_count,
                    label_noise: t.label_noise,
                })
            })
            .collect()
    }

    pub fn scheduler_config(&self) -> Result<SchedulerConfig, ConfigError> {
        let s = &self.scheduler;
        let curriculum: CurriculumMode = s
            .curriculum
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("{e}")))?;
        let warm_group = match &s.warm_group {
            Some(g) => Some(
                g.parse::<TaskGroup>()
                    .map_err(|e| ConfigError::Invalid(format!("{e}")))?,
            ),
            None => None,
        };
        let polarity = match s.polarity.as_str() {
            "higher" => ScorePolarity::HigherIsBetter,
            "lower" => ScorePolarity::LowerIsBetter,
            other => return invalid(format!("unknown polarity `{other}`")),
        };
        let cfg = SchedulerConfig {
            delta: s.delta,
            converge_window: s.converge_window,
            converge_eps: s.converge_eps,
            diverge_eps: s.diverge_eps,
            max_iter: s.max_iter,
            curriculum,
            warm_group,
            warm_iters: s.warm_iters,
            eta: s.eta,
            dsg_enabled: s.dsg,
            polarity,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn token_mode(&self) -> Result<TaskTokenMode, ConfigError> {
        self.model
            .task_tokens
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("{e}")))
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        let b = &self.benchmark;
        BenchmarkConfig {
            seed: self.seed,
            scene: SceneConfig {
                min_objects: b.min_objects,
                max_objects: b.max_objects,
            },
            instance: InstanceConfig {
                annotator_accuracy: b.annotator_accuracy,
                negation_rate: b.negation_rate,
            },
            feature_noise: b.feature_noise,
        }
    }
}

/// Task name reserved for the masked-modelling head.
pub const PRETRAIN_TASK: &str = "pretrain";
