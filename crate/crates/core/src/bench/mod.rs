//! Seeded synthetic multi-task benchmark.
//!
//! Every task draws images from one latent scene model (shapes and colors on
//! a small grid), so the associations between words and visual concepts are
//! common across tasks. Instances are template questions, captions,
//! referring phrases and statements with targets computed by fixed rules.

mod instances;
mod metrics;
mod scene;
mod tasks;

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use thiserror::Error;

use crate::audit::Split;
use crate::rng::{child_rng, derive_seed, label_of};

pub use instances::{
    corrupt_label, derive_instances, mentioned_pairs, rule_target, InstanceConfig, Target,
    TaskInstance, ANNOTATORS,
};
pub use metrics::{
    accuracy, aggregate_eval, metric_mt_vgc, metric_recall_at_k, metric_vqa_soft_accuracy, rank_of,
    EvalResult, GroupMean, QrPair, TaskMetric,
};
pub use scene::{
    gen_scene, word, Object, Scene, SceneConfig, World, REGION_DIM, VOCAB_SIZE, WORDS,
};
pub use tasks::{
    Family, TaskKind, ATTRIBUTE_ANSWERS, CELL_ANSWERS, REGION_CLASSES, RETRIEVAL_CANDIDATES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("scene {seed} is too small for a {task} instance")]
    SceneTooSmall { task: TaskKind, seed: u64 },
    #[error("no instances")]
    Empty,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown answer id {0}")]
    UnknownAnswer(usize),
    #[error("k = {k} outside 1..={candidates}")]
    BadK { k: usize, candidates: usize },
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("missing metric for task `{0}`")]
    MissingMetric(String),
    #[error("duplicate metric for task `{0}`")]
    DuplicateMetric(String),
    #[error("could not generate {wanted} instances for `{task}`")]
    Exhausted { task: String, wanted: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub instance: InstanceConfig,
    /// Standard deviation of the per-region appearance noise.
    pub feature_noise: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            scene: SceneConfig::default(),
            instance: InstanceConfig::default(),
            feature_noise: 0.3,
        }
    }
}

/// Instances of one task split plus the contiguous scene-seed range used.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub task: String,
    pub kind: TaskKind,
    pub split: Split,
    pub instances: Vec<TaskInstance>,
    pub seed_start: u64,
    /// Exclusive end; wraps like the seeds themselves.
    pub seed_end: u64,
}

/// Caption/image pair for masked modelling and alignment prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainInstance {
    pub scene: Scene,
    pub words: Vec<usize>,
    pub aligned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub world: World,
}

fn split_label(split: Split) -> u64 {
    match split {
        Split::Train => 0x7261,
        Split::Val => 0x7661,
        Split::Test => 0x7465,
    }
}

/// Caption listing every object of `scene` as "<color> <shape>" joined by "and".
pub fn describe(scene: &Scene) -> Vec<usize> {
    let mut w = Vec::new();
    for (i, o) in scene.objects.iter().enumerate() {
        if i > 0 {
            w.push(word::AND);
        }
        w.extend([word::color(o.color), word::shape(o.shape)]);
    }
    w
}

impl Benchmark {
    pub fn new(config: BenchmarkConfig) -> Self {
        let world = World::new(config.seed, config.feature_noise);
        Benchmark { config, world }
    }

    /// First scene seed of a task split.
    pub fn seed_base(&self, task: &str, split: Split) -> u64 {
        derive_seed(
            derive_seed(self.config.seed, label_of(task)),
            split_label(split),
        )
    }

    /// `count` instances of `kind` under task name `task`, one per scene,
    /// walking scene seeds upward from the split's base and skipping scenes
    /// the template cannot use. Training labels are corrupted with
    /// probability `label_noise`.
    pub fn split(
        &self,
        task: &str,
        kind: TaskKind,
        split: Split,
        count: usize,
        label_noise: f64,
    ) -> Result<SplitData, BenchError> {
        let start = self.seed_base(task, split);
        let mut instances = Vec::with_capacity(count);
        let mut seed = start;
        let limit = count.saturating_mul(4) + 64;
        let mut tried = 0usize;
        while instances.len() < count {
            if tried >= limit {
                return Err(BenchError::Exhausted {
                    task: task.into(),
                    wanted: count,
                });
            }
            tried += 1;
            let scene = gen_scene(seed, &self.config.scene);
            seed = seed.wrapping_add(1);
            let Ok(mut one) = derive_instances(&scene, kind, 1, &self.config.instance) else {
                continue;
            };
            let mut inst = one.remove(0);
            if split == Split::Train {
                corrupt_label(&mut inst, label_noise, &mut child_rng(scene.seed, 0x4015E));
            }
            instances.push(inst);
        }
        Ok(SplitData {
            task: task.into(),
            kind,
            split,
            instances,
            seed_start: start,
            seed_end: seed,
        })
    }

    /// Caption pairs; roughly half are misaligned (caption of another scene).
    pub fn pretrain_pairs(&self, count: usize) -> Vec<PretrainInstance> {
        let base = derive_seed(self.config.seed, label_of("pretrain"));
        (0..count as u64)
            .map(|k| {
                let scene = gen_scene(base.wrapping_add(k), &self.config.scene);
                let mut rng = child_rng(scene.seed, 0xA119);
                let aligned = rng.random::<bool>();
                let words = if aligned {
                    describe(&scene)
                } else {
                    let mut j = 1u64;
                    loop {
                        let other =
                            gen_scene(derive_seed(scene.seed, 0xD15 + j), &self.config.scene);
                        if mentioned_pairs(&describe(&other)) != mentioned_pairs(&describe(&scene))
                        {
                            break describe(&other);
                        }
                        j += 1;
                    }
                };
                PretrainInstance {
                    scene,
                    words,
                    aligned,
                }
            })
            .collect()
    }
}
