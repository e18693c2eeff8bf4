//! Desk-scale shared-trunk learner.
//!
//! The trunk turns a token sequence `{IMG, v_1..v_n, CLS, [TASK_t], w_1..w_m,
//! SEP}` into holistic image/text embeddings plus one embedding per region
//! (and per word when masked modelling needs it). Task heads branch off those
//! embeddings; several tasks may bind to the same head, in which case they
//! share its parameters.

mod encoder;
pub mod geometry;
mod heads;
pub mod losses;
pub mod mask;
pub mod params;
pub mod tape;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use thiserror::Error;

pub use encoder::{
    encode, encode_on, EncodedNodes, HolisticEmbeddings, RegionInput, Slot, TokenSequence,
};
pub use geometry::{iou, Region};
pub use heads::{
    head_referring, head_retrieval, head_verification, head_vocab_vqa, referring_scores,
    retrieval_score, verification_logits, vqa_logits, PretrainOutputs,
};
pub use mask::{build_mask_plan, MaskPlan};
pub use params::{sgd_step, Grads, ParamStore, Tensor, TensorId};
pub use tape::{NodeId, Tape};

use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degenerate box")]
    DegenerateBox,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown word id {0}")]
    UnknownWord(usize),
    #[error("unknown task token {0}")]
    UnknownTaskToken(usize),
    #[error("task token presence does not match the task-token mode")]
    TaskTokenMode,
    #[error("sequence too long: {0}")]
    TooLong(String),
    #[error("region list is empty")]
    EmptyRegions,
    #[error("verification head `{head}` takes {expected} image-statement pairs, got {got}")]
    WrongPairCount {
        head: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in forward or backward pass")]
    NonFinite,
    #[error("unknown head `{0}`")]
    UnknownHead(String),
    #[error("head `{head}` is not a {expected} head")]
    WrongHeadKind {
        head: String,
        expected: &'static str,
    },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` bound twice")]
    DuplicateBinding(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("mask index {0} out of range")]
    MaskOutOfRange(usize),
    #[error("target {0} out of range")]
    TargetOutOfRange(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskTokenMode {
    PerDataset,
    PerHead,
    None,
}

impl TaskTokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskTokenMode::PerDataset => "per_dataset",
            TaskTokenMode::PerHead => "per_head",
            TaskTokenMode::None => "none",
        }
    }
}

impl FromStr for TaskTokenMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_dataset" => Ok(TaskTokenMode::PerDataset),
            "per_head" => Ok(TaskTokenMode::PerHead),
            "none" => Ok(TaskTokenMode::None),
            _ => Err(ModelError::InvalidConfig(format!(
                "unknown task-token mode `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Length of each region feature vector.
    pub region_dim: usize,
    /// Trunk embedding width `d`.
    pub dim: usize,
    /// Hidden width of the two-layer head MLPs.
    pub hidden: usize,
    pub max_words: usize,
    pub max_regions: usize,
    pub task_tokens: TaskTokenMode,
    /// Multiplies the default fan-in scaled initialisation.
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.region_dim == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(ModelError::InvalidConfig(
                "all dimensions must be positive".into(),
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(ModelError::InvalidConfig(
                "init_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum HeadKind {
    /// Multi-label answer classifier over a fixed answer vocabulary.
    VocabVqa { answers: usize },
    /// Image-caption alignment score.
    Retrieval,
    /// Per-region matching score.
    Referring,
    /// Classifier over one or two image-statement pairs.
    Verification { pairs: usize, classes: usize },
    /// Masked word / region-class reconstruction plus alignment prediction.
    Pretrain { region_classes: usize },
}

impl HeadKind {
    pub fn label(&self) -> &'static str {
        match self {
            HeadKind::VocabVqa { .. } => "vocab_vqa",
            HeadKind::Retrieval => "retrieval",
            HeadKind::Referring => "referring",
            HeadKind::Verification { .. } => "verification",
            HeadKind::Pretrain { .. } => "pretrain",
        }
    }

    /// Tensor parts `(suffix, shape)` for a trunk of width `d`.
    fn parts(&self, cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h) = (cfg.dim, cfg.hidden);
        match *self {
            HeadKind::VocabVqa { answers } => alloc::vec![
                ("w1", alloc::vec![h, d]),
                ("b1", alloc::vec![h]),
                ("w2", alloc::vec![answers, h]),
                ("b2", alloc::vec![answers]),
            ],
            HeadKind::Retrieval | HeadKind::Referring => alloc::vec![("w", alloc::vec![1, d])],
            HeadKind::Verification { pairs, classes } => alloc::vec![
                ("w1", alloc::vec![h, pairs * d]),
                ("b1", alloc::vec![h]),
                ("w2", alloc::vec![classes, h]),
                ("b2", alloc::vec![classes]),
            ],
            HeadKind::Pretrain { region_classes } => alloc::vec![
                ("word_w", alloc::vec![cfg.vocab_size, d]),
                ("word_b", alloc::vec![cfg.vocab_size]),
                ("region_w", alloc::vec![region_classes, d]),
                ("region_b", alloc::vec![region_classes]),
                ("align_w", alloc::vec![1, d]),
                ("align_b", alloc::vec![1]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub name: String,
    pub kind: HeadKind,
    pub tensors: Vec<TensorId>,
}

/// Task → head binding; tasks bound to one head share its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskBinding {
    pub task: String,
    pub head: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Trunk,
    Head(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkIds {
    pub word_emb: TensorId,
    pub word_pos: TensorId,
    pub seg_text: TensorId,
    pub seg_image: TensorId,
    pub region_w: TensorId,
    pub region_b: TensorId,
    pub region_pos: TensorId,
    pub task_emb: TensorId,
    pub vis_a: TensorId,
    pub vis_b: TensorId,
    pub vis_bias: TensorId,
    pub img_w: TensorId,
    pub img_b: TensorId,
    pub cls_w: TensorId,
    pub cls_u: TensorId,
    pub cls_b: TensorId,
    pub word_w: TensorId,
    pub word_u: TensorId,
    pub word_b: TensorId,
}

impl TrunkIds {
    /// `(name, shape, init std multiplier)` for every trunk tensor.
    fn layout(cfg: &ModelConfig, n_tokens: usize) -> Vec<(&'static str, Vec<usize>, f64)> {
        use alloc::vec;
        let (d, dv) = (cfg.dim, cfg.region_dim);
        let fan = |n: usize| 1.0 / libm::sqrt(n as f64);
        vec![
            ("word_emb", vec![cfg.vocab_size, d], 0.5),
            ("word_pos", vec![cfg.max_words, d], 0.1),
            ("seg_text", vec![d], 0.0),
            ("seg_image", vec![d], 0.0),
            ("region_w", vec![d, dv], fan(dv)),
            ("region_b", vec![d], 0.0),
            ("region_pos", vec![cfg.max_regions, d], 0.1),
            ("task_emb", vec![n_tokens, d], 0.5),
            ("vis_a", vec![d, d], fan(d)),
            ("vis_b", vec![d, d], fan(d)),
            ("vis_bias", vec![d], 0.0),
            ("img_w", vec![d, d], fan(d)),
            ("img_b", vec![d], 0.0),
            ("cls_w", vec![d, d], fan(d)),
            ("cls_u", vec![d, d], fan(d)),
            ("cls_b", vec![d], 0.0),
            ("word_w", vec![d, d], fan(d)),
            ("word_u", vec![d, d], fan(d)),
            ("word_b", vec![d], 0.0),
        ]
    }

    fn resolve(store: &ParamStore) -> Result<Self, ModelError> {
        let f = |n: &str| {
            let full = format!("trunk.{n}");
            store.find(&full).ok_or(ModelError::MissingTensor(full))
        };
        Ok(TrunkIds {
            word_emb: f("word_emb")?,
            word_pos: f("word_pos")?,
            seg_text: f("seg_text")?,
            seg_image: f("seg_image")?,
            region_w: f("region_w")?,
            region_b: f("region_b")?,
            region_pos: f("region_pos")?,
            task_emb: f("task_emb")?,
            vis_a: f("vis_a")?,
            vis_b: f("vis_b")?,
            vis_bias: f("vis_bias")?,
            img_w: f("img_w")?,
            img_b: f("img_b")?,
            cls_w: f("cls_w")?,
            cls_u: f("cls_u")?,
            cls_b: f("cls_b")?,
            word_w: f("word_w")?,
            word_u: f("word_u")?,
            word_b: f("word_b")?,
        })
    }
}

/// Trunk parameters plus every head, with the task → head sharing map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub trunk: TrunkIds,
    pub heads: Vec<Head>,
    pub bindings: Vec<TaskBinding>,
    pub owners: Vec<Owner>,
}

fn task_token_count(mode: TaskTokenMode, heads: &[HeadSpec], bindings: &[TaskBinding]) -> usize {
    match mode {
        TaskTokenMode::PerDataset => bindings.len(),
        TaskTokenMode::PerHead => heads.len(),
        TaskTokenMode::None => 0,
    }
}

fn check_bindings(heads: &[HeadSpec], bindings: &[TaskBinding]) -> Result<(), ModelError> {
    for (i, b) in bindings.iter().enumerate() {
        if !heads.iter().any(|h| h.name == b.head) {
            return Err(ModelError::UnknownHead(b.head.clone()));
        }
        if bindings[..i].iter().any(|o| o.task == b.task) {
            return Err(ModelError::DuplicateBinding(b.task.clone()));
        }
    }
    Ok(())
}

impl ModelParams {
    /// Builds and randomly initialises all tensors.
    pub fn init(
        config: ModelConfig,
        heads: &[HeadSpec],
        bindings: &[TaskBinding],
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut mp = Self::zeros(config, heads, bindings)?;
        let mut rng = rng_from(seed);
        let trunk_layout = TrunkIds::layout(
            &mp.config,
            task_token_count(mp.config.task_tokens, heads, bindings),
        );
        let scale = mp.config.init_scale;
        for (name, _, std) in trunk_layout {
            let id = mp
                .store
                .find(&format!("trunk.{name}"))
                .expect("trunk tensor");
            mp.store.randomize(id, std * scale, &mut rng);
        }
        for h in &mp.heads {
            for &id in &h.tensors {
                let t = mp.store.get(id);
                if t.shape.len() == 2 {
                    let std = scale / libm::sqrt(t.cols() as f64);
                    mp.store.randomize(id, std, &mut rng);
                }
            }
        }
        Ok(mp)
    }

    /// Same layout as [`ModelParams::init`] with every value zero.
    pub fn zeros(
        config: ModelConfig,
        heads: &[HeadSpec],
        bindings: &[TaskBinding],
    ) -> Result<Self, ModelError> {
        config.validate()?;
        check_bindings(heads, bindings)?;
        let mut store = ParamStore::default();
        let mut owners = Vec::new();
        for (name, shape, _) in TrunkIds::layout(
            &config,
            task_token_count(config.task_tokens, heads, bindings),
        ) {
            store.push(Tensor::zeros(format!("trunk.{name}"), &shape));
            owners.push(Owner::Trunk);
        }
        let mut built = Vec::new();
        for (hi, spec) in heads.iter().enumerate() {
            let tensors = spec
                .kind
                .parts(&config)
                .into_iter()
                .map(|(part, shape)| {
                    owners.push(Owner::Head(hi));
                    store.push(Tensor::zeros(
                        format!("head.{}.{}", spec.name, part),
                        &shape,
                    ))
                })
                .collect();
            built.push(Head {
                name: spec.name.clone(),
                kind: spec.kind,
                tensors,
            });
        }
        let trunk = TrunkIds::resolve(&store)?;
        Ok(ModelParams {
            config,
            store,
            trunk,
            heads: built,
            bindings: bindings.to_vec(),
            owners,
        })
    }

    /// Reassembles a model from stored tensors, checking every tensor the
    /// layout needs is present with the right shape.
    pub fn from_store(
        config: ModelConfig,
        heads: &[HeadSpec],
        bindings: &[TaskBinding],
        store: ParamStore,
    ) -> Result<Self, ModelError> {
        let template = Self::zeros(config, heads, bindings)?;
        let mut ordered = ParamStore::default();
        for t in &template.store.tensors {
            let id = store
                .find(&t.name)
                .ok_or_else(|| ModelError::MissingTensor(t.name.clone()))?;
            let src = store.get(id);
            if src.shape != t.shape {
                return Err(ModelError::ShapeMismatch {
                    name: t.name.clone(),
                    expected: t.shape.clone(),
                    got: src.shape.clone(),
                });
            }
            ordered.push(src.clone());
        }
        Ok(ModelParams {
            store: ordered,
            ..template
        })
    }

    pub fn head_specs(&self) -> Vec<HeadSpec> {
        self.heads
            .iter()
            .map(|h| HeadSpec {
                name: h.name.clone(),
                kind: h.kind,
            })
            .collect()
    }

    pub fn head_index(&self, name: &str) -> Result<usize, ModelError> {
        self.heads
            .iter()
            .position(|h| h.name == name)
            .ok_or_else(|| ModelError::UnknownHead(name.into()))
    }

    pub fn head(&self, name: &str) -> Result<&Head, ModelError> {
        self.head_index(name).map(|i| &self.heads[i])
    }

    pub fn task_index(&self, task: &str) -> Result<usize, ModelError> {
        self.bindings
            .iter()
            .position(|b| b.task == task)
            .ok_or_else(|| ModelError::UnknownTask(task.into()))
    }

    pub fn head_for_task(&self, task: &str) -> Result<&Head, ModelError> {
        let b = &self.bindings[self.task_index(task)?];
        self.head(&b.head)
    }

    /// Task-token row for `task` under the configured granularity.
    pub fn task_token(&self, task: &str) -> Result<Option<usize>, ModelError> {
        Ok(match self.config.task_tokens {
            TaskTokenMode::PerDataset => Some(self.task_index(task)?),
            TaskTokenMode::PerHead => Some(self.head_index(&self.head_for_task(task)?.name)?),
            TaskTokenMode::None => None,
        })
    }

    /// Tensor ids touched by a step on `task`: the trunk and the task's head.
    pub fn tensors_for_task(&self, task: &str) -> Result<Vec<TensorId>, ModelError> {
        let hi = self.head_index(&self.head_for_task(task)?.name)?;
        Ok((0..self.owners.len())
            .filter(|&id| {
                matches!(self.owners[id], Owner::Trunk) || self.owners[id] == Owner::Head(hi)
            })
            .collect())
    }

    pub fn grads(&self) -> Grads {
        Grads::zeros_like(&self.store)
    }

    /// Per-tensor learning-rate multiplier: 1 on the trunk, `head_mult` on heads.
    pub fn lr_multipliers(&self, head_mult: f64) -> Vec<f64> {
        self.owners
            .iter()
            .map(|o| match o {
                Owner::Trunk => 1.0,
                Owner::Head(_) => head_mult,
            })
            .collect()
    }
}
