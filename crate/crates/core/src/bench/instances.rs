//! Template instances for every task family, derived from latent scenes.
//!
//! Each family has a *rule* that maps stored scenes plus words to the target
//! ([`rule_target`]); generators pick words and scenes, then ask the rule for
//! the target, so stored targets are always reproducible from the scenes.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::model::TokenSequence;
use crate::rng::{child_rng, derive_seed, label_of, Rng};
use crate::sched::TaskGroup;

use super::scene::{word, Object, Scene, World, GRID, N_COLORS, N_SHAPES};
use super::tasks::{Family, TaskKind, ATTRIBUTE_ANSWERS, CELL_ANSWERS, RETRIEVAL_CANDIDATES};
use super::BenchError;

pub const ANNOTATORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum Target {
    /// Vocabulary answer with the simulated annotators' answers.
    Answer {
        answer: usize,
        annotators: Vec<usize>,
    },
    /// Index of the matching image among the candidates.
    Candidate {
        index: usize,
    },
    /// Index of the referred region.
    Region {
        index: usize,
    },
    Class {
        class: usize,
    },
}

impl Target {
    /// The single index the target points at.
    pub fn index(&self) -> usize {
        match self {
            Target::Answer { answer, .. } => *answer,
            Target::Candidate { index } | Target::Region { index } => *index,
            Target::Class { class } => *class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskInstance {
    pub task: TaskKind,
    pub group: TaskGroup,
    /// Image scenes: one for most tasks, the pair for pair verification,
    /// the candidates (in candidate order) for retrieval.
    pub scenes: Vec<Scene>,
    pub words: Vec<usize>,
    /// Ground truth under the generating rule.
    pub target: Target,
    /// Label used for training; differs from `target` under label noise.
    pub observed: Target,
}

impl TaskInstance {
    pub fn scene_seed(&self) -> u64 {
        self.scenes[0].seed
    }

    /// Model inputs in head order (task token left unset).
    pub fn sequences(&self, world: &World) -> Vec<TokenSequence> {
        self.scenes
            .iter()
            .map(|s| TokenSequence {
                regions: world.regions(s),
                task_token: None,
                words: self.words.clone(),
            })
            .collect()
    }

    /// Size of the label space the target indexes into.
    pub fn label_space(&self) -> usize {
        match self.task.family() {
            Family::Vqa if self.task == TaskKind::Gqa => CELL_ANSWERS,
            Family::Vqa => ATTRIBUTE_ANSWERS,
            Family::Retrieval => RETRIEVAL_CANDIDATES,
            Family::Referring => self.scenes[0].objects.len(),
            Family::PairVerification => 2,
            Family::Entailment => 3,
        }
    }
}

fn attr_answer_color(c: u8) -> usize {
    c as usize
}

fn attr_answer_shape(s: u8) -> usize {
    N_COLORS + s as usize
}

fn color_of(w: usize) -> Option<u8> {
    (word::COLOR0..word::COLOR0 + N_COLORS)
        .contains(&w)
        .then(|| (w - word::COLOR0) as u8)
}

fn shape_of(w: usize) -> Option<u8> {
    (word::SHAPE0..word::SHAPE0 + N_SHAPES)
        .contains(&w)
        .then(|| (w - word::SHAPE0) as u8)
}

fn row_of(w: usize) -> Option<u8> {
    (word::ROW0..word::ROW0 + GRID)
        .contains(&w)
        .then(|| (w - word::ROW0) as u8)
}

fn col_of(w: usize) -> Option<u8> {
    (word::COL0..word::COL0 + GRID)
        .contains(&w)
        .then(|| (w - word::COL0) as u8)
}

/// (color, shape) pairs mentioned in order; a pair is a color word directly
/// followed by a shape word.
pub fn mentioned_pairs(words: &[usize]) -> Vec<(u8, u8)> {
    words
        .windows(2)
        .filter_map(|w| Some((color_of(w[0])?, shape_of(w[1])?)))
        .collect()
}

fn mentioned_cell(words: &[usize]) -> Option<u8> {
    let r = words.iter().find_map(|&w| row_of(w))?;
    let c = words.iter().find_map(|&w| col_of(w))?;
    Some(r * GRID as u8 + c)
}

/// Applies the generating rule of `task` to stored scenes and words.
/// Returns the target index, or `None` when the rule has no unique answer.
pub fn rule_target(task: TaskKind, scenes: &[Scene], words: &[usize]) -> Option<usize> {
    let first = scenes.first()?;
    match task {
        TaskKind::Vqa => {
            if words.get(1) == Some(&word::COLOR) {
                let s = words.iter().find_map(|&w| shape_of(w))?;
                let mut it = first.objects.iter().filter(|o| o.shape == s);
                let o = it.next()?;
                it.next().is_none().then(|| attr_answer_color(o.color))
            } else {
                let c = words.iter().find_map(|&w| color_of(w))?;
                let mut it = first.objects.iter().filter(|o| o.color == c);
                let o = it.next()?;
                it.next().is_none().then(|| attr_answer_shape(o.shape))
            }
        }
        TaskKind::VgQa => {
            let o = first.objects[first.at_cell(mentioned_cell(words)?)?];
            Some(if words.get(1) == Some(&word::COLOR) {
                attr_answer_color(o.color)
            } else {
                attr_answer_shape(o.shape)
            })
        }
        TaskKind::Gqa => {
            let (c, s) = *mentioned_pairs(words).first()?;
            Some(first.objects[first.find(c, s)?].cell as usize)
        }
        TaskKind::Coco => {
            let pairs = mentioned_pairs(words);
            unique(
                scenes
                    .iter()
                    .map(|sc| pairs.iter().all(|&(c, s)| sc.has(c, s))),
            )
        }
        TaskKind::Flickr => {
            let (c, s) = *mentioned_pairs(words).first()?;
            let cell = mentioned_cell(words)?;
            unique(
                scenes
                    .iter()
                    .map(|sc| sc.find(c, s).is_some_and(|i| sc.objects[i].cell == cell)),
            )
        }
        TaskKind::RefCoco
        | TaskKind::RefCocoPlus
        | TaskKind::RefCocoG
        | TaskKind::Visual7w
        | TaskKind::GuessWhat => {
            let (c, s) = *mentioned_pairs(words).first()?;
            first.find(c, s)
        }
        TaskKind::Nlvr => {
            let (c, s) = *mentioned_pairs(words).first()?;
            let both = scenes.len() == 2 && scenes.iter().all(|sc| sc.has(c, s));
            let negated = words.first() == Some(&word::NOT);
            Some(usize::from(both != negated))
        }
        TaskKind::SnliVe => {
            let (c, s) = *mentioned_pairs(words).first()?;
            Some(if first.has(c, s) {
                0
            } else if first.count_shape(s) > 0 {
                1
            } else {
                2
            })
        }
    }
}

fn unique(hits: impl Iterator<Item = bool>) -> Option<usize> {
    let mut found = None;
    for (i, h) in hits.enumerate() {
        if h {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

/// Copy of `scene` with object `i` recolored or reshaped to a pair absent
/// from the scene.
fn perturb_attribute(scene: &Scene, i: usize, seed: u64, rng: &mut Rng) -> Option<Scene> {
    let o = scene.objects[i];
    let mut options: Vec<Object> = Vec::new();
    for c in 0..N_COLORS as u8 {
        if !scene.has(c, o.shape) {
            options.push(Object { color: c, ..o });
        }
    }
    for s in 0..N_SHAPES as u8 {
        if !scene.has(o.color, s) {
            options.push(Object { shape: s, ..o });
        }
    }
    let pick = *options.choose(rng)?;
    let mut out = scene.clone();
    out.objects[i] = pick;
    out.seed = seed;
    Some(out)
}

fn move_object(scene: &Scene, i: usize, seed: u64, rng: &mut Rng) -> Option<Scene> {
    let free: Vec<u8> = (0..(GRID * GRID) as u8)
        .filter(|&c| scene.at_cell(c).is_none())
        .collect();
    let cell = *free.choose(rng)?;
    let mut out = scene.clone();
    out.objects[i].cell = cell;
    out.seed = seed;
    Some(out)
}

fn annotators(answer: usize, same_type: &[usize], accuracy: f64, rng: &mut Rng) -> Vec<usize> {
    (0..ANNOTATORS)
        .map(|_| {
            if rng.random::<f64>() < accuracy || same_type.len() < 2 {
                answer
            } else {
                let others: Vec<usize> =
                    same_type.iter().copied().filter(|&a| a != answer).collect();
                *others.choose(rng).unwrap_or(&answer)
            }
        })
        .collect()
}

/// Generation settings shared by all families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceConfig {
    /// Probability that a simulated annotator gives the true answer.
    pub annotator_accuracy: f64,
    /// Probability that a statement is negated (pair verification).
    pub negation_rate: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            annotator_accuracy: 0.9,
            negation_rate: 0.3,
        }
    }
}

/// Derives `count` instances of `task` from one scene. Instance `k` draws
/// from its own stream, so the output is a pure function of the inputs.
pub fn derive_instances(
    scene: &Scene,
    task: TaskKind,
    count: usize,
    cfg: &InstanceConfig,
) -> Result<Vec<TaskInstance>, BenchError> {
    (0..count)
        .map(|k| {
            let mut rng = child_rng(derive_seed(scene.seed, label_of(task.as_str())), k as u64);
            derive_one(scene, task, cfg, &mut rng).ok_or(BenchError::SceneTooSmall {
                task,
                seed: scene.seed,
            })
        })
        .collect()
}

fn derive_one(
    scene: &Scene,
    task: TaskKind,
    cfg: &InstanceConfig,
    rng: &mut Rng,
) -> Option<TaskInstance> {
    if scene.objects.is_empty() {
        return None;
    }
    let (scenes, words) = match task.family() {
        Family::Vqa => (vec![scene.clone()], vqa_words(scene, task, rng)?),
        Family::Retrieval => retrieval(scene, task, rng)?,
        Family::Referring => (vec![scene.clone()], referring_words(scene, task, rng)),
        Family::PairVerification => pair_statement(scene, cfg, rng)?,
        Family::Entailment => (vec![scene.clone()], entailment_words(scene, rng)?),
    };
    let index = rule_target(task, &scenes, &words)?;
    let target = match task.family() {
        Family::Vqa => {
            let same_type: Vec<usize> = if task == TaskKind::Gqa {
                (0..CELL_ANSWERS).collect()
            } else if index < N_COLORS {
                (0..N_COLORS).collect()
            } else {
                (N_COLORS..ATTRIBUTE_ANSWERS).collect()
            };
            Target::Answer {
                answer: index,
                annotators: annotators(index, &same_type, cfg.annotator_accuracy, rng),
            }
        }
        Family::Retrieval => Target::Candidate { index },
        Family::Referring => Target::Region { index },
        Family::PairVerification | Family::Entailment => Target::Class { class: index },
    };
    Some(TaskInstance {
        task,
        group: task.group(),
        scenes,
        words,
        observed: target.clone(),
        target,
    })
}

fn vqa_words(scene: &Scene, task: TaskKind, rng: &mut Rng) -> Option<Vec<usize>> {
    match task {
        TaskKind::Vqa => {
            let mut options: Vec<Vec<usize>> = Vec::new();
            for o in &scene.objects {
                if scene.count_shape(o.shape) == 1 {
                    options.push(vec![
                        word::WHAT,
                        word::COLOR,
                        word::IS,
                        word::THE,
                        word::shape(o.shape),
                    ]);
                }
                if scene.count_color(o.color) == 1 {
                    options.push(vec![
                        word::WHAT,
                        word::SHAPE,
                        word::IS,
                        word::THE,
                        word::color(o.color),
                        word::ONE,
                    ]);
                }
            }
            options.choose(rng).cloned()
        }
        TaskKind::VgQa => {
            let o = scene.objects.choose(rng)?;
            let attr = if rng.random::<bool>() {
                word::COLOR
            } else {
                word::SHAPE
            };
            Some(vec![
                word::WHAT,
                attr,
                word::IS,
                word::AT,
                word::THE,
                word::row(o.row()),
                word::col(o.col()),
            ])
        }
        _ => {
            let o = scene.objects.choose(rng)?;
            Some(vec![
                word::WHERE,
                word::IS,
                word::THE,
                word::color(o.color),
                word::shape(o.shape),
            ])
        }
    }
}

fn retrieval(scene: &Scene, task: TaskKind, rng: &mut Rng) -> Option<(Vec<Scene>, Vec<usize>)> {
    let focus = rng.random_range(0..scene.objects.len());
    let words = if task == TaskKind::Coco {
        let mut w = Vec::new();
        for (i, o) in scene.objects.iter().enumerate() {
            if i > 0 {
                w.push(word::AND);
            }
            w.extend([word::color(o.color), word::shape(o.shape)]);
        }
        w
    } else {
        let o = scene.objects[focus];
        vec![
            word::A,
            word::color(o.color),
            word::shape(o.shape),
            word::AT,
            word::THE,
            word::row(o.row()),
            word::col(o.col()),
        ]
    };
    let mut negatives: Vec<Scene> = Vec::new();
    let mut attempt = 0u64;
    while negatives.len() < RETRIEVAL_CANDIDATES - 1 {
        attempt += 1;
        if attempt > 64 {
            return None;
        }
        let seed = derive_seed(scene.seed, 0xCA4D_0000 + attempt);
        let i = if task == TaskKind::Coco {
            rng.random_range(0..scene.objects.len())
        } else {
            focus
        };
        let neg = if task == TaskKind::Flickr && rng.random::<bool>() {
            move_object(scene, i, seed, rng)?
        } else {
            perturb_attribute(scene, i, seed, rng)?
        };
        if negatives.iter().all(|n| n.objects != neg.objects) {
            negatives.push(neg);
        }
    }
    let pos = rng.random_range(0..RETRIEVAL_CANDIDATES);
    negatives.insert(pos, scene.clone());
    Some((negatives, words))
}

fn referring_words(scene: &Scene, task: TaskKind, rng: &mut Rng) -> Vec<usize> {
    let o = scene.objects[rng.random_range(0..scene.objects.len())];
    let (c, s) = (word::color(o.color), word::shape(o.shape));
    match task {
        TaskKind::RefCoco => vec![c, s],
        TaskKind::RefCocoPlus => vec![word::THE, c, s, word::OBJECT],
        TaskKind::RefCocoG => vec![
            word::THE,
            c,
            s,
            word::AT,
            word::THE,
            word::row(o.row()),
            word::col(o.col()),
        ],
        TaskKind::Visual7w => vec![word::WHICH, word::IS, word::THE, c, s],
        _ => vec![word::IS, word::IT, word::THE, c, s],
    }
}

/// Scene pair plus "[not] both images <color> <shape>".
fn pair_statement(
    scene: &Scene,
    cfg: &InstanceConfig,
    rng: &mut Rng,
) -> Option<(Vec<Scene>, Vec<usize>)> {
    let other_seed = derive_seed(scene.seed, 0x9A12);
    let mut other = super::scene::gen_scene(
        other_seed,
        &super::scene::SceneConfig {
            min_objects: scene.objects.len().max(1),
            max_objects: scene.objects.len().max(1),
        },
    );
    let want_true = rng.random::<bool>();
    let (c, s) = if want_true || rng.random::<bool>() {
        let o = scene.objects.choose(rng)?;
        (o.color, o.shape)
    } else {
        let absent: Vec<(u8, u8)> = (0..N_COLORS as u8)
            .flat_map(|c| (0..N_SHAPES as u8).map(move |s| (c, s)))
            .filter(|&(c, s)| !scene.has(c, s))
            .collect();
        *absent.choose(rng)?
    };
    if want_true && !other.has(c, s) {
        let i = rng.random_range(0..other.objects.len());
        other.objects[i].color = c;
        other.objects[i].shape = s;
    } else if !want_true && scene.has(c, s) {
        if let Some(i) = other.find(c, s) {
            other = perturb_attribute(&other, i, other_seed, rng)?;
        }
    }
    let mut words = vec![word::BOTH, word::IMAGES, word::color(c), word::shape(s)];
    if rng.random::<f64>() < cfg.negation_rate {
        words.insert(0, word::NOT);
    }
    let mut scenes = vec![scene.clone(), other];
    if rng.random::<bool>() {
        scenes.swap(0, 1);
    }
    Some((scenes, words))
}

fn entailment_words(scene: &Scene, rng: &mut Rng) -> Option<Vec<usize>> {
    let all = (0..N_COLORS as u8).flat_map(|c| (0..N_SHAPES as u8).map(move |s| (c, s)));
    let mut by_class: [Vec<(u8, u8)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (c, s) in all {
        let class = if scene.has(c, s) {
            0
        } else if scene.count_shape(s) > 0 {
            1
        } else {
            2
        };
        by_class[class].push((c, s));
    }
    let start = rng.random_range(0..3);
    let (c, s) = (0..3)
        .map(|k| &by_class[(start + k) % 3])
        .find(|v| !v.is_empty())?
        .choose(rng)
        .copied()?;
    Some(vec![
        word::THERE,
        word::IS,
        word::A,
        word::color(c),
        word::shape(s),
    ])
}

/// Replaces the observed label with a different random label with
/// probability `rate`. Answer targets keep their annotators.
pub fn corrupt_label(inst: &mut TaskInstance, rate: f64, rng: &mut Rng) {
    if rate <= 0.0 || rng.random::<f64>() >= rate {
        return;
    }
    let space = inst.label_space();
    if space < 2 {
        return;
    }
    let truth = inst.target.index();
    let mut others: Vec<usize> = (0..space).filter(|&i| i != truth).collect();
    others.shuffle(rng);
    let wrong = others[0];
    inst.observed = match &inst.target {
        Target::Answer { .. } => Target::Answer {
            answer: wrong,
            annotators: vec![wrong; ANNOTATORS],
        },
        Target::Candidate { .. } => Target::Candidate { index: wrong },
        Target::Region { .. } => Target::Region { index: wrong },
        Target::Class { .. } => Target::Class { class: wrong },
    };
}
