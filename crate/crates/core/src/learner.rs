//! Turns benchmark instances into losses, gradient steps and evaluations
//! against a [`ModelParams`].

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::bench::{
    accuracy, metric_mt_vgc, metric_recall_at_k, metric_vqa_soft_accuracy, word, BenchError,
    Family, PretrainInstance, QrPair, Scene, Target, TaskInstance, TaskKind, TaskMetric, World,
    ANNOTATORS,
};
use crate::model::losses::{argmax, bce_with_logits, softmax_ce};
use crate::model::{
    encode_on, iou, referring_scores, retrieval_score, sgd_step, verification_logits, vqa_logits,
    Grads, HeadKind, MaskPlan, ModelError, ModelParams, NodeId, PretrainOutputs, Region, Tape,
    TokenSequence,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("target does not fit task `{0}`")]
    WrongTarget(TaskKind),
    #[error("empty batch")]
    EmptyBatch,
}

/// A task instance with its model inputs built once.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub kind: TaskKind,
    pub seqs: Vec<TokenSequence>,
    pub target: Target,
    pub observed: Target,
}

impl Example {
    /// Builds inputs for `inst` as seen by task `task` of `params` (which
    /// decides the task token).
    pub fn new(
        params: &ModelParams,
        task: &str,
        world: &World,
        inst: &TaskInstance,
    ) -> Result<Self, LearnError> {
        let token = params.task_token(task)?;
        let mut seqs = inst.sequences(world);
        for s in &mut seqs {
            s.task_token = token;
        }
        Ok(Example {
            kind: inst.task,
            seqs,
            target: inst.target.clone(),
            observed: inst.observed.clone(),
        })
    }
}

/// Model output for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Answer(usize),
    /// Retrieval scores per candidate.
    Scores(Vec<f64>),
    Region(usize),
    Class(usize),
}

fn soft_targets(annotators: &[usize], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &a in annotators {
        if a < n {
            y[a] += 1.0;
        }
    }
    y.iter()
        .map(|c| libm::fmin(c / ANNOTATORS as f64, 1.0))
        .collect()
}

/// Records the forward pass for `ex` and returns the output node.
fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    task: &str,
    ex: &Example,
) -> Result<NodeId, LearnError> {
    let head = params.head_for_task(task)?;
    let first = ex.seqs.first().ok_or(LearnError::WrongTarget(ex.kind))?;
    Ok(match ex.kind.family() {
        Family::Vqa => {
            let n = encode_on(tape, params, first, false)?;
            vqa_logits(tape, params, head, n.img, n.cls)?
        }
        Family::Retrieval => {
            let mut scores = Vec::with_capacity(ex.seqs.len());
            for s in &ex.seqs {
                let n = encode_on(tape, params, s, false)?;
                scores.push(retrieval_score(tape, params, head, n.img, n.cls)?);
            }
            tape.concat(&scores)
        }
        Family::Referring => {
            let n = encode_on(tape, params, first, false)?;
            referring_scores(tape, params, head, &n.regions)?
        }
        Family::PairVerification | Family::Entailment => {
            let mut pairs = Vec::with_capacity(ex.seqs.len());
            for s in &ex.seqs {
                let n = encode_on(tape, params, s, false)?;
                pairs.push((n.img, n.cls));
            }
            verification_logits(tape, params, head, &pairs)?
        }
    })
}

fn loss_on(kind: TaskKind, out: &[f64], label: &Target) -> Result<(f64, Vec<f64>), LearnError> {
    match (kind.family(), label) {
        (Family::Vqa, Target::Answer { annotators, .. }) => {
            Ok(bce_with_logits(out, &soft_targets(annotators, out.len()))?)
        }
        (Family::Retrieval, Target::Candidate { index })
        | (Family::Referring, Target::Region { index })
        | (Family::PairVerification | Family::Entailment, Target::Class { class: index }) => {
            Ok(softmax_ce(out, *index)?)
        }
        _ => Err(LearnError::WrongTarget(kind)),
    }
}

/// Training loss of one example against its observed label.
pub fn example_loss(params: &ModelParams, task: &str, ex: &Example) -> Result<f64, LearnError> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, task, ex)?;
    Ok(loss_on(ex.kind, tape.value(out), &ex.observed)?.0)
}

/// Mean loss over `batch` and its gradient, scaled by `scale`.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    task: &str,
    batch: &[&Example],
    scale: f64,
) -> Result<(f64, Grads), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut grads = params.grads();
    let mut total = 0.0;
    let k = batch.len() as f64;
    for ex in batch {
        let mut tape = Tape::new();
        let out = forward(&mut tape, params, task, ex)?;
        let (loss, mut g) = loss_on(ex.kind, tape.value(out), &ex.observed)?;
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss);
        }
        total += loss;
        g.iter_mut().for_each(|v| *v *= scale / k);
        tape.backward(&params.store, &[(out, g)], &mut grads)?;
    }
    Ok((total / k, grads))
}

/// One plain gradient step on `loss_scale * mean loss` with learning rate
/// `lr`; head tensors move `head_lr_mult` times faster. Returns the unscaled
/// mean loss.
pub fn train_step(
    params: &mut ModelParams,
    task: &str,
    batch: &[&Example],
    lr: f64,
    loss_scale: f64,
    head_lr_mult: f64,
) -> Result<f64, LearnError> {
    let (loss, grads) = batch_loss_and_grad(params, task, batch, loss_scale)?;
    if !grads.all_finite() {
        return Err(LearnError::NonFiniteLoss);
    }
    if head_lr_mult == 1.0 {
        sgd_step(&mut params.store, &grads, lr, None);
    } else {
        let mult = params.lr_multipliers(head_lr_mult);
        sgd_step(&mut params.store, &grads, lr, Some(&mult));
    }
    Ok(loss)
}

pub fn predict(params: &ModelParams, task: &str, ex: &Example) -> Result<Prediction, LearnError> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, task, ex)?;
    let v = tape.value(out);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite.into());
    }
    Ok(match ex.kind.family() {
        Family::Vqa => Prediction::Answer(argmax(v)),
        Family::Retrieval => Prediction::Scores(v.to_vec()),
        Family::Referring => Prediction::Region(argmax(v)),
        Family::PairVerification | Family::Entailment => Prediction::Class(argmax(v)),
    })
}

/// Localisation counts as correct when the predicted box has IoU > 0.5 with
/// the target box.
pub const LOCALISATION_IOU: f64 = 0.5;

fn located(boxes: &[Region], predicted: usize, target: usize) -> bool {
    match (boxes.get(predicted), boxes.get(target)) {
        (Some(p), Some(t)) => iou(p, t) > LOCALISATION_IOU,
        _ => false,
    }
}

/// Headline metric in [0,1] for `task` over `examples`, scored against the
/// true targets.
pub fn evaluate_task(
    params: &ModelParams,
    task: &str,
    examples: &[Example],
) -> Result<TaskMetric, LearnError> {
    let kind = examples.first().ok_or(BenchError::Empty)?.kind;
    let preds = examples
        .iter()
        .map(|e| predict(params, task, e))
        .collect::<Result<Vec<_>, _>>()?;
    let value = match kind.family() {
        Family::Vqa => {
            let HeadKind::VocabVqa { answers } = params.head_for_task(task)?.kind else {
                return Err(LearnError::WrongTarget(kind));
            };
            let mut p = Vec::with_capacity(preds.len());
            let mut anns = Vec::with_capacity(preds.len());
            for (pred, ex) in preds.iter().zip(examples) {
                let (Prediction::Answer(a), Target::Answer { annotators, .. }) = (pred, &ex.target)
                else {
                    return Err(LearnError::WrongTarget(kind));
                };
                p.push(*a);
                anns.push(annotators.clone());
            }
            metric_vqa_soft_accuracy(&p, &anns, answers)?
        }
        Family::Retrieval => {
            let mut rows = Vec::with_capacity(preds.len());
            for p in &preds {
                let Prediction::Scores(s) = p else {
                    return Err(LearnError::WrongTarget(kind));
                };
                rows.push(s.clone());
            }
            let pos: Vec<usize> = examples.iter().map(|e| e.target.index()).collect();
            metric_recall_at_k(&rows, &pos, 1)?
        }
        Family::Referring => {
            let mut hits = 0usize;
            for (p, ex) in preds.iter().zip(examples) {
                let Prediction::Region(r) = p else {
                    return Err(LearnError::WrongTarget(kind));
                };
                if located(&ex.seqs[0].boxes(), *r, ex.target.index()) {
                    hits += 1;
                }
            }
            hits as f64 / examples.len() as f64
        }
        Family::PairVerification | Family::Entailment => {
            let p: Vec<usize> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Class(c) => Ok(*c),
                    _ => Err(LearnError::WrongTarget(kind)),
                })
                .collect::<Result<_, _>>()?;
            let t: Vec<usize> = examples.iter().map(|e| e.target.index()).collect();
            accuracy(&p, &t)?
        }
    };
    Ok(TaskMetric {
        task: task.into(),
        group: kind.group(),
        metric: kind.metric_name().into(),
        value,
    })
}

/// Masked-modelling example: masked words become the mask word and masked
/// region features are zeroed before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    pub seq: TokenSequence,
    pub region_classes: Vec<usize>,
    pub aligned: bool,
}

impl PretrainExample {
    pub fn new(
        params: &ModelParams,
        task: &str,
        world: &World,
        inst: &PretrainInstance,
    ) -> Result<Self, LearnError> {
        Ok(PretrainExample {
            seq: TokenSequence {
                regions: world.regions(&inst.scene),
                task_token: params.task_token(task)?,
                words: inst.words.clone(),
            },
            region_classes: inst.scene.objects.iter().map(|o| o.class()).collect(),
            aligned: inst.aligned,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLoss {
    /// Mean cross-entropy over contributing masked tokens (0 if none).
    pub masked: f64,
    /// Mean alignment binary cross-entropy over the batch.
    pub alignment: f64,
}

impl PretrainLoss {
    pub fn total(&self) -> f64 {
        self.masked + self.alignment
    }
}

fn check_plan(ex: &PretrainExample, plan: &MaskPlan) -> Result<(), ModelError> {
    if let Some(&j) = plan.masked_words.iter().find(|&&j| j >= ex.seq.words.len()) {
        return Err(ModelError::MaskOutOfRange(j));
    }
    if let Some(&i) = plan
        .masked_regions
        .iter()
        .find(|&&i| i >= ex.seq.regions.len())
    {
        return Err(ModelError::MaskOutOfRange(i));
    }
    Ok(())
}

/// Masked word / region-class reconstruction plus alignment prediction.
/// With `gate_on_negatives`, misaligned examples add nothing to the masked
/// term. Gradients of `scale * total` accumulate into `grads` when given.
pub fn masked_modelling_loss(
    params: &ModelParams,
    task: &str,
    batch: &[PretrainExample],
    plans: &[MaskPlan],
    gate_on_negatives: bool,
    scale: f64,
    mut grads: Option<&mut Grads>,
) -> Result<PretrainLoss, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    if batch.len() != plans.len() {
        return Err(ModelError::DimensionMismatch {
            expected: batch.len(),
            got: plans.len(),
        }
        .into());
    }
    let head = params.head_for_task(task)?;
    let contributes = |ex: &PretrainExample| ex.aligned || !gate_on_negatives;
    let mut n_masked = 0usize;
    for (ex, plan) in batch.iter().zip(plans) {
        check_plan(ex, plan)?;
        if contributes(ex) {
            n_masked += plan.masked_words.len() + plan.masked_regions.len();
        }
    }
    let n = batch.len() as f64;
    let mut masked_sum = 0.0;
    let mut align_sum = 0.0;
    for (ex, plan) in batch.iter().zip(plans) {
        let mut seq = ex.seq.clone();
        for &j in &plan.masked_words {
            seq.words[j] = word::MASK;
        }
        for &i in &plan.masked_regions {
            seq.regions[i].features.iter_mut().for_each(|f| *f = 0.0);
        }
        let mut tape = Tape::new();
        let enc = encode_on(&mut tape, params, &seq, true)?;
        let out = PretrainOutputs::build(
            &mut tape,
            params,
            head,
            enc.img,
            enc.cls,
            &enc.words,
            &enc.regions,
        )?;
        let mut seeds: Vec<(NodeId, Vec<f64>)> = Vec::new();

        let (al, mut ag) = bce_with_logits(
            tape.value(out.align_logit),
            &[if ex.aligned { 1.0 } else { 0.0 }],
        )?;
        align_sum += al;
        ag.iter_mut().for_each(|g| *g *= scale / n);
        seeds.push((out.align_logit, ag));

        if contributes(ex) && n_masked > 0 {
            let w = scale / n_masked as f64;
            for &j in &plan.masked_words {
                let (l, mut g) = softmax_ce(tape.value(out.word_logits[j]), ex.seq.words[j])?;
                masked_sum += l;
                g.iter_mut().for_each(|v| *v *= w);
                seeds.push((out.word_logits[j], g));
            }
            for &i in &plan.masked_regions {
                let target = *ex
                    .region_classes
                    .get(i)
                    .ok_or(ModelError::MaskOutOfRange(i))?;
                let (l, mut g) = softmax_ce(tape.value(out.region_logits[i]), target)?;
                masked_sum += l;
                g.iter_mut().for_each(|v| *v *= w);
                seeds.push((out.region_logits[i], g));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            tape.backward(&params.store, &seeds, g)?;
        }
    }
    let masked = if n_masked == 0 {
        0.0
    } else {
        masked_sum / n_masked as f64
    };
    let loss = PretrainLoss {
        masked,
        alignment: align_sum / n,
    };
    if !loss.total().is_finite() {
        return Err(LearnError::NonFiniteLoss);
    }
    Ok(loss)
}

/// Question/referring-expression consistency over `scenes`: every attribute
/// question is paired with every referring phrase of the same scene, weighted
/// by the number of attribute words they share.
pub fn mt_vgc_probe(
    params: &ModelParams,
    world: &World,
    vqa_task: &str,
    ref_task: &str,
    scenes: &[Scene],
) -> Result<f64, LearnError> {
    let mut pairs = Vec::new();
    for scene in scenes {
        let regions = world.regions(scene);
        let boxes: Vec<Region> = regions.iter().map(|r| r.region).collect();
        let mut questions = Vec::new();
        for o in &scene.objects {
            if scene.count_shape(o.shape) == 1 {
                questions.push(vec![
                    word::WHAT,
                    word::COLOR,
                    word::IS,
                    word::THE,
                    word::shape(o.shape),
                ]);
            }
            if scene.count_color(o.color) == 1 {
                questions.push(vec![
                    word::WHAT,
                    word::SHAPE,
                    word::IS,
                    word::THE,
                    word::color(o.color),
                    word::ONE,
                ]);
            }
        }
        let q_results = questions
            .iter()
            .map(|q| {
                let truth =
                    crate::bench::rule_target(TaskKind::Vqa, core::slice::from_ref(scene), q)
                        .ok_or(LearnError::WrongTarget(TaskKind::Vqa))?;
                let ex = Example {
                    kind: TaskKind::Vqa,
                    seqs: vec![TokenSequence {
                        regions: regions.clone(),
                        task_token: params.task_token(vqa_task)?,
                        words: q.clone(),
                    }],
                    target: Target::Answer {
                        answer: truth,
                        annotators: vec![truth; ANNOTATORS],
                    },
                    observed: Target::Answer {
                        answer: truth,
                        annotators: vec![truth; ANNOTATORS],
                    },
                };
                Ok(predict(params, vqa_task, &ex)? == Prediction::Answer(truth))
            })
            .collect::<Result<Vec<bool>, LearnError>>()?;
        for (target, o) in scene.objects.iter().enumerate() {
            let phrase = vec![word::color(o.color), word::shape(o.shape)];
            let ex = Example {
                kind: TaskKind::RefCoco,
                seqs: vec![TokenSequence {
                    regions: regions.clone(),
                    task_token: params.task_token(ref_task)?,
                    words: phrase.clone(),
                }],
                target: Target::Region { index: target },
                observed: Target::Region { index: target },
            };
            let Prediction::Region(r) = predict(params, ref_task, &ex)? else {
                return Err(LearnError::WrongTarget(TaskKind::RefCoco));
            };
            let r_correct = located(&boxes, r, target);
            for (q, &q_correct) in questions.iter().zip(&q_results) {
                let d = q
                    .iter()
                    .filter(|w| word::is_attribute(**w) && phrase.contains(w))
                    .count() as u32;
                pairs.push(QrPair {
                    d,
                    q_correct,
                    r_correct,
                });
            }
        }
    }
    Ok(metric_mt_vgc(&pairs)?)
}
