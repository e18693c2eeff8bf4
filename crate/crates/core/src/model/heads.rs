//! Task heads. Tape builders take encoder nodes; the `head_*` functions are
//! value-level conveniences over raw embeddings.

use alloc::vec::Vec;

use super::losses::{argmax, sigmoid, softmax};
use super::tape::{NodeId, Tape};
use super::{Head, HeadKind, ModelError, ModelParams};

fn expect_kind(head: &Head, ok: bool, expected: &'static str) -> Result<(), ModelError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::WrongHeadKind {
            head: head.name.clone(),
            expected,
        })
    }
}

/// Answer logits `MLP(h_IMG ⊙ h_CLS)`; probabilities are their sigmoids.
pub fn vqa_logits(
    tape: &mut Tape,
    params: &ModelParams,
    head: &Head,
    img: NodeId,
    cls: NodeId,
) -> Result<NodeId, ModelError> {
    expect_kind(
        head,
        matches!(head.kind, HeadKind::VocabVqa { .. }),
        "vocab_vqa",
    )?;
    let p = &params.store;
    let t = &head.tensors;
    let x = tape.mul(img, cls)?;
    let h = tape.linear(p, t[0], Some(t[1]), x)?;
    let h = tape.gelu(h);
    tape.linear(p, t[2], Some(t[3]), h)
}

/// Alignment score `W_i (h_IMG ⊙ h_CLS)` as a length-1 node.
pub fn retrieval_score(
    tape: &mut Tape,
    params: &ModelParams,
    head: &Head,
    img: NodeId,
    cls: NodeId,
) -> Result<NodeId, ModelError> {
    expect_kind(head, head.kind == HeadKind::Retrieval, "retrieval")?;
    let x = tape.mul(img, cls)?;
    tape.linear(&params.store, head.tensors[0], None, x)
}

/// One score `W_r h_v_i` per region.
pub fn referring_scores(
    tape: &mut Tape,
    params: &ModelParams,
    head: &Head,
    regions: &[NodeId],
) -> Result<NodeId, ModelError> {
    expect_kind(head, head.kind == HeadKind::Referring, "referring")?;
    if regions.is_empty() {
        return Err(ModelError::EmptyRegions);
    }
    let scores = regions
        .iter()
        .map(|&r| tape.linear(&params.store, head.tensors[0], None, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tape.concat(&scores))
}

/// Class logits `MLP([h_IMG^k ⊙ h_CLS^k]_k)` over one or two pairs.
pub fn verification_logits(
    tape: &mut Tape,
    params: &ModelParams,
    head: &Head,
    pairs: &[(NodeId, NodeId)],
) -> Result<NodeId, ModelError> {
    let HeadKind::Verification { pairs: want, .. } = head.kind else {
        return Err(ModelError::WrongHeadKind {
            head: head.name.clone(),
            expected: "verification",
        });
    };
    if pairs.len() != want {
        return Err(ModelError::WrongPairCount {
            head: head.name.clone(),
            expected: want,
            got: pairs.len(),
        });
    }
    let p = &params.store;
    let t = &head.tensors;
    let parts = pairs
        .iter()
        .map(|&(i, c)| tape.mul(i, c))
        .collect::<Result<Vec<_>, _>>()?;
    let x = tape.concat(&parts);
    let h = tape.linear(p, t[0], Some(t[1]), x)?;
    let h = tape.gelu(h);
    tape.linear(p, t[2], Some(t[3]), h)
}

/// Pretraining outputs: word logits per word node, region-class logits per
/// region node and the alignment logit.
pub struct PretrainOutputs {
    pub word_logits: Vec<NodeId>,
    pub region_logits: Vec<NodeId>,
    pub align_logit: NodeId,
}

impl PretrainOutputs {
    pub fn build(
        tape: &mut Tape,
        params: &ModelParams,
        head: &Head,
        img: NodeId,
        cls: NodeId,
        words: &[NodeId],
        regions: &[NodeId],
    ) -> Result<Self, ModelError> {
        expect_kind(
            head,
            matches!(head.kind, HeadKind::Pretrain { .. }),
            "pretrain",
        )?;
        let p = &params.store;
        let t = &head.tensors;
        let word_logits = words
            .iter()
            .map(|&w| tape.linear(p, t[0], Some(t[1]), w))
            .collect::<Result<Vec<_>, _>>()?;
        let region_logits = regions
            .iter()
            .map(|&r| tape.linear(p, t[2], Some(t[3]), r))
            .collect::<Result<Vec<_>, _>>()?;
        let x = tape.mul(img, cls)?;
        let align_logit = tape.linear(p, t[4], Some(t[5]), x)?;
        Ok(PretrainOutputs {
            word_logits,
            region_logits,
            align_logit,
        })
    }
}

fn dim_check(params: &ModelParams, v: &[f64]) -> Result<(), ModelError> {
    if v.len() == params.config.dim {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            expected: params.config.dim,
            got: v.len(),
        })
    }
}

fn named<'a>(params: &'a ModelParams, head: &str) -> Result<&'a Head, ModelError> {
    params.head(head)
}

/// Per-answer probabilities `σ(MLP(h_IMG ⊙ h_CLS))`.
pub fn head_vocab_vqa(
    params: &ModelParams,
    head: &str,
    h_img: &[f64],
    h_cls: &[f64],
) -> Result<Vec<f64>, ModelError> {
    dim_check(params, h_img)?;
    dim_check(params, h_cls)?;
    let mut tape = Tape::new();
    let (i, c) = (tape.input(h_img.to_vec()), tape.input(h_cls.to_vec()));
    let z = vqa_logits(&mut tape, params, named(params, head)?, i, c)?;
    Ok(tape.value(z).iter().map(|v| sigmoid(*v)).collect())
}

pub fn head_retrieval(
    params: &ModelParams,
    head: &str,
    h_img: &[f64],
    h_cls: &[f64],
) -> Result<f64, ModelError> {
    dim_check(params, h_img)?;
    dim_check(params, h_cls)?;
    let mut tape = Tape::new();
    let (i, c) = (tape.input(h_img.to_vec()), tape.input(h_cls.to_vec()));
    let s = retrieval_score(&mut tape, params, named(params, head)?, i, c)?;
    Ok(tape.value(s)[0])
}

/// Region scores and the predicted region (lowest index on ties).
pub fn head_referring(
    params: &ModelParams,
    head: &str,
    h_v: &[Vec<f64>],
) -> Result<(Vec<f64>, usize), ModelError> {
    let mut tape = Tape::new();
    let mut nodes = Vec::with_capacity(h_v.len());
    for v in h_v {
        dim_check(params, v)?;
        nodes.push(tape.input(v.clone()));
    }
    let s = referring_scores(&mut tape, params, named(params, head)?, &nodes)?;
    let scores = tape.value(s).to_vec();
    let best = argmax(&scores);
    Ok((scores, best))
}

/// Class probabilities from one or two `(h_IMG, h_CLS)` pairs.
pub fn head_verification(
    params: &ModelParams,
    head: &str,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let mut nodes = Vec::with_capacity(pairs.len());
    for (i, c) in pairs {
        dim_check(params, i)?;
        dim_check(params, c)?;
        nodes.push((tape.input(i.clone()), tape.input(c.clone())));
    }
    let z = verification_logits(&mut tape, params, named(params, head)?, &nodes)?;
    Ok(softmax(tape.value(z)))
}
