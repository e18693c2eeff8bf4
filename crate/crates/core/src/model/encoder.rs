use alloc::vec::Vec;

use super::geometry::Region;
use super::tape::{NodeId, Tape};
use super::{ModelError, ModelParams, TaskTokenMode};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionInput {
    pub features: Vec<f64>,
    pub region: Region,
}

/// Model input. The special markers are implicit; [`TokenSequence::layout`]
/// spells out the full order.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenSequence {
    pub regions: Vec<RegionInput>,
    pub task_token: Option<usize>,
    pub words: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Img,
    Region(usize),
    Cls,
    Task(usize),
    Word(usize),
    Sep,
}

impl TokenSequence {
    pub fn layout(&self) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.regions.len() + self.words.len() + 4);
        out.push(Slot::Img);
        out.extend((0..self.regions.len()).map(Slot::Region));
        out.push(Slot::Cls);
        out.extend(self.task_token.map(Slot::Task));
        out.extend(self.words.iter().map(|&w| Slot::Word(w)));
        out.push(Slot::Sep);
        out
    }

    pub fn boxes(&self) -> Vec<Region> {
        self.regions.iter().map(|r| r.region).collect()
    }
}

/// Encoder outputs as tape nodes.
#[derive(Debug, Clone)]
pub struct EncodedNodes {
    pub img: NodeId,
    pub cls: NodeId,
    pub regions: Vec<NodeId>,
    /// Only filled when words were requested.
    pub words: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolisticEmbeddings {
    pub h_img: Vec<f64>,
    pub h_cls: Vec<f64>,
    pub h_v: Vec<Vec<f64>>,
}

fn check(params: &ModelParams, seq: &TokenSequence) -> Result<(), ModelError> {
    let cfg = &params.config;
    if seq.words.len() > cfg.max_words {
        return Err(ModelError::TooLong(alloc::format!(
            "{} words > {}",
            seq.words.len(),
            cfg.max_words
        )));
    }
    if seq.regions.len() > cfg.max_regions {
        return Err(ModelError::TooLong(alloc::format!(
            "{} regions > {}",
            seq.regions.len(),
            cfg.max_regions
        )));
    }
    if let Some(&w) = seq.words.iter().find(|&&w| w >= cfg.vocab_size) {
        return Err(ModelError::UnknownWord(w));
    }
    for r in &seq.regions {
        if r.features.len() != cfg.region_dim {
            return Err(ModelError::DimensionMismatch {
                expected: cfg.region_dim,
                got: r.features.len(),
            });
        }
    }
    match (cfg.task_tokens, seq.task_token) {
        (TaskTokenMode::None, None) => Ok(()),
        (TaskTokenMode::None, Some(_)) | (_, None) => Err(ModelError::TaskTokenMode),
        (_, Some(k)) if k >= params.store.get(params.trunk.task_emb).rows() => {
            Err(ModelError::UnknownTaskToken(k))
        }
        _ => Ok(()),
    }
}

/// Records the trunk forward pass on `tape`.
///
/// Text: `u_j = tanh(E[w_j] + P[j] + s_txt)`, `t = mean_j u_j (+ tanh(T[k] + s_txt))`.
/// Image: `r_i = tanh(W_v f_i + b_v + Q[i] + s_img)`, `g = mean_i r_i`.
/// Outputs: `h_v_i = tanh(A r_i + B t + c)`, `h_IMG = tanh(W_img mean_i h_v_i + b)`,
/// `h_CLS = tanh(W_cls t + U_cls g + b)` and, on request,
/// `h_w_j = tanh(W_w u_j + U_w g + b)`.
pub fn encode_on(
    tape: &mut Tape,
    params: &ModelParams,
    seq: &TokenSequence,
    with_words: bool,
) -> Result<EncodedNodes, ModelError> {
    check(params, seq)?;
    let p = &params.store;
    let ids = &params.trunk;
    let d = params.config.dim;

    let seg_text = tape.param(p, ids.seg_text);
    let mut units = Vec::with_capacity(seq.words.len());
    for (j, &w) in seq.words.iter().enumerate() {
        let e = tape.param_row(p, ids.word_emb, w);
        let pos = tape.param_row(p, ids.word_pos, j);
        let s = tape.sum(&[e, pos, seg_text])?;
        units.push(tape.tanh(s));
    }
    let mut text = tape.mean(&units, d)?;
    if let Some(k) = seq.task_token {
        let e = tape.param_row(p, ids.task_emb, k);
        let s = tape.add(e, seg_text)?;
        let tok = tape.tanh(s);
        text = tape.add(text, tok)?;
    }

    let seg_image = tape.param(p, ids.seg_image);
    let mut regions = Vec::with_capacity(seq.regions.len());
    for (i, r) in seq.regions.iter().enumerate() {
        let f = tape.input(r.features.clone());
        let proj = tape.linear(p, ids.region_w, Some(ids.region_b), f)?;
        let pos = tape.param_row(p, ids.region_pos, i);
        let s = tape.sum(&[proj, pos, seg_image])?;
        regions.push(tape.tanh(s));
    }
    let global = tape.mean(&regions, d)?;

    let text_to_vis = tape.linear(p, ids.vis_b, Some(ids.vis_bias), text)?;
    let mut h_v = Vec::with_capacity(regions.len());
    for &r in &regions {
        let a = tape.linear(p, ids.vis_a, None, r)?;
        let s = tape.add(a, text_to_vis)?;
        h_v.push(tape.tanh(s));
    }
    let pooled = tape.mean(&h_v, d)?;
    let img_pre = tape.linear(p, ids.img_w, Some(ids.img_b), pooled)?;
    let img = tape.tanh(img_pre);

    let c1 = tape.linear(p, ids.cls_w, Some(ids.cls_b), text)?;
    let c2 = tape.linear(p, ids.cls_u, None, global)?;
    let cs = tape.add(c1, c2)?;
    let cls = tape.tanh(cs);

    let mut words = Vec::new();
    if with_words {
        let ctx = tape.linear(p, ids.word_u, Some(ids.word_b), global)?;
        for &u in &units {
            let a = tape.linear(p, ids.word_w, None, u)?;
            let s = tape.add(a, ctx)?;
            words.push(tape.tanh(s));
        }
    }
    Ok(EncodedNodes {
        img,
        cls,
        regions: h_v,
        words,
    })
}

/// Holistic embeddings for one sequence.
pub fn encode(params: &ModelParams, seq: &TokenSequence) -> Result<HolisticEmbeddings, ModelError> {
    let mut tape = Tape::new();
    let n = encode_on(&mut tape, params, seq, false)?;
    let out = HolisticEmbeddings {
        h_img: tape.value(n.img).to_vec(),
        h_cls: tape.value(n.cls).to_vec(),
        h_v: n.regions.iter().map(|&r| tape.value(r).to_vec()).collect(),
    };
    let finite = out
        .h_img
        .iter()
        .chain(&out.h_cls)
        .chain(out.h_v.iter().flatten())
        .all(|v| v.is_finite());
    if finite {
        Ok(out)
    } else {
        Err(ModelError::NonFinite)
    }
}
