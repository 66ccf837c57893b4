//! Dense co-attention layer and its stack.
//!
//! One layer augments `Q` (`d x N`) and `V` (`d x T`) with `K` learnable
//! memory columns, builds `h` affinity matrices from `d/h`-dimensional
//! projections, turns each into a map over words per region (`A_Q`) and a
//! map over regions per word (`A_V`), averages the maps across heads, applies
//! them multiplicatively with the memory rows discarded, and fuses the
//! attended features back through a residual ReLU layer.

use serde::{Deserialize, Serialize};

use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Init, ParamLayout};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// Both attention paths active (I <-> Q).
    Both,
    /// Only image regions attend over words (I -> Q); `A_V` is uniform.
    ImageGuided,
    /// Only words attend over image regions (I <- Q); `A_Q` is uniform.
    QuestionGuided,
}

impl DirectionMode {
    pub fn label(self) -> &'static str {
        match self {
            DirectionMode::Both => "I<->Q",
            DirectionMode::ImageGuided => "I->Q",
            DirectionMode::QuestionGuided => "I<-Q",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoAttnLayerParams {
    /// Row blocks `i*d_h..(i+1)*d_h` hold head `i`'s `d_h x d` projection.
    pub wv: NodeId,
    pub wq: NodeId,
    pub mem_q: Option<NodeId>,
    pub mem_v: Option<NodeId>,
    pub fuse_wq: NodeId,
    pub fuse_bq: NodeId,
    pub fuse_wv: NodeId,
    pub fuse_bv: NodeId,
}

impl CoAttnLayerParams {
    pub fn register(layout: &mut ParamLayout, layer: usize, d: usize, k: usize) -> Self {
        let name = |n: &str| format!("layer{layer}.{n}");
        CoAttnLayerParams {
            wv: layout.add(name("wv"), &[d, d], Init::Glorot),
            wq: layout.add(name("wq"), &[d, d], Init::Glorot),
            mem_q: (k > 0).then(|| layout.add(name("mem_q"), &[d, k], Init::Glorot)),
            mem_v: (k > 0).then(|| layout.add(name("mem_v"), &[d, k], Init::Glorot)),
            fuse_wq: layout.add(name("fuse_wq"), &[d, 2 * d], Init::Glorot),
            fuse_bq: layout.add(name("fuse_bq"), &[d, 1], Init::Zeros),
            fuse_wv: layout.add(name("fuse_wv"), &[d, 2 * d], Init::Glorot),
            fuse_bv: layout.add(name("fuse_bv"), &[d, 1], Init::Zeros),
        }
    }

    pub fn numel(d: usize, k: usize) -> usize {
        2 * d * d + 2 * d * k + 2 * (2 * d * d + d)
    }

    pub fn fusion_ids(&self) -> [NodeId; 4] {
        [self.fuse_wq, self.fuse_bq, self.fuse_wv, self.fuse_bv]
    }
}

/// `[X | Mem]`; `X` unchanged when there is no memory.
pub fn augment_with_memory(g: &mut Graph, x: NodeId, mem: Option<NodeId>) -> Result<NodeId> {
    match mem {
        None => Ok(x),
        Some(m) => {
            let (dx, _) = g.value(x).dims2()?;
            let (dm, _) = g.value(m).dims2()?;
            if dx != dm {
                return Err(DcnError::shape(
                    "augment_with_memory",
                    format!("features have {dx} rows, memory has {dm}"),
                ));
            }
            g.concat_cols(&[x, m])
        }
    }
}

/// `(W_V v_aug)^T (W_Q q_aug)`, a `(T+K) x (N+K)` affinity.
pub fn head_affinity(g: &mut Graph, v_aug: NodeId, q_aug: NodeId, wv: NodeId, wq: NodeId) -> Result<NodeId> {
    let pv = g.matmul(wv, v_aug)?;
    let pq = g.matmul(wq, q_aug)?;
    affinity_from_projections(g, pv, pq)
}

fn affinity_from_projections(g: &mut Graph, pv: NodeId, pq: NodeId) -> Result<NodeId> {
    let pvt = g.transpose(pv)?;
    g.matmul(pvt, pq)
}

/// Head-averaged maps: `A_Q = mean_i softmax_rows(A_i / sqrt(d_h))` and
/// `A_V = mean_i softmax_rows(A_i^T / sqrt(d_h))`.
pub fn attention_maps(g: &mut Graph, heads: &[NodeId], d_h: usize) -> Result<(NodeId, NodeId)> {
    let first = *heads
        .first()
        .ok_or_else(|| DcnError::Input("attention_maps needs at least one head".into()))?;
    let shape = g.value(first).shape().to_vec();
    let scale = (d_h as f64).sqrt();
    let mut sum_q = None;
    let mut sum_v = None;
    for &a in heads {
        if g.value(a).shape() != shape.as_slice() {
            return Err(DcnError::shape(
                "attention_maps",
                format!("head shapes {shape:?} and {:?}", g.value(a).shape()),
            ));
        }
        let mq = g.softmax_rows(a, scale)?;
        let at = g.transpose(a)?;
        let mv = g.softmax_rows(at, scale)?;
        sum_q = Some(match sum_q {
            None => mq,
            Some(s) => g.add(s, mq)?,
        });
        sum_v = Some(match sum_v {
            None => mv,
            Some(s) => g.add(s, mv)?,
        });
    }
    let inv = 1.0 / heads.len() as f64;
    let (sq, sv) = (sum_q.expect("nonempty"), sum_v.expect("nonempty"));
    if heads.len() == 1 {
        return Ok((sq, sv));
    }
    Ok((g.scale(sq, inv), g.scale(sv, inv)))
}

/// `Q_hat = Q_aug A_Q[0..T, :]^T`, a `d x T` matrix.
pub fn attend_question(g: &mut Graph, q_aug: NodeId, a_q: NodeId, t: usize) -> Result<NodeId> {
    attend(g, q_aug, a_q, t, "attend_question")
}

/// `V_hat = V_aug A_V[0..N, :]^T`, a `d x N` matrix.
pub fn attend_image(g: &mut Graph, v_aug: NodeId, a_v: NodeId, n: usize) -> Result<NodeId> {
    attend(g, v_aug, a_v, n, "attend_image")
}

fn attend(g: &mut Graph, values: NodeId, map: NodeId, keep: usize, op: &'static str) -> Result<NodeId> {
    let (_, cols) = g.value(values).dims2()?;
    let (rows, map_cols) = g.value(map).dims2()?;
    if map_cols != cols || keep > rows {
        return Err(DcnError::shape(
            op,
            format!("values with {cols} columns, map [{rows}, {map_cols}], keeping {keep} rows"),
        ));
    }
    let kept = g.slice_rows(map, 0, keep)?;
    let kept_t = g.transpose(kept)?;
    g.matmul(values, kept_t)
}

/// Column-wise `ReLU(W [x_m; a_m] + b) + x_m`.
pub fn fuse(g: &mut Graph, side: NodeId, attended: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let (ds, ms) = g.value(side).dims2()?;
    let (da, ma) = g.value(attended).dims2()?;
    if ds != da || ms != ma {
        return Err(DcnError::shape("fuse", format!("side [{ds}, {ms}] vs attended [{da}, {ma}]")));
    }
    let stacked = g.concat_rows(&[side, attended])?;
    let pre = g.matmul(w, stacked)?;
    let pre = g.add_bias(pre, b)?;
    let act = g.relu(pre);
    g.add(act, side)
}

/// Every row `1 / cols`.
pub fn uniform_map(g: &mut Graph, rows: usize, cols: usize) -> NodeId {
    g.constant(Tensor::full(&[rows, cols], 1.0 / cols as f64))
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub q: NodeId,
    pub v: NodeId,
    /// Maps actually applied (uniform on a disabled path).
    pub a_q: NodeId,
    pub a_v: NodeId,
}

pub fn dense_coattn_layer(
    g: &mut Graph,
    q: NodeId,
    v: NodeId,
    p: &CoAttnLayerParams,
    heads: usize,
    mode: DirectionMode,
) -> Result<LayerOutput> {
    let (d, n) = g.value(q).dims2()?;
    let (dv, t) = g.value(v).dims2()?;
    if d != dv {
        return Err(DcnError::shape("dense_coattn_layer", format!("Q has {d} rows, V has {dv}")));
    }
    if heads == 0 || d % heads != 0 {
        return Err(DcnError::config("h", format!("{heads} heads do not divide d = {d}")));
    }
    let d_h = d / heads;
    let q_aug = augment_with_memory(g, q, p.mem_q)?;
    let v_aug = augment_with_memory(g, v, p.mem_v)?;
    let nk = g.value(q_aug).dims2()?.1;
    let tk = g.value(v_aug).dims2()?.1;

    let pv = g.matmul(p.wv, v_aug)?;
    let pq = g.matmul(p.wq, q_aug)?;
    let mut affinities = Vec::with_capacity(heads);
    for i in 0..heads {
        let pvi = g.slice_rows(pv, i * d_h, d_h)?;
        let pqi = g.slice_rows(pq, i * d_h, d_h)?;
        affinities.push(affinity_from_projections(g, pvi, pqi)?);
    }
    let (mut a_q, mut a_v) = attention_maps(g, &affinities, d_h)?;
    match mode {
        DirectionMode::Both => {}
        DirectionMode::QuestionGuided => a_q = uniform_map(g, tk, nk),
        DirectionMode::ImageGuided => a_v = uniform_map(g, nk, tk),
    }

    let q_hat = attend_question(g, q_aug, a_q, t)?;
    let v_hat = attend_image(g, v_aug, a_v, n)?;
    let q_next = fuse(g, q, v_hat, p.fuse_wq, p.fuse_bq)?;
    let v_next = fuse(g, v, q_hat, p.fuse_wv, p.fuse_bv)?;
    Ok(LayerOutput {
        q: q_next,
        v: v_next,
        a_q,
        a_v,
    })
}

/// Applies the layers in order; element `l` of the result is layer `l`'s output.
pub fn dcn_stack(
    g: &mut Graph,
    q0: NodeId,
    v0: NodeId,
    layers: &[CoAttnLayerParams],
    heads: usize,
    mode: DirectionMode,
) -> Result<Vec<LayerOutput>> {
    if layers.is_empty() {
        return Err(DcnError::config("l", "stack needs at least one layer"));
    }
    let mut outs: Vec<LayerOutput> = Vec::with_capacity(layers.len());
    let (mut q, mut v) = (q0, v0);
    for p in layers {
        let out = dense_coattn_layer(g, q, v, p, heads, mode)?;
        (q, v) = (out.q, out.v);
        outs.push(out);
    }
    Ok(outs)
}
