//! Question/answer encoding with a residual bidirectional LSTM, and image
//! encoding from four multi-scale feature maps fused by question-conditioned
//! layer attention.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Init, Mlp, ParamLayout};
use crate::tensor::Tensor;
use crate::train::dropout::Dropout;

/// Longest question accepted.
pub const N_MAX: usize = 14;
/// Reserved id for out-of-vocabulary words.
pub const UNK: u32 = 0;
pub const NUM_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_size: usize, n_max: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(DcnError::Input("empty token sequence".into()));
        }
        if ids.len() > n_max {
            return Err(DcnError::Input(format!(
                "sequence of {} tokens exceeds the cap of {n_max}",
                ids.len()
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= vocab_size) {
            return Err(DcnError::Input(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(TokenSequence(ids))
    }

    /// Maps ids outside the vocabulary to [`UNK`] and truncates to `n_max`.
    pub fn lossy(ids: &[u32], vocab_size: usize, n_max: usize) -> Result<Self> {
        let ids = ids
            .iter()
            .take(n_max)
            .map(|&i| if (i as usize) < vocab_size { i } else { UNK })
            .collect();
        Self::new(ids, vocab_size, n_max)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parses newline-delimited integer lists (whitespace or comma separated).
/// Blank lines are skipped.
pub fn parse_token_lines(text: &str) -> Result<Vec<Vec<u32>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<u32>().map_err(|e| {
                        DcnError::Format(format!("line {}: bad token `{s}`: {e}", n + 1))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    parse_token_lines(&fs::read_to_string(path)?)
}

pub fn write_token_file(path: impl AsRef<Path>, seqs: &[Vec<u32>]) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        let line: Vec<String> = s.iter().map(u32::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Gate weights of one LSTM direction, stacked in gate order i, f, o, g:
/// `w` is `2d x e`, `u` is `2d x d/2`, `b` is `2d x 1`.
#[derive(Clone, Copy, Debug)]
pub struct LstmDirection {
    pub w: NodeId,
    pub u: NodeId,
    pub b: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
    /// `d x e` projection of the input embedding added to every output column.
    pub residual: NodeId,
    /// Hidden size of one direction (`d / 2`).
    pub half: usize,
}

impl LstmParams {
    pub fn register(layout: &mut ParamLayout, d: usize, e: usize) -> Result<Self> {
        if !d.is_multiple_of(2) || d == 0 {
            return Err(DcnError::config("d", format!("must be even and positive, got {d}")));
        }
        let half = d / 2;
        let mut dir = |name: &str| LstmDirection {
            w: layout.add(format!("lstm.{name}.w"), &[4 * half, e], Init::Glorot),
            u: layout.add(format!("lstm.{name}.u"), &[4 * half, half], Init::OrthogonalBlocks),
            b: layout.add(format!("lstm.{name}.b"), &[4 * half, 1], Init::ForgetGateBias),
        };
        let fwd = dir("fwd");
        let bwd = dir("bwd");
        let residual = layout.add("lstm.residual", &[d, e], Init::Glorot);
        Ok(LstmParams {
            fwd,
            bwd,
            residual,
            half,
        })
    }

    pub fn numel(d: usize, e: usize) -> usize {
        let half = d / 2;
        2 * (4 * half * e + 4 * half * half + 4 * half) + d * e
    }

    fn direction(&self, dir: Direction) -> &LstmDirection {
        match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }
}

/// Embedding lookup: `e x N` matrix whose columns are the token rows of `emb`.
pub fn embed(emb: &Tensor, tokens: &TokenSequence) -> Result<Tensor> {
    let (vocab, e) = emb.dims2()?;
    let n = tokens.len();
    let mut data = vec![0.0; e * n];
    for (col, &id) in tokens.ids().iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(DcnError::Input(format!("token {id} outside embedding table of {vocab}")));
        }
        for (k, &v) in emb.row(id).iter().enumerate() {
            data[k * n + col] = v;
        }
    }
    Tensor::new(&[e, n], data)
}

/// One LSTM step given the precomputed input projection `xw = W x`.
fn lstm_cell(
    g: &mut Graph,
    xw: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmDirection,
    half: usize,
) -> Result<(NodeId, NodeId)> {
    let rec = g.matmul(p.u, h_prev)?;
    let gates = g.add(xw, rec)?;
    let gates = g.add_bias(gates, p.b)?;
    let sig_part = g.slice_rows(gates, 0, 3 * half)?;
    let sig = g.sigmoid(sig_part);
    let i = g.slice_rows(sig, 0, half)?;
    let f = g.slice_rows(sig, half, half)?;
    let o = g.slice_rows(sig, 2 * half, half)?;
    let cand = g.slice_rows(gates, 3 * half, half)?;
    let cand = g.tanh(cand);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Standard LSTM cell: `i, f, o = sigma(.)`, `g = tanh(.)`,
/// `c = f * c_prev + i * g`, `h = o * tanh(c)`.
pub fn lstm_step(
    g: &mut Graph,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmParams,
    dir: Direction,
) -> Result<(NodeId, NodeId)> {
    let dp = *p.direction(dir);
    let xw = g.matmul(dp.w, x)?;
    lstm_cell(g, xw, h_prev, c_prev, &dp, p.half)
}

/// Hidden states of both directions, indexed by position.
pub struct BiLstmStates {
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
    pub inputs: NodeId,
}

pub fn run_bilstm(g: &mut Graph, tokens: &TokenSequence, emb: &Tensor, p: &LstmParams) -> Result<BiLstmStates> {
    let x = embed(emb, tokens)?;
    let n = tokens.len();
    let x = g.constant(x);
    let zero = g.constant(Tensor::zeros(&[p.half, 1]));
    let run = |g: &mut Graph, dir: Direction| -> Result<Vec<NodeId>> {
        let dp = *p.direction(dir);
        let xw = g.matmul(dp.w, x)?;
        let mut states = vec![zero; n];
        let (mut h, mut c) = (zero, zero);
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..n).collect(),
            Direction::Backward => (0..n).rev().collect(),
        };
        for pos in order {
            let col = g.slice_cols(xw, pos, 1)?;
            (h, c) = lstm_cell(g, col, h, c, &dp, p.half)?;
            states[pos] = h;
        }
        Ok(states)
    };
    let forward = run(g, Direction::Forward)?;
    let backward = run(g, Direction::Backward)?;
    Ok(BiLstmStates {
        forward,
        backward,
        inputs: x,
    })
}

/// Returns `(Q, s_Q)`: `Q` is `d x N` with column `n` equal to
/// `[fwd_h_n; bwd_h_n] + R e_n`, and `s_Q = [fwd_h_N; bwd_h_1]`.
pub fn encode_question(
    g: &mut Graph,
    tokens: &TokenSequence,
    emb: &Tensor,
    p: &LstmParams,
) -> Result<(NodeId, NodeId)> {
    let states = run_bilstm(g, tokens, emb, p)?;
    let hf = g.concat_cols(&states.forward)?;
    let hb = g.concat_cols(&states.backward)?;
    let hidden = g.concat_rows(&[hf, hb])?;
    let shortcut = g.matmul(p.residual, states.inputs)?;
    let q = g.add(hidden, shortcut)?;
    let last = *states.forward.last().expect("nonempty");
    let summary = g.concat_rows(&[last, states.backward[0]])?;
    Ok((q, summary))
}

/// `s_A = [fwd_h_M; bwd_h_1]` from the same Bi-LSTM used for questions.
pub fn encode_answer(g: &mut Graph, tokens: &TokenSequence, emb: &Tensor, p: &LstmParams) -> Result<NodeId> {
    let states = run_bilstm(g, tokens, emb, p)?;
    let last = *states.forward.last().expect("nonempty");
    g.concat_rows(&[last, states.backward[0]])
}

/// `(channels, side)` of each level for base channel count `c` and `t`
/// regions: channels double and sides halve per level, ending at `sqrt(t)`.
pub fn level_dims(c: usize, t: usize) -> Result<[(usize, usize); NUM_LEVELS]> {
    let side = grid_side(t)?;
    Ok(std::array::from_fn(|j| (c << j, side << (NUM_LEVELS - 1 - j))))
}

/// `sqrt(t)` for a perfect square `t`.
pub fn grid_side(t: usize) -> Result<usize> {
    let s = (t as f64).sqrt().round() as usize;
    if s == 0 || s * s != t {
        return Err(DcnError::config("t", format!("must be a positive perfect square, got {t}")));
    }
    Ok(s)
}

/// Pooling window that brings a side of `h` down to `sqrt(t)`.
pub fn pooling_window(h: usize, t: usize) -> Result<usize> {
    let side = grid_side(t)?;
    if !h.is_multiple_of(side) {
        return Err(DcnError::config(
            "t",
            format!("feature side {h} is not divisible by grid side {side}"),
        ));
    }
    Ok(h / side)
}

/// Four `C_j x H_j x H_j` maps with doubling channels and halving sides.
#[derive(Clone, Debug)]
pub struct MultiScaleFeatures {
    levels: [Tensor; NUM_LEVELS],
}

impl MultiScaleFeatures {
    pub fn new(levels: [Tensor; NUM_LEVELS]) -> Result<Self> {
        for (j, l) in levels.iter().enumerate() {
            let s = l.shape();
            if s.len() != 3 || s[1] != s[2] {
                return Err(DcnError::shape("multi_scale", format!("level {j} has shape {s:?}")));
            }
            if j > 0 {
                let p = levels[j - 1].shape();
                if s[0] != 2 * p[0] || 2 * s[1] != p[1] {
                    return Err(DcnError::shape(
                        "multi_scale",
                        format!("level {j} {s:?} does not halve/double level {} {p:?}", j - 1),
                    ));
                }
            }
        }
        Ok(MultiScaleFeatures { levels })
    }

    pub fn levels(&self) -> &[Tensor; NUM_LEVELS] {
        &self.levels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    LayerAttention,
    LastLayer,
}

#[derive(Clone, Debug)]
pub struct LayerAttnParams {
    /// `d x C_j` projections; `None` for levels unused in last-layer mode.
    pub proj: [Option<NodeId>; NUM_LEVELS],
    /// Scores the four levels from `s_Q`; absent in last-layer mode.
    pub mlp: Option<Mlp>,
}

impl LayerAttnParams {
    pub fn register(layout: &mut ParamLayout, d: usize, c: usize, hidden: usize, mode: Extraction) -> Self {
        let used = |j: usize| mode == Extraction::LayerAttention || j == NUM_LEVELS - 1;
        let proj = std::array::from_fn(|j| {
            used(j).then(|| layout.add(format!("image.proj{}", j + 1), &[d, c << j], Init::Glorot))
        });
        let mlp = (mode == Extraction::LayerAttention).then(|| Mlp::register(layout, "image.layer_attn", d, hidden, NUM_LEVELS));
        LayerAttnParams { proj, mlp }
    }

    pub fn numel(d: usize, c: usize, hidden: usize, mode: Extraction) -> usize {
        match mode {
            Extraction::LayerAttention => {
                (0..NUM_LEVELS).map(|j| d * (c << j)).sum::<usize>() + Mlp::numel(d, hidden, NUM_LEVELS)
            }
            Extraction::LastLayer => d * (c << (NUM_LEVELS - 1)),
        }
    }
}

/// Max-pools `map` with `window`, projects every position with `proj`
/// (`d x C`), reshapes to `d x T` and l2-normalizes each column.
pub fn pool_project(g: &mut Graph, map: NodeId, window: usize, proj: NodeId) -> Result<NodeId> {
    let pooled = g.max_pool(map, window)?;
    let s = g.value(pooled).shape().to_vec();
    let flat = g.reshape(pooled, &[s[0], s[1] * s[2]])?;
    let projected = g.matmul(proj, flat)?;
    g.l2_normalize_cols(projected)
}

/// `alpha = softmax(MLP(s_Q))` over the four levels and `V = sum_j alpha_j level_j`.
/// Returns `(V, alpha)` with `alpha` as a `1 x 4` row.
pub fn layer_attention_fuse(
    g: &mut Graph,
    s_q: NodeId,
    levels: &[NodeId; NUM_LEVELS],
    mlp: &Mlp,
    drop: &mut Dropout,
) -> Result<(NodeId, NodeId)> {
    let shape = g.value(levels[0]).shape().to_vec();
    for (j, &l) in levels.iter().enumerate() {
        if g.value(l).shape() != shape.as_slice() {
            return Err(DcnError::shape(
                "layer_attention_fuse",
                format!("level {j} is {:?}, level 0 is {shape:?}", g.value(l).shape()),
            ));
        }
    }
    let scores = mlp.forward(g, s_q, drop)?;
    let scores = g.transpose(scores)?;
    let alpha = g.softmax_rows(scores, 1.0)?;
    let mut acc = None;
    for (j, &l) in levels.iter().enumerate() {
        let w = g.slice_cols(alpha, j, 1)?;
        let term = g.scale_by(l, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok((acc.expect("four levels"), alpha))
}

/// Image matrix `V` (`d x T`) and the `1 x 4` level weights.
pub fn encode_image(
    g: &mut Graph,
    features: &MultiScaleFeatures,
    s_q: NodeId,
    p: &LayerAttnParams,
    t: usize,
    drop: &mut Dropout,
) -> Result<(NodeId, NodeId)> {
    match &p.mlp {
        Some(mlp) => {
            let mut levels = [NodeId(0); NUM_LEVELS];
            for (j, map) in features.levels().iter().enumerate() {
                let proj = p.proj[j].ok_or_else(|| DcnError::Input(format!("missing projection for level {}", j + 1)))?;
                let window = pooling_window(map.shape()[1], t)?;
                let node = g.constant(map.clone());
                levels[j] = pool_project(g, node, window, proj)?;
            }
            layer_attention_fuse(g, s_q, &levels, mlp, drop)
        }
        None => {
            let j = NUM_LEVELS - 1;
            let map = &features.levels()[j];
            let proj = p.proj[j].ok_or_else(|| DcnError::Input("missing last-level projection".into()))?;
            let window = pooling_window(map.shape()[1], t)?;
            let node = g.constant(map.clone());
            let v = pool_project(g, node, window, proj)?;
            let alpha = g.constant(Tensor::new(&[1, NUM_LEVELS], vec![0.0, 0.0, 0.0, 1.0])?);
            Ok((v, alpha))
        }
    }
}
