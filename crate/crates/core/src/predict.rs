//! Answer prediction: self-attentive summaries of the final question and
//! image matrices, the three scoring heads, the multi-label loss and
//! parameter counting.

use serde::{Deserialize, Serialize};

use crate::coattn::CoAttnLayerParams;
use crate::config::DcnConfig;
use crate::encoder::{LayerAttnParams, LstmParams};
use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::Mlp;
use crate::tensor::Tensor;
use crate::train::dropout::Dropout;

/// Scoring head, named after how `s_Q` and `s_V` meet the answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum HeadVariant {
    /// `sigma(s_A^T W (s_Q + s_V))` over encoded answers.
    Inner,
    /// `sigma(MLP(s_Q + s_V))` over a fixed answer set.
    SumMlp,
    /// `sigma(MLP([s_Q; s_V]))` over a fixed answer set.
    CatMlp,
}

impl TryFrom<u32> for HeadVariant {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        match v {
            16 => Ok(HeadVariant::Inner),
            17 => Ok(HeadVariant::SumMlp),
            18 => Ok(HeadVariant::CatMlp),
            other => Err(format!("head must be 16, 17 or 18, got {other}")),
        }
    }
}

impl From<HeadVariant> for u32 {
    fn from(h: HeadVariant) -> u32 {
        match h {
            HeadVariant::Inner => 16,
            HeadVariant::SumMlp => 17,
            HeadVariant::CatMlp => 18,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    Attention,
    Average,
}

#[derive(Clone, Copy, Debug)]
pub enum HeadParams {
    Inner { w: NodeId },
    SumMlp(Mlp),
    CatMlp(Mlp),
}

/// `alpha = softmax(per-column MLP scores)`, `s = sum_m alpha_m x_m`.
/// Returns `(s, alpha)` with `s` as `d x 1` and `alpha` as `1 x M`.
pub fn self_attend_summary(g: &mut Graph, x: NodeId, mlp: &Mlp, drop: &mut Dropout) -> Result<(NodeId, NodeId)> {
    let (_, m) = g.value(x).dims2()?;
    if m == 0 {
        return Err(DcnError::Input("cannot summarize zero columns".into()));
    }
    let scores = mlp.forward(g, x, drop)?;
    let alpha = g.softmax_rows(scores, 1.0)?;
    let at = g.transpose(alpha)?;
    let s = g.matmul(x, at)?;
    Ok((s, alpha))
}

/// Plain column mean with the matching uniform weights.
pub fn average_summary(g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId)> {
    let (_, m) = g.value(x).dims2()?;
    let alpha = g.constant(Tensor::full(&[1, m], 1.0 / m as f64));
    let at = g.transpose(alpha)?;
    let s = g.matmul(x, at)?;
    Ok((s, alpha))
}

/// `sigma(S_A^T W (s_Q + s_V))` with one answer encoding per column of
/// `answers` (`d x |A|`). Returns `|A| x 1` scores.
pub fn score_inner(g: &mut Graph, s_q: NodeId, s_v: NodeId, answers: NodeId, w: NodeId) -> Result<NodeId> {
    let s = g.add(s_q, s_v)?;
    let ws = g.matmul(w, s)?;
    let at = g.transpose(answers)?;
    let logits = g.matmul(at, ws)?;
    Ok(g.sigmoid(logits))
}

pub fn score_sum_mlp(g: &mut Graph, s_q: NodeId, s_v: NodeId, mlp: &Mlp, drop: &mut Dropout) -> Result<NodeId> {
    let s = g.add(s_q, s_v)?;
    let logits = mlp.forward(g, s, drop)?;
    Ok(g.sigmoid(logits))
}

pub fn score_cat_mlp(g: &mut Graph, s_q: NodeId, s_v: NodeId, mlp: &Mlp, drop: &mut Dropout) -> Result<NodeId> {
    let s = g.concat_rows(&[s_q, s_v])?;
    let logits = mlp.forward(g, s, drop)?;
    Ok(g.sigmoid(logits))
}

/// Mean binary cross-entropy with scores clamped to `[1e-7, 1 - 1e-7]`.
pub fn multilabel_loss(g: &mut Graph, scores: NodeId, targets: &[f64]) -> Result<NodeId> {
    g.bce(scores, targets)
}

/// Learnable scalars per component. The frozen embedding table is not
/// counted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub breakdown: Vec<(String, usize)>,
}

pub fn count_params(cfg: &DcnConfig) -> ParamCount {
    let d = cfg.d;
    let answers = cfg.n_attributes;
    let mut breakdown = vec![
        ("question_lstm".to_string(), LstmParams::numel(d, cfg.e)),
        (
            "image_extraction".to_string(),
            LayerAttnParams::numel(d, cfg.c, cfg.layer_attn_hidden, cfg.extraction),
        ),
        ("coattention".to_string(), cfg.l * CoAttnLayerParams::numel(d, cfg.k)),
    ];
    let summary = match cfg.summary {
        SummaryMode::Attention => 2 * Mlp::numel(d, cfg.summary_hidden(), 1),
        SummaryMode::Average => 0,
    };
    breakdown.push(("summary".to_string(), summary));
    let head = match cfg.head {
        HeadVariant::Inner => d * d,
        HeadVariant::SumMlp => Mlp::numel(d, cfg.head_hidden, answers),
        HeadVariant::CatMlp => Mlp::numel(2 * d, cfg.head_hidden, answers),
    };
    breakdown.push(("answer_head".to_string(), head));
    let total = breakdown.iter().map(|(_, n)| n).sum();
    ParamCount { total, breakdown }
}
