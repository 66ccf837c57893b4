//! Full network: question encoder, image extraction, stacked dense
//! co-attention, summaries and answer head over one parameter list.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coattn::{dcn_stack, CoAttnLayerParams, LayerOutput};
use crate::config::DcnConfig;
use crate::encoder::{encode_answer, encode_image, encode_question, LayerAttnParams, LstmParams, MultiScaleFeatures, TokenSequence};
use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Init, Mlp, ParamLayout};
use crate::predict::{
    average_summary, multilabel_loss, score_cat_mlp, score_inner, score_sum_mlp, self_attend_summary, HeadParams,
    HeadVariant, SummaryMode,
};
use crate::tensor::Tensor;
use crate::config::DataConfig;
use crate::gradcheck::{grad_check, GradCheckOptions, GradReport};
use crate::train::data::{Dataset, Vocabulary, SHORT_TEMPLATE};
use crate::train::dropout::Dropout;

/// Typed handles into the parameter list.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub lstm: LstmParams,
    pub image: LayerAttnParams,
    pub layers: Vec<CoAttnLayerParams>,
    pub summary: Option<(Mlp, Mlp)>,
    pub head: HeadParams,
}

impl Architecture {
    pub fn build(cfg: &DcnConfig) -> Result<(Architecture, ParamLayout)> {
        cfg.validate()?;
        let mut layout = ParamLayout::default();
        let d = cfg.d;
        let lstm = LstmParams::register(&mut layout, d, cfg.e)?;
        let image = LayerAttnParams::register(&mut layout, d, cfg.c, cfg.layer_attn_hidden, cfg.extraction);
        let layers = (0..cfg.l)
            .map(|l| CoAttnLayerParams::register(&mut layout, l, d, cfg.k))
            .collect();
        let summary = (cfg.summary == SummaryMode::Attention).then(|| {
            let hidden = cfg.summary_hidden();
            (
                Mlp::register(&mut layout, "summary.q", d, hidden, 1),
                Mlp::register(&mut layout, "summary.v", d, hidden, 1),
            )
        });
        let answers = cfg.n_attributes;
        let head = match cfg.head {
            HeadVariant::Inner => HeadParams::Inner {
                w: layout.add("head.w", &[d, d], Init::Glorot),
            },
            HeadVariant::SumMlp => HeadParams::SumMlp(Mlp::register(&mut layout, "head.mlp", d, cfg.head_hidden, answers)),
            HeadVariant::CatMlp => {
                HeadParams::CatMlp(Mlp::register(&mut layout, "head.mlp", 2 * d, cfg.head_hidden, answers))
            }
        };
        Ok((
            Architecture {
                lstm,
                image,
                layers,
                summary,
                head,
            },
            layout,
        ))
    }
}

/// One question about one image.
#[derive(Clone, Debug)]
pub struct Example {
    pub question: TokenSequence,
    pub features: MultiScaleFeatures,
}

/// Nodes of interest from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `|A| x 1` answer probabilities.
    pub scores: NodeId,
    /// `1 x 4` level weights.
    pub layer_alpha: NodeId,
    pub layers: Vec<LayerOutput>,
    /// Summary weights over question words (`1 x N`) and regions (`1 x T`).
    pub alpha_q: NodeId,
    pub alpha_v: NodeId,
}

#[derive(Clone, Debug)]
pub struct Dcn {
    cfg: DcnConfig,
    arch: Architecture,
    names: Vec<String>,
    params: Vec<Tensor>,
    embedding: Tensor,
    answers: Vec<TokenSequence>,
}

/// Frozen word vectors with roughly unit norm.
pub fn random_embedding(vocab: usize, e: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (e as f64).sqrt();
    let data = (0..vocab * e)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    Tensor::new(&[vocab, e], data).expect("embedding shape")
}

const EMBEDDING_SALT: u64 = 0xe3b0_c442_98fc_1c14;

impl Dcn {
    /// Fresh model: parameters from `train.seed`, embedding from `data.seed`.
    pub fn new(cfg: &DcnConfig) -> Result<Self> {
        let (arch, layout) = Architecture::build(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let params = layout.initialize(&mut rng);
        let vocab = Vocabulary::from_config(cfg);
        let embedding = random_embedding(vocab.size(), cfg.e, cfg.data.seed ^ EMBEDDING_SALT);
        let answers = vocab
            .answer_sequences()
            .into_iter()
            .map(|a| TokenSequence::new(a, vocab.size(), cfg.n_max))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(cfg.clone(), arch, &layout, params, embedding, answers)
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_parts(cfg: DcnConfig, params: Vec<Tensor>, embedding: Tensor, answers: Vec<TokenSequence>) -> Result<Self> {
        let (arch, layout) = Architecture::build(&cfg)?;
        Self::assemble(cfg, arch, &layout, params, embedding, answers)
    }

    fn assemble(
        cfg: DcnConfig,
        arch: Architecture,
        layout: &ParamLayout,
        params: Vec<Tensor>,
        embedding: Tensor,
        answers: Vec<TokenSequence>,
    ) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(DcnError::Format(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (spec, p) in layout.specs().iter().zip(&params) {
            if p.shape() != spec.shape.as_slice() {
                return Err(DcnError::shape(
                    "load",
                    format!("{} should be {:?}, got {:?}", spec.name, spec.shape, p.shape()),
                ));
            }
        }
        let (_, e) = embedding.dims2()?;
        if e != cfg.e {
            return Err(DcnError::shape("load", format!("embedding width {e}, config says {}", cfg.e)));
        }
        if answers.len() != cfg.n_attributes {
            return Err(DcnError::Format(format!(
                "{} answers stored, config says {}",
                answers.len(),
                cfg.n_attributes
            )));
        }
        let names = layout.specs().iter().map(|s| s.name.clone()).collect();
        Ok(Dcn {
            cfg,
            arch,
            names,
            params,
            embedding,
            answers,
        })
    }

    pub fn config(&self) -> &DcnConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let rebuilt = Self::from_parts(self.cfg.clone(), params, self.embedding.clone(), self.answers.clone())?;
        self.params = rebuilt.params;
        Ok(())
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn answers(&self) -> &[TokenSequence] {
        &self.answers
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Builds the forward pass on `g`, which must have been created over
    /// this model's parameters (or a same-shaped perturbation of them).
    pub fn forward(&self, g: &mut Graph, ex: &Example, drop: &mut Dropout) -> Result<Forward> {
        let cfg = &self.cfg;
        let (q, s_q) = encode_question(g, &ex.question, &self.embedding, &self.arch.lstm)?;
        let q = drop.lstm(g, q)?;
        let s_q = drop.lstm(g, s_q)?;
        let (v, layer_alpha) = encode_image(g, &ex.features, s_q, &self.arch.image, cfg.t, drop)?;
        let layers = dcn_stack(g, q, v, &self.arch.layers, cfg.h, cfg.direction)?;
        let last = layers.last().expect("at least one layer");
        let ((sum_q, alpha_q), (sum_v, alpha_v)) = match &self.arch.summary {
            Some((mq, mv)) => (
                self_attend_summary(g, last.q, mq, drop)?,
                self_attend_summary(g, last.v, mv, drop)?,
            ),
            None => (average_summary(g, last.q)?, average_summary(g, last.v)?),
        };
        let scores = match &self.arch.head {
            HeadParams::Inner { w } => {
                let cols = self
                    .answers
                    .iter()
                    .map(|a| encode_answer(g, a, &self.embedding, &self.arch.lstm))
                    .collect::<Result<Vec<_>>>()?;
                let answers = g.concat_cols(&cols)?;
                score_inner(g, sum_q, sum_v, answers, *w)?
            }
            HeadParams::SumMlp(mlp) => score_sum_mlp(g, sum_q, sum_v, mlp, drop)?,
            HeadParams::CatMlp(mlp) => score_cat_mlp(g, sum_q, sum_v, mlp, drop)?,
        };
        Ok(Forward {
            scores,
            layer_alpha,
            layers,
            alpha_q,
            alpha_v,
        })
    }

    /// One-hot multi-label target for a single correct answer.
    pub fn target(&self, answer: usize) -> Result<Vec<f64>> {
        let n = self.cfg.n_attributes;
        if answer >= n {
            return Err(DcnError::Input(format!("answer {answer} outside {n} classes")));
        }
        let mut t = vec![0.0; n];
        t[answer] = 1.0;
        Ok(t)
    }

    /// Loss node on top of a forward pass.
    pub fn loss(&self, g: &mut Graph, ex: &Example, answer: usize, drop: &mut Dropout) -> Result<NodeId> {
        let target = self.target(answer)?;
        let out = self.forward(g, ex, drop)?;
        multilabel_loss(g, out.scores, &target)
    }

    /// Loss value and parameter gradients for one example.
    pub fn loss_and_grads(&self, ex: &Example, answer: usize, drop: &mut Dropout) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::with_params(&self.params);
        let loss = self.loss(&mut g, ex, answer, drop)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss)?;
        Ok((value, grads.param_grads(&self.params)))
    }

    /// Answer probabilities in evaluation mode.
    pub fn predict(&self, ex: &Example) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, ex, &mut Dropout::eval())?;
        Ok(g.value(out.scores).data().to_vec())
    }
}

/// Smallest configuration that still exercises every component: two
/// heads, one memory slot, two layers and a 2 x 2 region grid.
pub fn tiny_config() -> DcnConfig {
    DcnConfig {
        d: 8,
        h: 2,
        k: 1,
        l: 2,
        t: 4,
        e: 4,
        c: 2,
        n_objects: 4,
        n_attributes: 4,
        layer_attn_hidden: 8,
        head_hidden: 8,
        data: DataConfig {
            objects_per_image: 3,
            ..DataConfig::default()
        },
        ..DcnConfig::default()
    }
}

/// Per-block result of a full-model gradient check.
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub report: GradReport,
    pub names: Vec<String>,
    pub question_len: usize,
}

/// Central-difference check of the loss on one generated sample with a
/// three-word question, dropout off.
pub fn grad_check_model(cfg: &DcnConfig, opts: GradCheckOptions) -> Result<ModelGradCheck> {
    let model = Dcn::new(cfg)?;
    let data = Dataset::generate(&DcnConfig {
        data: DataConfig {
            n_train: 1,
            n_test: 1,
            ..cfg.data.clone()
        },
        ..cfg.clone()
    })?;
    let mut sample = data.train[0].clone();
    let object = sample
        .question
        .iter()
        .find_map(|&t| data.vocab.object_of_token(t))
        .expect("question names an object");
    sample.question = data.vocab.question(SHORT_TEMPLATE, object);
    let ex = data.example(&sample)?;
    let answer = sample.answer;
    let f = |g: &mut Graph| model.loss(g, &ex, answer, &mut Dropout::eval());
    let report = grad_check(model.params(), f, opts)?;
    Ok(ModelGradCheck {
        report,
        names: model.names().to_vec(),
        question_len: sample.question.len(),
    })
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::count_params;

    #[test]
    fn layout_matches_analytic_count() {
        for head in [HeadVariant::Inner, HeadVariant::SumMlp, HeadVariant::CatMlp] {
            for summary in [SummaryMode::Attention, SummaryMode::Average] {
                let cfg = DcnConfig {
                    head,
                    summary,
                    ..DcnConfig::default()
                };
                let m = Dcn::new(&cfg).unwrap();
                assert_eq!(m.num_params(), count_params(&cfg).total, "{head:?} {summary:?}");
            }
        }
    }

    #[test]
    fn names_are_unique() {
        let m = Dcn::new(&DcnConfig::default()).unwrap();
        let mut names = m.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.names().len());
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let m = Dcn::new(&DcnConfig::default()).unwrap();
        let mut params = m.params().to_vec();
        params[0] = Tensor::zeros(&[1, 1]);
        assert!(Dcn::from_parts(m.config().clone(), params, m.embedding().clone(), m.answers().to_vec()).is_err());
        let short = m.params()[1..].to_vec();
        assert!(Dcn::from_parts(m.config().clone(), short, m.embedding().clone(), m.answers().to_vec()).is_err());
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }
}
