//! Parameter layout, initialization and the two-layer MLP shared by several
//! parts of the network.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::train::dropout::Dropout;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `+-sqrt(6 / (rows + cols))`.
    Glorot,
    Zeros,
    /// Vertically stacked square blocks, each orthogonal.
    OrthogonalBlocks,
    /// Stacked LSTM gate bias (order i, f, o, g) with the forget slice at 1.
    ForgetGateBias,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of named parameters. The position of a spec is the
/// [`NodeId`] of that parameter in any graph built over the materialized list.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> NodeId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        NodeId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn initialize<R: Rng>(&self, rng: &mut R) -> Vec<Tensor> {
        self.specs.iter().map(|s| init_tensor(s, rng)).collect()
    }
}

fn init_tensor<R: Rng>(spec: &ParamSpec, rng: &mut R) -> Tensor {
    let shape = &spec.shape;
    match spec.init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Glorot => {
            let (rows, cols) = (shape[0], shape.get(1).copied().unwrap_or(1));
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let n = spec.numel();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(shape, data).expect("spec shape")
        }
        Init::OrthogonalBlocks => {
            let cols = shape[1];
            let blocks = shape[0] / cols;
            let mut data = Vec::with_capacity(spec.numel());
            for _ in 0..blocks {
                data.extend(random_orthogonal(cols, rng));
            }
            Tensor::new(shape, data).expect("spec shape")
        }
        Init::ForgetGateBias => {
            let half = shape[0] / 4;
            let mut t = Tensor::zeros(shape);
            t.data_mut()[half..2 * half].iter_mut().for_each(|v| *v = 1.0);
            t
        }
    }
}

/// Row-major `n x n` orthogonal matrix via Gram-Schmidt on Gaussian rows.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

/// `W2 * ReLU(W1 x + b1) + b2`, applied independently to every column of `x`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl Mlp {
    pub fn register(layout: &mut ParamLayout, prefix: &str, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            w1: layout.add(format!("{prefix}.w1"), &[hidden, input], Init::Glorot),
            b1: layout.add(format!("{prefix}.b1"), &[hidden, 1], Init::Zeros),
            w2: layout.add(format!("{prefix}.w2"), &[output, hidden], Init::Glorot),
            b2: layout.add(format!("{prefix}.b2"), &[output, 1], Init::Zeros),
        }
    }

    pub fn numel(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, drop: &mut Dropout) -> Result<NodeId> {
        let pre = g.matmul(self.w1, x)?;
        let pre = g.add_bias(pre, self.b1)?;
        let hidden = g.relu(pre);
        let hidden = drop.fc(g, hidden)?;
        let out = g.matmul(self.w2, hidden)?;
        g.add_bias(out, self.b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_blocks_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let q = Tensor::new(&[n, n], random_orthogonal(n, &mut rng)).unwrap();
        let qqt = q.matmul(&q.transpose().unwrap()).unwrap();
        assert!(qqt.max_abs_diff(&Tensor::identity(n)) < 1e-12);
    }

    #[test]
    fn layout_initializes_in_order() {
        let mut layout = ParamLayout::default();
        let a = layout.add("a", &[4, 3], Init::Glorot);
        let b = layout.add("b", &[8, 1], Init::ForgetGateBias);
        let u = layout.add("u", &[8, 2], Init::OrthogonalBlocks);
        assert_eq!((a, b, u), (NodeId(0), NodeId(1), NodeId(2)));
        assert_eq!(layout.numel(), 12 + 8 + 16);
        let params = layout.initialize(&mut ChaCha8Rng::seed_from_u64(0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(params[0].data().iter().all(|v| v.abs() <= limit));
        assert_eq!(params[1].data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(params[2].shape(), &[8, 2]);
    }

    #[test]
    fn mlp_with_zero_weights_outputs_bias() {
        let mut layout = ParamLayout::default();
        let mlp = Mlp::register(&mut layout, "m", 3, 5, 2);
        let mut params: Vec<Tensor> = layout.specs().iter().map(|s| Tensor::zeros(&s.shape)).collect();
        params[3] = Tensor::column(vec![0.5, -1.0]).unwrap();
        let mut g = Graph::with_params(&params);
        let x = g.constant(Tensor::full(&[3, 4], 1.0));
        let y = mlp.forward(&mut g, x, &mut Dropout::eval()).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4]);
        assert_eq!(g.value(y).row(0), &[0.5; 4]);
        assert_eq!(Mlp::numel(3, 5, 2), layout.numel());
    }
}
