//! Inverted dropout with seeded masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Zeroes each entry with probability `p` and scales survivors by
/// `1 / (1 - p)` when `train` is set; identity otherwise.
pub fn dropout<R: Rng>(g: &mut Graph, x: NodeId, p: f64, rng: &mut R, train: bool) -> Result<NodeId> {
    if !(0.0..1.0).contains(&p) {
        return Err(DcnError::Input(format!("dropout ratio {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = g.constant(Tensor::new(&shape, mask)?);
    g.mul(x, mask)
}

/// Dropout context threaded through a forward pass: one rate for fully
/// connected hidden layers and one for the LSTM output.
pub struct Dropout {
    rng: Option<ChaCha8Rng>,
    fc: f64,
    lstm: f64,
}

impl Dropout {
    pub fn eval() -> Self {
        Dropout {
            rng: None,
            fc: 0.0,
            lstm: 0.0,
        }
    }

    pub fn train(seed: u64, fc: f64, lstm: f64) -> Self {
        Dropout {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            fc,
            lstm,
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn fc(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let p = self.fc;
        self.apply(g, x, p)
    }

    pub fn lstm(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let p = self.lstm;
        self.apply(g, x, p)
    }

    fn apply(&mut self, g: &mut Graph, x: NodeId, p: f64) -> Result<NodeId> {
        match self.rng.as_mut() {
            Some(rng) => dropout(g, x, p, rng, true),
            None => Ok(x),
        }
    }
}
