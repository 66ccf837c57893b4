//! Region-blind reference model: multinomial logistic regression on the
//! mean-pooled region features concatenated with the question bag of words.

use super::data::{Dataset, SyntheticSample};
use crate::error::{DcnError, Result};

#[derive(Clone, Debug)]
pub struct MeanPoolBaseline {
    /// `classes x features`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
    features: usize,
    classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn features(data: &Dataset, s: &SyntheticSample) -> Vec<f64> {
    let regions = data.world.region_features(s);
    let f = data.world.feature_dim();
    let mut x = vec![0.0; f + data.vocab.size()];
    for r in &regions {
        for (acc, v) in x.iter_mut().zip(r) {
            *acc += v / regions.len() as f64;
        }
    }
    for &tok in &s.question {
        if let Some(slot) = x.get_mut(f + tok as usize) {
            *slot += 1.0;
        }
    }
    x
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl MeanPoolBaseline {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.w[c * self.features..(c + 1) * self.features];
                self.b[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::model::argmax(&self.logits(x))
    }

    /// Full-batch gradient descent on the softmax cross-entropy.
    pub fn fit(xs: &[Vec<f64>], ys: &[usize], classes: usize, iters: usize, lr: f64) -> Result<Self> {
        let features = xs.first().map(Vec::len).ok_or_else(|| DcnError::Input("no training samples".into()))?;
        let mut model = MeanPoolBaseline {
            w: vec![0.0; classes * features],
            b: vec![0.0; classes],
            features,
            classes,
        };
        let inv = 1.0 / xs.len() as f64;
        for _ in 0..iters {
            let mut gw = vec![0.0; classes * features];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(ys) {
                let mut p = model.logits(x);
                softmax_in_place(&mut p);
                p[y] -= 1.0;
                for c in 0..classes {
                    gb[c] += p[c];
                    for (g, v) in gw[c * features..(c + 1) * features].iter_mut().zip(x) {
                        *g += p[c] * v;
                    }
                }
            }
            for (w, g) in model.w.iter_mut().zip(&gw) {
                *w -= lr * inv * g;
            }
            for (b, g) in model.b.iter_mut().zip(&gb) {
                *b -= lr * inv * g;
            }
        }
        Ok(model)
    }
}

fn accuracy(model: &MeanPoolBaseline, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let hits = xs.iter().zip(ys).filter(|(x, &y)| model.predict(x) == y).count();
    hits as f64 / ys.len().max(1) as f64
}

/// Trains on the training split and scores both splits.
pub fn mean_pool_baseline(data: &Dataset, iters: usize) -> Result<BaselineReport> {
    if data.test.is_empty() {
        return Err(DcnError::Input("cannot evaluate an empty dataset".into()));
    }
    let encode = |set: &[SyntheticSample]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (set.iter().map(|s| features(data, s)).collect(), set.iter().map(|s| s.answer).collect())
    };
    let (xtr, ytr) = encode(&data.train);
    let (xte, yte) = encode(&data.test);
    let model = MeanPoolBaseline::fit(&xtr, &ytr, data.vocab.n_attributes, iters, 0.5)?;
    Ok(BaselineReport {
        train_accuracy: accuracy(&model, &xtr, &ytr),
        test_accuracy: accuracy(&model, &xte, &yte),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_separable_problem() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.3]).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = MeanPoolBaseline::fit(&xs, &ys, 2, 200, 0.5).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(MeanPoolBaseline::fit(&[], &[], 2, 1, 0.1).is_err());
    }
}
