//! Adam with L2 weight decay and the step-decay learning rate.

use crate::config::TrainConfig;
use crate::error::{DcnError, Result};
use crate::tensor::Tensor;

/// `lr * 0.5^(epoch / decay_epochs)`; `epoch` may be fractional.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> f64 {
    cfg.lr * 0.5f64.powf(epoch.max(0.0) / cfg.decay_epochs)
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Weight decay enters as `wd * p` added to
/// the gradient.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DcnError::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(DcnError::shape(
                "adam_step",
                format!("param {i} is {:?}, grad is {:?}", p.shape(), g.shape()),
            ));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gr), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gr = gr + cfg.weight_decay * *w;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gr;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gr * gr;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_four_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0.0, &cfg), 0.001);
        assert!((lr_at(4.0, &cfg) - 0.0005).abs() < 1e-15);
        assert!((lr_at(8.0, &cfg) - 0.00025).abs() < 1e-15);
        assert!(lr_at(2.0, &cfg) < 0.001 && lr_at(2.0, &cfg) > 0.0005);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = vec![Tensor::new(&[2], vec![1.0, -1.0]).unwrap()];
        let g = vec![Tensor::new(&[2], vec![0.3, -7.0]).unwrap()];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.01, &cfg).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-7);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-7);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::new(&[3], vec![2.0, -3.0, 0.5]).unwrap()];
        let mut st = AdamState::new(&p);
        for _ in 0..3000 {
            let g = vec![p[0].clone()];
            adam_step(&mut p, &g, &mut st, 0.01, &cfg).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2), "{:?}", p[0].data());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[], &mut st, 0.1, &cfg).is_err());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, 0.1, &cfg).is_err());
    }
}
