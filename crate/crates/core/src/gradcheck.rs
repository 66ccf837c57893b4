//! Central-difference gradient verification for any scalar function built on
//! a [`Graph`].
//!
//! The checked function receives a graph whose first nodes are the
//! parameters, so the same closure serves both the backward pass and the
//! perturbed re-evaluations.

use crate::error::{DcnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Below this magnitude, gradient entries are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockError {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockError>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::with_params(params);
    let out = f(&mut g)?;
    if g.value(out).len() != 1 {
        return Err(DcnError::shape(
            "grad_check",
            format!("function must return a scalar, got {:?}", g.value(out).shape()),
        ));
    }
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(DcnError::Numerical(format!("function value is {v}")));
    }
    Ok(v)
}

/// Value and backward-pass gradients of `f` at `params`.
pub fn analytic_gradients<F>(params: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::with_params(params);
    let out = f(&mut g)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(DcnError::Numerical(format!("function value is {v}")));
    }
    let grads = g.backward(out)?.param_grads(params);
    Ok((v, grads))
}

/// `(f(x + h) - f(x - h)) / 2h` for every parameter entry.
pub fn numeric_gradients<F>(params: &[Tensor], f: &F, step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let x = params[p].data()[i];
            work[p].data_mut()[i] = x + step;
            let plus = evaluate(&work, f)?;
            work[p].data_mut()[i] = x - step;
            let minus = evaluate(&work, f)?;
            work[p].data_mut()[i] = x;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compares supplied gradients against central differences.
pub fn compare<F>(
    params: &[Tensor],
    f: &F,
    analytic: &[Tensor],
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    if !(1e-6..=1e-4).contains(&opts.step) {
        return Err(DcnError::Input(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.step
        )));
    }
    if analytic.len() != params.len() {
        return Err(DcnError::shape(
            "grad_check",
            format!("{} gradients for {} parameters", analytic.len(), params.len()),
        ));
    }
    evaluate(params, f)?;
    let numeric = numeric_gradients(params, f, opts.step)?;
    let blocks: Vec<BlockError> = analytic
        .iter()
        .zip(&numeric)
        .enumerate()
        .map(|(index, (a, n))| {
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            for (&x, &y) in a.data().iter().zip(n.data()) {
                rel = rel.max(relative_error(x, y));
                abs = abs.max((x - y).abs());
            }
            BlockError {
                index,
                max_rel_error: rel,
                max_abs_error: abs,
            }
        })
        .collect();
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        max_rel_error,
        blocks,
        tol: opts.tol,
        passed: max_rel_error < opts.tol,
    })
}

pub fn grad_check<F>(params: &[Tensor], f: F, opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let (_, analytic) = analytic_gradients(params, &f)?;
    compare(params, &f, &analytic, opts)
}
