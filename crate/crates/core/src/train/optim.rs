use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One AdamW update. Decay is applied to the weights before the moment step.
/// Nothing is modified if any gradient is non-finite.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut AdamState,
    hp: &AdamWParams,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || names.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(format!(
            "{n} parameters, {} names, {} gradients, {} moment slots",
            names.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        if grads[i].shape() != params[i].shape() {
            return Err(Error::shape(format!(
                "`{}`: gradient {:?} vs parameter {:?}",
                names[i],
                grads[i].shape(),
                params[i].shape()
            )));
        }
        if !grads[i].is_finite() {
            return Err(Error::Training { param: names[i].clone(), msg: "non-finite gradient".into() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..n {
        let p = params[i].data_mut();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            p[j] -= hp.lr * hp.weight_decay * p[j];
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= hp.lr * mh / (vh.sqrt() + hp.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
