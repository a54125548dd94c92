use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-parameter Adam moments and the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to every gradient (1 when not clipped).
    pub clip_scale: f64,
}

/// Global L2 norm of a gradient set; fails on the first non-finite entry.
pub fn global_norm(grads: &[(String, Tensor<f32>)]) -> Result<f64> {
    let mut sq = 0.0f64;
    for (name, g) in grads {
        for (i, &x) in g.data().iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Optimizer(format!(
                    "non-finite gradient {x} in {name} at index {i} (shape {:?})",
                    g.shape()
                )));
            }
            sq += f64::from(x) * f64::from(x);
        }
    }
    Ok(sq.sqrt())
}

/// One update of `params` from `grads` (which may cover a subset of the
/// parameters; the rest are untouched). Gradients are clipped to the global
/// norm ceiling before they enter the moment estimates.
pub fn optimizer_step(
    params: &mut ParamStore<f32>,
    grads: &[(String, Tensor<f32>)],
    state: &mut OptimState,
    hyper: &Hyper,
) -> Result<StepStats> {
    let grad_norm = global_norm(grads)?;
    let clip_scale = match hyper.clip {
        Some(c) if grad_norm > c => c / grad_norm,
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);

    for (name, g) in grads {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "optimizer_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        match hyper.kind {
            OptimizerKind::Sgd => {
                for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                    let step = hyper.lr * clip_scale * f64::from(gi);
                    *w = (f64::from(*w) - step) as f32;
                }
            }
            OptimizerKind::Adam => {
                let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
                    m: vec![0.0; g.len()],
                    v: vec![0.0; g.len()],
                });
                for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    let gi = f64::from(gi) * clip_scale;
                    mom.m[i] = hyper.beta1 * mom.m[i] + (1.0 - hyper.beta1) * gi;
                    mom.v[i] = hyper.beta2 * mom.v[i] + (1.0 - hyper.beta2) * gi * gi;
                    let m_hat = mom.m[i] / bc1;
                    let v_hat = mom.v[i] / bc2;
                    let step = hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
                    if step != 0.0 {
                        *w = (f64::from(*w) - step) as f32;
                    }
                }
            }
        }
        if let Some(i) = p.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Optimizer(format!("update made {name}[{i}] non-finite")));
        }
    }
    Ok(StepStats { grad_norm, clip_scale })
}
