use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named gradients (or parameters). Ordered so reductions are deterministic.
pub type GradMap = BTreeMap<String, Tensor>;

/// Global l2 norm over every tensor in the map.
pub fn global_norm(grads: &GradMap) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `c / ||g||` when the global norm exceeds `c`.
pub fn clip_global_norm(mut grads: GradMap, c: f64) -> Result<GradMap> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {c}")));
    }
    let norm = global_norm(&grads);
    if norm > c {
        let s = c / norm;
        for g in grads.values_mut() {
            g.scale_assign(s);
        }
    }
    Ok(grads)
}

/// AdamW moments and hyper-parameters for one group of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        OptimizerState { lr, weight_decay, betas: (0.9, 0.999), eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }
}

/// One AdamW step over every parameter named in `grads`.
///
/// Weight decay is decoupled: `θ ← θ − lr·wd·θ` is applied first, then the
/// bias-corrected Adam update.
pub fn adamw_step(params: &mut GradMap, grads: &GradMap, state: &mut OptimizerState) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("{name}: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = state.betas;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (state.lr, state.weight_decay, state.eps);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut()) {
            *pi -= lr * wd * *pi;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
