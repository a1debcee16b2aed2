use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::model::{param_layout, ModelConfig, TransformerParams};
use crate::tensor::Scalar;
use crate::Result;

/// AdamW hyperparameters for one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    /// Number of updates applied so far.
    pub step: usize,
    pub m: TransformerParams<T>,
    pub v: TransformerParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { step: 0, m: TransformerParams::zeros(cfg), v: TransformerParams::zeros(cfg) }
    }
}

/// One decoupled-weight-decay Adam update with bias correction. Only
/// projection and embedding matrices decay.
pub fn adamw_step<T: Scalar>(
    params: &mut TransformerParams<T>,
    grads: &TransformerParams<T>,
    state: &mut AdamState<T>,
    cfg: &ModelConfig,
    hp: &AdamHyper,
) -> Result<()> {
    let layout = param_layout(cfg);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let (nb1, nb2) = (T::of(1.0 - hp.beta1), T::of(1.0 - hp.beta2));
    let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    let (lr, eps) = (T::of(hp.lr), T::of(hp.eps));
    let shrink = T::of(1.0 - hp.lr * hp.weight_decay);

    let gs = grads.named();
    let ps = params.named_mut();
    let ms = state.m.named_mut();
    let vs = state.v.named_mut();
    ensure!(
        ps.len() == layout.len() && gs.len() == layout.len() && ms.len() == layout.len() && vs.len() == layout.len(),
        "parameter, gradient and optimizer layouts differ"
    );
    for ((((spec, (_, p)), (gname, g)), (_, m)), (_, v)) in layout.iter().zip(ps).zip(gs).zip(ms).zip(vs) {
        ensure!(
            gname == spec.name && g.shape() == p.shape() && m.shape() == p.shape() && v.shape() == p.shape(),
            "gradient for `{}` does not match its parameter",
            spec.name
        );
        let decay = spec.kind.decays() && hp.weight_decay != 0.0;
        for (((p, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
            if decay {
                *p *= shrink;
            }
            *m = b1 * *m + nb1 * g;
            *v = b2 * *v + nb2 * g * g;
            let mhat = *m * inv_c1;
            let vhat = *v * inv_c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
