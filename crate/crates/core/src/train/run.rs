use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, TransformerParams};
use crate::tensor::{Rng, Scalar};
use crate::{Error, Result};

use super::{adamw_step, batch_hash, batch_loss, loss_and_grads, lr_at, AdamHyper, AdamState, BatchSampler, Corpus, TrainConfig};

/// Called at step 0 (before any update) and after every optimizer step.
pub trait StepHook<T: Scalar> {
    fn on_step(&mut self, step: usize, params: &TransformerParams<T>, cfg: &ModelConfig, opt: &AdamState<T>) -> Result<()>;

    /// Most recent checkpoint written by this hook, reported on divergence.
    fn last_checkpoint(&self) -> Option<PathBuf> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    /// Rate used for the update that produced this step.
    pub lr: f64,
    /// Loss of the step's batch before its update.
    pub train_loss: Option<f64>,
    pub eval_loss: Option<f64>,
    /// Training tokens consumed so far.
    pub tokens: usize,
    pub batch_hash: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn eval_at(&self, step: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.step == step).and_then(|r| r.eval_loss)
    }

    pub fn last_eval(&self) -> Option<(usize, f64)> {
        self.rows.iter().rev().find_map(|r| r.eval_loss.map(|l| (r.step, l)))
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut out = String::from("step,lr,train_loss,eval_loss,tokens,batch_hash\n");
        for r in &self.rows {
            let hash = r.batch_hash.map(|h| format!("{h:016x}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.step, r.lr, opt(r.train_loss), opt(r.eval_loss), r.tokens, hash);
        }
        out
    }
}

/// Mean loss over `count` evenly spaced held-out windows of `context_len`
/// predictions each.
pub fn eval_loss<T: Scalar>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    corpus: &Corpus,
    context_len: usize,
    count: usize,
) -> Result<f64> {
    let windows = corpus.eval_windows(context_len + 1, count)?;
    let mut total = 0.0;
    for chunk in windows.chunks(16) {
        total += batch_loss(params, cfg, chunk)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

fn dropout_seed(seed: u64, step: usize) -> u64 {
    (seed ^ 0x5DEE_CE66_D1CE_5EED).wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn diverged<T: Scalar>(step: usize, loss: f64, hooks: &[&mut dyn StepHook<T>]) -> Error {
    Error::Divergence { step, loss, last_checkpoint: hooks.iter().rev().find_map(|h| h.last_checkpoint()) }
}

/// Train `params` from `state.step` up to `tc.total_steps`.
///
/// Batches come from a sampler keyed by `tc.seed` alone and dropout masks
/// from a per-step seed, so a run resumed from a saved optimizer state
/// continues exactly as an uninterrupted one. Evaluation runs at step 0 (for
/// a fresh run), every `eval_interval` steps and at the final step.
pub fn train<T: Scalar>(
    params: &mut TransformerParams<T>,
    cfg: &ModelConfig,
    corpus: &Corpus,
    tc: &TrainConfig,
    state: &mut AdamState<T>,
    hooks: &mut [&mut dyn StepHook<T>],
) -> Result<TrainLog> {
    tc.validate()?;
    cfg.validate()?;
    params.check_shapes(cfg)?;
    crate::error::ensure!(tc.context_len <= cfg.max_seq, "context length {} exceeds the model's max_seq {}", tc.context_len, cfg.max_seq);
    let mut train_cfg = cfg.clone();
    train_cfg.dropout_p = tc.dropout_p;

    let mut log = TrainLog::default();
    let start = state.step;
    if start >= tc.total_steps {
        return Ok(log);
    }
    let mut sampler = BatchSampler::new(tc.seed);
    for _ in 0..start {
        sampler.sample(corpus, tc.batch_size, tc.context_len + 1)?;
    }
    let evaluate = |p: &TransformerParams<T>| eval_loss(p, cfg, corpus, tc.context_len, tc.eval_windows);

    if start == 0 {
        let loss = evaluate(params)?;
        if !loss.is_finite() {
            return Err(diverged(0, loss, hooks));
        }
        log.rows.push(LogRow { step: 0, lr: lr_at(0, tc), train_loss: None, eval_loss: Some(loss), tokens: 0, batch_hash: None });
        for h in hooks.iter_mut() {
            h.on_step(0, params, cfg, state)?;
        }
    }

    for step in start + 1..=tc.total_steps {
        let batch = sampler.sample(corpus, tc.batch_size, tc.context_len + 1)?;
        let mut rng = Rng::seed(dropout_seed(tc.seed, step));
        let (loss, grads) = loss_and_grads(params, &train_cfg, &batch, &mut rng)?;
        if !loss.is_finite() {
            return Err(diverged(step, loss, hooks));
        }
        let lr = lr_at(step, tc);
        let hp = AdamHyper { lr, beta1: tc.beta1, beta2: tc.beta2, eps: tc.adam_eps, weight_decay: tc.weight_decay };
        adamw_step(params, &grads, state, cfg, &hp)?;
        if !params.all_finite() {
            return Err(diverged(step, f64::NAN, hooks));
        }
        let eval = if step % tc.eval_interval == 0 || step == tc.total_steps {
            let l = evaluate(params)?;
            if !l.is_finite() {
                return Err(diverged(step, l, hooks));
            }
            Some(l)
        } else {
            None
        };
        log.rows.push(LogRow {
            step,
            lr,
            train_loss: Some(loss),
            eval_loss: eval,
            tokens: step * tc.batch_size * tc.context_len,
            batch_hash: Some(batch_hash(&batch)),
        });
        for h in hooks.iter_mut() {
            h.on_step(step, params, cfg, state)?;
        }
    }
    Ok(log)
}
