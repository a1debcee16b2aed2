//! Function-preservation checks between a source model and its clone.

use serde::{Deserialize, Serialize};

use crate::cloning::{ExpansionReceipt, Strategy};
use crate::error::ensure;
use crate::model::{forward_batch, ForwardTrace, Mode, ModelConfig, TraceOptions, TransformerParams};
use crate::tensor::{DType, Matrix, Rng, Scalar};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub name: String,
    pub max_abs_diff: f64,
    /// `max |d - s| / max |s|` over the snapshot.
    pub max_rel_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyMetadata {
    pub precision: DType,
    pub strategy: Strategy,
    pub embed_fold: usize,
    pub ffn_fold: usize,
    pub head_count_fold: usize,
    pub head_dim_fold: usize,
    pub snr_db: f64,
    pub expansion_seed: u64,
    pub sequences: usize,
    pub positions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Residual snapshots and attention probabilities, in execution order.
    pub snapshots: Vec<SnapshotDiff>,
    pub logit_max_abs_diff: f64,
    pub logit_max_rel_diff: f64,
    /// Fraction of positions where both models pick the same next token.
    pub argmax_agreement: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// First snapshot (or `logits`) whose absolute diff exceeds the tolerance.
    pub first_failing: Option<String>,
    pub metadata: VerifyMetadata,
}

impl VerifyReport {
    pub fn snapshot(&self, name: &str) -> Option<&SnapshotDiff> {
        self.snapshots.iter().find(|s| s.name == name)
    }

    /// Largest absolute diff over all snapshots.
    pub fn max_snapshot_diff(&self) -> f64 {
        self.snapshots.iter().map(|s| s.max_abs_diff).fold(0.0, f64::max)
    }
}

/// `count` random sequences of `len` token ids below `vocab`.
pub fn random_sequences(vocab: usize, count: usize, len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Rng::seed(seed);
    (0..count).map(|_| (0..len).map(|_| rng.below(vocab)).collect()).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Compare a clone against its source on `sequences`, computing both in
/// `precision`. Destination snapshots are compared with source snapshots
/// routed through the receipt's clone maps; attention probabilities of each
/// destination head are compared with those of the head it clones.
#[allow(clippy::too_many_arguments)]
pub fn verify_preservation<T: Scalar>(
    src: &TransformerParams<T>,
    src_cfg: &ModelConfig,
    dst: &TransformerParams<T>,
    dst_cfg: &ModelConfig,
    receipt: &ExpansionReceipt,
    sequences: &[Vec<usize>],
    tolerance: f64,
    precision: DType,
) -> Result<VerifyReport> {
    match precision {
        DType::F64 => compare(&src.cast::<f64>(), src_cfg, &dst.cast::<f64>(), dst_cfg, receipt, sequences, tolerance, precision),
        DType::F32 => compare(&src.cast::<f32>(), src_cfg, &dst.cast::<f32>(), dst_cfg, receipt, sequences, tolerance, precision),
    }
}

#[derive(Default)]
struct Accum {
    abs: f64,
    scale: f64,
}

impl Accum {
    fn add<T: Scalar>(&mut self, dst: &Matrix<T>, expect: &Matrix<T>) {
        for (a, b) in dst.as_slice().iter().zip(expect.as_slice()) {
            let (a, b) = (a.as_f64(), b.as_f64());
            let d = (a - b).abs();
            // NaN must count as a failure.
            self.abs = if d.is_nan() { f64::INFINITY } else { self.abs.max(d) };
            self.scale = self.scale.max(b.abs());
        }
    }

    fn rel(&self) -> f64 {
        if self.scale > 0.0 {
            self.abs / self.scale
        } else {
            self.abs
        }
    }
}

fn traced<T: Scalar>(p: &TransformerParams<T>, cfg: &ModelConfig, seq: &[usize]) -> Result<ForwardTrace<T>> {
    let mut eval = cfg.clone();
    eval.dropout_p = 0.0;
    let opts = TraceOptions { hidden: true, attention: true };
    forward_batch(p, &eval, &[seq], Mode::Eval, &mut Rng::seed(0), opts)
}

#[allow(clippy::too_many_arguments)]
fn compare<T: Scalar>(
    src: &TransformerParams<T>,
    src_cfg: &ModelConfig,
    dst: &TransformerParams<T>,
    dst_cfg: &ModelConfig,
    receipt: &ExpansionReceipt,
    sequences: &[Vec<usize>],
    tolerance: f64,
    precision: DType,
) -> Result<VerifyReport> {
    receipt.check_configs(src_cfg, dst_cfg)?;
    src.check_shapes(src_cfg)?;
    dst.check_shapes(dst_cfg)?;
    ensure!(!sequences.is_empty(), "verify needs at least one sequence");
    ensure!(
        receipt.hidden_map.src_size() == src_cfg.d_model && receipt.hidden_map.dest_size() == dst_cfg.d_model,
        "receipt hidden map does not match the model widths"
    );

    // Snapshot order and names come from the destination trace.
    let mut names: Vec<String> = Vec::new();
    let mut accums: Vec<Accum> = Vec::new();
    let mut logits = Accum::default();
    let mut agree = 0usize;
    let mut positions = 0usize;
    for seq in sequences {
        let s = traced(src, src_cfg, seq)?;
        let d = traced(dst, dst_cfg, seq)?;
        let pairs = ordered_pairs(&s, &d, receipt, dst_cfg)?;
        if names.is_empty() {
            names = pairs.iter().map(|(n, _, _)| n.clone()).collect();
            accums = names.iter().map(|_| Accum::default()).collect();
        }
        for (acc, (_, dm, em)) in accums.iter_mut().zip(&pairs) {
            acc.add(dm, em);
        }
        logits.add(&d.logits, &s.logits);
        for r in 0..s.logits.rows() {
            agree += usize::from(argmax(s.logits.row(r)) == argmax(d.logits.row(r)));
            positions += 1;
        }
    }

    let snapshots: Vec<SnapshotDiff> =
        names.into_iter().zip(&accums).map(|(name, a)| SnapshotDiff { name, max_abs_diff: a.abs, max_rel_diff: a.rel() }).collect();
    let first_failing = snapshots
        .iter()
        .find(|s| !(s.max_abs_diff <= tolerance))
        .map(|s| s.name.clone())
        .or_else(|| (!(logits.abs <= tolerance)).then(|| "logits".to_string()));
    let exp = &receipt.expansion;
    Ok(VerifyReport {
        logit_max_abs_diff: logits.abs,
        logit_max_rel_diff: logits.rel(),
        argmax_agreement: agree as f64 / positions as f64,
        tolerance,
        pass: first_failing.is_none(),
        first_failing,
        snapshots,
        metadata: VerifyMetadata {
            precision,
            strategy: exp.strategy,
            embed_fold: exp.embed_fold,
            ffn_fold: exp.ffn_fold,
            head_count_fold: exp.head_count_fold,
            head_dim_fold: exp.head_dim_fold,
            snr_db: exp.snr_db,
            expansion_seed: exp.seed,
            sequences: sequences.len(),
            positions,
        },
    })
}

/// Snapshot name, destination value, expected value.
type Pair<T> = (String, Matrix<T>, Matrix<T>);

/// (name, destination value, expected value) in execution order:
/// `embed`, then per block the attention heads, `attn` and `ffn`, then
/// `final_norm`.
fn ordered_pairs<T: Scalar>(
    s: &ForwardTrace<T>,
    d: &ForwardTrace<T>,
    receipt: &ExpansionReceipt,
    dst_cfg: &ModelConfig,
) -> Result<Vec<Pair<T>>> {
    let mut out = Vec::new();
    let hidden = |name: &str| -> Result<Pair<T>> {
        let sv = s.snapshot(name).expect("source trace has every hidden snapshot");
        let dv = d.snapshot(name).expect("destination trace has every hidden snapshot");
        Ok((name.to_string(), dv.clone(), receipt.hidden_map.apply_cols(sv)?))
    };
    out.push(hidden("embed")?);
    for l in 0..dst_cfg.n_layers {
        for head in 0..dst_cfg.n_heads {
            let name = format!("blocks.{l}.head{head}");
            let src_name = format!("blocks.{l}.head{}", receipt.source_head(head));
            let dv = d.snapshot(&name).expect("attention captured");
            let sv = s.snapshot(&src_name).expect("attention captured");
            out.push((name, dv.clone(), sv.clone()));
        }
        out.push(hidden(&format!("blocks.{l}.attn"))?);
        out.push(hidden(&format!("blocks.{l}.ffn"))?);
    }
    out.push(hidden("final_norm")?);
    Ok(out)
}

/// Fraction of positions where the greedy next token of both models agrees,
/// computed in the models' own precision.
pub fn verify_argmax_stability<T: Scalar>(
    src: &TransformerParams<T>,
    src_cfg: &ModelConfig,
    dst: &TransformerParams<T>,
    dst_cfg: &ModelConfig,
    sequences: &[Vec<usize>],
) -> Result<f64> {
    ensure!(!sequences.is_empty(), "argmax stability needs at least one sequence");
    let opts = TraceOptions::default();
    let mut agree = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let run = |p: &TransformerParams<T>, cfg: &ModelConfig| {
            let mut eval = cfg.clone();
            eval.dropout_p = 0.0;
            forward_batch(p, &eval, &[seq], Mode::Eval, &mut Rng::seed(0), opts)
        };
        let a = run(src, src_cfg)?.logits;
        let b = run(dst, dst_cfg)?.logits;
        ensure!(a.shape() == b.shape(), "logit shapes differ: {:?} vs {:?}", a.shape(), b.shape());
        for r in 0..a.rows() {
            agree += usize::from(argmax(a.row(r)) == argmax(b.row(r)));
            total += 1;
        }
    }
    Ok(agree as f64 / total as f64)
}
