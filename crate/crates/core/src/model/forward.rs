use crate::error::ensure;
use crate::tensor::{gelu_scalar, layer_norm_stats, matmul_nt, rms_stats, softmax_in_place, Matrix, Rng, Scalar};
use crate::Result;

use super::{Linear, ModelConfig, Norm, NormKind, PosKind, RotaryTable, TransformerParams};

/// Eval mode never draws from the RNG and is a pure function of its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout with `config.dropout_p` on attention probabilities and the
    /// FFN output.
    Train,
}

/// A named activation captured during the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Output of a forward pass over a batch of equal-length sequences. Rows of
/// every matrix are `sequence × position`, flattened sequence-major.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub logits: Matrix<T>,
    /// Residual-stream snapshots: `embed`, `blocks.{l}.attn`,
    /// `blocks.{l}.ffn` and `final_norm`, in execution order.
    pub hidden: Vec<Snapshot<T>>,
    /// Attention probabilities before dropout, `blocks.{l}.head{h}`, each
    /// `[batch·seq × seq]` with zeros above the diagonal. Only filled when
    /// requested.
    pub attention: Vec<Snapshot<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn snapshot(&self, name: &str) -> Option<&Matrix<T>> {
        self.hidden.iter().chain(&self.attention).find(|s| s.name == name).map(|s| &s.value)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TraceOptions {
    pub hidden: bool,
    pub attention: bool,
}

pub(crate) struct NormCache<T> {
    /// Normalized input before the affine transform.
    pub xhat: Matrix<T>,
    /// Per-row `1/sqrt(var + eps)` (layer norm) or `1/rms` (RMS norm).
    pub rstd: Vec<T>,
}

pub(crate) struct BlockCache<T> {
    pub ln1: NormCache<T>,
    pub h1: Matrix<T>,
    /// Queries and keys after rotary.
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Indexed `seq * n_heads + head`, each `[seq_len × seq_len]`.
    pub probs: Vec<Matrix<T>>,
    /// Scaled keep-masks (`0` or `1/(1-p)`), same indexing as `probs`.
    pub attn_masks: Option<Vec<Matrix<T>>>,
    pub att: Matrix<T>,
    pub ln2: NormCache<T>,
    pub h2: Matrix<T>,
    pub u: Matrix<T>,
    pub g: Matrix<T>,
    pub ffn_mask: Option<Matrix<T>>,
}

pub(crate) struct Cache<T> {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<usize>,
    pub blocks: Vec<BlockCache<T>>,
    pub ln_f: NormCache<T>,
    pub hf: Matrix<T>,
    pub rotary: Option<RotaryTable<T>>,
}

/// Forward pass over one sequence, capturing every residual snapshot.
pub fn forward<T: Scalar>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    tokens: &[usize],
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardTrace<T>> {
    let opts = TraceOptions { hidden: true, attention: false };
    forward_batch(params, cfg, &[tokens], mode, rng, opts)
}

/// Forward pass over equal-length sequences.
pub fn forward_batch<T: Scalar, S: AsRef<[usize]>>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    seqs: &[S],
    mode: Mode,
    rng: &mut Rng,
    opts: TraceOptions,
) -> Result<ForwardTrace<T>> {
    let seqs: Vec<&[usize]> = seqs.iter().map(|s| s.as_ref()).collect();
    let (logits, hidden, attention, _) = forward_cached(params, cfg, &seqs, mode, rng, opts, false)?;
    Ok(ForwardTrace { logits, hidden, attention })
}

type Forward<T> = (Matrix<T>, Vec<Snapshot<T>>, Vec<Snapshot<T>>, Option<Cache<T>>);

pub(crate) fn forward_cached<T: Scalar>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    seqs: &[&[usize]],
    mode: Mode,
    rng: &mut Rng,
    opts: TraceOptions,
    keep_cache: bool,
) -> Result<Forward<T>> {
    ensure!(!seqs.is_empty(), "forward: empty batch");
    let seq = seqs[0].len();
    ensure!(seq >= 1, "forward: empty sequence");
    ensure!(seqs.iter().all(|s| s.len() == seq), "forward: sequences must share one length");
    ensure!(seq <= cfg.max_seq, "forward: sequence length {seq} exceeds max_seq {}", cfg.max_seq);
    let tokens: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(crate::Error::Contract(format!("token id {bad} out of range for vocab {}", cfg.vocab_size)));
    }

    let batch = seqs.len();
    let n = batch * seq;
    let d = cfg.d_model;
    let dropout = if mode == Mode::Train && cfg.dropout_p > 0.0 { Some(cfg.dropout_p) } else { None };
    let rotary = (cfg.pos_kind == PosKind::Rotary).then(|| RotaryTable::new(cfg.d_head / cfg.rope_fold, seq, cfg.rope_base));

    let mut hidden = Vec::new();
    let mut attention = Vec::new();
    let snap = |name: String, m: &Matrix<T>, list: &mut Vec<Snapshot<T>>| list.push(Snapshot { name, value: m.clone() });

    let mut x = Matrix::zeros(n, d);
    for (row, &tok) in tokens.iter().enumerate() {
        let out = x.row_mut(row);
        out.copy_from_slice(params.embedding.row(tok));
        if let Some(pe) = &params.pos_embedding {
            for (o, &p) in out.iter_mut().zip(pe.row(row % seq)) {
                *o += p;
            }
        }
    }
    if opts.hidden {
        snap("embed".into(), &x, &mut hidden);
    }

    let mut block_caches = Vec::with_capacity(if keep_cache { cfg.n_layers } else { 0 });
    for (l, block) in params.blocks.iter().enumerate() {
        let (h1, ln1) = apply_norm(&x, &block.attn_norm, cfg);
        let mut q = linear(&h1, &block.q)?;
        let mut k = linear(&h1, &block.k)?;
        let v = linear(&h1, &block.v)?;
        if let Some(table) = &rotary {
            for row in 0..n {
                let pos = row % seq;
                for m in [&mut q, &mut k] {
                    for head in m.row_mut(row).chunks_exact_mut(cfg.d_head) {
                        table.rotate(head, pos, false);
                    }
                }
            }
        }

        let (att, probs, attn_masks) = attention_heads(&q, &k, &v, cfg, batch, seq, dropout, rng);
        if opts.attention {
            for head in 0..cfg.n_heads {
                let mut stacked = Matrix::zeros(n, seq);
                for s in 0..batch {
                    let p = &probs[s * cfg.n_heads + head];
                    for i in 0..seq {
                        stacked.row_mut(s * seq + i).copy_from_slice(p.row(i));
                    }
                }
                attention.push(Snapshot { name: format!("blocks.{l}.head{head}"), value: stacked });
            }
        }
        let o = linear(&att, &block.o)?;
        x.add_assign(&o)?;
        if opts.hidden {
            snap(format!("blocks.{l}.attn"), &x, &mut hidden);
        }

        let (h2, ln2) = apply_norm(&x, &block.ffn_norm, cfg);
        let u = linear(&h2, &block.up)?;
        let g = u.map(gelu_scalar);
        let mut f = linear(&g, &block.down)?;
        let ffn_mask = dropout.map(|p| {
            let mask = keep_mask(rng, n, d, p);
            for (fv, &m) in f.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *fv *= m;
            }
            mask
        });
        x.add_assign(&f)?;
        if opts.hidden {
            snap(format!("blocks.{l}.ffn"), &x, &mut hidden);
        }

        if keep_cache {
            block_caches.push(BlockCache { ln1, h1, q, k, v, probs, attn_masks, att, ln2, h2, u, g, ffn_mask });
        }
    }

    let (hf, ln_f) = apply_norm(&x, &params.final_norm, cfg);
    if opts.hidden {
        snap("final_norm".into(), &hf, &mut hidden);
    }
    let mut logits = matmul_nt(&hf, params.output_weight())?;
    if cfg.logit_scale != 1.0 {
        let s = T::of(cfg.logit_scale);
        logits.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
    if let Some(b) = &params.unembed_bias {
        logits.add_row_broadcast(b)?;
    }

    let cache = keep_cache.then_some(Cache { batch, seq, tokens, blocks: block_caches, ln_f, hf, rotary });
    Ok((logits, hidden, attention, cache))
}

pub(crate) fn linear<T: Scalar>(x: &Matrix<T>, l: &Linear<T>) -> Result<Matrix<T>> {
    let mut y = matmul_nt(x, &l.weight)?;
    if let Some(b) = &l.bias {
        y.add_row_broadcast(b)?;
    }
    Ok(y)
}

fn apply_norm<T: Scalar>(x: &Matrix<T>, norm: &Norm<T>, cfg: &ModelConfig) -> (Matrix<T>, NormCache<T>) {
    let eps = T::of(cfg.norm_eps);
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    let gamma = norm.gamma.as_slice();
    let beta = norm.beta.as_ref().map(|b| b.as_slice());
    for r in 0..n {
        let xr = x.row(r);
        let hat = xhat.row_mut(r);
        match cfg.norm_kind {
            NormKind::LayerNorm => {
                let (mean, s) = layer_norm_stats(xr, eps);
                for (h, &v) in hat.iter_mut().zip(xr) {
                    *h = (v - mean) * s;
                }
                rstd.push(s);
            }
            NormKind::RmsNorm => {
                let s = rms_stats(xr, eps);
                for (h, &v) in hat.iter_mut().zip(xr) {
                    *h = v * s;
                }
                rstd.push(s);
            }
        }
        let hat = xhat.row(r);
        let o = out.row_mut(r);
        for i in 0..d {
            let y = hat[i] * gamma[i];
            o[i] = match beta {
                Some(b) => y + b[i],
                None => y,
            };
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Matrix of scaled keep-masks: `0` with probability `p`, else `1/(1-p)`.
fn keep_mask<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, p: f64) -> Matrix<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let data = (0..rows * cols).map(|_| if rng.uniform() < p { T::zero() } else { keep }).collect();
    Matrix::from_vec(rows, cols, data).expect("mask shape")
}

type HeadOutputs<T> = (Matrix<T>, Vec<Matrix<T>>, Option<Vec<Matrix<T>>>);

/// Causal multi-head attention on already-projected `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
fn attention_heads<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &ModelConfig,
    batch: usize,
    seq: usize,
    dropout: Option<f64>,
    rng: &mut Rng,
) -> HeadOutputs<T> {
    let dh = cfg.d_head;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut att = Matrix::zeros(batch * seq, cfg.d_model);
    let mut probs = Vec::with_capacity(batch * cfg.n_heads);
    let mut masks = dropout.map(|_| Vec::with_capacity(batch * cfg.n_heads));
    for s in 0..batch {
        for head in 0..cfg.n_heads {
            let lanes = head * dh..(head + 1) * dh;
            let mut p = Matrix::zeros(seq, seq);
            for i in 0..seq {
                let qi = &q.row(s * seq + i)[lanes.clone()];
                let row = &mut p.row_mut(i)[..=i];
                for (j, out) in row.iter_mut().enumerate() {
                    let kj = &k.row(s * seq + j)[lanes.clone()];
                    let mut dot = T::zero();
                    for c in 0..dh {
                        dot += qi[c] * kj[c];
                    }
                    *out = dot * scale;
                }
                softmax_in_place(row);
            }
            let mask = dropout.map(|pd| {
                let keep = T::of(1.0 / (1.0 - pd));
                let mut m = Matrix::zeros(seq, seq);
                for i in 0..seq {
                    for j in 0..=i {
                        m.set(i, j, if rng.uniform() < pd { T::zero() } else { keep });
                    }
                }
                m
            });
            for i in 0..seq {
                let out_row = s * seq + i;
                for j in 0..=i {
                    let mut w = p.get(i, j);
                    if let Some(m) = &mask {
                        w *= m.get(i, j);
                    }
                    let vj = &v.row(s * seq + j)[lanes.clone()];
                    let out = &mut att.row_mut(out_row)[lanes.clone()];
                    for c in 0..dh {
                        out[c] += w * vj[c];
                    }
                }
            }
            probs.push(p);
            if let (Some(ms), Some(m)) = (masks.as_mut(), mask) {
                ms.push(m);
            }
        }
    }
    (att, probs, masks)
}
