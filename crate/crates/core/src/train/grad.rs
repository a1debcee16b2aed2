use crate::error::ensure;
use crate::model::{
    forward_cached, BlockCache, Cache, Linear, Mode, ModelConfig, Norm, NormCache, NormKind, TraceOptions, TransformerParams,
};
use crate::tensor::{gelu_grad, matmul, matmul_tn, Matrix, Rng, Scalar};
use crate::Result;

/// Split windows of `context_len + 1` tokens into inputs and next-token
/// targets.
fn split_windows(batch: &[Vec<usize>]) -> Result<(Vec<&[usize]>, Vec<usize>)> {
    ensure!(!batch.is_empty(), "empty batch");
    let len = batch[0].len();
    ensure!(len >= 2, "windows need at least two tokens, got {len}");
    ensure!(batch.iter().all(|w| w.len() == len), "all windows in a batch must have the same length");
    let inputs = batch.iter().map(|w| &w[..len - 1]).collect();
    let targets = batch.iter().flat_map(|w| w[1..].iter().copied()).collect();
    Ok((inputs, targets))
}

/// Mean cross-entropy and, if requested, its gradient w.r.t. the logits.
fn cross_entropy<T: Scalar>(logits: &Matrix<T>, targets: &[usize], want_grad: bool) -> (f64, Option<Matrix<T>>) {
    let (n, v) = logits.shape();
    let inv_n = 1.0 / n as f64;
    let mut grad = want_grad.then(|| Matrix::zeros(n, v));
    let mut total = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.as_f64()));
        let sum: f64 = row.iter().map(|&x| (x.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[t].as_f64();
        if let Some(g) = grad.as_mut() {
            let out = g.row_mut(r);
            for (c, (o, &x)) in out.iter_mut().zip(row).enumerate() {
                let p = (x.as_f64() - lse).exp();
                let y = if c == t { 1.0 } else { 0.0 };
                *o = T::of((p - y) * inv_n);
            }
        }
    }
    (total * inv_n, grad)
}

/// Mean next-token cross-entropy of `batch` with dropout off.
pub fn batch_loss<T: Scalar>(params: &TransformerParams<T>, cfg: &ModelConfig, batch: &[Vec<usize>]) -> Result<f64> {
    let (inputs, targets) = split_windows(batch)?;
    let (logits, ..) = forward_cached(params, cfg, &inputs, Mode::Eval, &mut Rng::seed(0), TraceOptions::default(), false)?;
    Ok(cross_entropy(&logits, &targets, false).0)
}

/// Mean next-token cross-entropy of `batch` and its gradient with respect to
/// every parameter. Dropout is active when `cfg.dropout_p > 0`, with masks
/// drawn from `rng`.
pub fn loss_and_grads<T: Scalar>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    batch: &[Vec<usize>],
    rng: &mut Rng,
) -> Result<(f64, TransformerParams<T>)> {
    let (inputs, targets) = split_windows(batch)?;
    let (logits, _, _, cache) = forward_cached(params, cfg, &inputs, Mode::Train, rng, TraceOptions::default(), true)?;
    let cache = cache.expect("cache requested");
    let (loss, dlogits) = cross_entropy(&logits, &targets, true);
    let mut dlogits = dlogits.expect("gradient requested");

    let mut g = TransformerParams::zeros(cfg);
    if let Some(b) = g.unembed_bias.as_mut() {
        *b = dlogits.col_sums();
    }
    if cfg.logit_scale != 1.0 {
        dlogits = dlogits.scale(T::of(cfg.logit_scale));
    }
    let d_out = matmul_tn(&dlogits, &cache.hf)?;
    match g.unembedding.as_mut() {
        Some(u) => *u = d_out,
        None => g.embedding.add_assign(&d_out)?,
    }
    let dhf = matmul(&dlogits, params.output_weight())?;
    let mut dx = norm_backward(&dhf, &cache.ln_f, &params.final_norm, &mut g.final_norm, cfg.norm_kind);

    for l in (0..cfg.n_layers).rev() {
        dx = block_backward(dx, &cache, l, params, &mut g, cfg)?;
    }

    for (row, &tok) in cache.tokens.iter().enumerate() {
        for (e, &d) in g.embedding.row_mut(tok).iter_mut().zip(dx.row(row)) {
            *e += d;
        }
        if let Some(p) = g.pos_embedding.as_mut() {
            for (e, &d) in p.row_mut(row % cache.seq).iter_mut().zip(dx.row(row)) {
                *e += d;
            }
        }
    }
    Ok((loss, g))
}

fn norm_backward<T: Scalar>(dy: &Matrix<T>, c: &NormCache<T>, norm: &Norm<T>, g: &mut Norm<T>, kind: NormKind) -> Matrix<T> {
    let (n, d) = dy.shape();
    let inv_d = T::of(1.0 / d as f64);
    let gamma = norm.gamma.as_slice();
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xhat = c.xhat.row(r);
        for i in 0..d {
            g.gamma.as_mut_slice()[i] += dyr[i] * xhat[i];
            dxhat[i] = dyr[i] * gamma[i];
        }
        if let Some(b) = g.beta.as_mut() {
            for (bv, &dv) in b.as_mut_slice().iter_mut().zip(dyr) {
                *bv += dv;
            }
        }
        let mut sum = T::zero();
        let mut dot = T::zero();
        for i in 0..d {
            sum += dxhat[i];
            dot += dxhat[i] * xhat[i];
        }
        let mean = if kind == NormKind::LayerNorm { sum * inv_d } else { T::zero() };
        let proj = dot * inv_d;
        let s = c.rstd[r];
        for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = s * (dxhat[i] - mean - xhat[i] * proj);
        }
    }
    dx
}

fn linear_backward<T: Scalar>(x: &Matrix<T>, dy: &Matrix<T>, l: &Linear<T>, g: &mut Linear<T>) -> Result<Matrix<T>> {
    g.weight = matmul_tn(dy, x)?;
    if let Some(b) = g.bias.as_mut() {
        *b = dy.col_sums();
    }
    matmul(dy, &l.weight)
}

fn block_backward<T: Scalar>(
    dx2: Matrix<T>,
    cache: &Cache<T>,
    l: usize,
    params: &TransformerParams<T>,
    g: &mut TransformerParams<T>,
    cfg: &ModelConfig,
) -> Result<Matrix<T>> {
    let bc = &cache.blocks[l];
    let b = &params.blocks[l];
    let gb = &mut g.blocks[l];

    let mut df = dx2.clone();
    if let Some(mask) = &bc.ffn_mask {
        for (d, &m) in df.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *d *= m;
        }
    }
    let mut du = linear_backward(&bc.g, &df, &b.down, &mut gb.down)?;
    for (d, &u) in du.as_mut_slice().iter_mut().zip(bc.u.as_slice()) {
        *d *= gelu_grad(u);
    }
    let dh2 = linear_backward(&bc.h2, &du, &b.up, &mut gb.up)?;
    let mut dx1 = dx2;
    dx1.add_assign(&norm_backward(&dh2, &bc.ln2, &b.ffn_norm, &mut gb.ffn_norm, cfg.norm_kind))?;

    let datt = linear_backward(&bc.att, &dx1, &b.o, &mut gb.o)?;
    let (dq, dk, dv) = attention_backward(&datt, bc, cache, cfg);
    let mut dh1 = linear_backward(&bc.h1, &dq, &b.q, &mut gb.q)?;
    dh1.add_assign(&linear_backward(&bc.h1, &dk, &b.k, &mut gb.k)?)?;
    dh1.add_assign(&linear_backward(&bc.h1, &dv, &b.v, &mut gb.v)?)?;
    let mut dx = dx1;
    dx.add_assign(&norm_backward(&dh1, &bc.ln1, &b.attn_norm, &mut gb.attn_norm, cfg.norm_kind))?;
    Ok(dx)
}

/// Gradients of the attention output w.r.t. the projected (pre-rotary) q, k
/// and v.
fn attention_backward<T: Scalar>(
    datt: &Matrix<T>,
    bc: &BlockCache<T>,
    cache: &Cache<T>,
    cfg: &ModelConfig,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (seq, dh) = (cache.seq, cfg.d_head);
    let n = cache.batch * seq;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dq = Matrix::zeros(n, cfg.d_model);
    let mut dk = Matrix::zeros(n, cfg.d_model);
    let mut dv = Matrix::zeros(n, cfg.d_model);
    let mut dp = vec![T::zero(); seq];
    for s in 0..cache.batch {
        for head in 0..cfg.n_heads {
            let idx = s * cfg.n_heads + head;
            let p = &bc.probs[idx];
            let mask = bc.attn_masks.as_ref().map(|m| &m[idx]);
            let lanes = head * dh..(head + 1) * dh;
            for i in 0..seq {
                let ri = s * seq + i;
                let da = &datt.row(ri)[lanes.clone()];
                for j in 0..=i {
                    let rj = s * seq + j;
                    let vj = &bc.v.row(rj)[lanes.clone()];
                    let mut acc = T::zero();
                    for c in 0..dh {
                        acc += da[c] * vj[c];
                    }
                    let m = mask.map_or(T::one(), |m| m.get(i, j));
                    dp[j] = acc * m;
                    let w = p.get(i, j) * m;
                    let dvj = &mut dv.row_mut(rj)[lanes.clone()];
                    for c in 0..dh {
                        dvj[c] += w * da[c];
                    }
                }
                let mut dot = T::zero();
                for j in 0..=i {
                    dot += dp[j] * p.get(i, j);
                }
                for j in 0..=i {
                    let rj = s * seq + j;
                    let ds = p.get(i, j) * (dp[j] - dot) * scale;
                    let kj = &bc.k.row(rj)[lanes.clone()];
                    let dqi = &mut dq.row_mut(ri)[lanes.clone()];
                    for c in 0..dh {
                        dqi[c] += ds * kj[c];
                    }
                    let qi = &bc.q.row(ri)[lanes.clone()];
                    let dkj = &mut dk.row_mut(rj)[lanes.clone()];
                    for c in 0..dh {
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    }
    if let Some(table) = &cache.rotary {
        for r in 0..n {
            let pos = r % seq;
            for m in [&mut dq, &mut dk] {
                for head in m.row_mut(r).chunks_exact_mut(dh) {
                    table.rotate(head, pos, true);
                }
            }
        }
    }
    (dq, dk, dv)
}
