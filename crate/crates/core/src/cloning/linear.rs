use crate::error::ensure;
use crate::tensor::{Matrix, Rng, Scalar};
use crate::{Error, Result};

use super::{make_clone_map, CloneMap, Strategy};

/// Standard deviation of the noise added by noisy strategies.
///
/// The decibel ratio is taken against the per-block signal `W_S / n_in`, so
/// `σ_η = std(W_S) / n_in · 10^(−snr_db/20)`. Zero when the input is not
/// expanded (there is no free block to absorb noise).
pub fn noise_std<T: Scalar>(w: &Matrix<T>, in_map: &CloneMap, snr_db: f64) -> f64 {
    let n_in = in_map.dest_size() as f64 / in_map.src_size() as f64;
    if n_in <= 1.0 {
        return 0.0;
    }
    let (_, std) = w.mean_std();
    std / n_in * 10f64.powf(-snr_db / 20.0)
}

/// Expand a `[out × in]` weight and its optional `1 × out` bias.
///
/// For cloned inputs, destination row `r'` must reproduce source row
/// `out_map(r')`: the weights over each source column's preimages sum to
/// `W_S[out_map(r'), j]`. The strategy decides how that sum is split.
pub fn expand_linear<T: Scalar>(
    w: &Matrix<T>,
    b: Option<&Matrix<T>>,
    in_map: &CloneMap,
    out_map: &CloneMap,
    strategy: Strategy,
    snr_db: f64,
    rng: &mut Rng,
) -> Result<(Matrix<T>, Option<Matrix<T>>)> {
    ensure!(
        w.shape() == (out_map.src_size(), in_map.src_size()),
        "weight {:?} does not match clone maps ({} × {})",
        w.shape(),
        out_map.src_size(),
        in_map.src_size()
    );
    if let Some(b) = b {
        ensure!(b.shape() == (1, out_map.src_size()), "bias {:?} does not match output size {}", b.shape(), out_map.src_size());
    }
    ensure!(snr_db.is_finite(), "snr_db must be finite");

    let in_counts = in_map.preimage_counts();
    let in_ord = in_map.ordinals();
    let out_ord = out_map.ordinals();
    if strategy.is_diagonal() {
        let (fi, fo) = (in_map.uniform_fold(), out_map.uniform_fold());
        if fi.is_none() || fi != fo {
            return Err(Error::StrategyInapplicable {
                strategy: strategy.to_string(),
                tensor: format!("{} × {} weight", w.rows(), w.cols()),
                reason: format!("input fold {fi:?} differs from output fold {fo:?}"),
            });
        }
    }

    let (rows, cols) = (out_map.dest_size(), in_map.dest_size());
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let src_row = w.row(out_map.source_of(r));
        let dst = out.row_mut(r);
        for (c, v) in dst.iter_mut().enumerate() {
            let j = in_map.source_of(c);
            *v = if strategy.is_diagonal() {
                if in_ord[c] == out_ord[r] {
                    src_row[j]
                } else {
                    T::zero()
                }
            } else {
                src_row[j] / T::of(in_counts[j] as f64)
            };
        }
    }

    let sigma = if strategy.is_noisy() { noise_std(w, in_map, snr_db) } else { 0.0 };
    if sigma > 0.0 {
        let groups = in_map.preimages();
        for r in 0..rows {
            let dst = out.row_mut(r);
            for group in &groups {
                let (last, free) = group.split_last().expect("every source has a preimage");
                let mut sum = T::zero();
                for &c in free {
                    let eta = T::of(rng.normal() * sigma);
                    dst[c] += eta;
                    sum += eta;
                }
                dst[*last] -= sum;
            }
        }
    }

    let bias = b.map(|b| Matrix::row_vector(&out_map.apply(b.as_slice())));
    Ok((out, bias))
}

/// Case-2 duplication of a lookup table: each row repeated `n_e` times
/// horizontally.
pub fn expand_embedding<T: Scalar>(e: &Matrix<T>, n_e: usize) -> Result<Matrix<T>> {
    ensure!(n_e >= 1, "embed fold must be at least 1");
    make_clone_map(e.cols(), n_e).apply_cols(e)
}

/// Duplicate a norm's gain and optional shift `n` times.
pub fn expand_norm<T: Scalar>(gamma: &Matrix<T>, beta: Option<&Matrix<T>>, n: usize) -> Result<(Matrix<T>, Option<Matrix<T>>)> {
    ensure!(n >= 1, "norm fold must be at least 1");
    let map = make_clone_map(gamma.cols(), n);
    let beta = beta.map(|b| map.apply_cols(b)).transpose()?;
    Ok((map.apply_cols(gamma)?, beta))
}

/// Duplicate every position row of a learned position table `n_e` times.
pub fn expand_positional<T: Scalar>(p: &Matrix<T>, n_e: usize) -> Result<Matrix<T>> {
    expand_embedding(p, n_e)
}
