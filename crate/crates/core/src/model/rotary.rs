use crate::error::ensure;
use crate::tensor::{Matrix, Scalar};
use crate::Result;

/// Precomputed `cos`/`sin` of `pos · base^(−2i/sub_dim)` for one sub-block
/// width. Angles are evaluated in `f64` and rounded once, so a source model
/// and its head-dim clone read bitwise identical tables.
#[derive(Clone, Debug)]
pub(crate) struct RotaryTable<T> {
    sub_dim: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RotaryTable<T> {
    pub(crate) fn new(sub_dim: usize, max_pos: usize, base: f64) -> Self {
        let half = sub_dim / 2;
        let mut cos = Vec::with_capacity(max_pos * half);
        let mut sin = Vec::with_capacity(max_pos * half);
        for pos in 0..max_pos {
            for i in 0..half {
                let theta = base.powf(-((2 * i) as f64) / sub_dim as f64);
                let angle = pos as f64 * theta;
                cos.push(T::of(angle.cos()));
                sin.push(T::of(angle.sin()));
            }
        }
        Self { sub_dim, cos, sin }
    }

    /// Rotate one head's lanes in place. `lanes.len()` is a multiple of the
    /// sub-block width; every sub-block gets the same rotation. Pairs are
    /// `(i, i + sub_dim/2)` within a sub-block. `inverse` applies the
    /// transpose, which is what backpropagation needs.
    #[inline]
    pub(crate) fn rotate(&self, lanes: &mut [T], pos: usize, inverse: bool) {
        let half = self.sub_dim / 2;
        let cos = &self.cos[pos * half..(pos + 1) * half];
        let sin = &self.sin[pos * half..(pos + 1) * half];
        for block in lanes.chunks_exact_mut(self.sub_dim) {
            let (lo, hi) = block.split_at_mut(half);
            for i in 0..half {
                let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
                let x1 = lo[i];
                let x2 = hi[i];
                lo[i] = x1 * c - x2 * s;
                hi[i] = x1 * s + x2 * c;
            }
        }
    }
}

/// Apply rotary embedding to a per-head `[seq × d_head]` matrix.
///
/// The rotation uses the source width `d_head / head_dim_fold` and its
/// frequency ladder, repeated over each of the `head_dim_fold` sub-blocks.
/// `head_dim_fold == 1` is standard rotary.
pub fn rotary_apply<T: Scalar>(x: &Matrix<T>, positions: &[usize], head_dim_fold: usize, base: f64) -> Result<Matrix<T>> {
    let d_head = x.cols();
    ensure!(
        head_dim_fold >= 1 && d_head.is_multiple_of(2 * head_dim_fold),
        "rotary: d_head {d_head} not divisible by 2 x fold {head_dim_fold}"
    );
    ensure!(positions.len() == x.rows(), "rotary: {} positions for {} rows", positions.len(), x.rows());
    let max_pos = positions.iter().copied().max().map_or(0, |p| p + 1);
    let table = RotaryTable::new(d_head / head_dim_fold, max_pos, base);
    let mut out = x.clone();
    for (r, &pos) in positions.iter().enumerate() {
        table.rotate(out.row_mut(r), pos, false);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian, Rng};

    /// Direct formula: for pair i, angle = pos · base^(−2i/d).
    fn reference(x: &[f64], pos: usize, base: f64) -> Vec<f64> {
        let d = x.len();
        let half = d / 2;
        let mut out = x.to_vec();
        for i in 0..half {
            let a = pos as f64 / base.powf(2.0 * i as f64 / d as f64);
            out[i] = x[i] * a.cos() - x[i + half] * a.sin();
            out[i + half] = x[i] * a.sin() + x[i + half] * a.cos();
        }
        out
    }

    #[test]
    fn position_zero_is_identity() {
        let x: Matrix<f64> = gaussian(&mut Rng::seed(1), 1, 8, 1.0);
        assert_eq!(rotary_apply(&x, &[0], 1, 10_000.0).unwrap(), x);
    }

    #[test]
    fn matches_reference_formula() {
        let x: Matrix<f64> = gaussian(&mut Rng::seed(2), 5, 8, 1.0);
        let pos = [0, 1, 2, 7, 31];
        let y = rotary_apply(&x, &pos, 1, 10_000.0).unwrap();
        for (r, &p) in pos.iter().enumerate() {
            let expect = reference(x.row(r), p, 10_000.0);
            for (a, b) in y.row(r).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn folded_rotation_of_duplicate_is_duplicate() {
        let x: Matrix<f64> = gaussian(&mut Rng::seed(3), 3, 4, 1.0);
        let dup = x.gather_cols(&[0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        let pos = [3, 4, 5];
        let src = rotary_apply(&x, &pos, 1, 10_000.0).unwrap();
        let dst = rotary_apply(&dup, &pos, 2, 10_000.0).unwrap();
        assert_eq!(dst, src.gather_cols(&[0, 1, 2, 3, 0, 1, 2, 3]).unwrap());
    }

    #[test]
    fn inverse_undoes_rotation() {
        let x: Matrix<f64> = gaussian(&mut Rng::seed(4), 1, 8, 1.0);
        let table = RotaryTable::<f64>::new(8, 10, 10_000.0);
        let mut lanes = x.row(0).to_vec();
        table.rotate(&mut lanes, 9, false);
        table.rotate(&mut lanes, 9, true);
        for (a, b) in lanes.iter().zip(x.row(0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_fold() {
        let x = Matrix::<f64>::zeros(1, 6);
        assert!(rotary_apply(&x, &[0], 2, 10_000.0).is_err());
    }
}
