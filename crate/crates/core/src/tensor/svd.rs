use crate::{Error, Result};

use super::{Matrix, Scalar};

/// Rotation threshold: a column pair counts as orthogonal once
/// `|aᵢ·aⱼ| ≤ tol · ‖aᵢ‖‖aⱼ‖`.
pub const SVD_TOLERANCE: f64 = 1e-12;
pub const SVD_MAX_SWEEPS: usize = 60;

/// Singular values of `a`, descending, via one-sided (Hestenes) Jacobi.
///
/// Works in `f64` on the orientation with fewer columns, so `min(rows, cols)`
/// values are returned. Columns are rotated pairwise until every pair is
/// orthogonal to within [`SVD_TOLERANCE`]; the singular values are then the
/// column norms.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Result<Vec<f64>> {
    // Column-major working copy of the orientation with n <= m.
    let mut cols: Vec<Vec<f64>> = if a.cols() <= a.rows() {
        (0..a.cols()).map(|c| (0..a.rows()).map(|r| a.get(r, c).as_f64()).collect()).collect()
    } else {
        (0..a.rows()).map(|r| a.row(r).iter().map(|x| x.as_f64()).collect()).collect()
    };
    let n = cols.len();

    // Work on a copy scaled to unit max entry so tiny columns do not
    // underflow the orthogonality test; undo the scale on output.
    let peak = cols.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let unit = if peak > 0.0 && peak.is_finite() { peak } else { 1.0 };
    for x in cols.iter_mut().flatten() {
        *x /= unit;
    }
    // Squared norms below this are numerically zero columns.
    let negligible = f64::MIN_POSITIVE / f64::EPSILON;

    let norms = |cols: &[Vec<f64>]| {
        let mut s: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt() * unit).collect();
        s.sort_by(|x, y| y.total_cmp(x));
        s
    };

    if n < 2 {
        return Ok(norms(&cols));
    }

    for _sweep in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let (left, right) = cols.split_at_mut(j);
                let ci = &mut left[i];
                let cj = &mut right[0];
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for (x, y) in ci.iter().zip(cj.iter()) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= SVD_TOLERANCE * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                    let xi = *x;
                    let yj = *y;
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if !rotated {
            return Ok(norms(&cols));
        }
    }
    Err(Error::Convergence { sweeps: SVD_MAX_SWEEPS, best_estimate: norms(&cols) })
}
