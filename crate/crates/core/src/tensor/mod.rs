//! Dense row-major matrices and the deterministic kernels built on them.
//!
//! Every reduction runs in ascending index order. Parallel kernels split work
//! across output rows only, so results are bitwise identical for any thread
//! count.

mod matrix;
mod ops;
mod rng;
mod scalar;
mod svd;

pub use matrix::Matrix;
pub use ops::{gelu, gelu_grad, gelu_scalar, layer_norm, matmul, matmul_nt, matmul_tn, rms_norm, softmax_in_place, softmax_rows};
pub(crate) use ops::{layer_norm_stats, rms_stats};
pub use rng::{gaussian, Rng};
pub use scalar::{DType, Scalar};
pub use svd::{singular_values, SVD_MAX_SWEEPS, SVD_TOLERANCE};
