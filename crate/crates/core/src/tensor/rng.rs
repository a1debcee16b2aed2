use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Matrix, Scalar};

/// Seeded generator. ChaCha8 is platform independent, so a seed pins the
/// draw sequence everywhere.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Independent child generator seeded from this one.
    pub fn fork(&mut self) -> Rng {
        Rng::seed(self.next_u64())
    }
}

/// `rows × cols` matrix of i.i.d. `N(0, std²)` draws, filled in row-major order.
pub fn gaussian<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    assert!(std >= 0.0, "gaussian: std must be nonnegative");
    let data = (0..rows * cols)
        .map(|_| {
            let z = rng.normal();
            T::of(z * std)
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches by construction")
}
