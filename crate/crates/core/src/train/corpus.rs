use std::fs;
use std::path::Path;

use crate::error::ensure;
use crate::tensor::Rng;
use crate::{Error, Result};

static BUNDLED: &[u8] = include_bytes!("../../data/moby_dick.txt");

/// Byte-level token stream split into a training part and a held-out tail.
#[derive(Clone, Debug)]
pub struct Corpus {
    tokens: Vec<usize>,
    split: usize,
}

impl Corpus {
    /// 256 byte values plus one padding id.
    pub const VOCAB_SIZE: usize = 257;
    pub const PAD: usize = 256;
    /// Fraction of the stream kept out of training.
    pub const HOLDOUT: f64 = 0.05;

    /// The bundled public-domain novel (about 1.2 MB).
    pub fn bundled() -> Self {
        Self::from_bytes(BUNDLED).expect("bundled corpus is large enough")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tokens: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
        let split = ((tokens.len() as f64) * (1.0 - Self::HOLDOUT)).round() as usize;
        ensure!(split >= 2 && tokens.len() - split >= 2, "corpus of {} bytes is too small to split", tokens.len());
        Ok(Self { tokens, split })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn train_tokens(&self) -> &[usize] {
        &self.tokens[..self.split]
    }

    pub fn holdout_tokens(&self) -> &[usize] {
        &self.tokens[self.split..]
    }

    /// `count` evenly spaced held-out windows of `len` tokens. Fewer are
    /// returned when the holdout is short.
    pub fn eval_windows(&self, len: usize, count: usize) -> Result<Vec<Vec<usize>>> {
        let hold = self.holdout_tokens();
        ensure!(hold.len() >= len, "held-out slice ({} tokens) shorter than window {len}", hold.len());
        let room = hold.len() - len;
        let count = count.clamp(1, room + 1);
        Ok((0..count)
            .map(|i| {
                let start = if count == 1 { 0 } else { i * room / (count - 1) };
                hold[start..start + len].to_vec()
            })
            .collect())
    }
}

/// Draws training windows at uniformly random offsets. The draw sequence
/// depends only on the seed, never on the model.
#[derive(Debug)]
pub struct BatchSampler {
    rng: Rng,
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: Rng::seed(seed) }
    }

    /// `batch` windows of `len` tokens from the training part.
    pub fn sample(&mut self, corpus: &Corpus, batch: usize, len: usize) -> Result<Vec<Vec<usize>>> {
        let train = corpus.train_tokens();
        ensure!(train.len() > len, "training slice ({} tokens) too short for windows of {len}", train.len());
        let room = train.len() - len + 1;
        Ok((0..batch)
            .map(|_| {
                let start = self.rng.below(room);
                train[start..start + len].to_vec()
            })
            .collect())
    }
}

/// FNV-1a hash of a batch's token ids, for comparing data order across runs.
pub fn batch_hash(batch: &[Vec<usize>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for seq in batch {
        for &t in seq {
            for b in (t as u32).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        // Sequence separator so [ab][c] differs from [a][bc].
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
