//! Bernoulli negative selection driven by class similarity.
//!
//! Candidate `k` enters anchor `i`'s denominator with probability
//! `1 - normalized(y_i, y_k)`. Draws come from ChaCha8 used as a counter-based
//! generator: the key is the seed, the stream is the step, and entry `(i, k)` of an
//! `n x n` matrix reads 64 bits at word offset `2 (i n + k)`. A mask therefore depends
//! only on `(seed, step)` and not on the order entries are visited in.

use ndarray::Array2;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::NegativeMask;
use crate::scalar::Scalar;
use crate::taxonomy::SimilarityTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Redraw per optimizer step; when false the trainer keys draws by epoch instead.
    pub resample_every_step: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resample_every_step: true,
        }
    }
}

/// `(i, k) -> 1 - normalized(labels[i], labels[k])`, zero on the diagonal.
///
/// `labels` are row positions in `table`.
pub fn acceptance_matrix<T: Scalar>(table: &SimilarityTable<T>, labels: &[usize]) -> Result<Array2<T>> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= table.len()) {
        return Err(Error::UnknownLabel(bad));
    }
    let accept = table.accept_prob();
    let n = labels.len();
    Ok(Array2::from_shape_fn((n, n), |(i, k)| {
        if i == k {
            T::zero()
        } else {
            accept[[labels[i], labels[k]]]
        }
    }))
}

fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn stream(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// The uniform variate behind entry `(i, k)` of an `n x n` draw.
pub fn uniform_at(seed: u64, step: u64, n: usize, i: usize, k: usize) -> f64 {
    let mut rng = stream(seed, step);
    rng.set_word_pos(2 * (i * n + k) as u128);
    to_unit(rng.next_u64())
}

/// One independent Bernoulli trial per off-diagonal entry.
pub fn draw_mask<T: Scalar>(probs: &Array2<T>, config: &SamplerConfig, step: u64) -> Result<NegativeMask> {
    let (rows, cols) = probs.dim();
    if rows != cols {
        return Err(Error::Shape(format!("probability matrix is {rows}x{cols}")));
    }
    for ((row, col), &p) in probs.indexed_iter() {
        let v = p.as_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Probability { row, col, value: v });
        }
    }
    // Sequential reads from word 0 visit exactly the offsets `uniform_at` seeks to.
    let mut rng = stream(config.seed, step);
    let mut mask = Array2::from_elem((rows, rows), false);
    for i in 0..rows {
        for k in 0..rows {
            let u = to_unit(rng.next_u64());
            if i != k {
                mask[[i, k]] = u < probs[[i, k]].as_f64();
            }
        }
    }
    NegativeMask::new(mask, config.seed, step)
}
