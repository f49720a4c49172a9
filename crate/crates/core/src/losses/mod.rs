//! Contrastive objectives over a two-view batch, with hand-derived gradients.
//!
//! Every loss here is a sum over anchors of multi-positive softmax cross-entropy terms.
//! They share one evaluation kernel, so the degenerate cases (all-true mask, no
//! centers, one positive per anchor) reduce to each other bit for bit.

mod kernel;
mod objectives;

pub use objectives::{combined, info_nce, paco, reco, reco_with, supcon, BaseObjective, CombinedConfig, RecoOptions};

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A `2N`-view batch: embeddings, class labels and the sibling-view map `j(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    z: Array2<T>,
    labels: Vec<usize>,
    pair_index: Vec<usize>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(z: Array2<T>, labels: Vec<usize>, pair_index: Vec<usize>) -> Result<Self> {
        let n = z.nrows();
        if labels.len() != n || pair_index.len() != n {
            return Err(Error::Shape(format!(
                "{n} embedding rows but {} labels and {} pair entries",
                labels.len(),
                pair_index.len()
            )));
        }
        for (i, &j) in pair_index.iter().enumerate() {
            if j >= n || j == i || pair_index[j] != i {
                return Err(Error::Shape(format!(
                    "pair_index must be a fixed-point-free involution (entry {i} -> {j})"
                )));
            }
            if labels[i] != labels[j] {
                return Err(Error::Shape(format!(
                    "views {i} and {j} of one sample carry different labels"
                )));
            }
        }
        Ok(Self { z, labels, pair_index })
    }

    /// Rows `2k` and `2k + 1` are the two views of sample `k`.
    pub fn from_view_pairs(z: Array2<T>, sample_labels: &[usize]) -> Result<Self> {
        let labels: Vec<usize> = sample_labels.iter().flat_map(|&y| [y, y]).collect();
        let pair_index = (0..labels.len()).map(|i| i ^ 1).collect();
        Self::new(z, labels, pair_index)
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &Array2<T> {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut Array2<T> {
        &mut self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pair_index(&self) -> &[usize] {
        &self.pair_index
    }

    /// Candidates of anchor `i` sharing its label, excluding `i`.
    pub fn positives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let y = self.labels[i];
        (0..self.len()).filter(move |&k| k != i && self.labels[k] == y)
    }

    /// Reorders rows: new row `r` is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut inverse = vec![usize::MAX; n];
        for (r, &old) in perm.iter().enumerate() {
            inverse[old] = r;
        }
        let z = Array2::from_shape_fn((n, self.dim()), |(r, c)| self.z[[perm[r], c]]);
        let labels = perm.iter().map(|&old| self.labels[old]).collect();
        let pair_index = perm.iter().map(|&old| inverse[self.pair_index[old]]).collect();
        Self::new(z, labels, pair_index)
    }
}

/// Learnable per-class centers, one row per class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters<T>(pub Array2<T>);

impl<T: Scalar> ClassCenters<T> {
    pub fn empty(dim: usize) -> Self {
        Self(Array2::zeros((0, dim)))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Which candidates each anchor keeps in its denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeMask {
    mask: Array2<bool>,
    pub seed: u64,
    pub step: u64,
}

impl NegativeMask {
    pub fn new(mask: Array2<bool>, seed: u64, step: u64) -> Result<Self> {
        if mask.nrows() != mask.ncols() {
            return Err(Error::Shape(format!("mask is {}x{}", mask.nrows(), mask.ncols())));
        }
        if (0..mask.nrows()).any(|i| mask[[i, i]]) {
            return Err(Error::Shape("mask diagonal must be false".into()));
        }
        Ok(Self { mask, seed, step })
    }

    /// Every off-diagonal candidate selected.
    pub fn all(n: usize) -> Self {
        Self {
            mask: Array2::from_shape_fn((n, n), |(i, k)| i != k),
            seed: 0,
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.nrows() == 0
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.mask[[i, k]]
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn selected(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .row(i)
            .into_iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(k, _)| k)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        Self {
            mask: Array2::from_shape_fn((n, n), |(r, c)| self.mask[[perm[r], perm[c]]]),
            seed: self.seed,
            step: self.step,
        }
    }

    /// One line per anchor: `i: k1,k2,...`.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.len() {
            let ks: Vec<String> = self.selected(i).map(|k| k.to_string()).collect();
            writeln!(out, "{i}: {}", ks.join(","))?;
        }
        Ok(())
    }
}

/// Loss value with analytic gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    pub value: T,
    pub per_anchor: Vec<T>,
    pub grad_z: Array2<T>,
    pub grad_centers: Option<Array2<T>>,
}

impl<T: Scalar> LossResult<T> {
    /// `anchor_index,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["anchor_index", "value"])?;
        for (i, v) in self.per_anchor.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
