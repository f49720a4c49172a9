use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TaxonomyDag;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Base10,
}

/// How raw similarities are mapped into `[0, 1]` per anchor row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `raw(m, n) / raw(m, m)`, clamped. Self-similarity maps to exactly 1.
    #[default]
    SelfRatio,
    /// `(raw(m, n) - min_n) / (max_n - min_n)` over the anchor row, clamped.
    MinMax,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub log_base: LogBase,
    pub normalization: Normalization,
}

fn log_ratio<T: Scalar>(num: usize, den: usize, base: LogBase) -> T {
    let ratio = T::of_usize(num) / T::of_usize(den);
    match base {
        LogBase::Natural => ratio.ln(),
        LogBase::Base10 => ratio.log10(),
    }
}

/// `-log((d + 1) / (2·max(l_m, l_n) + 1))`, written as `log((2L + 1) / (d + 1))`.
pub(crate) fn raw_from_parts<T: Scalar>(d_min: usize, depth_m: usize, depth_n: usize, base: LogBase) -> T {
    let deepest = depth_m.max(depth_n);
    log_ratio(2 * deepest + 1, d_min + 1, base)
}

/// Raw class similarity in nats between two concepts.
pub fn raw_similarity<T: Scalar>(dag: &TaxonomyDag, m: &str, n: &str) -> Result<T> {
    let a = dag.index_of(m)?;
    let b = dag.index_of(n)?;
    let d = dag.shortest_path_idx(a, b);
    Ok(raw_from_parts(d, dag.depth(a), dag.depth(b), LogBase::Natural))
}

/// Pairwise class similarities and the derived negative-acceptance probabilities.
#[derive(Debug, Clone)]
pub struct SimilarityTable<T> {
    class_ids: Vec<String>,
    position: HashMap<String, usize>,
    raw: Array2<T>,
    normalized: Array2<T>,
    accept_prob: Array2<T>,
}

impl<T: Scalar> SimilarityTable<T> {
    pub fn build(dag: &TaxonomyDag, class_ids: &[String], config: &SimilarityConfig) -> Result<Self> {
        let idx: Vec<usize> = class_ids
            .iter()
            .map(|id| dag.index_of(id))
            .collect::<Result<_>>()?;
        for (id, &i) in class_ids.iter().zip(&idx) {
            if dag.depth(i) == 0 {
                return Err(Error::DegenerateAnchor(id.clone()));
            }
        }
        let mut position = HashMap::with_capacity(class_ids.len());
        for (p, id) in class_ids.iter().enumerate() {
            if position.insert(id.clone(), p).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }

        let k = idx.len();
        let mut raw = Array2::<T>::zeros((k, k));
        for a in 0..k {
            let dist = dag.distances_from(idx[a]);
            for b in 0..k {
                raw[[a, b]] = raw_from_parts(dist[idx[b]], dag.depth(idx[a]), dag.depth(idx[b]), config.log_base);
            }
        }

        let normalized = normalize(&raw, config.normalization);
        let accept_prob = normalized.mapv(|s| T::one() - s);
        Ok(Self {
            class_ids: class_ids.to_vec(),
            position,
            raw,
            normalized,
            accept_prob,
        })
    }

    /// Table over every leaf class of the taxonomy, in node order.
    pub fn for_leaf_classes(dag: &TaxonomyDag, config: &SimilarityConfig) -> Result<Self> {
        let ids: Vec<String> = dag
            .leaf_classes()
            .into_iter()
            .map(|i| dag.node(i).id.clone())
            .collect();
        Self::build(dag, &ids, config)
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn raw(&self) -> &Array2<T> {
        &self.raw
    }

    pub fn normalized(&self) -> &Array2<T> {
        &self.normalized
    }

    pub fn accept_prob(&self) -> &Array2<T> {
        &self.accept_prob
    }

    /// Normalized similarity between two class ids.
    pub fn similarity(&self, anchor: &str, candidate: &str) -> Result<T> {
        let a = self.position(anchor).ok_or_else(|| Error::UnknownId(anchor.into()))?;
        let b = self.position(candidate).ok_or_else(|| Error::UnknownId(candidate.into()))?;
        Ok(self.normalized[[a, b]])
    }

    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(out, &self.class_ids, &self.raw)
    }

    pub fn write_normalized_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(out, &self.class_ids, &self.normalized)
    }
}

fn normalize<T: Scalar>(raw: &Array2<T>, method: Normalization) -> Array2<T> {
    let k = raw.nrows();
    let mut out = Array2::<T>::zeros((k, k));
    let clamp = |v: T| v.max(T::zero()).min(T::one());
    for a in 0..k {
        let row = raw.row(a);
        match method {
            Normalization::SelfRatio => {
                let own = raw[[a, a]];
                for b in 0..k {
                    out[[a, b]] = clamp(row[b] / own);
                }
            }
            Normalization::MinMax => {
                let lo = row.iter().copied().fold(T::infinity(), T::min);
                let hi = row.iter().copied().fold(T::neg_infinity(), T::max);
                let span = hi - lo;
                for b in 0..k {
                    out[[a, b]] = if span > T::zero() {
                        clamp((row[b] - lo) / span)
                    } else if a == b {
                        T::one()
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
    out
}

/// Square matrix as CSV: a `class,<id>...` header, then one `<id>,<values>...` row per class.
pub fn write_matrix_csv<T: Scalar, W: Write>(out: W, ids: &[String], matrix: &Array2<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (a, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(matrix.row(a).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
