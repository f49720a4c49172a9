//! Synthetic hierarchical Gaussian data.
//!
//! Class means come from a random walk down the taxonomy: the root sits at the origin
//! and each node adds an isotropic Gaussian step to its primary parent's mean. Classes
//! that split deeper in the tree therefore share more of their walk and sit closer.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::TaxonomyDag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub feature_dim: usize,
    pub samples_per_class: usize,
    /// Walk step per depth level (entry `d - 1` for nodes at depth `d`); the last entry
    /// repeats for deeper levels.
    pub drift_scales: Vec<f64>,
    pub noise_scale: f64,
    /// Share of each class's samples placed in the train split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            samples_per_class: 200,
            drift_scales: vec![1.0],
            noise_scale: 0.5,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn drift_at(&self, depth: usize) -> f64 {
        let i = depth.saturating_sub(1).min(self.drift_scales.len().saturating_sub(1));
        self.drift_scales.get(i).copied().unwrap_or(0.0)
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::Config(format!("feature_dim must be >= 2, got {}", self.feature_dim)));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("samples_per_class must be >= 2 to fill both splits".into()));
        }
        if self.drift_scales.is_empty() || self.drift_scales.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("drift scales must be positive".into()));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::Config("noise_scale must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset<T> {
    pub features: Array2<T>,
    /// Row positions in `class_ids`.
    pub labels: Vec<usize>,
    pub class_ids: Vec<String>,
    /// Realm id per sample: the class's ancestor directly below the root.
    pub realms: Vec<String>,
    pub splits: Vec<Split>,
    /// Within-class spread; views jitter by half of it.
    pub noise_scale: f64,
    /// Generated class means, one row per class (empty when read back from CSV).
    pub class_means: Array2<T>,
}

impl<T: Scalar> SynthDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn realm_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.realms {
            if !out.contains(r) {
                out.push(r.clone());
            }
        }
        out
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<T> {
        Array2::from_shape_fn((idx.len(), self.dim()), |(r, c)| self.features[[idx[r], c]])
    }

    /// Two jittered views per listed sample: rows `2k` and `2k + 1` come from `idx[k]`.
    pub fn views(&self, idx: &[usize], jitter: T, rng: &mut ChaCha8Rng) -> Array2<T> {
        let d = self.dim();
        let mut out = Array2::zeros((2 * idx.len(), d));
        for (k, &i) in idx.iter().enumerate() {
            for v in 0..2 {
                for c in 0..d {
                    let e: f64 = StandardNormal.sample(rng);
                    out[[2 * k + v, c]] = self.features[[i, c]] + jitter * T::of(e);
                }
            }
        }
        out
    }

    /// `id,label,realm,split,f0,...` with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".into(), "realm".into(), "split".into()];
        header.extend((0..self.dim()).map(|c| format!("f{c}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                i.to_string(),
                self.class_ids[self.labels[i]].clone(),
                self.realms[i].clone(),
                self.splits[i].as_str().to_string(),
            ];
            rec.extend(self.features.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the CSV written by [`SynthDataset::write_csv`]. Classes are numbered in order
    /// of first appearance.
    pub fn read_csv<R: Read>(input: R, noise_scale: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let expected = ["id", "label", "realm", "split"];
        if header.len() < 5 || expected.iter().zip(header.iter()).any(|(a, b)| *a != b) {
            return Err(Error::Parse {
                path: "<dataset>".into(),
                line: 1,
                message: "expected header id,label,realm,split,f0,...".into(),
            });
        }
        let dim = header.len() - 4;
        let mut class_ids: Vec<String> = Vec::new();
        let mut position: HashMap<String, usize> = HashMap::new();
        let (mut labels, mut realms, mut splits, mut flat) = (vec![], vec![], vec![], vec![]);
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            let bad = |message: String| Error::Parse { path: "<dataset>".into(), line, message };
            let label = rec[1].to_string();
            let next = class_ids.len();
            let y = *position.entry(label.clone()).or_insert(next);
            if y == next {
                class_ids.push(label);
            }
            labels.push(y);
            realms.push(rec[2].to_string());
            splits.push(match &rec[3] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(format!("unknown split `{other}`"))),
            });
            for c in 0..dim {
                let v: f64 = rec[4 + c]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad feature value `{}`", &rec[4 + c])))?;
                flat.push(T::of(v));
            }
        }
        let features = Array2::from_shape_vec((labels.len(), dim), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            features,
            labels,
            class_ids,
            realms,
            splits,
            noise_scale,
            class_means: Array2::zeros((0, dim)),
        })
    }

    pub fn read_csv_file(path: impl AsRef<Path>, noise_scale: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), noise_scale)
    }
}

/// Samples a dataset over the leaf classes of `taxonomy`.
pub fn generate<T: Scalar>(taxonomy: &TaxonomyDag, spec: &SynthSpec) -> Result<SynthDataset<T>> {
    spec.validate()?;
    let classes = taxonomy.leaf_classes();
    if classes.len() < 2 {
        return Err(Error::Degenerate(format!(
            "taxonomy has {} leaf classes, need at least 2",
            classes.len()
        )));
    }
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Parents before children: sort by depth, then node order.
    let mut order: Vec<usize> = (0..taxonomy.len()).collect();
    order.sort_by_key(|&i| (taxonomy.depth(i), i));
    let mut means = Array2::<f64>::zeros((taxonomy.len(), d));
    for &node in &order {
        let Some(parent) = taxonomy.primary_parent(node) else { continue };
        let step = Normal::new(0.0, spec.drift_at(taxonomy.depth(node))).expect("positive drift");
        for c in 0..d {
            means[[node, c]] = means[[parent, c]] + step.sample(&mut rng);
        }
    }

    let spc = spec.samples_per_class;
    let n_train = ((spc as f64 * spec.train_fraction).round() as usize).clamp(1, spc - 1);
    let noise = Normal::new(0.0, spec.noise_scale).expect("positive noise");
    let total = classes.len() * spc;
    let mut features = Array2::<T>::zeros((total, d));
    let mut labels = Vec::with_capacity(total);
    let mut realms = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut class_means = Array2::<T>::zeros((classes.len(), d));
    for (y, &node) in classes.iter().enumerate() {
        let realm_node = taxonomy.ancestor_at_depth(node, 1).unwrap_or(node);
        let realm = taxonomy.node(realm_node).id.clone();
        for c in 0..d {
            class_means[[y, c]] = T::of(means[[node, c]]);
        }
        for s in 0..spc {
            let row = y * spc + s;
            for c in 0..d {
                features[[row, c]] = T::of(means[[node, c]] + noise.sample(&mut rng));
            }
            labels.push(y);
            realms.push(realm.clone());
            splits.push(if s < n_train { Split::Train } else { Split::Test });
        }
    }

    Ok(SynthDataset {
        features,
        labels,
        class_ids: classes.iter().map(|&i| taxonomy.node(i).id.clone()).collect(),
        realms,
        splits,
        noise_scale: spec.noise_scale,
        class_means,
    })
}

/// Squared Euclidean distance between two rows.
pub fn squared_distance<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}
