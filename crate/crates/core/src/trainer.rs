//! Desk-scale encoder training with any of the contrastive objectives.
//!
//! The encoder is a two-layer tanh MLP whose output rows are L2-normalized. Training
//! uses momentum SGD (`v <- mu v + g; theta <- theta - lr v`) under a cosine schedule
//! that decays from `lr_max` to zero over the run. The per-step objective is the batch
//! loss divided by the number of views.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    combined, info_nce, paco, supcon, BaseObjective, ClassCenters, CombinedConfig, EmbeddingBatch, LossResult,
    NegativeMask, RecoOptions,
};
use crate::sampler::{acceptance_matrix, draw_mask, SamplerConfig};
use crate::scalar::Scalar;
use crate::synth::{Split, SynthDataset};
use crate::taxonomy::{SimilarityConfig, SimilarityTable, TaxonomyDag};

/// Checkpoint magic bytes.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCL1";

/// Sampler streams are keyed by the run seed mixed with this constant.
const SAMPLER_SALT: u64 = 0x5EC0_5A3B_1E5E_ED01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    InfoNce,
    Supcon,
    Paco,
    RecoSupcon,
    RecoPaco,
}

impl Objective {
    pub fn uses_mask(self) -> bool {
        matches!(self, Objective::RecoSupcon | Objective::RecoPaco)
    }

    pub fn uses_centers(self) -> bool {
        matches!(self, Objective::Paco | Objective::RecoPaco)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Weight on the relational term for `reco_*` objectives.
    pub alpha: f64,
    pub lr_max: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Views per batch (two per sample), so always even.
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub mean_over_positives: bool,
    pub include_positive_in_denominator: bool,
    pub resample_every_step: bool,
    /// View jitter; defaults to half the dataset's noise scale.
    pub view_jitter: Option<f64>,
    pub similarity: SimilarityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Supcon,
            alpha: 1.0,
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 50,
            batch_size: 64,
            temperature: 0.1,
            seed: 0,
            hidden_dim: 32,
            embedding_dim: 16,
            mean_over_positives: false,
            include_positive_in_denominator: true,
            resample_every_step: true,
            view_jitter: None,
            similarity: SimilarityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!("batch_size must be even and >= 4, got {}", self.batch_size)));
        }
        if !(self.lr_max >= 0.0) || !self.lr_max.is_finite() {
            return Err(Error::Config(format!("lr_max must be non-negative, got {}", self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Temperature(self.temperature));
        }
        if self.epochs == 0 || self.hidden_dim == 0 || self.embedding_dim < 2 {
            return Err(Error::Config("epochs, hidden_dim and embedding_dim must be positive (embedding_dim >= 2)".into()));
        }
        Ok(())
    }

    /// Cosine-annealed learning rate at `step` of `total_steps`.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> Result<f64> {
        cosine_lr(self.lr_max, step, total_steps)
    }
}

/// `lr_max · (1 + cos(pi · step / total)) / 2`.
pub fn cosine_lr(lr_max: f64, step: usize, total_steps: usize) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange { step, total: total_steps });
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_max * (1.0 + phase.cos()) / 2.0)
}

/// `v <- momentum v + g + weight_decay theta; theta <- theta - lr v`.
pub fn momentum_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Two-layer MLP with tanh hidden units and unit-norm outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub hidden: Array2<T>,
    pub norms: Array1<T>,
    pub z: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

impl<T: Scalar> Encoder<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| T::of(rng.random_range(-bound..bound)))
        };
        let w1 = layer(hidden, input);
        let w2 = layer(output, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(output),
        }
    }

    /// `(input, hidden, output)` widths.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn forward(&self, x: &Array2<T>) -> Result<Forward<T>> {
        if x.ncols() != self.w1.ncols() {
            return Err(Error::Shape(format!(
                "features have width {}, encoder expects {}",
                x.ncols(),
                self.w1.ncols()
            )));
        }
        let hidden = (x.dot(&self.w1.t()) + &self.b1).mapv(T::tanh);
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        let norms = out.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(T::min_positive_value()));
        let z = &out / &norms.view().insert_axis(Axis(1));
        Ok(Forward { hidden, norms, z })
    }

    /// Unit-norm embeddings of `features`.
    pub fn embed(&self, features: &Array2<T>) -> Result<Array2<T>> {
        Ok(self.forward(features)?.z)
    }

    /// Parameter gradients given `dL/dz`.
    pub fn backward(&self, fwd: &Forward<T>, x: &Array2<T>, grad_z: &Array2<T>) -> EncoderGrads<T> {
        // d(o/|o|)/do = (I - z z^T) / |o|
        let proj = (grad_z * &fwd.z).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_out = (grad_z - &(&fwd.z * &proj)) / &fwd.norms.view().insert_axis(Axis(1));
        let w2 = d_out.t().dot(&fwd.hidden);
        let b2 = d_out.sum_axis(Axis(0));
        let d_hidden = d_out.dot(&self.w2) * &fwd.hidden.mapv(|h| T::one() - h * h);
        let w1 = d_hidden.t().dot(x);
        let b1 = d_hidden.sum_axis(Axis(0));
        EncoderGrads { w1, b1, w2, b2 }
    }

    fn tensors_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.w1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
        ]
    }

    /// Every parameter in checkpoint order.
    pub fn flat_params(&self) -> Vec<T> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        let (i, h, o) = self.dims();
        out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        out.write_all(&3u32.to_le_bytes()).map_err(io)?;
        for d in [i, h, o] {
            out.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in self.flat_params() {
            out.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing RCL1 magic"));
        }
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated header"))
        };
        if word(4)? != 3 {
            return Err(bad("expected three layer widths"));
        }
        let (i, h, o) = (word(8)? as usize, word(12)? as usize, word(16)? as usize);
        let count = h * i + h + o * h + o;
        let body = &bytes[20..];
        if body.len() != count * 8 {
            return Err(bad(&format!("expected {} parameter bytes, found {}", count * 8, body.len())));
        }
        let mut vals = body
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())));
        let mut take = |n: usize| -> Vec<T> { vals.by_ref().take(n).collect() };
        let w1 = Array2::from_shape_vec((h, i), take(h * i)).map_err(|e| bad(&e.to_string()))?;
        let b1 = Array1::from_vec(take(h));
        let w2 = Array2::from_shape_vec((o, h), take(o * h)).map_err(|e| bad(&e.to_string()))?;
        let b2 = Array1::from_vec(take(o));
        Ok(Self { w1, b1, w2, b2 })
    }
}

/// Loss for one batch under `objective`.
pub fn objective_loss<T: Scalar>(
    objective: Objective,
    batch: &EmbeddingBatch<T>,
    centers: Option<&ClassCenters<T>>,
    mask: Option<&NegativeMask>,
    config: &TrainConfig,
) -> Result<LossResult<T>> {
    let tau = T::of(config.temperature);
    let reco = RecoOptions {
        include_positive_in_denominator: config.include_positive_in_denominator,
        mean_over_positives: config.mean_over_positives,
    };
    let need_centers = || centers.ok_or_else(|| Error::Config("objective needs class centers".into()));
    let need_mask = || mask.ok_or_else(|| Error::Config("objective needs a negative mask".into()));
    match objective {
        Objective::InfoNce => info_nce(batch, tau),
        Objective::Supcon => supcon(batch, tau, config.mean_over_positives),
        Objective::Paco => paco(batch, need_centers()?, tau),
        Objective::RecoSupcon | Objective::RecoPaco => {
            let base = if objective == Objective::RecoSupcon { BaseObjective::Supcon } else { BaseObjective::Paco };
            let cfg = CombinedConfig { base, alpha: T::of(config.alpha), temperature: tau, reco };
            combined(batch, centers, need_mask()?, &cfg)
        }
    }
}

/// Value and gradients of the per-view mean loss of one batch of views.
pub fn batch_gradients<T: Scalar>(
    encoder: &Encoder<T>,
    centers: Option<&ClassCenters<T>>,
    views: &Array2<T>,
    sample_labels: &[usize],
    mask: Option<&NegativeMask>,
    config: &TrainConfig,
) -> Result<(T, EncoderGrads<T>, Option<Array2<T>>)> {
    let fwd = encoder.forward(views)?;
    let batch = EmbeddingBatch::from_view_pairs(fwd.z.clone(), sample_labels)?;
    let loss = objective_loss(config.objective, &batch, centers, mask, config)?;
    let scale = T::one() / T::of_usize(batch.len());
    let grad_z = loss.grad_z.mapv(|g| g * scale);
    let grads = encoder.backward(&fwd, views, &grad_z);
    let center_grads = loss.grad_centers.map(|g| g.mapv(|v| v * scale));
    Ok((loss.value * scale, grads, center_grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub encoder: Encoder<T>,
    pub centers: Option<ClassCenters<T>>,
    /// Mean per-view loss of each epoch.
    pub history: Vec<f64>,
}

fn class_center_init<T: Scalar>(
    encoder: &Encoder<T>,
    dataset: &SynthDataset<T>,
    first_batch: &[usize],
    first_z: &Array2<T>,
) -> Result<ClassCenters<T>> {
    let k = dataset.class_ids.len();
    let dim = first_z.ncols();
    let mut sums = Array2::<T>::zeros((k, dim));
    let mut counts = vec![0usize; k];
    for (s, &i) in first_batch.iter().enumerate() {
        let y = dataset.labels[i];
        for v in 0..2 {
            sums.row_mut(y).scaled_add(T::one(), &first_z.row(2 * s + v));
            counts[y] += 1;
        }
    }
    for y in 0..k {
        if counts[y] == 0 {
            let members: Vec<usize> = (0..dataset.len())
                .filter(|&i| dataset.labels[i] == y && dataset.splits[i] == Split::Train)
                .collect();
            if members.is_empty() {
                continue;
            }
            let z = encoder.embed(&dataset.rows(&members))?;
            sums.row_mut(y).assign(&z.sum_axis(Axis(0)));
            counts[y] = members.len();
        }
        if counts[y] > 0 {
            let c = T::of_usize(counts[y]);
            sums.row_mut(y).mapv_inplace(|v| v / c);
        }
    }
    Ok(ClassCenters(sums))
}

/// Reorders `order` so consecutive runs hold near-equal class counts: each class is
/// shuffled on its own, then classes are dealt round-robin in a freshly shuffled order
/// per round.
fn stratified_shuffle(order: &mut [usize], labels: &[usize], rng: &mut ChaCha8Rng) {
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    for i in sorted {
        let y = labels[i];
        if by_class.len() <= y {
            by_class.resize(y + 1, Vec::new());
        }
        by_class[y].push(i);
    }
    for members in &mut by_class {
        members.shuffle(rng);
    }
    let mut classes: Vec<usize> = (0..by_class.len()).filter(|&y| !by_class[y].is_empty()).collect();
    let mut out = 0;
    let mut round = 0;
    while out < order.len() {
        classes.retain(|&y| by_class[y].len() > round);
        classes.shuffle(rng);
        for &y in &classes {
            order[out] = by_class[y][round];
            out += 1;
        }
        round += 1;
    }
}

/// Trains an encoder on the train split of `dataset`.
///
/// Deterministic for a fixed dataset and config: initialization, shuffling, view jitter
/// and negative masks all derive from `config.seed`.
pub fn train<T: Scalar>(dataset: &SynthDataset<T>, taxonomy: &TaxonomyDag, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut order = dataset.indices(Split::Train);
    // Batches are class-stratified; see `stratified_shuffle`.
    let per_batch = config.batch_size / 2;
    if order.len() < 2 {
        return Err(Error::Empty("train split needs at least two samples".into()));
    }
    let table = if config.objective.uses_mask() {
        Some(SimilarityTable::<T>::build(taxonomy, &dataset.class_ids, &config.similarity)?)
    } else {
        None
    };
    let sampler = SamplerConfig {
        seed: config.seed ^ SAMPLER_SALT,
        resample_every_step: config.resample_every_step,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = Encoder::<T>::new(dataset.dim(), config.hidden_dim, config.embedding_dim, &mut rng);
    let mut velocity = Encoder {
        w1: Array2::zeros(encoder.w1.raw_dim()),
        b1: Array1::zeros(encoder.b1.raw_dim()),
        w2: Array2::zeros(encoder.w2.raw_dim()),
        b2: Array1::zeros(encoder.b2.raw_dim()),
    };
    let mut centers: Option<ClassCenters<T>> = None;
    let mut center_velocity: Option<Array2<T>> = None;

    // Trailing batches with fewer than two samples are dropped.
    let batches_per_epoch = order.len() / per_batch + usize::from(order.len() % per_batch >= 2);
    let total_steps = batches_per_epoch * config.epochs;
    let jitter = T::of(config.view_jitter.unwrap_or(dataset.noise_scale / 2.0));
    let (momentum, decay) = (T::of(config.momentum), T::of(config.weight_decay));

    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        stratified_shuffle(&mut order, &dataset.labels, &mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(per_batch) {
            if chunk.len() < 2 {
                continue;
            }
            let views = dataset.views(chunk, jitter, &mut rng);
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();

            if config.objective.uses_centers() && centers.is_none() {
                let z = encoder.embed(&views)?;
                let c = class_center_init(&encoder, dataset, chunk, &z)?;
                center_velocity = Some(Array2::zeros(c.0.raw_dim()));
                centers = Some(c);
            }
            let mask = match &table {
                Some(table) => {
                    let view_labels: Vec<usize> = labels.iter().flat_map(|&y| [y, y]).collect();
                    let probs = acceptance_matrix(table, &view_labels)?;
                    let key = if sampler.resample_every_step { step } else { epoch };
                    Some(draw_mask(&probs, &sampler, key as u64)?)
                }
                None => None,
            };

            let (value, grads, center_grads) =
                match batch_gradients(&encoder, centers.as_ref(), &views, &labels, mask.as_ref(), config) {
                    Ok(r) => r,
                    Err(Error::Degenerate(_)) => {
                        return Err(Error::Diverged { epoch, loss: f64::NAN });
                    }
                    Err(e) => return Err(e),
                };
            let value = value.as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }

            let lr = T::of(cosine_lr(config.lr_max, step, total_steps)?);
            let g = [
                grads.w1.as_slice().expect("contiguous"),
                grads.b1.as_slice().expect("contiguous"),
                grads.w2.as_slice().expect("contiguous"),
                grads.b2.as_slice().expect("contiguous"),
            ];
            for ((p, v), g) in encoder.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(g) {
                momentum_step(p, g, v, lr, momentum, decay);
            }
            if let (Some(c), Some(cv), Some(cg)) = (centers.as_mut(), center_velocity.as_mut(), center_grads) {
                momentum_step(
                    c.0.as_slice_mut().expect("contiguous"),
                    cg.as_slice().expect("contiguous"),
                    cv.as_slice_mut().expect("contiguous"),
                    lr,
                    momentum,
                    decay,
                );
            }

            epoch_sum += value;
            epoch_batches += 1;
            step += 1;
        }
        let mean = epoch_sum / epoch_batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }

    Ok(TrainOutcome { encoder, centers, history })
}

/// Writes `epoch,mean_loss` rows.
pub fn write_history_csv<W: Write>(history: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "mean_loss"])?;
    for (e, v) in history.iter().enumerate() {
        w.write_record([e.to_string(), format!("{v}")])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
