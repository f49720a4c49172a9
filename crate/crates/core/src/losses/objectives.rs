use serde::{Deserialize, Serialize};

use super::kernel::{evaluate, AnchorPlan};
use super::{ClassCenters, EmbeddingBatch, LossResult, NegativeMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_common<T: Scalar>(batch: &EmbeddingBatch<T>, temperature: T) -> Result<()> {
    if batch.len() < 4 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::Temperature(temperature.as_f64()));
    }
    Ok(())
}

fn others(n: usize, i: usize) -> Vec<usize> {
    (0..n).filter(|&k| k != i).collect()
}

fn weight<T: Scalar>(mean: bool, count: usize) -> T {
    if mean {
        T::one() / T::of_usize(count)
    } else {
        T::one()
    }
}

/// Self-supervised InfoNCE: the sibling view is the only positive.
pub fn info_nce<T: Scalar>(batch: &EmbeddingBatch<T>, temperature: T) -> Result<LossResult<T>> {
    check_common(batch, temperature)?;
    let n = batch.len();
    evaluate(batch.z(), None, temperature, |i| {
        Ok(AnchorPlan {
            positives: vec![batch.pair_index()[i]],
            denominator: others(n, i),
            union_positive: true,
            weight: T::one(),
        })
    })
}

/// Supervised contrastive loss. `mean_over_positives` divides each anchor's sum by `|P(i)|`.
pub fn supcon<T: Scalar>(batch: &EmbeddingBatch<T>, temperature: T, mean_over_positives: bool) -> Result<LossResult<T>> {
    check_common(batch, temperature)?;
    let n = batch.len();
    evaluate(batch.z(), None, temperature, |i| {
        let positives: Vec<usize> = batch.positives(i).collect();
        if positives.is_empty() {
            return Err(Error::NoPositive(i));
        }
        Ok(AnchorPlan {
            weight: weight(mean_over_positives, positives.len()),
            positives,
            denominator: others(n, i),
            union_positive: true,
        })
    })
}

/// Parametric contrastive loss: the anchor's class center joins its positives and every
/// center joins the denominator. An empty center matrix reduces to [`supcon`].
pub fn paco<T: Scalar>(batch: &EmbeddingBatch<T>, centers: &ClassCenters<T>, temperature: T) -> Result<LossResult<T>> {
    check_common(batch, temperature)?;
    let n = batch.len();
    let k = centers.len();
    if k > 0 {
        if centers.0.ncols() != batch.dim() {
            return Err(Error::Shape(format!(
                "centers have width {}, embeddings {}",
                centers.0.ncols(),
                batch.dim()
            )));
        }
        if let Some(&y) = batch.labels().iter().find(|&&y| y >= k) {
            return Err(Error::MissingCenter(y));
        }
    }
    evaluate(batch.z(), (k > 0).then_some(&centers.0), temperature, |i| {
        let mut positives: Vec<usize> = batch.positives(i).collect();
        if k > 0 {
            positives.push(n + batch.labels()[i]);
        }
        if positives.is_empty() {
            return Err(Error::NoPositive(i));
        }
        let mut denominator = others(n, i);
        denominator.extend(n..n + k);
        Ok(AnchorPlan {
            positives,
            denominator,
            union_positive: true,
            weight: T::one(),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoOptions {
    /// Add the current positive to its own denominator when the mask dropped it.
    pub include_positive_in_denominator: bool,
    pub mean_over_positives: bool,
}

impl Default for RecoOptions {
    fn default() -> Self {
        Self {
            include_positive_in_denominator: true,
            mean_over_positives: false,
        }
    }
}

/// Relational contrastive loss: same-class positives against the mask-selected negatives.
pub fn reco<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    mask: &NegativeMask,
    temperature: T,
    include_positive_in_denominator: bool,
) -> Result<LossResult<T>> {
    reco_with(
        batch,
        mask,
        temperature,
        RecoOptions {
            include_positive_in_denominator,
            mean_over_positives: false,
        },
    )
}

pub fn reco_with<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    mask: &NegativeMask,
    temperature: T,
    options: RecoOptions,
) -> Result<LossResult<T>> {
    check_common(batch, temperature)?;
    if mask.len() != batch.len() {
        return Err(Error::Shape(format!(
            "mask is {0}x{0}, batch has {1} rows",
            mask.len(),
            batch.len()
        )));
    }
    evaluate(batch.z(), None, temperature, |i| {
        let positives: Vec<usize> = batch.positives(i).collect();
        if positives.is_empty() {
            return Err(Error::NoPositive(i));
        }
        Ok(AnchorPlan {
            weight: weight(options.mean_over_positives, positives.len()),
            positives,
            denominator: mask.selected(i).collect(),
            union_positive: options.include_positive_in_denominator,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseObjective {
    Supcon,
    Paco,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedConfig<T> {
    pub base: BaseObjective,
    pub alpha: T,
    pub temperature: T,
    pub reco: RecoOptions,
}

impl<T: Scalar> CombinedConfig<T> {
    pub fn new(base: BaseObjective, temperature: T) -> Self {
        Self {
            base,
            alpha: T::one(),
            temperature,
            reco: RecoOptions::default(),
        }
    }
}

/// `base + alpha · reco`. `centers` is required for a PaCo base.
pub fn combined<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    centers: Option<&ClassCenters<T>>,
    mask: &NegativeMask,
    config: &CombinedConfig<T>,
) -> Result<LossResult<T>> {
    if mask.len() != batch.len() {
        return Err(Error::Shape(format!(
            "mask is {0}x{0}, batch has {1} rows",
            mask.len(),
            batch.len()
        )));
    }
    let base = match config.base {
        BaseObjective::Supcon => supcon(batch, config.temperature, config.reco.mean_over_positives)?,
        BaseObjective::Paco => {
            let centers = centers.ok_or_else(|| Error::Config("PaCo base needs class centers".into()))?;
            paco(batch, centers, config.temperature)?
        }
    };
    if config.alpha == T::zero() {
        return Ok(base);
    }
    let extra = reco_with(batch, mask, config.temperature, config.reco)?;
    let alpha = config.alpha;
    let mut grad_z = base.grad_z;
    grad_z.scaled_add(alpha, &extra.grad_z);
    Ok(LossResult {
        value: base.value + alpha * extra.value,
        per_anchor: base
            .per_anchor
            .iter()
            .zip(&extra.per_anchor)
            .map(|(&b, &r)| b + alpha * r)
            .collect(),
        grad_z,
        grad_centers: base.grad_centers,
    })
}
