//! Shared multi-positive softmax kernel.
//!
//! Candidates are indexed uniformly: `0..2N` are batch rows, `2N..2N+n` are class centers.

use ndarray::{Array1, Array2, ArrayView1};

use super::LossResult;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// What anchor `i` contrasts.
pub(crate) struct AnchorPlan<T> {
    /// Positive candidates, ascending.
    pub positives: Vec<usize>,
    /// Denominator candidates, ascending.
    pub denominator: Vec<usize>,
    /// Insert each positive into its own denominator when it is not already there.
    pub union_positive: bool,
    /// Multiplier on the anchor's summed terms.
    pub weight: T,
}

pub(crate) fn evaluate<T, F>(
    z: &Array2<T>,
    centers: Option<&Array2<T>>,
    temperature: T,
    mut plan: F,
) -> Result<LossResult<T>>
where
    T: Scalar,
    F: FnMut(usize) -> Result<AnchorPlan<T>>,
{
    let rows = z.nrows();
    let n_centers = centers.map_or(0, |c| c.nrows());
    let total = rows + n_centers;
    let candidate = |k: usize| -> ArrayView1<'_, T> {
        if k < rows {
            z.row(k)
        } else {
            centers.expect("center index without centers").row(k - rows)
        }
    };

    let mut grad_z = Array2::<T>::zeros(z.raw_dim());
    let mut grad_c = centers.map(|c| Array2::<T>::zeros(c.raw_dim()));
    let mut per_anchor = Vec::with_capacity(rows);
    let mut value = T::zero();
    let inv_t = T::one() / temperature;

    let mut logits = Array1::<T>::zeros(total);
    let mut dlogits = Array1::<T>::zeros(total);
    let mut set: Vec<usize> = Vec::with_capacity(total);

    for i in 0..rows {
        let p = plan(i)?;
        let zi = z.row(i);
        for k in 0..total {
            logits[k] = if k == i { T::zero() } else { zi.dot(&candidate(k)) * inv_t };
        }
        dlogits.fill(T::zero());

        let mut anchor = T::zero();
        for &pos in &p.positives {
            set.clear();
            let inserted = p.union_positive && p.denominator.binary_search(&pos).is_err();
            if inserted {
                let at = p.denominator.partition_point(|&k| k < pos);
                set.extend_from_slice(&p.denominator[..at]);
                set.push(pos);
                set.extend_from_slice(&p.denominator[at..]);
            } else {
                set.extend_from_slice(&p.denominator);
            }
            if set.is_empty() {
                return Err(Error::EmptyDenominator { anchor: i });
            }
            let lse = log_sum_exp(set.iter().map(|&k| logits[k]));
            anchor += lse - logits[pos];
            for &k in &set {
                dlogits[k] += p.weight * (logits[k] - lse).exp();
            }
            dlogits[pos] -= p.weight;
        }
        let anchor = anchor * p.weight;
        value += anchor;
        per_anchor.push(anchor);

        for k in 0..total {
            let g = dlogits[k];
            if g == T::zero() {
                continue;
            }
            let g = g * inv_t;
            let ck = candidate(k);
            grad_z.row_mut(i).scaled_add(g, &ck);
            if k < rows {
                grad_z.row_mut(k).scaled_add(g, &zi);
            } else if let Some(gc) = grad_c.as_mut() {
                gc.row_mut(k - rows).scaled_add(g, &zi);
            }
        }
    }

    if !value.is_finite() {
        return Err(Error::Degenerate(format!("non-finite loss value {value}")));
    }
    Ok(LossResult {
        value,
        per_anchor,
        grad_z,
        grad_centers: grad_c,
    })
}
