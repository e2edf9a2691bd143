//! Server-side contribution-score selection and model aggregation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metacore::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionScore {
    pub device: usize,
    pub u: f64,
    /// `u + C` with one constant `C` per round, positive for every device.
    pub shifted_u: f64,
}

/// Default margin added on top of `max(0, −min u)` when shifting scores.
pub const DEFAULT_SHIFT_MARGIN: f64 = 1.0;

/// Round constant `C = max(0, −min u) + margin`.
pub fn shift_constant(u: &[f64], margin: f64) -> f64 {
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        (-min).max(0.0) + margin
    } else {
        margin
    }
}

/// Builds scores for devices `ids` with raw contributions `u`.
pub fn contribution_scores(ids: &[usize], u: &[f64], margin: f64) -> Result<Vec<ContributionScore>> {
    if ids.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: u.len(),
        });
    }
    let c = shift_constant(u, margin);
    Ok(ids
        .iter()
        .zip(u)
        .map(|(&device, &u)| ContributionScore {
            device,
            u,
            shifted_u: u + c,
        })
        .collect())
}

fn by_u_desc(a: &ContributionScore, b: &ContributionScore) -> Ordering {
    b.u.total_cmp(&a.u).then(a.device.cmp(&b.device))
}

/// The `n_k` devices with the largest `u`, ties going to lower ids.
/// Returned ids are ascending.
pub fn select_top_k(scores: &[ContributionScore], n_k: usize) -> Result<Vec<usize>> {
    if n_k == 0 || n_k > scores.len() {
        return Err(invalid(format!(
            "n_k = {n_k} outside 1..={}",
            scores.len()
        )));
    }
    let mut work = scores.to_vec();
    if n_k < work.len() {
        work.select_nth_unstable_by(n_k - 1, by_u_desc);
    }
    let mut ids: Vec<usize> = work[..n_k].iter().map(|s| s.device).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Coordinate-wise mean of the received models.
pub fn aggregate(models: &[ParamVector]) -> Result<ParamVector> {
    let first = models.first().ok_or_else(|| invalid("no models to aggregate"))?;
    let mut acc = first.clone();
    for m in &models[1..] {
        if m.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: m.dim(),
            });
        }
        acc = &acc + m;
    }
    Ok(&acc * (1.0 / models.len() as f64))
}
