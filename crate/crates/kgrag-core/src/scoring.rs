//! Trajectory scoring: softmax over a logit slice, proximity scoring, and
//! the total order used to rank candidate trajectories.
//!
//! A trajectory is judged against an intent with `m` milestones. The backend
//! reports one logit per completion count `0..=m`; the softmax over that
//! slice yields a distribution over counts. The argmax count is the coarse
//! progress signal, the peak probability and the proximity score are the
//! fine-grained tie-breakers.
//!
//! The proximity score measures how closely the distribution's rank order
//! matches the ideal order: it is `0` exactly when probabilities ascend with
//! the completion index (the top-ranked probability sits at the highest
//! count) and strictly negative otherwise.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("invalid slice [{start}, {end}) for {len} logits")]
    Range { start: usize, end: usize, len: usize },
    #[error("temperature must be positive, got {0}")]
    Domain(f64),
    #[error("expected {expected} logits for {m} milestones, got {got}")]
    LengthMismatch { expected: usize, got: usize, m: usize },
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
}

/// Slice bounds and temperature for [`softmax_slice`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams<F = Scalar> {
    pub start_ind: usize,
    pub end_ind: usize,
    pub temperature: F,
}

impl<F: Real> SoftmaxParams<F> {
    pub fn full(len: usize) -> Self {
        Self { start_ind: 0, end_ind: len, temperature: F::one() }
    }

    pub fn with_temperature(len: usize, temperature: F) -> Self {
        Self { start_ind: 0, end_ind: len, temperature }
    }
}

/// Probability distribution over milestone-completion counts `0..=m`.
///
/// Every entry lies in `[0, 1]` and the entries sum to one within the
/// scalar's tolerance (`1e-9` for `f64`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution<F = Scalar> {
    probs: Vec<F>,
}

impl<F: Real> ProbabilityDistribution<F> {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<F>) -> Result<Self, ScoringError> {
        if probs.is_empty() {
            return Err(ScoringError::InvalidDistribution("empty".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= F::zero() && p <= F::one()) {
                return Err(ScoringError::InvalidDistribution(format!(
                    "entry {i} out of [0, 1]"
                )));
            }
        }
        let sum = probs.iter().fold(F::zero(), |acc, &p| acc + p);
        if (sum - F::one()).abs() > F::distribution_tolerance() {
            return Err(ScoringError::InvalidDistribution(format!(
                "sums to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Softmax over the logit slice `x[start_ind..end_ind]` at the given
/// temperature.
///
/// Uses max-subtraction, so it stays finite for logit magnitudes up to at
/// least `1e4` while computing the same distribution as the plain
/// `exp(x/T) / sum` form.
pub fn softmax_slice<F: Real>(
    x: &[F],
    p: &SoftmaxParams<F>,
) -> Result<ProbabilityDistribution<F>, ScoringError> {
    if p.start_ind >= p.end_ind || p.end_ind > x.len() {
        return Err(ScoringError::Range {
            start: p.start_ind,
            end: p.end_ind,
            len: x.len(),
        });
    }
    if p.temperature.partial_cmp(&F::zero()) != Some(Ordering::Greater) {
        return Err(ScoringError::Domain(
            p.temperature.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let slice = &x[p.start_ind..p.end_ind];
    let max = slice.iter().copied().fold(F::neg_infinity(), F::max);
    let scaled: Vec<F> = slice.iter().map(|&v| ((v - max) / p.temperature).exp()).collect();
    let sum = scaled.iter().fold(F::zero(), |acc, &z| acc + z);
    let probs = scaled.iter().map(|&z| z / sum).collect();
    ProbabilityDistribution::new(probs)
}

/// Proximity of a distribution's rank order to the ideal order.
///
/// Ranks the entries by descending probability (stable: lower index first on
/// ties) and scores `-Σ (ideal[i] - ranked[i])²` against the ideal ranking
/// `[n-1, n-2, .., 0]`. Always `<= 0`; `0` exactly when the probabilities
/// ascend with the index.
pub fn proximity_score<F: Real>(pdf: &ProbabilityDistribution<F>) -> F {
    let n = pdf.len();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        pdf.probs[b].partial_cmp(&pdf.probs[a]).unwrap_or(Ordering::Equal)
    });
    let mut sum: i64 = 0;
    for (i, &r) in ranked.iter().enumerate() {
        let ideal = (n - 1 - i) as i64;
        let diff = ideal - r as i64;
        sum += diff * diff;
    }
    -F::from_f64(sum as f64)
}

/// Score of one candidate trajectory against an intent with `m` milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore<F = Scalar> {
    /// Argmax completion count (lowest index on ties).
    pub progress_count: usize,
    /// Probability mass at `progress_count`.
    pub progress_prob: F,
    /// Non-positive rank-order alignment score.
    pub proximity: F,
    pub distribution: ProbabilityDistribution<F>,
}

/// Scores logits over completion counts `0..=m` at temperature `temperature`.
pub fn trajectory_score<F: Real>(
    logits: &[F],
    m: usize,
    temperature: F,
) -> Result<TrajectoryScore<F>, ScoringError> {
    if logits.len() != m + 1 {
        return Err(ScoringError::LengthMismatch {
            expected: m + 1,
            got: logits.len(),
            m,
        });
    }
    let distribution =
        softmax_slice(logits, &SoftmaxParams::with_temperature(logits.len(), temperature))?;
    let progress_count = distribution.argmax();
    let progress_prob = distribution.probs[progress_count];
    let proximity = proximity_score(&distribution);
    Ok(TrajectoryScore { progress_count, progress_prob, proximity, distribution })
}

/// One side of a ranking comparison: a score plus the path facts that break
/// remaining ties.
#[derive(Debug, Clone, Copy)]
pub struct RankKey<'a, F = Scalar> {
    pub score: &'a TrajectoryScore<F>,
    pub path_len: usize,
    pub path_id: &'a str,
}

/// Total order over scored trajectories: progress count descending, peak
/// probability descending, proximity descending, path length ascending,
/// path id ascending.
pub fn compare<F: Real>(a: &RankKey<'_, F>, b: &RankKey<'_, F>) -> Ordering {
    b.score
        .progress_count
        .cmp(&a.score.progress_count)
        .then_with(|| {
            b.score
                .progress_prob
                .partial_cmp(&a.score.progress_prob)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            b.score
                .proximity
                .partial_cmp(&a.score.proximity)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.path_len.cmp(&b.path_len))
        .then_with(|| a.path_id.cmp(b.path_id))
}
