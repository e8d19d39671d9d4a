//! Transform-averaged anomaly scores, IQR thresholds and pool refinement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::flow::FlowModel;
use crate::rng::{self, normal};
use crate::{Error, Result};

/// A bijection on feature space applied before scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    /// Orthogonal `d×d` matrix, row-major; applied as `R · u`.
    Rotation { seed: u64, matrix: Vec<f64> },
    SignFlip { seed: u64, signs: Vec<f64> },
}

impl Transform {
    pub fn name(&self) -> String {
        match self {
            Transform::Identity => "identity".into(),
            Transform::Rotation { seed, .. } => format!("rotation:{seed}"),
            Transform::SignFlip { seed, .. } => format!("flip:{seed}"),
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Transform::Identity => u.to_vec(),
            Transform::Rotation { matrix, .. } => {
                let d = u.len();
                (0..d)
                    .map(|i| matrix[i * d..(i + 1) * d].iter().zip(u).map(|(a, b)| a * b).sum())
                    .collect()
            }
            Transform::SignFlip { signs, .. } => u.iter().zip(signs).map(|(a, s)| a * s).collect(),
        }
    }

    /// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
    pub fn rotation(dim: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= dot * ri;
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                rows.push(v);
            }
        }
        Transform::Rotation {
            seed,
            matrix: rows.concat(),
        }
    }

    /// Random sign flips; at least one coordinate is flipped when `dim ≥ 1`.
    pub fn sign_flip(dim: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut signs: Vec<f64> = (0..dim)
            .map(|_| if rng::uniform(&mut rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 })
            .collect();
        if dim > 0 && signs.iter().all(|&s| s > 0.0) {
            signs[0] = -1.0;
        }
        Transform::SignFlip { seed, signs }
    }
}

/// Fixed list of transforms; the identity is always the first entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSet {
    transforms: Vec<Transform>,
}

impl Default for TransformSet {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformSet {
    pub fn identity() -> Self {
        TransformSet {
            transforms: vec![Transform::Identity],
        }
    }

    /// Identity plus `rotations` seeded rotations and `flips` seeded sign flips.
    pub fn seeded(dim: usize, rotations: usize, flips: usize, seed: u64) -> Self {
        let mut transforms = vec![Transform::Identity];
        for i in 0..rotations {
            transforms.push(Transform::rotation(dim, rng::mix(seed, 2 * i as u64)));
        }
        for i in 0..flips {
            transforms.push(Transform::sign_flip(dim, rng::mix(seed, 2 * i as u64 + 1)));
        }
        TransformSet { transforms }
    }

    /// Builds a set from explicit transforms, inserting the identity if missing.
    pub fn from_transforms(mut transforms: Vec<Transform>) -> Self {
        if !transforms.iter().any(|t| *t == Transform::Identity) {
            transforms.insert(0, Transform::Identity);
        }
        TransformSet { transforms }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Comma-separated transform names, e.g. `identity,rotation:17`.
    pub fn describe(&self) -> String {
        self.transforms
            .iter()
            .map(|t| t.name())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Mean negative log-density of `u` over the transform set; higher is more anomalous.
pub fn anomaly_score(model: &FlowModel, transforms: &TransformSet, u: &[f64]) -> Result<f64> {
    if transforms.is_empty() {
        return Err(Error::InvalidArgument("transform set is empty".into()));
    }
    let mut total = 0.0;
    for t in transforms.transforms() {
        total -= model.log_density(&t.apply(u))?;
    }
    Ok(total / transforms.len() as f64)
}

pub fn score_all<R: AsRef<[f64]>>(model: &FlowModel, transforms: &TransformSet, samples: &[R]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|u| anomaly_score(model, transforms, u.as_ref()))
        .collect()
}

/// Quantile of sorted data at position `q·(n−1)`, linearly interpolated.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub t: f64,
    pub q1: f64,
    pub q3: f64,
}

/// `t = Q3 + k·(Q3 − Q1)` with linearly interpolated quartiles.
pub fn iqr_threshold(scores: &[f64], k: f64) -> Result<Threshold> {
    if scores.len() < 4 {
        return Err(Error::TooFewSamples {
            context: "iqr_threshold",
            needed: 4,
            found: scores.len(),
        });
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!("k must be finite and ≥ 0, got {k}")));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite { context: "scores" });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(Threshold {
        t: q3 + k * (q3 - q1),
        q1,
        q3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub threshold: Threshold,
    pub k: f64,
}

impl ScoreReport {
    /// Thresholds `scores` with their own IQR statistics.
    pub fn new(scores: Vec<f64>, k: f64) -> Result<Self> {
        let threshold = iqr_threshold(&scores, k)?;
        Ok(Self::with_threshold(scores, threshold, k))
    }

    /// Flags `scores` against a threshold computed elsewhere.
    pub fn with_threshold(scores: Vec<f64>, threshold: Threshold, k: f64) -> Self {
        let flags = scores.iter().map(|&s| s > threshold.t).collect();
        ScoreReport {
            scores,
            flags,
            threshold,
            k,
        }
    }

    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// The nominal training pool as a view: member indices into a feature set and
/// an exclusion mask. Refinement never drops members, it only masks them.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    members: Vec<usize>,
    excluded: Vec<bool>,
}

impl Pool {
    pub fn new(members: Vec<usize>) -> Self {
        let excluded = vec![false; members.len()];
        Pool { members, excluded }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn excluded_mask(&self) -> &[bool] {
        &self.excluded
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Members that are not excluded.
    pub fn active(&self) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.excluded)
            .filter(|(_, &e)| !e)
            .map(|(&m, _)| m)
            .collect()
    }
}

/// Excludes exactly the members whose score is strictly above the threshold.
/// The exclusion is recomputed from scratch, so earlier exclusions do not carry over.
pub fn refine_training_pool(pool: &Pool, report: &ScoreReport) -> Result<Pool> {
    if report.scores.len() != pool.len() {
        return Err(Error::LengthMismatch {
            left: pool.len(),
            right: report.scores.len(),
        });
    }
    Ok(Pool {
        members: pool.members.clone(),
        excluded: report.scores.iter().map(|&s| s > report.threshold.t).collect(),
    })
}
