//! Gaussian-process Bayesian optimization with Expected Improvement.
//!
//! Everything is oriented for maximization. The surrogate works on the unit
//! cube: each hyperparameter is mapped to `[0, 1]`, log-scaled dimensions in
//! log space.

mod gp;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use gp::{GpSurrogate, KernelParams};

use crate::math::{norm_cdf, norm_pdf};
use crate::rng::{self, mix, normal};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("search space has no dimensions".into()));
        }
        for d in &dims {
            if !(d.lower < d.upper) || (d.scale == Scale::Log && !(d.lower > 0.0)) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "invalid bounds for {}: [{}, {}]",
                    d.name,
                    d.lower,
                    d.upper
                )));
            }
        }
        Ok(SearchSpace { dims })
    }

    /// `α, β ∈ [1e-5, 1e-1]` (log) and `k ∈ [0.5, 3]` (linear).
    pub fn rad_default() -> Self {
        let dim = |name: &str, lower, upper, scale| Dimension {
            name: name.into(),
            lower,
            upper,
            scale,
        };
        SearchSpace {
            dims: vec![
                dim("alpha", 1e-5, 1e-1, Scale::Log),
                dim("beta", 1e-5, 1e-1, Scale::Log),
                dim("k", 0.5, 3.0, Scale::Linear),
            ],
        }
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_unit(&self, h: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(h)
            .map(|(d, &v)| match d.scale {
                Scale::Linear => (v - d.lower) / (d.upper - d.lower),
                Scale::Log => {
                    (libm::log(v) - libm::log(d.lower)) / (libm::log(d.upper) - libm::log(d.lower))
                }
            })
            .collect()
    }

    /// Inverse of [`SearchSpace::to_unit`]; results are clamped into bounds.
    pub fn from_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &u)| {
                let u = u.clamp(0.0, 1.0);
                let v = match d.scale {
                    Scale::Linear => d.lower + u * (d.upper - d.lower),
                    Scale::Log => libm::exp(
                        libm::log(d.lower) + u * (libm::log(d.upper) - libm::log(d.lower)),
                    ),
                };
                v.clamp(d.lower, d.upper)
            })
            .collect()
    }

    pub fn contains(&self, h: &[f64]) -> bool {
        h.len() == self.dims.len()
            && self.dims.iter().zip(h).all(|(d, &v)| v >= d.lower && v <= d.upper)
    }
}

/// Closed-form EI for maximization with posterior mean `mu` and std `sigma`.
pub fn ei_closed_form(mu: f64, sigma: f64, f_best: f64) -> f64 {
    let delta = mu - f_best;
    if sigma <= 0.0 {
        return delta.max(0.0);
    }
    let z = delta / sigma;
    (delta * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// EI of the surrogate at the unit-cube point `x`.
pub fn expected_improvement(gp: &GpSurrogate, x: &[f64], f_best: f64) -> f64 {
    let (mu, var) = gp.predict(x);
    ei_closed_form(mu, libm::sqrt(var), f_best)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton points `start..start+count` with a seeded Cranley-Patterson shift.
pub fn halton(dim: usize, start: u64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
    (0..count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let v = radical_inverse(start + i + 1, PRIMES[d % PRIMES.len()]) + shift[d];
                    v - libm::floor(v)
                })
                .collect()
        })
        .collect()
}

pub const PROPOSAL_CANDIDATES: usize = 2048;
pub const LOCAL_CANDIDATES: usize = 64;

/// Unit-cube argmax of EI over quasi-random candidates and local perturbations
/// of the best observation. When EI is zero everywhere, returns the candidate
/// farthest from every observed point.
pub fn propose(gp: &GpSurrogate, dim: usize, seed: u64) -> Vec<f64> {
    let mut candidates = halton(dim, 0, PROPOSAL_CANDIDATES, mix(seed, 1));
    let (best_idx, f_best) = gp.best_observed();
    let centre = gp.points()[best_idx].clone();
    let mut r = rng::seeded(mix(seed, 2));
    for _ in 0..LOCAL_CANDIDATES {
        candidates.push(
            centre
                .iter()
                .map(|&c| (c + 0.05 * normal(&mut r)).clamp(0.0, 1.0))
                .collect(),
        );
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let ei = expected_improvement(gp, c, f_best);
        if ei > 0.0 && best.is_none_or(|(b, _)| ei > b) {
            best = Some((ei, i));
        }
    }
    match best {
        Some((_, i)) => candidates.swap_remove(i),
        None => farthest(&candidates, gp.points()),
    }
}

fn farthest(candidates: &[Vec<f64>], observed: &[Vec<f64>]) -> Vec<f64> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, c) in candidates.iter().enumerate() {
        let dmin = observed
            .iter()
            .map(|o| c.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if dmin > best.0 {
            best = (dmin, i);
        }
    }
    candidates[best.1].clone()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoConfig {
    pub budget: usize,
    pub initial: usize,
    pub seed: u64,
    /// Value recorded for a failed evaluation.
    pub worst_value: f64,
}

impl BoConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        BoConfig {
            budget,
            initial: 3,
            seed,
            worst_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub h: Vec<f64>,
    pub value: f64,
    pub best: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_h: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<TraceRecord>,
    pub warnings: Vec<String>,
}

/// Seeded quasi-random initial design, then propose/evaluate/refit until the
/// budget is spent. Returns the best observed pair.
pub fn optimize<E>(
    space: &SearchSpace,
    cfg: &BoConfig,
    mut objective: impl FnMut(&[f64]) -> core::result::Result<f64, E>,
) -> Result<BoResult> {
    if cfg.budget < 3 || cfg.initial < 3 {
        return Err(Error::InvalidArgument(alloc::format!(
            "Bayesian optimization needs a budget of at least 3 evaluations, got {}",
            cfg.budget
        )));
    }
    let dim = space.len();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let initial = halton(dim, 0, cfg.initial.min(cfg.budget), mix(cfg.seed, 0xB0));

    for it in 0..cfg.budget {
        let x = if it < initial.len() {
            initial[it].clone()
        } else {
            match GpSurrogate::fit(xs.clone(), ys.clone(), mix(cfg.seed, 2 * it as u64)) {
                Ok(gp) => {
                    warnings.extend(gp.warnings().iter().cloned());
                    propose(&gp, dim, mix(cfg.seed, 2 * it as u64 + 1))
                }
                Err(e) => {
                    warnings.push(alloc::format!("GP refit failed at iteration {it}: {e}"));
                    halton(dim, it as u64, 1, mix(cfg.seed, 0xFA11)).remove(0)
                }
            }
        };
        let h = space.from_unit(&x);
        let (value, failed) = match objective(&h) {
            Ok(v) if v.is_finite() => (v, false),
            _ => (cfg.worst_value, true),
        };
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, h.clone()));
        }
        trace.push(TraceRecord {
            iteration: it,
            h,
            value,
            best: best.as_ref().map(|b| b.0).unwrap_or(value),
            failed,
        });
        xs.push(space.to_unit(&trace[it].h));
        ys.push(value);
    }
    let (best_value, best_h) = best.expect("budget ≥ 3");
    Ok(BoResult {
        best_h,
        best_value,
        trace,
        warnings,
    })
}
