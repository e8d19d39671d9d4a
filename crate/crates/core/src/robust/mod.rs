//! Loss-covariance uncertainty and uncertainty-guided L2 regularization.
//!
//! A sliding window of per-epoch `(train loss, validation loss)` pairs gives a
//! 2×2 sample covariance `Σ`. Its determinant measures how erratically the two
//! losses move; the effective L2 coefficient grows with it:
//!
//! `λ = min(λ_max, λ₀ · (1 + γ · det Σ / (det_ref + ε)))`
//!
//! where `det_ref` is the running mean of every determinant observed so far.

use alloc::collections::VecDeque;

use crate::ndgrad::{Graph, Tensor, Var};
use crate::{Error, Result};

pub const DET_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyConfig {
    pub window: usize,
    pub lambda0: f64,
    pub gamma: f64,
    /// `λ_max = lambda_max_factor · λ₀`.
    pub lambda_max_factor: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            window: 10,
            lambda0: 1e-5,
            gamma: 1.0,
            lambda_max_factor: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    cfg: UncertaintyConfig,
    train: VecDeque<f64>,
    val: VecDeque<f64>,
    sigma: Option<[[f64; 2]; 2]>,
    det: f64,
    det_sum: f64,
    det_count: usize,
    lambda: f64,
}

impl UncertaintyState {
    pub fn new(cfg: UncertaintyConfig) -> Result<Self> {
        if cfg.window < 2 {
            return Err(Error::InvalidArgument("uncertainty window must be ≥ 2".into()));
        }
        if !(cfg.lambda0 >= 0.0) || !(cfg.gamma >= 0.0) || !(cfg.lambda_max_factor >= 1.0) {
            return Err(Error::InvalidArgument(
                "need λ₀ ≥ 0, γ ≥ 0 and λ_max factor ≥ 1".into(),
            ));
        }
        Ok(UncertaintyState {
            cfg,
            train: VecDeque::with_capacity(cfg.window),
            val: VecDeque::with_capacity(cfg.window),
            sigma: None,
            det: 0.0,
            det_sum: 0.0,
            det_count: 0,
            lambda: cfg.lambda0,
        })
    }

    pub fn config(&self) -> &UncertaintyConfig {
        &self.cfg
    }

    /// Pushes one epoch's losses and recomputes `Σ`, `det Σ` and `λ`.
    /// Non-finite losses are rejected and leave the state untouched.
    pub fn update_covariance(&mut self, train_loss: f64, val_loss: f64) -> Result<()> {
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite {
                context: "uncertainty update",
            });
        }
        if self.train.len() == self.cfg.window {
            self.train.pop_front();
            self.val.pop_front();
        }
        self.train.push_back(train_loss);
        self.val.push_back(val_loss);
        if self.train.len() >= 2 {
            let (a, b) = (self.train.make_contiguous(), self.val.make_contiguous());
            let s = sample_covariance(a, b);
            self.det = covariance_det(a, b);
            self.sigma = Some(s);
            self.det_sum += self.det;
            self.det_count += 1;
            self.lambda = self.effective_lambda();
        }
        Ok(())
    }

    /// `Σ`, once at least two epochs have been observed.
    pub fn sigma(&self) -> Option<[[f64; 2]; 2]> {
        self.sigma
    }

    pub fn det_sigma(&self) -> f64 {
        self.det
    }

    pub fn det_ref(&self) -> f64 {
        if self.det_count == 0 {
            0.0
        } else {
            self.det_sum / self.det_count as f64
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.cfg.lambda0 * self.cfg.lambda_max_factor
    }

    /// The current coefficient; `λ₀` until `Σ` is defined.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.sigma.is_none() {
            return self.cfg.lambda0;
        }
        lambda_from_det(self.det, self.det_ref(), &self.cfg)
    }

    pub fn window_len(&self) -> usize {
        self.train.len()
    }
}

/// The adaptive coefficient for a given determinant and reference level.
pub fn lambda_from_det(det: f64, det_ref: f64, cfg: &UncertaintyConfig) -> f64 {
    let ratio = det.max(0.0) / (det_ref.max(0.0) + DET_EPS);
    let lam = cfg.lambda0 * (1.0 + cfg.gamma * ratio);
    lam.min(cfg.lambda0 * cfg.lambda_max_factor).max(cfg.lambda0)
}

/// Sample covariance (denominator `n − 1`) of two equally long series.
pub fn sample_covariance(a: &[f64], b: &[f64]) -> [[f64; 2]; 2] {
    let n = a.len();
    debug_assert!(n >= 2 && b.len() == n);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let d = (n - 1) as f64;
    [[saa / d, sab / d], [sab / d, sbb / d]]
}

/// `Σ₁₁Σ₂₂ − Σ₁₂²` of [`sample_covariance`], evaluated through the Lagrange
/// identity `½ Σᵢⱼ (dxᵢ dyⱼ − dxⱼ dyᵢ)² / (n − 1)²`. Each term is a square, so
/// the result is never negative even when the direct product cancels.
pub fn covariance_det(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    debug_assert!(n >= 2 && b.len() == n);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let m = (a[i] - ma) * (b[j] - mb) - (a[j] - ma) * (b[i] - mb);
            acc += m * m;
        }
    }
    let d = (n - 1) as f64;
    acc / (d * d)
}

/// `base + λ · Σ p²` over every entry of `params`.
pub fn regularized_loss<'a>(base: f64, params: impl IntoIterator<Item = &'a Tensor>, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    base + lambda * params.into_iter().map(|t| t.sq_norm()).sum::<f64>()
}

/// Graph form of [`regularized_loss`]; differentiable in every parameter.
pub fn regularized_loss_graph(g: &mut Graph, base: Var, params: &[Var], lambda: f64) -> Result<Var> {
    if lambda == 0.0 || params.is_empty() {
        return Ok(base);
    }
    let mut acc: Option<Var> = None;
    for &p in params {
        let sq = g.square(p);
        let s = g.sum(sq);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    let penalty = g.scale(acc.expect("non-empty"), lambda);
    g.add(base, penalty)
}
