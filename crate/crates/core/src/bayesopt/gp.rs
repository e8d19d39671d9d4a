use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{cholesky, solve_lower, solve_upper_t};
use crate::rng::{self, uniform};
use crate::{Error, Result};

/// Squared-exponential kernel hyperparameters, in standardized-output units.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.signal_var * libm::exp(-0.5 * r2)
    }
}

/// Exact GP regression with a constant mean equal to the sample mean of the
/// observations; outputs are standardized before fitting.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelParams,
    /// Lower Cholesky factor of `K + noise·I`, row-major.
    chol: Vec<f64>,
    /// `(K + noise·I)⁻¹ ŷ` for the standardized outputs `ŷ`.
    weights: Vec<f64>,
    warnings: Vec<String>,
}

const MIN_NOISE: f64 = 1e-8;
const RANDOM_STARTS: usize = 192;

impl GpSurrogate {
    /// Fits kernel hyperparameters by maximizing the log marginal likelihood
    /// over a fixed grid plus `RANDOM_STARTS` seeded random candidates.
    pub fn fit(points: Vec<Vec<f64>>, values: Vec<f64>, seed: u64) -> Result<Self> {
        validate(&points, &values)?;
        let dim = points[0].len();
        let (y_mean, y_scale) = standardization(&values);
        let ys: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut warnings = Vec::new();
        let noise_floor = conflicting_duplicate_floor(&points, &ys, &mut warnings);

        let mut candidates = Vec::new();
        for &ls in &[0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            for &sv in &[0.5, 1.0, 2.0] {
                for &nv in &[1e-6, 1e-4, 1e-2] {
                    candidates.push(KernelParams {
                        signal_var: sv,
                        length_scales: vec![ls; dim],
                        noise_var: nv,
                    });
                }
            }
        }
        let mut r = rng::seeded(seed);
        for _ in 0..RANDOM_STARTS {
            let length_scales = (0..dim).map(|_| libm::exp(uniform(&mut r, -3.5, 1.1))).collect();
            candidates.push(KernelParams {
                signal_var: libm::exp(uniform(&mut r, -2.3, 2.3)),
                length_scales,
                noise_var: libm::exp(uniform(&mut r, -13.8, -2.3)),
            });
        }

        let mut best: Option<(f64, KernelParams)> = None;
        for mut k in candidates {
            k.noise_var = k.noise_var.max(noise_floor);
            if let Some((lml, _, _)) = factor(&points, &ys, &k) {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, k));
                }
            }
        }
        let kernel = match best {
            Some((_, k)) => k,
            None => {
                warnings.push("no kernel candidate factorized; using unit defaults".into());
                KernelParams {
                    signal_var: 1.0,
                    length_scales: vec![0.2; dim],
                    noise_var: noise_floor.max(1e-4),
                }
            }
        };
        Self::assemble(points, values, y_mean, y_scale, kernel, warnings)
    }

    /// Fits with fixed kernel hyperparameters.
    pub fn fit_with(points: Vec<Vec<f64>>, values: Vec<f64>, kernel: KernelParams) -> Result<Self> {
        validate(&points, &values)?;
        if kernel.length_scales.len() != points[0].len() {
            return Err(Error::Dimension {
                expected: points[0].len(),
                found: kernel.length_scales.len(),
            });
        }
        let (y_mean, y_scale) = standardization(&values);
        let ys: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut warnings = Vec::new();
        let floor = conflicting_duplicate_floor(&points, &ys, &mut warnings);
        let mut kernel = kernel;
        kernel.noise_var = kernel.noise_var.max(floor);
        Self::assemble(points, values, y_mean, y_scale, kernel, warnings)
    }

    fn assemble(
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
        y_mean: f64,
        y_scale: f64,
        mut kernel: KernelParams,
        mut warnings: Vec<String>,
    ) -> Result<Self> {
        let ys: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();
        for _ in 0..8 {
            if let Some((_, chol, weights)) = factor(&points, &ys, &kernel) {
                return Ok(GpSurrogate {
                    points,
                    values,
                    y_mean,
                    y_scale,
                    kernel,
                    chol,
                    weights,
                    warnings,
                });
            }
            let raised = (kernel.noise_var * 10.0).max(MIN_NOISE);
            warnings.push(format!(
                "kernel matrix not positive definite; jitter raised to {raised:e}"
            ));
            kernel.noise_var = raised;
        }
        Err(Error::InvalidArgument("GP kernel matrix could not be factorized".into()))
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Variance of the prior, in output units.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.signal_var * self.y_scale * self.y_scale
    }

    /// Posterior mean and variance (clamped at 0) of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let kx: Vec<f64> = self.points.iter().map(|p| self.kernel.eval(p, x)).collect();
        let mean_s: f64 = kx.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, n, &kx);
        let var_s = (self.kernel.signal_var - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        (
            self.y_mean + self.y_scale * mean_s,
            var_s * self.y_scale * self.y_scale,
        )
    }

    pub fn best_observed(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

fn validate(points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::TooFewSamples {
            context: "gp_fit",
            needed: 1,
            found: 0,
        });
    }
    if points.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: values.len(),
        });
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            found: p.len(),
        });
    }
    if !values.iter().all(|v| v.is_finite()) || !points.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "gp_fit" });
    }
    Ok(())
}

fn standardization(values: &[f64]) -> (f64, f64) {
    let mean = crate::math::mean(values);
    let sd = crate::math::std_dev(values);
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Noise floor implied by repeated inputs with different outputs.
fn conflicting_duplicate_floor(points: &[Vec<f64>], ys: &[f64], warnings: &mut Vec<String>) -> f64 {
    let mut floor = MIN_NOISE;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i] == points[j] && ys[i] != ys[j] {
                let half = 0.5 * (ys[i] - ys[j]);
                floor = floor.max(half * half);
                warnings.push(format!(
                    "duplicate points {i} and {j} have conflicting values; noise raised to {:e}",
                    floor
                ));
            }
        }
    }
    floor
}

/// Log marginal likelihood, Cholesky factor and weights; `None` if not SPD.
fn factor(points: &[Vec<f64>], ys: &[f64], k: &KernelParams) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let n = points.len();
    let mut km = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = k.eval(&points[i], &points[j]);
            km[i * n + j] = v;
            km[j * n + i] = v;
        }
        km[i * n + i] += k.noise_var;
    }
    let l = cholesky(&km, n)?;
    let w = solve_upper_t(&l, n, &solve_lower(&l, n, ys));
    let fit: f64 = ys.iter().zip(&w).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| libm::log(l[i * n + i])).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * crate::math::LN_2PI;
    Some((lml, l, w))
}
