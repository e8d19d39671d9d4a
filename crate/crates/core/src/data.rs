//! Labelled feature sets, label-noise injection and the synthetic generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, mix, normal, uniform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Nominal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nominal => "nominal",
            Label::Anomalous => "anomalous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub true_label: Label,
    /// Label seen by training; `None` for evaluation-only data.
    pub train_label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    samples: Vec<Sample>,
    pub provenance: String,
    /// Offsets where each extraction scale starts inside a feature vector.
    pub scale_boundaries: Vec<usize>,
}

impl FeatureSet {
    /// Checks dimensions, finiteness and the one-directional noise model
    /// (a true nominal sample is never labelled anomalous for training).
    pub fn new(dim: usize, samples: Vec<Sample>, provenance: String, scale_boundaries: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be ≥ 1".into()));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { context: "feature vector" });
            }
            if s.true_label == Label::Nominal && s.train_label == Some(Label::Anomalous) {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: nominal sample carries an anomalous training label",
                    s.id
                )));
            }
        }
        if scale_boundaries.windows(2).any(|w| w[0] >= w[1]) || scale_boundaries.iter().any(|&b| b >= dim) {
            return Err(Error::InvalidArgument(
                "scale boundaries must be strictly increasing offsets below d".into(),
            ));
        }
        Ok(FeatureSet {
            dim,
            samples,
            provenance,
            scale_boundaries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    pub fn true_labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub fn count_true(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.true_label == label).count()
    }

    pub fn count_train(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.train_label == Some(label)).count()
    }

    /// Indices of truly anomalous samples whose training label says nominal.
    pub fn mislabeled(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| {
                let s = &self.samples[i];
                s.true_label == Label::Anomalous && s.train_label == Some(Label::Nominal)
            })
            .collect()
    }

    /// Copy with every training label reset to the true label.
    pub fn with_clean_labels(&self) -> FeatureSet {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.train_label = Some(s.true_label);
        }
        out
    }

    /// Copy with training labels removed.
    pub fn without_train_labels(&self) -> FeatureSet {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.train_label = None;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub rate: f64,
    pub seed: u64,
}

/// Relabels exactly `round(rate · N_anom)` anomalous samples as nominal for
/// training, chosen by a seeded shuffle. True labels and features are kept.
pub fn inject_noise(set: &FeatureSet, spec: &NoiseSpec) -> Result<FeatureSet> {
    if !(0.0..=0.5).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "noise rate {} outside [0, 0.5]",
            spec.rate
        )));
    }
    let mut out = set.with_clean_labels();
    let mut anomalous: Vec<usize> = (0..out.samples.len())
        .filter(|&i| out.samples[i].true_label == Label::Anomalous)
        .collect();
    if anomalous.is_empty() {
        if spec.rate == 0.0 {
            return Ok(out);
        }
        return Err(Error::InvalidArgument(
            "label noise needs at least one anomalous sample".into(),
        ));
    }
    let flip = libm::round(spec.rate * anomalous.len() as f64) as usize;
    rng::shuffle(&mut rng::seeded(spec.seed), &mut anomalous);
    for &i in &anomalous[..flip] {
        out.samples[i].train_label = Some(Label::Nominal);
    }
    Ok(out)
}

/// Fraction of anomalies placed at half the shift, close to the nominal mass.
pub const NEAR_BOUNDARY_FRACTION: f64 = 0.2;

/// A seeded two-component anisotropic Gaussian mixture for nominal data;
/// anomalies are mixture draws shifted along a fixed unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDistribution {
    dim: usize,
    separation: f64,
    seed: u64,
    means: [Vec<f64>; 2],
    /// Row-major `d × d` factors `R · diag(σ)` per component.
    factors: [Vec<f64>; 2],
    direction: Vec<f64>,
}

fn random_unit(dim: usize, r: &mut rng::ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(r)).collect();
        let n = libm::sqrt(crate::math::sq_norm(&v));
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl SynthDistribution {
    pub fn new(dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument("synthetic data needs d ≥ 2".into()));
        }
        if !(separation >= 0.0) || !separation.is_finite() {
            return Err(Error::InvalidArgument("separation must be finite and ≥ 0".into()));
        }
        let mut r = rng::seeded(mix(seed, 0x5EED));
        let axis = random_unit(dim, &mut r);
        let means = [
            axis.iter().map(|a| a * 1.0).collect(),
            axis.iter().map(|a| a * -1.0).collect(),
        ];
        let mut factor = |c: u64| {
            let rot = crate::scoring::Transform::rotation(dim, mix(seed, 0xC0 + c));
            let q = match rot {
                crate::scoring::Transform::Rotation { matrix, .. } => matrix,
                _ => unreachable!("rotation constructor returns a rotation"),
            };
            let sig: Vec<f64> = (0..dim).map(|_| uniform(&mut r, 0.25, 1.0)).collect();
            let mut f = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    f[i * dim + j] = q[i * dim + j] * sig[j];
                }
            }
            f
        };
        let factors = [factor(0), factor(1)];
        let direction = random_unit(dim, &mut r);
        Ok(SynthDistribution {
            dim,
            separation,
            seed,
            means,
            factors,
            direction,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    fn draw_nominal(&self, r: &mut rng::ChaCha8Rng) -> Vec<f64> {
        let c = (uniform(r, 0.0, 1.0) >= 0.5) as usize;
        let e: Vec<f64> = (0..self.dim).map(|_| normal(r)).collect();
        let f = &self.factors[c];
        (0..self.dim)
            .map(|i| self.means[c][i] + (0..self.dim).map(|j| f[i * self.dim + j] * e[j]).sum::<f64>())
            .collect()
    }

    /// Draws a labelled set from sample stream `stream`; ids carry `prefix`.
    pub fn sample(&self, n_nominal: usize, n_anomalous: usize, stream: u64, prefix: &str) -> Result<FeatureSet> {
        let mut r = rng::seeded(mix(self.seed, stream.wrapping_add(1)));
        let mut samples = Vec::with_capacity(n_nominal + n_anomalous);
        for i in 0..n_nominal {
            samples.push(Sample {
                id: format!("{prefix}nom-{i:05}"),
                features: self.draw_nominal(&mut r),
                true_label: Label::Nominal,
                train_label: Some(Label::Nominal),
            });
        }
        let near = libm::round(NEAR_BOUNDARY_FRACTION * n_anomalous as f64) as usize;
        for i in 0..n_anomalous {
            let shift = if i < near {
                0.5 * self.separation
            } else {
                self.separation
            };
            let mut x = self.draw_nominal(&mut r);
            x.iter_mut().zip(&self.direction).for_each(|(v, d)| *v += shift * d);
            samples.push(Sample {
                id: format!("{prefix}anom-{i:05}"),
                features: x,
                true_label: Label::Anomalous,
                train_label: Some(Label::Anomalous),
            });
        }
        FeatureSet::new(
            self.dim,
            samples,
            format!(
                "synthetic d={} separation={} seed={} stream={}",
                self.dim, self.separation, self.seed, stream
            ),
            Vec::new(),
        )
    }
}

pub fn synth_generate(d: usize, n_nominal: usize, n_anomalous: usize, separation: f64, seed: u64) -> Result<FeatureSet> {
    if n_nominal == 0 || n_anomalous == 0 {
        return Err(Error::InvalidArgument("synthetic counts must be ≥ 1".into()));
    }
    SynthDistribution::new(d, separation, seed)?.sample(n_nominal, n_anomalous, 0, "")
}

/// Seeded index split: returns `(kept, held_out)` with
/// `held_out.len() = round(frac · n)`, both sorted ascending.
pub fn split_indices(indices: &[usize], frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order = indices.to_vec();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let n_out = (libm::round(frac * order.len() as f64) as usize).min(order.len());
    let mut held = order.split_off(order.len() - n_out);
    order.sort_unstable();
    held.sort_unstable();
    (order, held)
}
