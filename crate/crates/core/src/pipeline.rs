//! Training and evaluation of one configuration.
//!
//! [`train`] runs the epoch loop on the nominal-labelled part of a training
//! set: minibatches feed either first-order meta-updates or plain SGD steps,
//! per-epoch train/validation losses drive the adaptive L2 coefficient, and
//! the pool is periodically refined by the IQR threshold. [`run_cell`] wraps
//! noise injection, the optional hyperparameter search and test metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bayesopt::{self, BoConfig, BoResult, SearchSpace};
use crate::data::{inject_noise, split_indices, FeatureSet, Label, NoiseSpec};
use crate::flow::{FlowConfig, FlowModel};
use crate::meta::{outer_step, sample_tasks, MetaState};
use crate::metrics::{auroc, prf1, TrialMetrics};
use crate::rng::{self, mix};
use crate::robust::{UncertaintyConfig, UncertaintyState};
use crate::scoring::{iqr_threshold, refine_training_pool, score_all, Pool, ScoreReport, Threshold, TransformSet};
use crate::{Error, Result};

/// Which pipeline components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub meta: bool,
    pub adaptive_l2: bool,
    pub bayesopt: bool,
    pub refine: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        meta: true,
        adaptive_l2: true,
        bayesopt: true,
        refine: true,
    };
    pub const NO_META: Ablation = Ablation {
        meta: false,
        ..Ablation::FULL
    };
    pub const NO_L2: Ablation = Ablation {
        adaptive_l2: false,
        ..Ablation::FULL
    };
    pub const NO_BO: Ablation = Ablation {
        bayesopt: false,
        ..Ablation::FULL
    };
    pub const NO_META_L2: Ablation = Ablation {
        meta: false,
        adaptive_l2: false,
        ..Ablation::FULL
    };

    pub const PRESETS: [(&'static str, Ablation); 5] = [
        ("full", Ablation::FULL),
        ("no-meta", Ablation::NO_META),
        ("no-l2", Ablation::NO_L2),
        ("no-bo", Ablation::NO_BO),
        ("no-meta-l2", Ablation::NO_META_L2),
    ];

    pub fn preset(name: &str) -> Option<Ablation> {
        Self::PRESETS.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
    }

    /// Preset name if this matches one, otherwise a flag summary.
    pub fn name(&self) -> String {
        match Self::PRESETS.iter().find(|(_, a)| a == self) {
            Some((n, _)) => (*n).into(),
            None => format!(
                "meta={} adaptive_l2={} bayesopt={} refine={}",
                self.meta, self.adaptive_l2, self.bayesopt, self.refine
            ),
        }
    }
}

/// The searched hyperparameters `h = (α, β, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl HyperParams {
    pub fn to_vec(&self) -> Vec<f64> {
        alloc::vec![self.alpha, self.beta, self.k]
    }

    pub fn from_slice(h: &[f64]) -> Result<Self> {
        match h {
            &[alpha, beta, k] => Ok(HyperParams { alpha, beta, k }),
            _ => Err(Error::Dimension {
                expected: 3,
                found: h.len(),
            }),
        }
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1e-2,
            beta: 1e-2,
            k: 1.5,
        }
    }
}

/// Base L2 coefficient for training runs. With the per-sample loss near 10
/// and `‖θ‖²` in the hundreds, smaller values leave the penalty inert.
pub const DESK_LAMBDA0: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `dim` is taken from the data.
    pub flow: FlowConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub tasks_per_batch: usize,
    pub n_inner: usize,
    pub support_frac: f64,
    /// Held-out share of the nominal-labelled pool for validation losses.
    pub val_frac: f64,
    /// Refinement runs before epoch `e` when `e ≥ refine_warmup` and
    /// `e − refine_warmup` is a multiple of `refine_interval`; a warmup of 0
    /// refines with the untrained model first.
    pub refine_warmup: usize,
    pub refine_interval: usize,
    pub uncertainty: UncertaintyConfig,
    pub hyper: HyperParams,
    pub meta: bool,
    pub adaptive_l2: bool,
    pub refine: bool,
    /// Extra scoring transforms besides the identity.
    pub rotations: usize,
    pub flips: usize,
    /// Standardize features with the training pool's per-feature mean and std.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            flow: FlowConfig::new(1),
            epochs: 30,
            batch_size: 32,
            tasks_per_batch: 2,
            n_inner: 1,
            support_frac: 0.5,
            val_frac: 0.2,
            refine_warmup: 0,
            refine_interval: 1,
            uncertainty: UncertaintyConfig {
                lambda0: DESK_LAMBDA0,
                ..UncertaintyConfig::default()
            },
            hyper: HyperParams::default(),
            meta: true,
            adaptive_l2: true,
            refine: true,
            rotations: 0,
            flips: 0,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.meta = a.meta;
        self.adaptive_l2 = a.adaptive_l2;
        self.refine = a.refine;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 || self.batch_size < 2 {
            return bad("need epochs ≥ 1 and batch size ≥ 2");
        }
        if self.tasks_per_batch == 0 || self.n_inner == 0 {
            return bad("need tasks per batch ≥ 1 and inner steps ≥ 1");
        }
        if !(self.support_frac > 0.0 && self.support_frac < 1.0) {
            return bad("support fraction must lie in (0, 1)");
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.refine_interval == 0 {
            return bad("refinement interval must be ≥ 1");
        }
        let h = &self.hyper;
        if !(h.alpha > 0.0 && h.beta > 0.0 && h.k >= 0.0) || !(h.alpha.is_finite() && h.beta.is_finite()) {
            return bad("need α > 0, β > 0 and k ≥ 0");
        }
        Ok(())
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: alloc::vec![0.0; dim],
            scale: alloc::vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let mut s = Standardizer::identity(d);
        for j in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            s.mean[j] = crate::math::mean(&col);
            let sd = crate::math::std_dev(&col);
            s.scale[j] = if sd > 1e-12 { sd } else { 1.0 };
        }
        s
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Meta,
    Single,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Meta => "meta",
            StepKind::Single => "single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub kind: StepKind,
    /// Query objective for meta steps, batch loss for single steps.
    pub objective: f64,
    pub grad_norm: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub det_sigma: Option<f64>,
    /// Coefficient used during the next epoch; absent when adaptive L2 is off.
    pub lambda: Option<f64>,
    pub active: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineRecord {
    /// The epoch this refinement preceded.
    pub epoch: usize,
    pub threshold: Threshold,
    pub excluded: usize,
    /// Excluded samples that are truly anomalous.
    pub excluded_anomalous: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub standardizer: Standardizer,
    pub transforms: TransformSet,
    /// Nominal-labelled indices used for fitting, and the held-out ones.
    pub fit_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub pool: Pool,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub refinements: Vec<RefineRecord>,
    /// IQR threshold of the final scores over the whole fitting pool.
    pub threshold: Threshold,
    pub k: f64,
}

impl TrainOutcome {
    pub fn score<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        let z: Vec<Vec<f64>> = rows.iter().map(|r| self.standardizer.apply(r.as_ref())).collect();
        score_all(&self.model, &self.transforms, &z)
    }

    /// I-AUROC using training labels: anomalous-labelled training samples
    /// against the held-out nominal-labelled validation samples.
    pub fn validation_auroc(&self, set: &FeatureSet) -> Result<f64> {
        let pos: Vec<usize> = (0..set.len())
            .filter(|&i| set.samples()[i].train_label == Some(Label::Anomalous))
            .collect();
        let idx: Vec<usize> = pos.iter().chain(&self.val_indices).copied().collect();
        let rows: Vec<&[f64]> = idx.iter().map(|&i| set.samples()[i].features.as_slice()).collect();
        let labels: Vec<Label> = (0..idx.len())
            .map(|i| if i < pos.len() { Label::Anomalous } else { Label::Nominal })
            .collect();
        auroc(&self.score(&rows)?, &labels)
    }
}

fn non_finite(context: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

/// Trains on the nominal-labelled samples of `set`.
pub fn train(set: &FeatureSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let nominal: Vec<usize> = (0..set.len())
        .filter(|&i| set.samples()[i].train_label == Some(Label::Nominal))
        .collect();
    let (fit, val) = split_indices(&nominal, cfg.val_frac, mix(cfg.seed, 0x7A1));
    if fit.len() < 4 || val.is_empty() {
        return Err(Error::TooFewSamples {
            context: "training pool (fit ≥ 4 and validation ≥ 1)",
            needed: 5,
            found: nominal.len(),
        });
    }
    let raw = set.features();
    let standardizer = if cfg.standardize {
        Standardizer::fit(&fit.iter().map(|&i| raw[i]).collect::<Vec<_>>())
    } else {
        Standardizer::identity(set.dim())
    };
    let data: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let rows: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
    let val_rows: Vec<&[f64]> = val.iter().map(|&i| rows[i]).collect();
    let transforms = TransformSet::seeded(set.dim(), cfg.rotations, cfg.flips, mix(cfg.seed, 0x7F));

    let flow_cfg = FlowConfig {
        dim: set.dim(),
        seed: mix(cfg.seed, 0xF10),
        ..cfg.flow.clone()
    };
    let h = cfg.hyper;
    let mut state = MetaState::new(FlowModel::new(&flow_cfg)?, h.alpha, h.beta, cfg.n_inner, cfg.tasks_per_batch)?;
    let mut unc = UncertaintyState::new(cfg.uncertainty)?;
    let base_pool = Pool::new(fit.clone());
    let mut pool = base_pool.clone();
    let mut lambda = if cfg.adaptive_l2 { unc.lambda() } else { 0.0 };
    let (mut epochs, mut steps, mut refinements) = (Vec::new(), Vec::new(), Vec::new());

    for epoch in 0..cfg.epochs {
        if cfg.refine && epoch >= cfg.refine_warmup && (epoch - cfg.refine_warmup) % cfg.refine_interval == 0 {
            let fit_rows: Vec<&[f64]> = fit.iter().map(|&i| rows[i]).collect();
            let report = ScoreReport::new(score_all(&state.model, &transforms, &fit_rows)?, h.k)?;
            pool = refine_training_pool(&base_pool, &report)?;
            let excluded_anomalous = pool
                .members()
                .iter()
                .zip(pool.excluded_mask())
                .filter(|(&i, &e)| e && set.samples()[i].true_label == Label::Anomalous)
                .count();
            refinements.push(RefineRecord {
                epoch,
                threshold: report.threshold,
                excluded: pool.excluded_count(),
                excluded_anomalous,
            });
        }

        let mut order = pool.active();
        rng::shuffle(&mut rng::seeded(mix(cfg.seed, 0x1000 + epoch as u64)), &mut order);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let record = if cfg.meta {
                let task_seed = mix(cfg.seed, ((epoch as u64) << 32) | step as u64);
                let tasks = sample_tasks(chunk, cfg.tasks_per_batch, cfg.support_frac, task_seed)?;
                let task_rows: Vec<_> = tasks.iter().map(|t| t.rows(&rows)).collect();
                let rep = outer_step(&mut state, &task_rows, lambda)?;
                StepRecord {
                    epoch,
                    step,
                    kind: StepKind::Meta,
                    objective: rep.objective,
                    grad_norm: rep.grad_norm,
                    lambda,
                }
            } else {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i]).collect();
                let (value, grads) = state.model.value_and_grad(&batch, lambda)?;
                if !grads.iter().all(|g| g.all_finite()) {
                    return Err(Error::NonFinite { context: "training gradient" });
                }
                let grad_norm = libm::sqrt(grads.iter().map(|g| g.sq_norm()).sum::<f64>());
                state.model.apply_update(-h.beta, &grads);
                StepRecord {
                    epoch,
                    step,
                    kind: StepKind::Single,
                    objective: value,
                    grad_norm,
                    lambda,
                }
            };
            non_finite("training objective", record.objective)?;
            steps.push(record);
        }

        let active_rows: Vec<&[f64]> = pool.active().iter().map(|&i| rows[i]).collect();
        let train_loss = state.model.nf_loss_batch(&active_rows)?;
        let val_loss = state.model.nf_loss_batch(&val_rows)?;
        non_finite("epoch train loss", train_loss)?;
        non_finite("epoch validation loss", val_loss)?;
        unc.update_covariance(train_loss, val_loss)?;
        if cfg.adaptive_l2 {
            lambda = unc.lambda();
        }

        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            det_sigma: unc.sigma().map(|_| unc.det_sigma()),
            lambda: cfg.adaptive_l2.then_some(lambda),
            active: pool.active().len(),
            excluded: pool.excluded_count(),
        });
    }

    let model = state.model;
    let fit_rows: Vec<&[f64]> = fit.iter().map(|&i| rows[i]).collect();
    let threshold = iqr_threshold(&score_all(&model, &transforms, &fit_rows)?, h.k)?;
    Ok(TrainOutcome {
        model,
        standardizer,
        transforms,
        fit_indices: fit,
        val_indices: val,
        pool,
        epochs,
        steps,
        refinements,
        threshold,
        k: h.k,
    })
}

/// Test-set scores, flags at the training threshold, and metrics against true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEval {
    pub report: ScoreReport,
    pub metrics: TrialMetrics,
    pub diagnostics: Vec<String>,
}

pub fn evaluate(outcome: &TrainOutcome, test: &FeatureSet) -> Result<TestEval> {
    if test.dim() != outcome.model.dim() {
        return Err(Error::Dimension {
            expected: outcome.model.dim(),
            found: test.dim(),
        });
    }
    let scores = outcome.score(&test.features())?;
    let labels = test.true_labels();
    let a = auroc(&scores, &labels)?;
    let report = ScoreReport::with_threshold(scores, outcome.threshold, outcome.k);
    let p = prf1(&report.flags, &labels)?;
    Ok(TestEval {
        report,
        metrics: TrialMetrics {
            auroc: a,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
        },
        diagnostics: p.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    pub train: TrainConfig,
    pub ablation: Ablation,
    pub noise: NoiseSpec,
    pub space: SearchSpace,
    pub bo_budget: usize,
    pub bo_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub hyper: HyperParams,
    pub bo: Option<BoResult>,
    pub val_auroc: f64,
    pub mislabeled: usize,
    pub outcome: TrainOutcome,
    pub test: TestEval,
}

/// Searches `h` by validation I-AUROC, each evaluation a complete training run.
/// Returns the search record and the outcome of the best evaluation.
pub fn search(
    set: &FeatureSet,
    cfg: &TrainConfig,
    space: &SearchSpace,
    bo: &BoConfig,
) -> Result<(BoResult, TrainOutcome, f64)> {
    let mut best: Option<(f64, TrainOutcome)> = None;
    let result = bayesopt::optimize(space, bo, |h: &[f64]| -> Result<f64> {
        let run = TrainConfig {
            hyper: HyperParams::from_slice(h)?,
            ..cfg.clone()
        };
        let outcome = train(set, &run)?;
        let v = outcome.validation_auroc(set)?;
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, outcome));
        }
        Ok(v)
    })?;
    match best {
        Some((v, outcome)) => Ok((result, outcome, v)),
        None => Err(Error::InvalidArgument(
            "every hyperparameter evaluation failed".into(),
        )),
    }
}

/// Noise injection, optional search, training and clean test metrics.
pub fn run_cell(train_set: &FeatureSet, test_set: &FeatureSet, cfg: &CellConfig) -> Result<CellOutcome> {
    let noisy = inject_noise(train_set, &cfg.noise)?;
    let mislabeled = noisy.mislabeled().len();
    let tcfg = cfg.train.clone().with_ablation(cfg.ablation);
    let (bo, outcome, val_auroc, hyper) = if cfg.ablation.bayesopt {
        let bo_cfg = BoConfig::new(cfg.bo_budget, cfg.bo_seed);
        let (res, outcome, v) = search(&noisy, &tcfg, &cfg.space, &bo_cfg)?;
        let hyper = HyperParams::from_slice(&res.best_h)?;
        (Some(res), outcome, v, hyper)
    } else {
        let outcome = train(&noisy, &tcfg)?;
        let v = outcome.validation_auroc(&noisy)?;
        (None, outcome, v, tcfg.hyper)
    };
    let test = evaluate(&outcome, test_set)?;
    Ok(CellOutcome {
        hyper,
        bo,
        val_auroc,
        mislabeled,
        outcome,
        test,
    })
}
