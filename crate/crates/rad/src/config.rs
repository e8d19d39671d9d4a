//! Training options shared by the commands, the experiment file and the
//! config echo written next to every artifact.

use clap::Args;
use rad_core::bayesopt::SearchSpace;
use rad_core::flow::FlowConfig;
use rad_core::pipeline::{Ablation, HyperParams, TrainConfig, DESK_LAMBDA0};
use rad_core::robust::{UncertaintyConfig, UncertaintyState};
use serde::{Deserialize, Serialize};

use crate::error::{RadError, Result};

/// Flow-training options. Defaults are desk scale; `--scale large` switches
/// epochs, batch size, learning rate and subnetwork width to the full-scale
/// values (240, 96, 2e-4, 2048) unless they are given explicitly.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Training epochs
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Minibatch size; each minibatch yields one optimizer step
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Tasks drawn from each minibatch for the meta step
    #[arg(long, default_value_t = 2)]
    pub tasks: usize,
    /// Inner-loop gradient steps per task
    #[arg(long, default_value_t = 1)]
    pub inner_steps: usize,
    /// Share of each task given to the support set
    #[arg(long, default_value_t = 0.5)]
    pub support_frac: f64,
    /// Share of the nominal-labelled pool held out for validation losses
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Coupling blocks in the flow
    #[arg(long, default_value_t = 8)]
    pub blocks: usize,
    /// Hidden width of each coupling subnetwork
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Soft clamp on the coupling log-scales
    #[arg(long, default_value_t = 3.0)]
    pub s_max: f64,
    /// Scale of the random output-layer init (0 starts at the identity map)
    #[arg(long, default_value_t = 0.1)]
    pub init_gain: f64,
    /// Inner learning rate α
    #[arg(long, default_value_t = 1e-2)]
    pub alpha: f64,
    /// Outer (or plain SGD) learning rate β
    #[arg(long, default_value_t = 1e-2)]
    pub beta: f64,
    /// IQR multiplier k of the threshold Q3 + k·IQR
    #[arg(long, default_value_t = 1.5)]
    pub k: f64,
    /// Base L2 coefficient λ₀
    #[arg(long, default_value_t = DESK_LAMBDA0)]
    pub lambda0: f64,
    /// Sensitivity γ of λ to the normalized loss-covariance determinant
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// λ is clamped to this multiple of λ₀
    #[arg(long, default_value_t = 100.0)]
    pub lambda_max_factor: f64,
    /// Epochs in the loss-covariance window
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// First epoch that is preceded by a refinement round
    #[arg(long, default_value_t = 0)]
    pub refine_warmup: usize,
    /// Epochs between refinement rounds
    #[arg(long, default_value_t = 1)]
    pub refine_interval: usize,
    /// Seeded rotations added to the identity when scoring
    #[arg(long, default_value_t = 0)]
    pub rotations: usize,
    /// Seeded sign flips added to the identity when scoring
    #[arg(long, default_value_t = 0)]
    pub flips: usize,
    /// Skip per-feature standardization [default: off]
    #[arg(long)]
    pub no_standardize: bool,
    /// Seed for initialization, splits, shuffling and tasks
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ablation preset: full, no-meta, no-l2, no-bo or no-meta-l2
    #[arg(long, default_value = "full")]
    pub ablation: String,
    /// Replace meta-learning with plain minibatch SGD [default: off]
    #[arg(long)]
    pub no_meta: bool,
    /// Train without the L2 penalty (λ = 0) [default: off]
    #[arg(long)]
    pub no_adaptive_l2: bool,
    /// Keep the whole nominal-labelled pool, no refinement [default: off]
    #[arg(long)]
    pub no_refine: bool,
    /// Skip the hyperparameter search and use --alpha, --beta, --k [default: off]
    #[arg(long)]
    pub no_bo: bool,
    /// Training runs per hyperparameter search
    #[arg(long, default_value_t = 6)]
    pub bo_budget: usize,
    /// Option scale: desk or large
    #[arg(long, default_value = "desk")]
    pub scale: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let c = TrainConfig::default();
        let f = FlowConfig::new(1);
        let u = c.uncertainty;
        TrainOptions {
            epochs: c.epochs,
            batch_size: c.batch_size,
            tasks: c.tasks_per_batch,
            inner_steps: c.n_inner,
            support_frac: c.support_frac,
            val_frac: c.val_frac,
            blocks: f.blocks,
            hidden: f.hidden,
            s_max: f.s_max,
            init_gain: f.output_gain,
            alpha: c.hyper.alpha,
            beta: c.hyper.beta,
            k: c.hyper.k,
            lambda0: u.lambda0,
            gamma: u.gamma,
            lambda_max_factor: u.lambda_max_factor,
            window: u.window,
            refine_warmup: c.refine_warmup,
            refine_interval: c.refine_interval,
            rotations: c.rotations,
            flips: c.flips,
            no_standardize: !c.standardize,
            seed: c.seed,
            ablation: "full".into(),
            no_meta: false,
            no_adaptive_l2: false,
            no_refine: false,
            no_bo: false,
            bo_budget: 6,
            scale: "desk".into(),
        }
    }
}

/// Full-scale values: epochs, batch size, learning rate, subnetwork width.
pub const LARGE_SCALE: (usize, usize, f64, usize) = (240, 96, 2e-4, FlowConfig::LARGE_HIDDEN);

impl TrainOptions {
    /// The preset named by `--ablation` with each `--no-*` switch applied.
    pub fn resolved_ablation(&self) -> Result<Ablation> {
        let mut a = Ablation::preset(&self.ablation).ok_or_else(|| {
            let names: Vec<&str> = Ablation::PRESETS.iter().map(|p| p.0).collect();
            RadError::Config(format!("unknown ablation {:?}; expected one of {}", self.ablation, names.join(", ")))
        })?;
        a.meta &= !self.no_meta;
        a.adaptive_l2 &= !self.no_adaptive_l2;
        a.refine &= !self.no_refine;
        a.bayesopt &= !self.no_bo;
        Ok(a)
    }

    /// Applies `--scale large` to every field in `defaulted` (names of options
    /// the user left at their default).
    pub fn apply_scale(&mut self, defaulted: impl Fn(&str) -> bool) -> Result<()> {
        match self.scale.as_str() {
            "desk" => Ok(()),
            "large" => {
                let (epochs, batch, beta, hidden) = LARGE_SCALE;
                if defaulted("epochs") {
                    self.epochs = epochs;
                }
                if defaulted("batch_size") {
                    self.batch_size = batch;
                }
                if defaulted("beta") {
                    self.beta = beta;
                }
                if defaulted("hidden") {
                    self.hidden = hidden;
                }
                Ok(())
            }
            other => Err(RadError::Config(format!("unknown scale {other:?}; expected desk or large"))),
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let a = self.resolved_ablation()?;
        let cfg = TrainConfig {
            flow: FlowConfig {
                blocks: self.blocks,
                hidden: self.hidden,
                s_max: self.s_max,
                output_gain: self.init_gain,
                ..FlowConfig::new(1)
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            tasks_per_batch: self.tasks,
            n_inner: self.inner_steps,
            support_frac: self.support_frac,
            val_frac: self.val_frac,
            refine_warmup: self.refine_warmup,
            refine_interval: self.refine_interval,
            uncertainty: UncertaintyConfig {
                window: self.window,
                lambda0: self.lambda0,
                gamma: self.gamma,
                lambda_max_factor: self.lambda_max_factor,
            },
            hyper: self.hyper(),
            rotations: self.rotations,
            flips: self.flips,
            standardize: !self.no_standardize,
            seed: self.seed,
            ..TrainConfig::default()
        }
        .with_ablation(a);
        cfg.validate().map_err(|e| RadError::Config(e.to_string()))?;
        UncertaintyState::new(cfg.uncertainty).map_err(|e| RadError::Config(e.to_string()))?;
        if self.blocks == 0 || self.hidden == 0 {
            return Err(RadError::Config("need at least one block and a hidden width ≥ 1".into()));
        }
        if a.bayesopt && self.bo_budget < 3 {
            return Err(RadError::Config(format!(
                "hyperparameter search needs --bo-budget ≥ 3, got {}",
                self.bo_budget
            )));
        }
        Ok(cfg)
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace::rad_default()
    }
}
