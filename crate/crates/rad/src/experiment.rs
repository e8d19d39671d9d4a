//! The noise-robustness grid: ablation × noise level × trial.
//!
//! Every cell derives its seeds from the experiment seed and its trial and
//! noise indices, so the whole grid is a pure function of the configuration.
//! A failing cell is recorded with its error and the grid carries on.

use std::path::{Path, PathBuf};

use rad_core::bayesopt::SearchSpace;
use rad_core::data::{FeatureSet, NoiseSpec, SynthDistribution};
use rad_core::metrics::{aggregate, TrialMetrics};
use rad_core::pipeline::{run_cell, Ablation, CellConfig, CellOutcome};
use rad_core::rng::mix;
use serde::{Deserialize, Serialize};

use crate::config::TrainOptions;
use crate::error::{read_bytes, write_bytes, RadError, Result};
use crate::manifest::Dataset;
use crate::report;

pub const METRICS_SCHEMA: &str = "rad.metrics";
pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Fresh synthetic train and test draws for every trial.
    Synthetic {
        dim: usize,
        nominal: usize,
        anomalous: usize,
        test_nominal: usize,
        test_anomalous: usize,
        separation: f64,
    },
    /// The same train and test files for every trial.
    Manifest { path: PathBuf, class: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub noise_grid: Vec<f64>,
    pub trials: usize,
    /// Ablation preset names, each run over the full grid with shared seeds.
    pub ablations: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainOptions,
}

impl ExperimentConfig {
    /// The desk-scale trend grid: d = 16, separation 6, 400/100 training
    /// samples, a balanced 100/100 test split, noise 0 to 0.5, three trials.
    pub fn trend(ablations: &[&str]) -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                dim: 16,
                nominal: 400,
                anomalous: 100,
                test_nominal: 100,
                test_anomalous: 100,
                separation: 6.0,
            },
            noise_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            trials: 3,
            ablations: ablations.iter().map(|s| s.to_string()).collect(),
            seed: 2024,
            train: TrainOptions::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_bytes(path)?).map_err(|_| RadError::format(path, "not UTF-8"))?;
        toml::from_str(&text).map_err(|e| RadError::format(path, e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<Vec<Ablation>> {
        let bad = |m: String| Err(RadError::Config(m));
        if self.trials == 0 || self.noise_grid.is_empty() || self.ablations.is_empty() {
            return bad("need at least one trial, noise level and ablation".into());
        }
        if let Some(r) = self.noise_grid.iter().find(|r| !(0.0..=0.5).contains(*r)) {
            return bad(format!("noise rate {r} outside [0, 0.5]"));
        }
        if let DataSource::Synthetic {
            dim,
            nominal,
            anomalous,
            test_nominal,
            test_anomalous,
            separation,
        } = &self.data
        {
            if *dim < 2 || [nominal, anomalous, test_nominal, test_anomalous].iter().any(|n| **n == 0) {
                return bad("synthetic data needs d ≥ 2 and non-zero counts".into());
            }
            if !(*separation >= 0.0 && separation.is_finite()) {
                return bad("separation must be finite and ≥ 0".into());
            }
        }
        self.ablations
            .iter()
            .map(|name| {
                let opts = TrainOptions {
                    ablation: name.clone(),
                    ..self.train.clone()
                };
                opts.train_config()?;
                opts.resolved_ablation()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub data: u64,
    pub noise: u64,
    pub train: u64,
    pub search: u64,
}

/// Seeds shared by every ablation at the same (noise index, trial).
pub fn cell_seeds(seed: u64, noise_index: usize, trial: usize) -> CellSeeds {
    let t = trial as u64;
    CellSeeds {
        data: mix(seed, 0xDA7A_0000 + t),
        noise: mix(seed, 0x0015_0000 + (t << 16) + noise_index as u64),
        train: mix(seed, 0x7EA1_0000 + t),
        search: mix(seed, 0xB0B0_0000 + t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<TrialMetrics> for Metrics {
    fn from(m: TrialMetrics) -> Self {
        Metrics {
            auroc: m.auroc,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub val_auroc: f64,
    pub search_evaluations: usize,
    pub mislabeled: usize,
    pub excluded: usize,
    pub excluded_anomalous: usize,
    pub threshold: f64,
    /// λ during the last epoch; absent when adaptive L2 is off.
    pub final_lambda: Option<f64>,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub ablation: String,
    pub noise: f64,
    pub trial: usize,
    pub seeds: CellSeeds,
    pub result: Option<CellResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub ablation: String,
    pub noise: f64,
    pub trials: usize,
    pub failed: usize,
    pub mean: Option<Metrics>,
    pub std: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn aggregate(&self, ablation: &str, noise: f64) -> Option<&AggregateRecord> {
        self.aggregates.iter().find(|a| a.ablation == ablation && a.noise == noise)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_none()).count()
    }
}

fn summarize(c: &CellOutcome) -> CellResult {
    let o = &c.outcome;
    CellResult {
        alpha: c.hyper.alpha,
        beta: c.hyper.beta,
        k: c.hyper.k,
        val_auroc: c.val_auroc,
        search_evaluations: c.bo.as_ref().map_or(0, |b| b.trace.len()),
        mislabeled: c.mislabeled,
        excluded: o.pool.excluded_count(),
        excluded_anomalous: o.refinements.last().map_or(0, |r| r.excluded_anomalous),
        threshold: o.threshold.t,
        final_lambda: o.epochs.last().and_then(|e| e.lambda),
        test: c.test.metrics.into(),
    }
}

/// Directory holding one cell's artifacts under `root`.
pub fn cell_dir(root: &Path, ablation: &str, noise: f64, trial: usize) -> PathBuf {
    root.join("cells").join(ablation).join(format!("noise-{noise:.2}")).join(format!("trial-{trial}"))
}

fn write_cell_artifacts(dir: &Path, space: &SearchSpace, c: &CellOutcome) -> Result<()> {
    report::write_diagnostics(dir, &c.outcome)?;
    if let Some(bo) = &c.bo {
        write_bytes(&dir.join("bo_trace.csv"), &report::bo_trace_csv(space, bo))?;
    }
    Ok(())
}

fn load_data(cfg: &ExperimentConfig, trial_seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    match &cfg.data {
        DataSource::Synthetic {
            dim,
            nominal,
            anomalous,
            test_nominal,
            test_anomalous,
            separation,
        } => {
            let dist = SynthDistribution::new(*dim, *separation, trial_seed)?;
            Ok((
                dist.sample(*nominal, *anomalous, 0, "train-")?,
                dist.sample(*test_nominal, *test_anomalous, 1, "test-")?,
            ))
        }
        DataSource::Manifest { path, class } => {
            let (train, test) = Dataset::load(path)?.read_pair(class.as_deref())?;
            Ok((train.set, test.set))
        }
    }
}

/// Runs the grid. `artifacts` receives per-cell diagnostics when given;
/// `progress` sees every cell record as it completes.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    artifacts: Option<&Path>,
    mut progress: impl FnMut(&CellRecord),
) -> Result<MetricsReport> {
    let ablations = cfg.validate()?;
    let space = cfg.train.search_space();
    let mut cells = Vec::new();
    for trial in 0..cfg.trials {
        let data = load_data(cfg, cell_seeds(cfg.seed, 0, trial).data);
        for (ai, name) in cfg.ablations.iter().enumerate() {
            for (ni, &noise) in cfg.noise_grid.iter().enumerate() {
                let seeds = cell_seeds(cfg.seed, ni, trial);
                let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|(train_set, test_set)| {
                    let opts = TrainOptions {
                        ablation: name.clone(),
                        seed: seeds.train,
                        ..cfg.train.clone()
                    };
                    let cell = CellConfig {
                        train: opts.train_config().map_err(|e| e.to_string())?,
                        ablation: ablations[ai],
                        noise: NoiseSpec {
                            rate: noise,
                            seed: seeds.noise,
                        },
                        space: space.clone(),
                        bo_budget: cfg.train.bo_budget,
                        bo_seed: seeds.search,
                    };
                    let c = run_cell(train_set, test_set, &cell).map_err(|e| e.to_string())?;
                    if let Some(root) = artifacts {
                        write_cell_artifacts(&cell_dir(root, name, noise, trial), &space, &c).map_err(|e| e.to_string())?;
                    }
                    Ok(c)
                });
                let record = CellRecord {
                    ablation: name.clone(),
                    noise,
                    trial,
                    seeds,
                    result: outcome.as_ref().ok().map(summarize),
                    error: outcome.err(),
                };
                progress(&record);
                cells.push(record);
            }
        }
    }
    if cells.iter().all(|c| c.result.is_none()) {
        return Err(RadError::AllCellsFailed(cells.len()));
    }
    let mut aggregates = Vec::new();
    for name in &cfg.ablations {
        for &noise in &cfg.noise_grid {
            let group: Vec<&CellRecord> = cells.iter().filter(|c| &c.ablation == name && c.noise == noise).collect();
            let ok: Vec<TrialMetrics> = group
                .iter()
                .filter_map(|c| c.result.as_ref())
                .map(|r| TrialMetrics {
                    auroc: r.test.auroc,
                    precision: r.test.precision,
                    recall: r.test.recall,
                    f1: r.test.f1,
                })
                .collect();
            let agg = (!ok.is_empty()).then(|| aggregate(&ok));
            aggregates.push(AggregateRecord {
                ablation: name.clone(),
                noise,
                trials: ok.len(),
                failed: group.len() - ok.len(),
                mean: agg.map(|a| a.mean.into()),
                std: agg.map(|a| a.std.into()),
            });
        }
    }
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        version: METRICS_VERSION,
        config: cfg.clone(),
        cells,
        aggregates,
    })
}
