//! `rad` subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use rad_core::bayesopt::BoConfig;
use rad_core::data::{inject_noise, Label, NoiseSpec, SynthDistribution};
use rad_core::pipeline::{evaluate, search, train, HyperParams, TrainConfig, TrainOutcome};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::TrainOptions;
use crate::error::{exit, write_bytes, RadError, Result};
use crate::experiment::{run_experiment, DataSource, ExperimentConfig};
use crate::featfile::{self, LabelFlags};
use crate::manifest::{Dataset, FileEntry, Generator, Manifest, Role, MANIFEST_VERSION};
use crate::report::{self, BestH};

#[derive(Debug, Parser)]
#[command(name = "rad", version, about = "Noise-robust density-based anomaly detection on feature vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/test feature files and a manifest
    Synth(SynthArgs),
    /// Train a flow on a manifest's training file
    Train(TrainArgs),
    /// Score a feature file with a checkpoint
    Score(ScoreArgs),
    /// Search (α, β, k) by validation I-AUROC
    Bayesopt(BayesoptArgs),
    /// Run the noise × trial × ablation grid
    Experiment(ExperimentArgs),
    /// Check feature files against the format
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct SynthArgs {
    /// Feature dimension
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Nominal training samples
    #[arg(long, default_value_t = 400)]
    pub nominal: usize,
    /// Anomalous training samples
    #[arg(long, default_value_t = 100)]
    pub anomalous: usize,
    /// Nominal test samples
    #[arg(long, default_value_t = 100)]
    pub test_nominal: usize,
    /// Anomalous test samples
    #[arg(long, default_value_t = 100)]
    pub test_anomalous: usize,
    /// Shift of the anomalies along a seeded direction
    #[arg(long, default_value_t = 6.0)]
    pub sep: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct DataArgs {
    /// Dataset manifest (required)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Class to use when the manifest lists several [default: the only class]
    #[arg(long)]
    pub class: Option<String>,
    /// Share of anomalous training samples relabelled nominal
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed of the label-noise draw
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// best_h.toml from `rad bayesopt`; sets α, β, k and skips the search [default: none]
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOptions,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct ScoreArgs {
    /// Checkpoint written by `rad train` (required)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature file to score (required)
    #[arg(long)]
    pub features: PathBuf,
    /// IQR multiplier for the threshold [default: the checkpoint's k]
    #[arg(long)]
    pub k: Option<f64>,
    /// Output report (tab-separated)
    #[arg(long, default_value = "scores.tsv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct BayesoptArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Objective evaluations (each a full training run)
    #[arg(long, default_value_t = 25)]
    pub budget: usize,
    /// Search seed
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
    /// Output directory
    #[arg(long, default_value = "search")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOptions,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct ExperimentArgs {
    /// Experiment TOML; replaces every grid and training flag below [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use this manifest instead of synthetic data [default: none]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Class to use from the manifest [default: the only class]
    #[arg(long)]
    pub class: Option<String>,
    /// Synthetic feature dimension
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Synthetic nominal training samples
    #[arg(long, default_value_t = 400)]
    pub nominal: usize,
    /// Synthetic anomalous training samples
    #[arg(long, default_value_t = 100)]
    pub anomalous: usize,
    /// Synthetic nominal test samples
    #[arg(long, default_value_t = 100)]
    pub test_nominal: usize,
    /// Synthetic anomalous test samples
    #[arg(long, default_value_t = 100)]
    pub test_anomalous: usize,
    /// Synthetic separation
    #[arg(long, default_value_t = 6.0)]
    pub sep: f64,
    /// Comma-separated noise rates
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub noise_grid: Vec<f64>,
    /// Trials per noise level
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Comma-separated ablation presets to compare [default: the --ablation value]
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<String>,
    /// Experiment seed; every cell seed derives from it
    #[arg(long, default_value_t = 2024)]
    pub experiment_seed: u64,
    /// Output directory
    #[arg(long, default_value = "experiment")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOptions,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct ValidateArgs {
    /// Feature files
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

/// Config echo: the command name, tool version and every resolved option.
#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    command: &'a str,
    rad_version: &'a str,
    options: &'a T,
}

fn write_echo<T: Serialize>(dir: &Path, command: &str, options: &T) -> Result<()> {
    let echo = Echo {
        command,
        rad_version: env!("CARGO_PKG_VERSION"),
        options,
    };
    let text = toml::to_string(&echo).map_err(|e| RadError::Config(e.to_string()))?;
    write_bytes(&dir.join("config.toml"), text.as_bytes())
}

fn load_training_data(data: &DataArgs) -> Result<rad_core::data::FeatureSet> {
    let ds = Dataset::load(&data.manifest)?;
    let (_, file) = ds.read(Role::Train, data.class.as_deref())?;
    if !file.flags.train_labels && !file.flags.true_labels {
        return Err(RadError::format(&data.manifest, "training file carries no labels"));
    }
    let set = if file.flags.train_labels { file.set } else { file.set.with_clean_labels() };
    if data.noise > 0.0 {
        return Ok(inject_noise(
            &set,
            &NoiseSpec {
                rate: data.noise,
                seed: data.noise_seed,
            },
        )
        .map_err(|e| RadError::Config(e.to_string()))?);
    }
    if !(0.0..=0.5).contains(&data.noise) {
        return Err(RadError::Config(format!("noise rate {} outside [0, 0.5]", data.noise)));
    }
    Ok(set)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.sep == 0.0 {
        eprintln!("warning: --sep 0 makes nominal and anomalous samples identically distributed");
    }
    let dist = SynthDistribution::new(a.dim, a.sep, a.seed).map_err(|e| RadError::Config(e.to_string()))?;
    if [a.nominal, a.anomalous, a.test_nominal, a.test_anomalous].contains(&0) {
        return Err(RadError::Config("sample counts must be ≥ 1".into()));
    }
    let train_set = dist.sample(a.nominal, a.anomalous, 0, "train-")?;
    let test_set = dist.sample(a.test_nominal, a.test_anomalous, 1, "test-")?.without_train_labels();
    featfile::write(&a.out.join("train.radfeat"), &train_set, LabelFlags::ALL)?;
    featfile::write(&a.out.join("test.radfeat"), &test_set, LabelFlags::TRUE_ONLY)?;
    let class = "synthetic".to_string();
    let entry = |path: &str, role| FileEntry {
        path: path.into(),
        role,
        class: class.clone(),
    };
    Manifest {
        version: MANIFEST_VERSION,
        classes: vec![class.clone()],
        files: vec![entry("train.radfeat", Role::Train), entry("test.radfeat", Role::Test)],
        generator: Some(Generator {
            dim: a.dim,
            nominal: a.nominal,
            anomalous: a.anomalous,
            test_nominal: a.test_nominal,
            test_anomalous: a.test_anomalous,
            separation: a.sep,
            seed: a.seed,
        }),
    }
    .save(&a.out.join("manifest.toml"))?;
    println!(
        "wrote {} training and {} test samples (d = {}) to {}",
        train_set.len(),
        test_set.len(),
        a.dim,
        a.out.display()
    );
    Ok(())
}

fn print_outcome(o: &TrainOutcome) {
    if let Some(e) = o.epochs.last() {
        let lam = e.lambda.map_or("off".to_string(), |l| format!("{l:.4}"));
        println!(
            "epoch {}: train loss {:.4}, val loss {:.4}, λ {lam}, {} active / {} excluded",
            e.epoch, e.train_loss, e.val_loss, e.active, e.excluded
        );
    }
    let kind = o.steps.first().map_or("none", |s| s.kind.as_str());
    println!("{} optimizer steps ({kind}), {} refinement rounds", o.steps.len(), o.refinements.len());
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = a.train.train_config()?;
    let ablation = a.train.resolved_ablation()?;
    let set = load_training_data(&a.data)?;
    let outcome = if let Some(path) = &a.hyper {
        let best = BestH::load(path)?;
        cfg.hyper = HyperParams::from_slice(&best.hyper().to_vec()).map_err(|e| RadError::Config(e.to_string()))?;
        train(&set, &cfg)?
    } else if ablation.bayesopt {
        let (bo, outcome, v) = search(&set, &cfg, &a.train.search_space(), &BoConfig::new(a.train.bo_budget, cfg.seed))?;
        write_bytes(&a.out.join("bo_trace.csv"), &report::bo_trace_csv(&a.train.search_space(), &bo))?;
        let h = HyperParams::from_slice(&bo.best_h)?;
        BestH {
            alpha: h.alpha,
            beta: h.beta,
            k: h.k,
            value: v,
        }
        .save(&a.out.join("best_h.toml"))?;
        println!("search: best validation I-AUROC {v:.4} at α={:.3e} β={:.3e} k={:.3}", h.alpha, h.beta, h.k);
        outcome
    } else {
        train(&set, &cfg)?
    };
    Checkpoint::from_outcome(&outcome).write(&a.out.join("model.radflow"))?;
    report::write_diagnostics(&a.out, &outcome)?;
    write_echo(&a.out, "train", a)?;
    println!("configuration: {}", ablation.name());
    print_outcome(&outcome);
    if let Ok((test_path, test)) = Dataset::load(&a.data.manifest)?.read(Role::Test, a.data.class.as_deref()) {
        if test.set.dim() != set.dim() {
            return Err(RadError::DimensionMismatch {
                left: a.data.manifest.clone(),
                left_dim: set.dim(),
                right: test_path,
                right_dim: test.set.dim(),
            });
        }
        if test.flags.true_labels && test.set.count_true(Label::Anomalous) > 0 && test.set.count_true(Label::Nominal) > 0 {
            let m = evaluate(&outcome, &test.set)?.metrics;
            println!(
                "test: I-AUROC {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
                m.auroc, m.precision, m.recall, m.f1
            );
        }
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let mut ckpt = Checkpoint::read(&a.checkpoint)?;
    let file = featfile::read(&a.features)?;
    if file.set.dim() != ckpt.dim() {
        return Err(RadError::DimensionMismatch {
            left: a.checkpoint.clone(),
            left_dim: ckpt.dim(),
            right: a.features.clone(),
            right_dim: file.set.dim(),
        });
    }
    if let Some(k) = a.k {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(RadError::Config(format!("k must be finite and ≥ 0, got {k}")));
        }
        ckpt.k = k;
        ckpt.threshold.t = ckpt.threshold.q3 + k * (ckpt.threshold.q3 - ckpt.threshold.q1);
    }
    let rep = ckpt.score(&file.set.features())?;
    let text = report::score_tsv(file.set.samples(), &rep, file.flags.true_labels);
    write_bytes(&a.out, text.as_bytes())?;
    println!(
        "scored {} samples, {} above threshold {:.4}",
        rep.scores.len(),
        rep.flagged(),
        rep.threshold.t
    );
    Ok(())
}

fn cmd_bayesopt(a: &BayesoptArgs) -> Result<()> {
    if a.budget < 3 {
        return Err(RadError::Config(format!("--budget must be ≥ 3, got {}", a.budget)));
    }
    let cfg = a.train.train_config()?;
    let set = load_training_data(&a.data)?;
    let space = a.train.search_space();
    let (bo, _, v) = search(&set, &cfg, &space, &BoConfig::new(a.budget, a.search_seed))?;
    write_bytes(&a.out.join("bo_trace.csv"), &report::bo_trace_csv(&space, &bo))?;
    let h = HyperParams::from_slice(&bo.best_h)?;
    BestH {
        alpha: h.alpha,
        beta: h.beta,
        k: h.k,
        value: v,
    }
    .save(&a.out.join("best_h.toml"))?;
    write_echo(&a.out, "bayesopt", a)?;
    for w in &bo.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} evaluations; best validation I-AUROC {v:.4} at α={:.3e} β={:.3e} k={:.3}",
        bo.trace.len(),
        h.alpha,
        h.beta,
        h.k
    );
    Ok(())
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    if let Some(path) = &a.config {
        return ExperimentConfig::load(path);
    }
    let data = match &a.manifest {
        Some(path) => DataSource::Manifest {
            path: path.clone(),
            class: a.class.clone(),
        },
        None => DataSource::Synthetic {
            dim: a.dim,
            nominal: a.nominal,
            anomalous: a.anomalous,
            test_nominal: a.test_nominal,
            test_anomalous: a.test_anomalous,
            separation: a.sep,
        },
    };
    let ablations = if a.compare.is_empty() {
        vec![a.train.resolved_ablation()?.name()]
    } else {
        a.compare.clone()
    };
    Ok(ExperimentConfig {
        data,
        noise_grid: a.noise_grid.clone(),
        trials: a.trials,
        ablations,
        seed: a.experiment_seed,
        train: a.train.clone(),
    })
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let cfg = experiment_config(a)?;
    cfg.validate()?;
    if let DataSource::Synthetic { separation, .. } = cfg.data {
        if separation == 0.0 {
            eprintln!("warning: separation 0 makes nominal and anomalous samples identically distributed");
        }
    }
    write_bytes(&a.out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let report = run_experiment(&cfg, Some(&a.out), |c| match (&c.result, &c.error) {
        (Some(r), _) => println!(
            "{} noise {:.2} trial {}: I-AUROC {:.4}, F1 {:.4}",
            c.ablation, c.noise, c.trial, r.test.auroc, r.test.f1
        ),
        (None, e) => eprintln!(
            "{} noise {:.2} trial {} failed: {}",
            c.ablation,
            c.noise,
            c.trial,
            e.as_deref().unwrap_or("unknown error")
        ),
    })?;
    write_bytes(&a.out.join("metrics.json"), report.to_json().as_bytes())?;
    println!("ablation\tnoise\tmean_auroc\tstd_auroc\tmean_f1\ttrials");
    for g in &report.aggregates {
        match (g.mean, g.std) {
            (Some(m), Some(s)) => println!(
                "{}\t{:.2}\t{:.4}\t{:.4}\t{:.4}\t{}",
                g.ablation, g.noise, m.auroc, s.auroc, m.f1, g.trials
            ),
            _ => println!("{}\t{:.2}\t-\t-\t-\t0", g.ablation, g.noise),
        }
    }
    if report.failed_cells() > 0 {
        eprintln!("{} of {} cells failed", report.failed_cells(), report.cells.len());
    }
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<bool> {
    let mut all_ok = true;
    for path in &a.files {
        let v = featfile::validate(&crate::error::read_bytes(path)?);
        if v.is_ok() {
            println!(
                "{}: ok, {} records, d = {}, {} nominal / {} anomalous, {} warnings",
                path.display(),
                v.records,
                v.dim,
                v.nominal,
                v.anomalous,
                v.warnings.len()
            );
        } else {
            all_ok = false;
            println!("{}: invalid", path.display());
        }
        for e in &v.errors {
            println!("  error: {e}");
        }
        for w in &v.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(all_ok)
}

fn train_options_mut(cmd: &mut Command) -> Option<&mut TrainOptions> {
    match cmd {
        Command::Train(a) => Some(&mut a.train),
        Command::Bayesopt(a) => Some(&mut a.train),
        Command::Experiment(a) => Some(&mut a.train),
        _ => None,
    }
}

fn apply_scale(cli: &mut Cli, matches: &ArgMatches) -> Result<()> {
    let sub = matches.subcommand().map(|(_, m)| m);
    if let (Some(opts), Some(m)) = (train_options_mut(&mut cli.command), sub) {
        opts.apply_scale(|id| m.value_source(id) != Some(ValueSource::CommandLine))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Score(a) => cmd_score(a).map(|_| true),
        Command::Bayesopt(a) => cmd_bayesopt(a).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(exit::USAGE);
        }
    };
    let result = apply_scale(&mut cli, &matches).and_then(|_| execute(&cli));
    match result {
        Ok(true) => ExitCode::from(exit::OK),
        Ok(false) => ExitCode::from(exit::INPUT),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
