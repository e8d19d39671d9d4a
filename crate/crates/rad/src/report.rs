//! Text artifacts: score reports, search traces, training diagnostics and the
//! best-hyperparameter file.

use std::path::Path;

use rad_core::bayesopt::{BoResult, SearchSpace};
use rad_core::data::Sample;
use rad_core::pipeline::{HyperParams, TrainOutcome};
use rad_core::scoring::ScoreReport;
use serde::{Deserialize, Serialize};

use crate::error::{read_bytes, write_bytes, RadError, Result};

pub const SCORE_REPORT_HEADER: &str = "# rad score report v1";

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Shortest round-trip text for `x`, in exponent form outside `[1e-4, 1e16)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Tab-separated scores, one line per sample, after a `#` header carrying the
/// threshold statistics. The label column is `-` when labels are unknown.
pub fn score_tsv(samples: &[Sample], report: &ScoreReport, labelled: bool) -> String {
    let t = &report.threshold;
    let mut out = format!(
        "{SCORE_REPORT_HEADER}\n# k\t{}\n# q1\t{}\n# q3\t{}\n# threshold\t{}\n# flagged\t{}\nid\tscore\tflag\ttrue_label\n",
        num(report.k),
        num(t.q1),
        num(t.q3),
        num(t.t),
        report.flagged()
    );
    for ((s, score), flag) in samples.iter().zip(&report.scores).zip(&report.flags) {
        let label = if labelled { s.true_label.as_str() } else { "-" };
        out.push_str(&format!("{}\t{}\t{}\t{label}\n", s.id, num(*score), *flag as u8));
    }
    out
}

/// One row per evaluation: iteration, each hyperparameter, value, running best, failure flag.
pub fn bo_trace_csv(space: &SearchSpace, result: &BoResult) -> Vec<u8> {
    let mut header = vec!["iteration"];
    header.extend(space.dims().iter().map(|d| d.name.as_str()));
    header.extend(["value", "best", "failed"]);
    csv_bytes(
        &header,
        result.trace.iter().map(|t| {
            let mut row = vec![t.iteration.to_string()];
            row.extend(t.h.iter().map(|&v| num(v)));
            row.extend([num(t.value), num(t.best), (t.failed as u8).to_string()]);
            row
        }),
    )
}

/// Per-epoch losses, uncertainty and pool size. `det_sigma` is empty until two
/// epochs exist; `lambda` is empty throughout when adaptive L2 is off.
pub fn epochs_csv(o: &TrainOutcome) -> Vec<u8> {
    csv_bytes(
        &["epoch", "train_loss", "val_loss", "det_sigma", "lambda", "active", "excluded"],
        o.epochs.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                num(e.train_loss),
                num(e.val_loss),
                opt(e.det_sigma),
                opt(e.lambda),
                e.active.to_string(),
                e.excluded.to_string(),
            ]
        }),
    )
}

/// One row per optimizer step; `kind` is `meta` or `single`.
pub fn steps_csv(o: &TrainOutcome) -> Vec<u8> {
    csv_bytes(
        &["epoch", "step", "kind", "objective", "grad_norm", "lambda"],
        o.steps.iter().map(|s| {
            vec![
                s.epoch.to_string(),
                s.step.to_string(),
                s.kind.as_str().to_string(),
                num(s.objective),
                num(s.grad_norm),
                num(s.lambda),
            ]
        }),
    )
}

pub fn refinements_csv(o: &TrainOutcome) -> Vec<u8> {
    csv_bytes(
        &["epoch", "threshold", "q1", "q3", "excluded", "excluded_anomalous"],
        o.refinements.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                num(r.threshold.t),
                num(r.threshold.q1),
                num(r.threshold.q3),
                r.excluded.to_string(),
                r.excluded_anomalous.to_string(),
            ]
        }),
    )
}

/// Writes `epochs.csv`, `steps.csv` and `refinements.csv` into `dir`.
pub fn write_diagnostics(dir: &Path, o: &TrainOutcome) -> Result<()> {
    write_bytes(&dir.join("epochs.csv"), &epochs_csv(o))?;
    write_bytes(&dir.join("steps.csv"), &steps_csv(o))?;
    write_bytes(&dir.join("refinements.csv"), &refinements_csv(o))
}

/// `best_h.toml`, as written by `rad bayesopt` and read by `rad train --hyper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestH {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    /// Validation I-AUROC reached with these values.
    pub value: f64,
}

impl BestH {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, toml::to_string(self).expect("plain struct").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_bytes(path)?).map_err(|_| RadError::format(path, "not UTF-8"))?;
        let b: BestH = toml::from_str(&text).map_err(|e| RadError::format(path, e.message().to_string()))?;
        Ok(b)
    }
}
