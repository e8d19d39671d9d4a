use std::path::Path;
use std::process::{Command, Output};

use rad::error::exit;

fn rad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rad")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &["--epochs", "3", "--blocks", "3", "--hidden", "8", "--bo-budget", "3"];

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth", "--dim", "4", "--nominal", "80", "--anomalous", "20", "--test-nominal", "20", "--test-anomalous", "20",
        "--seed", "7", "--out", p(dir),
    ];
    args.extend_from_slice(extra);
    rad(&args)
}

#[test]
fn help_lists_every_flag_with_default() {
    for sub in ["synth", "train", "score", "bayesopt", "experiment"] {
        let out = rad(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let text = String::from_utf8(out.stdout).unwrap();
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h,") || t.starts_with("-V,") {
                blocks.push(t.to_string());
            } else if let Some(b) = blocks.last_mut() {
                b.push(' ');
                b.push_str(t);
            }
        }
        assert!(blocks.len() > 3, "{sub}");
        for b in blocks.iter().filter(|b| !b.starts_with("-h,") && !b.starts_with("-V,")) {
            assert!(b.contains("[default:") || b.contains("(required)"), "{sub}: {b}");
        }
    }
    let train = String::from_utf8(rad(&["train", "--help"]).stdout).unwrap();
    for flag in ["--no-meta", "--no-adaptive-l2", "--no-bo", "--no-refine", "--ablation", "--lambda0", "--scale"] {
        assert!(train.contains(flag), "{flag}");
    }
}

#[test]
fn synth_is_deterministic_and_warns_on_zero_separation() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(a.path(), &[])), 0);
    assert_eq!(code(&synth(b.path(), &[])), 0);
    for f in ["train.radfeat", "test.radfeat", "manifest.toml"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let out = synth(b.path(), &["--sep", "0"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stderr).unwrap().contains("warning"));
    assert!(b.path().join("train.radfeat").exists());
    let v = rad(&["validate", p(&a.path().join("train.radfeat")), p(&a.path().join("test.radfeat"))]);
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8(v.stdout).unwrap().contains("ok, 100 records"));
}

#[test]
fn train_score_and_checkpoint_determinism() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let m = d.path().join("manifest.toml");
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    for r in [&r1, &r2] {
        let mut args = vec!["train", "--manifest", p(&m), "--out", p(r), "--noise", "0.3", "--noise-seed", "4"];
        args.extend_from_slice(SMALL);
        let out = rad(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["model.radflow", "epochs.csv", "steps.csv", "refinements.csv", "bo_trace.csv", "best_h.toml"] {
        assert_eq!(std::fs::read(r1.join(f)).unwrap(), std::fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let echo = std::fs::read_to_string(r1.join("config.toml")).unwrap();
    assert!(echo.contains("command = \"train\"") && echo.contains("lambda0 = 1.0") && echo.contains("noise = 0.3"));

    let best = r1.join("best_h.toml");
    let hyper = vec!["train", "--manifest", p(&m), "--hyper", p(&best), "--out", p(&r2)];
    assert_eq!(code(&rad(&[&hyper[..], &SMALL[..6]].concat())), 0);

    let s = d.path().join("s.tsv");
    let out = rad(&["score", "--checkpoint", p(&r1.join("model.radflow")), "--features", p(&d.path().join("test.radfeat")), "--out", p(&s)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&s).unwrap();
    assert_eq!(text.lines().count(), 7 + 40);
    let s2 = d.path().join("s2.tsv");
    rad(&["score", "--checkpoint", p(&r1.join("model.radflow")), "--features", p(&d.path().join("test.radfeat")), "--out", p(&s2), "--k", "0"]);
    let text2 = std::fs::read_to_string(&s2).unwrap();
    assert!(text2.contains("# k\t0\n"));
    assert_ne!(text, text2);

    // a 3-dimensional feature file against the 4-dimensional checkpoint
    let other = tempfile::tempdir().unwrap();
    rad(&["synth", "--dim", "3", "--out", p(other.path())]);
    let out = rad(&["score", "--checkpoint", p(&r1.join("model.radflow")), "--features", p(&other.path().join("test.radfeat")), "--out", p(&s)]);
    assert_eq!(code(&out), exit::INPUT as i32);
    assert!(String::from_utf8(out.stderr).unwrap().contains("d = 3"));
}

#[test]
fn documented_errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let m = d.path().join("manifest.toml");
    let out = rad(&["bayesopt", "--manifest", p(&m), "--budget", "2", "--out", p(&d.path().join("b"))]);
    assert_eq!(code(&out), exit::USAGE as i32);
    assert_eq!(code(&rad(&["train", "--manifest", p(&d.path().join("missing.toml"))])), exit::INPUT as i32);
    assert_eq!(code(&rad(&["train", "--bogus"])), exit::USAGE as i32);
    assert_eq!(code(&rad(&["train", "--manifest", p(&m), "--ablation", "nope"])), exit::USAGE as i32);
    let garbage = d.path().join("garbage.radfeat");
    std::fs::write(&garbage, b"RADFEAT\0\x01").unwrap();
    let out = rad(&["validate", p(&garbage)]);
    assert_eq!(code(&out), exit::INPUT as i32);
    assert!(String::from_utf8(out.stdout).unwrap().contains("truncated"));
    let blocked = d.path().join("train.radfeat").join("sub");
    let out = rad(&["synth", "--out", p(&blocked)]);
    assert_eq!(code(&out), exit::OUTPUT as i32);

    // mismatched train/test dimensions in one manifest
    let other = tempfile::tempdir().unwrap();
    rad(&["synth", "--dim", "3", "--out", p(other.path())]);
    std::fs::copy(other.path().join("test.radfeat"), d.path().join("test.radfeat")).unwrap();
    let r = d.path().join("r");
    let mut args = vec!["train", "--manifest", p(&m), "--no-bo", "--out", p(&r)];
    args.extend_from_slice(&SMALL[..6]);
    let out = rad(&args);
    assert_eq!(code(&out), exit::INPUT as i32);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("test.radfeat") && err.contains("manifest.toml"), "{err}");
}

#[test]
fn bayesopt_emits_one_row_per_evaluation() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let b = d.path().join("b");
    let m = d.path().join("manifest.toml");
    let mut args = vec!["bayesopt", "--manifest", p(&m), "--budget", "5", "--out", p(&b)];
    args.extend_from_slice(&SMALL[..6]);
    assert_eq!(code(&rad(&args)), 0);
    let trace = std::fs::read_to_string(b.join("bo_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);
    assert_eq!(trace.lines().next().unwrap(), "iteration,alpha,beta,k,value,best,failed");
    let best = rad::report::BestH::load(&b.join("best_h.toml")).unwrap();
    assert!((1e-5..=1e-1).contains(&best.alpha) && (0.5..=3.0).contains(&best.k));
}

#[test]
fn large_scale_respects_explicit_flags() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let r = d.path().join("r");
    let m = d.path().join("manifest.toml");
    let args = [
        "train", "--manifest", p(&m), "--out", p(&r), "--scale", "large", "--epochs", "1",
        "--hidden", "4", "--blocks", "2", "--no-bo",
    ];
    let out = rad(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(r.join("config.toml")).unwrap();
    assert!(echo.contains("epochs = 1\n") && echo.contains("batch_size = 96\n") && echo.contains("beta = 0.0002\n"));
    assert!(echo.contains("hidden = 4\n"));
}

#[test]
fn experiment_grid_records_every_cell() {
    let d = tempfile::tempdir().unwrap();
    let out_dir = d.path().join("e");
    let mut args = vec![
        "experiment", "--dim", "4", "--nominal", "60", "--anomalous", "20", "--test-nominal", "20", "--test-anomalous", "20",
        "--noise-grid", "0,0.2,0.4", "--trials", "2", "--compare", "no-bo,no-meta-l2", "--out", p(&out_dir),
    ];
    args.extend_from_slice(SMALL);
    let out = rad(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = rad::experiment::MetricsReport::from_json(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 2 * 3 * 2);
    assert_eq!(report.aggregates.len(), 2 * 3);
    assert!(report.aggregates.iter().all(|a| a.trials == 2 && a.std.is_some()));
    assert!(report.cells.iter().all(|c| c.result.is_some()));
    let cell = out_dir.join("cells/no-bo/noise-0.40/trial-1");
    assert!(cell.join("epochs.csv").exists() && !cell.join("bo_trace.csv").exists());
    assert!(out_dir.join("cells/no-meta-l2/noise-0.40/trial-1/bo_trace.csv").exists());

    // zero-sized training pool: every cell fails, exit status is nonzero
    let bad_dir = d.path().join("bad");
    let bad = [
        "experiment", "--dim", "4", "--nominal", "3", "--anomalous", "2", "--test-nominal", "2", "--test-anomalous", "2",
        "--noise-grid", "0", "--trials", "1", "--no-bo", "--epochs", "1", "--out", p(&bad_dir),
    ];
    let out = rad(&bad);
    assert_eq!(code(&out), exit::RUNTIME as i32);
}
