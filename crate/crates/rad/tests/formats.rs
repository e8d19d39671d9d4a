use rad::checkpoint::Checkpoint;
use rad::experiment::ExperimentConfig;
use rad::featfile::{self, LabelFlags};
use rad::manifest::{Dataset, FileEntry, Manifest, Role};
use rad::report;
use rad::RadError;
use rad_core::data::{inject_noise, synth_generate, FeatureSet, Label, NoiseSpec};
use rad_core::flow::FlowConfig;
use rad_core::pipeline::{train, TrainConfig};

fn noisy_set() -> FeatureSet {
    let mut s = synth_generate(5, 30, 10, 4.0, 3).unwrap();
    s.scale_boundaries = vec![0, 2, 4];
    s.provenance = "tést provenance".into();
    inject_noise(&s, &NoiseSpec { rate: 0.3, seed: 1 }).unwrap()
}

#[test]
fn feature_file_round_trips_bit_exactly() {
    let set = noisy_set();
    for flags in [LabelFlags::ALL, LabelFlags::TRUE_ONLY] {
        let bytes = featfile::encode(&set, flags);
        let back = featfile::decode(&bytes).unwrap();
        assert_eq!(back.flags, flags);
        assert_eq!(featfile::encode(&back.set, back.flags), bytes);
        for (a, b) in back.set.samples().iter().zip(set.samples()) {
            assert_eq!(a.id, b.id);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
            assert_eq!(a.true_label, b.true_label);
        }
    }
    assert_eq!(featfile::decode(&featfile::encode(&set, LabelFlags::ALL)).unwrap().set, set);
    let v = featfile::validate(&featfile::encode(&set, LabelFlags::ALL));
    assert!(v.is_ok() && v.warnings.is_empty(), "{v:?}");
    assert_eq!((v.records, v.dim, v.nominal, v.anomalous), (40, 5, 30, 10));
}

#[test]
fn unlabelled_files_keep_their_flags() {
    let set = noisy_set().without_train_labels();
    let flags = LabelFlags {
        true_labels: false,
        train_labels: false,
    };
    let bytes = featfile::encode(&set, flags);
    let back = featfile::decode(&bytes).unwrap();
    assert!(back.set.samples().iter().all(|s| s.true_label == Label::Nominal && s.train_label.is_none()));
    assert_eq!(featfile::encode(&back.set, back.flags), bytes);
    assert_eq!(featfile::validate(&bytes).warnings.len(), 1);
}

/// Byte offset of the first record in a file written from `set`.
fn first_record(set: &FeatureSet) -> usize {
    8 + 2 + 4 + 8 + 4 + 4 * set.scale_boundaries.len() + 1 + 4 + set.provenance.len()
}

#[test]
fn validator_rejects_corruption() {
    let set = noisy_set();
    let good = featfile::encode(&set, LabelFlags::ALL);
    let id_len = set.samples()[0].id.len();
    let feature0 = first_record(&set) + 4 + id_len;
    let labels0 = feature0 + 8 * set.dim();
    assert_eq!(set.samples()[0].true_label, Label::Nominal);
    let patch = |at: usize, bytes: &[u8]| {
        let mut b = good.clone();
        b[at..at + bytes.len()].copy_from_slice(bytes);
        b
    };
    let mut trailing = good.clone();
    trailing.push(0);
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("magic", patch(0, b"X")),
        ("truncated", good[..good.len() - 3].to_vec()),
        ("trailing", trailing),
        ("version", patch(8, &[9])),
        ("non-finite", patch(feature0, &f64::NAN.to_le_bytes())),
        ("label byte", patch(labels0, &[7])),
        ("nominal sample carries an anomalous", patch(labels0 + 1, &[1])),
    ];
    for (expected, bytes) in cases {
        let v = featfile::validate(&bytes);
        assert!(!v.is_ok(), "{expected} accepted");
        assert!(v.errors[0].contains(expected), "{expected}: {:?}", v.errors);
    }
    assert!(matches!(
        featfile::read(std::path::Path::new("/nonexistent/x.radfeat")),
        Err(RadError::Read { .. })
    ));
}

#[test]
fn validator_warns_on_duplicates_and_constant_columns() {
    let mut samples = noisy_set().samples().to_vec();
    samples[1].id = samples[0].id.clone();
    for s in &mut samples {
        s.features[3] = 1.0;
    }
    let set = FeatureSet::new(5, samples, "x".into(), vec![]).unwrap();
    let v = featfile::validate(&featfile::encode(&set, LabelFlags::ALL));
    assert!(v.is_ok());
    assert_eq!(v.warnings.len(), 2, "{:?}", v.warnings);
}

fn trained() -> (FeatureSet, rad_core::pipeline::TrainOutcome) {
    let set = synth_generate(4, 60, 15, 5.0, 2).unwrap();
    let cfg = TrainConfig {
        flow: FlowConfig {
            blocks: 3,
            hidden: 8,
            ..FlowConfig::new(1)
        },
        epochs: 3,
        rotations: 2,
        flips: 1,
        ..TrainConfig::default()
    };
    let o = train(&set, &cfg).unwrap();
    (set, o)
}

#[test]
fn checkpoint_round_trips_and_scores_identically() {
    let (set, o) = trained();
    let ck = Checkpoint::from_outcome(&o);
    let bytes = ck.encode();
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.encode(), bytes);
    let scores = back.score(&set.features()).unwrap();
    assert_eq!(scores.scores, o.score(&set.features()).unwrap());
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = 0;
    assert!(Checkpoint::decode(&bad).is_err());
}

#[test]
fn manifest_resolves_and_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_generate(4, 10, 5, 3.0, 1).unwrap();
    let b = synth_generate(3, 10, 5, 3.0, 1).unwrap();
    featfile::write(&dir.path().join("a.radfeat"), &a, LabelFlags::ALL).unwrap();
    featfile::write(&dir.path().join("b.radfeat"), &b, LabelFlags::ALL).unwrap();
    let entry = |p: &str, role| FileEntry {
        path: p.into(),
        role,
        class: "c".into(),
    };
    let m = Manifest {
        version: 1,
        classes: vec!["c".into()],
        files: vec![entry("a.radfeat", Role::Train), entry("b.radfeat", Role::Test)],
        generator: None,
    };
    let path = dir.path().join("m.toml");
    m.save(&path).unwrap();
    let ds = Dataset::load(&path).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.read(Role::Train, None).unwrap().1.set, a);
    match ds.read_pair(None) {
        Err(RadError::DimensionMismatch { left_dim, right_dim, .. }) => assert_eq!((left_dim, right_dim), (4, 3)),
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, m.to_toml().replace("class = \"c\"", "class = \"zz\"")).unwrap();
    assert!(matches!(Dataset::load(&path), Err(RadError::Format { .. })));
}

#[test]
fn experiment_config_toml_round_trips() {
    let cfg = ExperimentConfig::trend(&["full", "no-meta-l2"]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    assert_eq!(ExperimentConfig::load(&p).unwrap(), cfg);
    let partial = "seed = 1\ntrials = 1\nnoise_grid = [0.0]\nablations = [\"no-bo\"]\n[data]\nsource = \"synthetic\"\ndim = 4\nnominal = 20\nanomalous = 5\ntest_nominal = 5\ntest_anomalous = 5\nseparation = 3.0\n[train]\nepochs = 2\n";
    std::fs::write(&p, partial).unwrap();
    let loaded = ExperimentConfig::load(&p).unwrap();
    assert_eq!(loaded.train.epochs, 2);
    assert_eq!(loaded.train.hidden, 64);
}

#[test]
fn score_report_layout() {
    let (set, o) = trained();
    let ck = Checkpoint::from_outcome(&o);
    let rep = ck.score(&set.features()).unwrap();
    let text = report::score_tsv(set.samples(), &rep, true);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], report::SCORE_REPORT_HEADER);
    assert_eq!(lines[6], "id\tscore\tflag\ttrue_label");
    assert_eq!(lines.len(), 7 + set.len());
    let t: f64 = lines[4].split('\t').nth(1).unwrap().parse().unwrap();
    assert_eq!(t, o.threshold.t);
    for (line, s) in lines[7..].iter().zip(&rep.scores) {
        let v: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(v.to_bits(), s.to_bits());
    }
    assert_eq!(report::num(9.3e-32), "9.3e-32");
    assert_eq!(report::num(0.5), "0.5");
}
