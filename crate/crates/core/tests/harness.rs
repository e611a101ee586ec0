use std::fs;

use num_complex::Complex;
use psbch_rff::channel::{add_awgn, Tap};
use psbch_rff::classifier::{LabeledDataset, LabeledRow};
use psbch_rff::harness::config::AblationSpec;
use psbch_rff::harness::experiment::with_workers;
use psbch_rff::harness::iq::{IQ_FORMAT_VERSION, MANIFEST_FILE, SAMPLES_FILE, SAMPLE_FORMAT};
use psbch_rff::harness::{
    extract_features, generate_dataset, run_experiment, simulate_condition, write_dataset, Classifier, Condition,
    ExperimentConfig, IqManifest, RecordMeta, Role, Simulator,
};
use psbch_rff::waveform::TimeSignal;
use psbch_rff::{Complex64, Error};

fn small_config(terminals: usize, train: usize, test: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.terminals.truncate(terminals);
    cfg.train.subframes = train;
    cfg.test.subframes = test;
    cfg.test.snr_db = vec![20.0];
    cfg.test.speed_kmh = vec![30.0];
    cfg.ablation = AblationSpec {
        enabled: false,
        ..AblationSpec::default()
    };
    cfg.forest.n_trees = 30;
    cfg
}

#[test]
fn record_length_covers_subframe_and_margins() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.numerology.subframe_len(), 30704);
    assert_eq!(cfg.record_len(), 30704 + 1000 + 280);
}

#[test]
fn dataset_generation_is_reproducible() {
    let cfg = small_config(2, 3, 2);
    let dir = tempfile::tempdir().unwrap();
    let conds = [Condition::train(&cfg), Condition::test(10.0, 60.0)];
    let a = generate_dataset(&cfg, &conds, &dir.path().join("a")).unwrap();
    let mut other = cfg.clone();
    other.workers = 3;
    let b = generate_dataset(&other, &conds, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 2 * 3 + 2 * 2);
    for f in [SAMPLES_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
    let len = fs::metadata(a.dir.join(SAMPLES_FILE)).unwrap().len();
    assert_eq!(len as usize, a.len() * cfg.record_len() * 8);
}

#[test]
fn pure_noise_record_is_skipped_and_counted() {
    let cfg = small_config(1, 1, 1);
    let sim = Simulator::new(&cfg).unwrap();
    let good = sim.simulate(0, &Condition::train(&cfg), 5).unwrap();
    let silence = TimeSignal::new(vec![Complex64::new(0.0, 0.0); cfg.record_len()], cfg.numerology.sample_rate);
    let noise: Vec<Complex<f32>> = add_awgn(&silence, 0.0, 1.0, 3)
        .samples
        .iter()
        .map(|s| Complex::new(s.re as f32, s.im as f32))
        .collect();
    let meta = |index| RecordMeta {
        terminal_id: 1,
        role: Role::Test,
        snr_db: 30.0,
        speed_kmh: 30.0,
        index,
        seed: index as u64,
    };
    let manifest = IqManifest {
        format_version: IQ_FORMAT_VERSION,
        sample_format: SAMPLE_FORMAT.into(),
        sample_rate: cfg.numerology.sample_rate,
        subframe_samples: cfg.numerology.subframe_len(),
        record_len: cfg.record_len(),
        slss: cfg.slss,
        records: vec![meta(0), meta(1)],
    };
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), &manifest, &[good, noise]).unwrap();
    let ex = extract_features(&ds, &cfg).unwrap();
    assert_eq!(ex.sync_failures, 1);
    assert_eq!(ex.total, 2);
    assert_eq!(ex.features.len(), 1);
}

#[test]
fn truncated_sample_file_is_rejected() {
    let cfg = small_config(1, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&cfg, &[Condition::train(&cfg)], dir.path()).unwrap();
    let path = ds.dir.join(SAMPLES_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(
        psbch_rff::harness::IqDataset::open(dir.path()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn high_snr_subframes_synchronize() {
    let cfg = small_config(10, 20, 20);
    let sim = Simulator::new(&cfg).unwrap();
    let out = simulate_condition(&sim, &Condition::test(30.0, 30.0), &[true]).unwrap();
    let rate = 1.0 - out.sync_failures as f64 / out.total as f64;
    println!("sync success at 30 dB / 30 km/h: {rate:.3} of {}", out.total);
    assert!(rate >= 0.99, "{rate}");
}

#[test]
fn file_path_matches_in_memory_path() {
    let cfg = small_config(3, 4, 2);
    let cond = Condition::test(15.0, 60.0);
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&cfg, &[cond], dir.path()).unwrap();
    let from_files = extract_features(&ds, &cfg).unwrap();
    let sim = Simulator::new(&cfg).unwrap();
    let fused = simulate_condition(&sim, &cond, &[true]).unwrap();
    assert_eq!(from_files.features, fused.datasets[0]);
    assert_eq!(from_files.sync_failures, fused.sync_failures);
}

#[test]
fn feature_csv_round_trip_through_files() {
    let cfg = small_config(2, 2, 1);
    let sim = Simulator::new(&cfg).unwrap();
    let feats = simulate_condition(&sim, &Condition::train(&cfg), &[true]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    feats.datasets[0].write_csv(&path).unwrap();
    assert_eq!(LabeledDataset::read_csv(&path).unwrap(), feats.datasets[0]);
}

#[test]
fn single_terminal_run_is_trivially_perfect() {
    let cfg = small_config(1, 3, 3);
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(res.accuracy.len(), 1);
    assert_eq!(res.accuracy[0].accuracy, 1.0);
    assert!(dir.path().join("accuracy.csv").exists());
}

#[test]
fn excessive_sync_failures_are_reported_after_writing() {
    let mut cfg = small_config(2, 4, 3);
    cfg.test.snr_db = vec![-30.0];
    cfg.max_sync_failure_rate = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::SyncFailureRate { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(dir.path().join("accuracy.csv").exists());
}

#[test]
fn invalid_profile_rejected_before_simulation() {
    let mut cfg = small_config(2, 2, 2);
    cfg.terminals[1].profile.pa_coeffs[2] = Complex64::new(-0.6, 0.0);
    let err = Simulator::new(&cfg).err().expect("profile over the EVM limit");
    assert!(matches!(err, Error::InvalidProfile(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn noiseless_flat_channel_classifies_perfectly() {
    let mut cfg = small_config(10, 50, 20);
    cfg.channel.taps = vec![Tap {
        delay_ns: 0.0,
        power_db: 0.0,
    }];
    cfg.forest.n_trees = 100;
    let sim = Simulator::new(&cfg).unwrap();
    let cond = Condition {
        role: Role::Train,
        snr_db: f64::INFINITY,
        speed_kmh: 0.0,
    };
    let cfg_ref = &cfg;
    let (train, test) = with_workers(0, || {
        let all = simulate_condition(&sim, &cond, &[true]).unwrap();
        assert_eq!(all.sync_failures, 0);
        let rows = all.datasets.into_iter().next().unwrap().rows;
        // subframe seeds are per index, so split on the seed order
        let split = |keep: fn(usize) -> bool| -> LabeledDataset {
            let mut out: Vec<LabeledRow> = Vec::new();
            for id in cfg_ref.terminals.iter().map(|t| t.id) {
                let mine: Vec<&LabeledRow> = rows.iter().filter(|r| r.label == id).collect();
                out.extend(mine.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, r)| (*r).clone()));
            }
            LabeledDataset::new(out)
        };
        (split(|i| i < 30), split(|i| i >= 30))
    })
    .unwrap();
    assert_eq!(train.len(), 300);
    assert_eq!(test.len(), 200);
    let model = Classifier::fit(&train, &cfg, true).unwrap();
    let report = model.evaluate(&test).unwrap();
    assert_eq!(report.overall_accuracy, 1.0, "{:?}", report.confusion);
}

#[test]
fn example_config_matches_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    assert_eq!(ExperimentConfig::load(&path, &[]).unwrap(), ExperimentConfig::default());
}
