//! Subframe simulation, feature extraction and the accuracy sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::{Complex, Complex64};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::channel::{add_awgn, apply_channel, make_fading, ChannelConfig};
use crate::classifier::{evaluate, train, EvalReport, ForestModel, LabeledDataset, LabeledRow};
use crate::error::{Error, Result};
use crate::extractor::{extract, ExtractorConfig};
use crate::impairments::{apply_rff, validate_profile};
use crate::receiver::preprocess;
use crate::seed;
use crate::waveform::{build_psbch_grid, scfdma_modulate, TimeSignal, REFERENCE_SYMBOLS};

const FADING_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const FRONT_END_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 0x7472_6169;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// One simulated propagation condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub role: Role,
    pub snr_db: f64,
    pub speed_kmh: f64,
}

impl Condition {
    pub fn train(cfg: &ExperimentConfig) -> Self {
        Condition {
            role: Role::Train,
            snr_db: cfg.train.snr_db,
            speed_kmh: cfg.train.speed_kmh,
        }
    }

    pub fn test(snr_db: f64, speed_kmh: f64) -> Self {
        Condition {
            role: Role::Test,
            snr_db,
            speed_kmh,
        }
    }

    pub fn subframes(&self, cfg: &ExperimentConfig) -> usize {
        match self.role {
            Role::Train => cfg.train.subframes,
            Role::Test => cfg.test.subframes,
        }
    }
}

/// Seed of one received subframe. Conditions never share channel or noise
/// draws.
pub fn subframe_seed(master: u64, terminal_id: u32, cond: &Condition, index: usize) -> u64 {
    let role = match cond.role {
        Role::Train => 0,
        Role::Test => 1,
    };
    seed::derive(
        master,
        &[
            terminal_id as u64,
            role,
            cond.snr_db.to_bits(),
            cond.speed_kmh.to_bits(),
            index as u64,
        ],
    )
}

/// Transmit side of every configured terminal plus the channel template.
pub struct Simulator {
    cfg: ExperimentConfig,
    /// Impaired reference subframe per terminal, in config order.
    transmitted: Vec<TimeSignal>,
}

impl Simulator {
    /// Checks every profile against the EVM limit and precomputes the
    /// transmitted subframes.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let num = &cfg.numerology;
        let tx = scfdma_modulate(&build_psbch_grid(cfg.slss), num)?.scaled(num.drive_gain());
        let transmitted = cfg
            .terminals
            .iter()
            .map(|t| {
                validate_profile(&t.profile, num, cfg.slss).map_err(|e| {
                    Error::InvalidProfile(format!("terminal {}: {e}", t.id))
                })?;
                apply_rff(&tx, &t.profile)
            })
            .collect::<Result<_>>()?;
        Ok(Simulator {
            cfg: cfg.clone(),
            transmitted,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Received record for terminal slot `terminal` (index into the config's
    /// terminal list): random delay and CFO, fading channel, then noise at
    /// `cond.snr_db` relative to the received reference-symbol power.
    /// Samples are rounded to single precision as if read from a capture.
    pub fn simulate(&self, terminal: usize, cond: &Condition, subframe_seed: u64) -> Result<Vec<Complex<f32>>> {
        let cfg = &self.cfg;
        let num = &cfg.numerology;
        let tx = &self.transmitted[terminal];
        let mut rng = seed::rng(seed::derive(subframe_seed, &[FRONT_END_STREAM]));
        let cfo_hz = if cfg.channel.cfo_max_hz > 0.0 {
            rng.random_range(-cfg.channel.cfo_max_hz..=cfg.channel.cfo_max_hz)
        } else {
            0.0
        };
        let timing_offset = rng.random_range(0..=cfg.channel.timing_offset_max);
        let channel = ChannelConfig {
            taps: cfg.channel.taps.clone(),
            speed_kmh: cond.speed_kmh,
            carrier_freq_hz: cfg.channel.carrier_freq_hz,
            snr_db: cond.snr_db,
            cfo_hz,
            timing_offset,
            seed: seed::derive(subframe_seed, &[FADING_STREAM]),
        };
        channel.validate()?;
        let fading = make_fading(&channel, tx.len(), num.sample_rate);
        let mut rx = apply_channel(tx, &fading, &channel)?;
        rx.samples.resize(cfg.record_len(), Complex64::new(0.0, 0.0));

        let power_ref = REFERENCE_SYMBOLS
            .iter()
            .map(|&s| {
                let start = timing_offset + num.body_start(s);
                rx.mean_power(start..start + num.fft_size)
            })
            .sum::<f64>()
            / REFERENCE_SYMBOLS.len() as f64;
        let noisy = add_awgn(
            &rx,
            cond.snr_db,
            power_ref,
            seed::derive(subframe_seed, &[NOISE_STREAM]),
        );
        Ok(noisy
            .samples
            .iter()
            .map(|s| Complex::new(s.re as f32, s.im as f32))
            .collect())
    }
}

/// Receiver result for one record: one feature vector per requested
/// equalization setting, or `None` when synchronization failed.
pub fn extract_record(
    record: &[Complex<f32>],
    cfg: &ExperimentConfig,
    equalize: &[bool],
) -> Result<Option<Vec<Vec<f64>>>> {
    let num = &cfg.numerology;
    let r = TimeSignal::new(
        record.iter().map(|s| Complex64::new(s.re as f64, s.im as f64)).collect(),
        num.sample_rate,
    );
    let pre = match preprocess(&r, num, cfg.slss, &cfg.receiver) {
        Ok(p) => p,
        Err(Error::NoSyncPeak | Error::SlssMismatch { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    equalize
        .iter()
        .map(|&eq| {
            let ext_cfg = ExtractorConfig {
                equalize: eq,
                ..cfg.extractor
            };
            Ok(extract(&pre.demapped, cfg.slss, &ext_cfg)?.feature.flatten())
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Labeled features for one condition, one dataset per equalization
/// setting, plus the number of records that failed synchronization.
pub struct ConditionFeatures {
    pub datasets: Vec<LabeledDataset>,
    pub sync_failures: usize,
    pub total: usize,
}

/// Simulates and extracts every subframe of `cond` without touching disk.
/// Parallel over subframes; row order is terminal-major then index.
pub fn simulate_condition(sim: &Simulator, cond: &Condition, equalize: &[bool]) -> Result<ConditionFeatures> {
    let cfg = sim.config();
    let count = cond.subframes(cfg);
    let jobs: Vec<(usize, usize)> = (0..cfg.terminals.len())
        .flat_map(|t| (0..count).map(move |i| (t, i)))
        .collect();
    let results: Vec<(usize, u64, Option<Vec<Vec<f64>>>)> = jobs
        .par_iter()
        .map(|&(t, i)| {
            let s = subframe_seed(cfg.master_seed, cfg.terminals[t].id, cond, i);
            let record = sim.simulate(t, cond, s)?;
            Ok((t, s, extract_record(&record, cfg, equalize)?))
        })
        .collect::<Result<_>>()?;
    let mut datasets = vec![LabeledDataset::default(); equalize.len()];
    let mut sync_failures = 0;
    for (t, s, features) in results {
        let Some(features) = features else {
            sync_failures += 1;
            continue;
        };
        for (ds, f) in datasets.iter_mut().zip(features) {
            ds.rows.push(LabeledRow {
                features: f,
                label: cfg.terminals[t].id,
                snr_db: cond.snr_db,
                speed_kmh: cond.speed_kmh,
                seed: s,
            });
        }
    }
    Ok(ConditionFeatures {
        datasets,
        sync_failures,
        total: jobs.len(),
    })
}

/// Forest seed for features extracted with or without equalization.
pub fn training_seed(master_seed: u64, equalized: bool) -> u64 {
    seed::derive(master_seed, &[TRAIN_STREAM, equalized as u64])
}

/// A forest, or the constant answer when only one terminal is configured.
#[derive(Debug, Clone)]
pub enum Classifier {
    Single(u32),
    Forest(ForestModel),
}

impl Classifier {
    /// `equalized` selects the feature variant, so both ablation arms get
    /// independent forests.
    pub fn fit(data: &LabeledDataset, cfg: &ExperimentConfig, equalized: bool) -> Result<Self> {
        match data.labels().as_slice() {
            [] => Err(Error::DegenerateDataset("no training rows".into())),
            [only] => Ok(Classifier::Single(*only)),
            _ => Ok(Classifier::Forest(train(
                data,
                &cfg.forest,
                training_seed(cfg.master_seed, equalized),
            )?)),
        }
    }

    pub fn evaluate(&self, test: &LabeledDataset) -> Result<EvalReport> {
        match self {
            Classifier::Forest(m) => evaluate(m, test),
            Classifier::Single(label) => {
                if test.is_empty() {
                    return Err(Error::DegenerateDataset("empty test set".into()));
                }
                let hits = test.rows.iter().filter(|r| r.label == *label).count() as u64;
                let n = test.len() as u64;
                let acc = hits as f64 / n as f64;
                Ok(EvalReport {
                    classes: vec![*label],
                    confusion: vec![vec![hits]],
                    per_class_accuracy: vec![acc],
                    overall_accuracy: acc,
                    snr_db: test.rows.first().map(|r| r.snr_db),
                    speed_kmh: test.rows.first().map(|r| r.speed_kmh),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub speed_kmh: f64,
    pub snr_db: f64,
    pub accuracy: f64,
    pub n_test: usize,
    pub sync_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub speed_kmh: f64,
    pub snr_db: f64,
    pub accuracy_equalized: f64,
    pub accuracy_unequalized: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub accuracy: Vec<AccuracyRow>,
    pub ablation: Vec<AblationRow>,
    pub sync_failures: usize,
    pub total_subframes: usize,
}

impl ExperimentResults {
    pub fn accuracy_at(&self, speed_kmh: f64, snr_db: f64) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|r| r.speed_kmh == speed_kmh && r.snr_db == snr_db)
            .map(|r| r.accuracy)
    }
}

/// Runs `f` on a pool with the configured worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            what: "CSV",
            detail: format!("{other:?}"),
        },
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            what: "CSV",
            detail: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// File name fragment for a condition, e.g. `v30_snr10`.
pub fn condition_tag(speed_kmh: f64, snr_db: f64) -> String {
    format!("v{speed_kmh}_snr{snr_db}")
}

/// Trains at the training condition and evaluates every sweep point, plus
/// the equalization ablation when enabled. Writes `accuracy.csv`,
/// `ablation.csv` and `confusion/*.csv` under `out_dir`.
///
/// Fails with [`Error::SyncFailureRate`] after writing the results when too
/// many subframes could not be synchronized.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResults> {
    let sim = Simulator::new(cfg)?;
    let confusion_dir: PathBuf = out_dir.join("confusion");
    fs::create_dir_all(&confusion_dir).map_err(|e| Error::io(&confusion_dir, e))?;
    let results = with_workers(cfg.workers, || sweep(&sim, &confusion_dir))??;
    write_csv(&out_dir.join("accuracy.csv"), &results.accuracy)?;
    if cfg.ablation.enabled {
        write_csv(&out_dir.join("ablation.csv"), &results.ablation)?;
    }
    let limit = cfg.max_sync_failure_rate;
    if results.sync_failures as f64 > limit * results.total_subframes as f64 {
        return Err(Error::SyncFailureRate {
            failures: results.sync_failures,
            total: results.total_subframes,
            limit,
        });
    }
    Ok(results)
}

fn sweep(sim: &Simulator, confusion_dir: &Path) -> Result<ExperimentResults> {
    let cfg = sim.config();
    let main_eq = cfg.extractor.equalize;
    let ablation = cfg.ablation.enabled;
    // the ablation needs both arms; otherwise only the configured one
    let train_variants: Vec<bool> = if ablation { vec![true, false] } else { vec![main_eq] };
    let pick = |variants: &[bool], eq: bool| variants.iter().position(|&v| v == eq);

    let train_cond = Condition::train(cfg);
    let trained = simulate_condition(sim, &train_cond, &train_variants)?;
    let mut sync_failures = trained.sync_failures;
    let mut total_subframes = trained.total;
    let models: Vec<Classifier> = trained
        .datasets
        .iter()
        .zip(&train_variants)
        .map(|(d, &eq)| Classifier::fit(d, cfg, eq))
        .collect::<Result<_>>()?;
    let main_model = &models[pick(&train_variants, main_eq).expect("main variant trained")];

    let in_ablation = |cond: &Condition| {
        ablation
            && cond.snr_db == cfg.ablation.snr_db
            && cfg.ablation.speed_kmh.contains(&cond.speed_kmh)
    };

    let mut accuracy = Vec::new();
    let mut ablation_rows = Vec::new();
    let mut grid: Vec<(Condition, bool)> = Vec::new();
    for &v in &cfg.test.speed_kmh {
        for &s in &cfg.test.snr_db {
            grid.push((Condition::test(s, v), true));
        }
    }
    if ablation {
        for &v in &cfg.ablation.speed_kmh {
            let c = Condition::test(cfg.ablation.snr_db, v);
            if !grid.iter().any(|(g, _)| *g == c) {
                grid.push((c, false));
            }
        }
    }

    for (cond, in_sweep) in grid {
        let variants = if in_ablation(&cond) {
            train_variants.clone()
        } else {
            vec![main_eq]
        };
        let feats = simulate_condition(sim, &cond, &variants)?;
        sync_failures += feats.sync_failures;
        total_subframes += feats.total;
        let n_test = feats.datasets[0].len();
        let report_for = |model: &Classifier, eq: bool| -> Result<f64> {
            let ds = &feats.datasets[pick(&variants, eq).expect("variant extracted")];
            if ds.is_empty() {
                return Ok(0.0);
            }
            Ok(model.evaluate(ds)?.overall_accuracy)
        };
        if in_sweep {
            let ds = &feats.datasets[pick(&variants, main_eq).expect("main variant")];
            let acc = if ds.is_empty() {
                0.0
            } else {
                let report = main_model.evaluate(ds)?;
                report.write_confusion_csv(
                    &confusion_dir.join(format!("{}.csv", condition_tag(cond.speed_kmh, cond.snr_db))),
                )?;
                report.overall_accuracy
            };
            accuracy.push(AccuracyRow {
                speed_kmh: cond.speed_kmh,
                snr_db: cond.snr_db,
                accuracy: acc,
                n_test,
                sync_failures: feats.sync_failures,
            });
        }
        if in_ablation(&cond) {
            let eq_model = &models[pick(&train_variants, true).expect("equalized")];
            let raw_model = &models[pick(&train_variants, false).expect("unequalized")];
            ablation_rows.push(AblationRow {
                speed_kmh: cond.speed_kmh,
                snr_db: cond.snr_db,
                accuracy_equalized: report_for(eq_model, true)?,
                accuracy_unequalized: report_for(raw_model, false)?,
                n_test,
            });
        }
    }
    ablation_rows.sort_by(|a, b| a.speed_kmh.total_cmp(&b.speed_kmh));
    Ok(ExperimentResults {
        accuracy,
        ablation: ablation_rows,
        sync_failures,
        total_subframes,
    })
}
