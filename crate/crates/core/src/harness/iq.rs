//! On-disk IQ datasets.
//!
//! A dataset directory holds `samples.cf32` and `manifest.toml`. The sample
//! file is a flat sequence of fixed-length records; each sample is two
//! little-endian IEEE-754 `f32` values, I then Q. Record `i` starts at byte
//! `i * record_len * 8`. The manifest lists one `[[records]]` entry per
//! record in file order.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{extract_record, subframe_seed, with_workers, Condition, Role, Simulator};
use crate::classifier::{LabeledDataset, LabeledRow};
use crate::error::{Error, Result};
use crate::waveform::SlssId;

pub const IQ_FORMAT_VERSION: u32 = 1;
pub const SAMPLE_FORMAT: &str = "cf32le";
pub const SAMPLES_FILE: &str = "samples.cf32";
pub const MANIFEST_FILE: &str = "manifest.toml";
const BYTES_PER_SAMPLE: usize = 8;
// records simulated in parallel before being written out
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub terminal_id: u32,
    pub role: Role,
    pub snr_db: f64,
    pub speed_kmh: f64,
    pub index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqManifest {
    pub format_version: u32,
    pub sample_format: String,
    pub sample_rate: f64,
    /// Length of one transmitted subframe.
    pub subframe_samples: usize,
    /// Samples per stored record: the subframe plus capture margin.
    pub record_len: usize,
    pub slss: SlssId,
    pub records: Vec<RecordMeta>,
}

#[derive(Debug, Clone)]
pub struct IqDataset {
    pub dir: PathBuf,
    pub manifest: IqManifest,
}

fn format_err(detail: String) -> Error {
    Error::Format {
        what: "IQ dataset",
        detail,
    }
}

pub fn encode_samples(samples: &[Complex<f32>], out: &mut Vec<u8>) {
    for s in samples {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
}

pub fn decode_samples(bytes: &[u8]) -> Vec<Complex<f32>> {
    bytes
        .chunks_exact(BYTES_PER_SAMPLE)
        .map(|c| {
            Complex::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect()
}

impl IqDataset {
    /// Opens a dataset and checks the sample file length against the
    /// manifest.
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: IqManifest =
            toml::from_str(&text).map_err(|e| format_err(format!("{}: {e}", mpath.display())))?;
        if manifest.format_version != IQ_FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.sample_format != SAMPLE_FORMAT {
            return Err(format_err(format!("unsupported sample format {}", manifest.sample_format)));
        }
        if manifest.record_len < manifest.subframe_samples {
            return Err(format_err("record shorter than a subframe".into()));
        }
        let spath = dir.join(SAMPLES_FILE);
        let len = fs::metadata(&spath).map_err(|e| Error::io(&spath, e))?.len();
        let want = (manifest.records.len() * manifest.record_len * BYTES_PER_SAMPLE) as u64;
        if len != want {
            return Err(format_err(format!(
                "{} holds {len} bytes, manifest implies {want}",
                spath.display()
            )));
        }
        Ok(IqDataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    /// Reads records `range` in file order.
    pub fn read_records(&self, range: std::ops::Range<usize>) -> Result<Vec<Vec<Complex<f32>>>> {
        let path = self.dir.join(SAMPLES_FILE);
        let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let rec_bytes = self.manifest.record_len * BYTES_PER_SAMPLE;
        f.seek(SeekFrom::Start((range.start * rec_bytes) as u64))
            .map_err(|e| Error::io(&path, e))?;
        let mut buf = vec![0u8; rec_bytes];
        range
            .map(|_| {
                f.read_exact(&mut buf).map_err(|e| Error::io(&path, e))?;
                Ok(decode_samples(&buf))
            })
            .collect()
    }
}

/// Simulates every subframe of `conditions` and writes them as one dataset.
/// Memory use is bounded by one batch of records.
pub fn generate_dataset(cfg: &ExperimentConfig, conditions: &[Condition], out_dir: &Path) -> Result<IqDataset> {
    let sim = Simulator::new(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::new();
    for cond in conditions {
        for t in &cfg.terminals {
            for index in 0..cond.subframes(cfg) {
                records.push(RecordMeta {
                    terminal_id: t.id,
                    role: cond.role,
                    snr_db: cond.snr_db,
                    speed_kmh: cond.speed_kmh,
                    index,
                    seed: subframe_seed(cfg.master_seed, t.id, cond, index),
                });
            }
        }
    }
    let slot = |id: u32| cfg.terminals.iter().position(|t| t.id == id).expect("configured id");

    let spath = out_dir.join(SAMPLES_FILE);
    let mut out = BufWriter::new(File::create(&spath).map_err(|e| Error::io(&spath, e))?);
    with_workers(cfg.workers, || -> Result<()> {
        for chunk in records.chunks(BATCH) {
            let blocks: Vec<Vec<u8>> = chunk
                .par_iter()
                .map(|m| {
                    let cond = Condition {
                        role: m.role,
                        snr_db: m.snr_db,
                        speed_kmh: m.speed_kmh,
                    };
                    let rec = sim.simulate(slot(m.terminal_id), &cond, m.seed)?;
                    let mut bytes = Vec::with_capacity(rec.len() * BYTES_PER_SAMPLE);
                    encode_samples(&rec, &mut bytes);
                    Ok(bytes)
                })
                .collect::<Result<_>>()?;
            for b in blocks {
                out.write_all(&b).map_err(|e| Error::io(&spath, e))?;
            }
        }
        Ok(())
    })??;
    out.flush().map_err(|e| Error::io(&spath, e))?;

    let manifest = IqManifest {
        format_version: IQ_FORMAT_VERSION,
        sample_format: SAMPLE_FORMAT.into(),
        sample_rate: cfg.numerology.sample_rate,
        subframe_samples: cfg.numerology.subframe_len(),
        record_len: cfg.record_len(),
        slss: cfg.slss,
        records,
    };
    let mpath = out_dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| format_err(e.to_string()))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(IqDataset {
        dir: out_dir.to_path_buf(),
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct ExtractedDataset {
    pub features: LabeledDataset,
    pub sync_failures: usize,
    pub total: usize,
}

/// Runs the receiver and extractor over every record. Records that fail
/// synchronization are skipped and counted. Equalization follows
/// `cfg.extractor.equalize`; the SLSS comes from the manifest.
pub fn extract_features(ds: &IqDataset, cfg: &ExperimentConfig) -> Result<ExtractedDataset> {
    let mut rcfg = cfg.clone();
    rcfg.slss = ds.manifest.slss;
    rcfg.numerology.sample_rate = ds.manifest.sample_rate;
    let mut features = LabeledDataset::default();
    let mut sync_failures = 0;
    with_workers(cfg.workers, || -> Result<()> {
        let mut start = 0;
        while start < ds.len() {
            let end = (start + BATCH).min(ds.len());
            let recs = ds.read_records(start..end)?;
            let out: Vec<Option<Vec<Vec<f64>>>> = recs
                .par_iter()
                .map(|r| extract_record(r, &rcfg, &[rcfg.extractor.equalize]))
                .collect::<Result<_>>()?;
            for (meta, f) in ds.manifest.records[start..end].iter().zip(out) {
                match f {
                    Some(mut v) => features.rows.push(LabeledRow {
                        features: v.remove(0),
                        label: meta.terminal_id,
                        snr_db: meta.snr_db,
                        speed_kmh: meta.speed_kmh,
                        seed: meta.seed,
                    }),
                    None => sync_failures += 1,
                }
            }
            start = end;
        }
        Ok(())
    })??;
    Ok(ExtractedDataset {
        features,
        sync_failures,
        total: ds.len(),
    })
}

/// Appends externally captured records to a dataset being assembled by
/// hand; used to inject arbitrary waveforms in tests and tools.
pub fn write_dataset(
    out_dir: &Path,
    manifest: &IqManifest,
    records: &[Vec<Complex<f32>>],
) -> Result<IqDataset> {
    if records.len() != manifest.records.len() || records.iter().any(|r| r.len() != manifest.record_len) {
        return Err(format_err("records do not match the manifest".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spath = out_dir.join(SAMPLES_FILE);
    let mut bytes = Vec::new();
    for r in records {
        encode_samples(r, &mut bytes);
    }
    fs::write(&spath, bytes).map_err(|e| Error::io(&spath, e))?;
    let mpath = out_dir.join(MANIFEST_FILE);
    let text = toml::to_string(manifest).map_err(|e| format_err(e.to_string()))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    IqDataset::open(out_dir)
}
