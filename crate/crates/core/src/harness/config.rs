//! Experiment configuration file (TOML).
//!
//! Every section has defaults, so a file holding only `version = 1` runs the
//! desk-scale experiment on the ten built-in terminals. Command-line
//! overrides are applied as `path.to.key=value` assignments on the parsed
//! document before it is deserialized.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{etu_profile, Tap};
use crate::classifier::ForestParams;
use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::impairments::{table_i_profiles, RffProfile};
use crate::receiver::ReceiverConfig;
use crate::waveform::{Numerology, SlssId};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub id: u32,
    pub profile: RffProfile,
}

/// Channel settings shared by every simulated subframe. Speed, SNR and seed
/// come from the condition being simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelTemplate {
    pub taps: Vec<Tap>,
    pub carrier_freq_hz: f64,
    /// Per-subframe CFO is uniform in `[-cfo_max_hz, cfo_max_hz]`.
    pub cfo_max_hz: f64,
    /// Per-subframe leading delay is uniform in `0..=timing_offset_max`.
    pub timing_offset_max: usize,
    /// Samples recorded after the latest possible subframe end.
    pub capture_guard: usize,
}

impl Default for ChannelTemplate {
    fn default() -> Self {
        ChannelTemplate {
            taps: etu_profile(),
            carrier_freq_hz: 5.9e9,
            cfo_max_hz: 200.0,
            timing_offset_max: 1000,
            capture_guard: 280,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub snr_db: f64,
    pub speed_kmh: f64,
    /// Subframes per terminal.
    pub subframes: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            snr_db: 30.0,
            speed_kmh: 30.0,
            subframes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSpec {
    pub snr_db: Vec<f64>,
    pub speed_kmh: Vec<f64>,
    /// Subframes per terminal and condition.
    pub subframes: usize,
}

impl Default for TestSpec {
    fn default() -> Self {
        TestSpec {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            speed_kmh: vec![0.0, 30.0, 60.0, 120.0],
            subframes: 100,
        }
    }
}

/// Equalized versus raw features at a fixed SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub enabled: bool,
    pub snr_db: f64,
    pub speed_kmh: Vec<f64>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            enabled: true,
            snr_db: 30.0,
            speed_kmh: vec![0.0, 30.0, 60.0, 90.0, 120.0],
        }
    }
}

fn default_slss() -> SlssId {
    SlssId::new(0).expect("valid id")
}

fn default_terminals() -> Vec<Terminal> {
    table_i_profiles()
        .into_iter()
        .enumerate()
        .map(|(i, profile)| Terminal {
            id: i as u32 + 1,
            profile,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_slss")]
    pub slss: SlssId,
    #[serde(default)]
    pub numerology: Numerology,
    #[serde(default = "default_terminals")]
    pub terminals: Vec<Terminal>,
    #[serde(default)]
    pub channel: ChannelTemplate,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub test: TestSpec,
    #[serde(default)]
    pub ablation: AblationSpec,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub receiver: ReceiverConfig,
    /// Fraction of subframes allowed to fail synchronization.
    #[serde(default = "default_max_sync_failure_rate")]
    pub max_sync_failure_rate: f64,
}

fn default_max_sync_failure_rate() -> f64 {
    0.05
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            master_seed: 0,
            workers: 0,
            slss: default_slss(),
            numerology: Numerology::default(),
            terminals: default_terminals(),
            channel: ChannelTemplate::default(),
            train: TrainSpec::default(),
            test: TestSpec::default(),
            ablation: AblationSpec::default(),
            extractor: ExtractorConfig::default(),
            forest: ForestParams::default(),
            receiver: ReceiverConfig::default(),
            max_sync_failure_rate: default_max_sync_failure_rate(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Sets `path` (dot separated) in a TOML table. The value is parsed as TOML
/// and falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one item");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{key}` in `{path}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlays `top` on `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(config_err)?;
        // overrides land on the fully defaulted document so that a key
        // inside an omitted section keeps its siblings
        let mut doc = toml::Table::try_from(ExperimentConfig::default()).map_err(config_err)?;
        doc.remove("version");
        merge(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.numerology.validate()?;
        if self.terminals.is_empty() {
            return Err(config_err("no terminals"));
        }
        let ids: BTreeSet<u32> = self.terminals.iter().map(|t| t.id).collect();
        if ids.len() != self.terminals.len() {
            return Err(config_err("terminal ids must be unique"));
        }
        for t in &self.terminals {
            t.profile.validate()?;
        }
        if self.train.subframes == 0 || self.test.subframes == 0 {
            return Err(config_err("subframe counts must be positive"));
        }
        if self.test.snr_db.is_empty() || self.test.speed_kmh.is_empty() {
            return Err(config_err("sweep axes must be nonempty"));
        }
        if self.ablation.enabled && self.ablation.speed_kmh.is_empty() {
            return Err(config_err("ablation speeds must be nonempty"));
        }
        let snrs = self
            .test
            .snr_db
            .iter()
            .chain([&self.train.snr_db, &self.ablation.snr_db]);
        if snrs.clone().any(|s| s.is_nan()) {
            return Err(config_err("SNR must not be NaN"));
        }
        let speeds = self
            .test
            .speed_kmh
            .iter()
            .chain(&self.ablation.speed_kmh)
            .chain([&self.train.speed_kmh]);
        for &v in speeds {
            if !(0.0..=500.0).contains(&v) {
                return Err(config_err(format!("speed {v} km/h outside 0..=500")));
            }
        }
        if self.channel.taps.is_empty()
            || !(self.channel.carrier_freq_hz > 0.0)
            || !(self.channel.cfo_max_hz >= 0.0)
        {
            return Err(config_err("channel needs taps, a positive carrier and cfo_max_hz >= 0"));
        }
        if !(0.0..=1.0).contains(&self.max_sync_failure_rate) {
            return Err(config_err("max_sync_failure_rate must be in [0, 1]"));
        }
        if self.receiver.fft_backoff > self.numerology.cp_rest {
            return Err(config_err("receiver.fft_backoff exceeds the cyclic prefix"));
        }
        if self.forest.n_trees == 0 {
            return Err(config_err("forest.n_trees must be positive"));
        }
        self.extractor.validate()
    }

    /// Samples stored per received subframe.
    pub fn record_len(&self) -> usize {
        self.numerology.subframe_len() + self.channel.timing_offset_max + self.channel.capture_guard
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("version = 1", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.terminals.len(), 10);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml(
            "version = 1",
            &[
                "master_seed=7".into(),
                "test.snr_db=[10, 20]".into(),
                "extractor.equalize=false".into(),
                "receiver.threshold.value=0.1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.test.snr_db, vec![10.0, 20.0]);
        assert!(!cfg.extractor.equalize);
        assert_eq!(cfg.receiver.threshold, crate::receiver::SyncThreshold::Normalized(0.1));
    }

    #[test]
    fn rejects_bad_configs() {
        for (text, o) in [
            ("version = 2", vec![]),
            ("version = 1\nbogus = 3", vec![]),
            ("version = 1", vec!["train.subframes=0".to_string()]),
            ("version = 1", vec!["test.speed_kmh=[]".to_string()]),
            ("version = 1", vec!["slss=400".to_string()]),
            ("version = 1", vec!["extractor.window_sync.head_len=70".to_string()]),
            ("version = 1", vec!["no_equals".to_string()]),
        ] {
            let err = ExperimentConfig::from_toml(text, &o).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text} {o:?}: {err}");
        }
        let mut cfg = ExperimentConfig::default();
        cfg.terminals[1].id = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn record_length() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.numerology.subframe_len(), 30704);
        assert_eq!(cfg.record_len(), 30704 + 1000 + 280);
    }
}
