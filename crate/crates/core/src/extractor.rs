//! RFF extraction from a demapped PSBCH subframe.
//!
//! 1. Least-squares channel estimate per reference symbol, `Y/X` on its band.
//! 2. Transform to the delay domain, keep the first `head_len` and last
//!    `tail_len` taps (the channel), zero the rest (noise and most of the
//!    fingerprint), transform back.
//! 3. Average the seven windowed estimates into one subframe estimate.
//! 4. Divide the received band values by that estimate; what remains is the
//!    transmitter distortion riding on the known sequence.
//! 5. Average symbols that carry identical sequences and assemble the
//!    196-bin complex feature.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};
use crate::receiver::Demapped;
use crate::waveform::{
    known_sequence, SequenceKind, SlssId, DMRS_BAND, DMRS_SYMBOLS, PSSS_SYMBOLS,
    REFERENCE_SYMBOLS, SSSS_SYMBOLS, SYNC_BAND,
};

const SYNC_LEN: usize = 62;
const DMRS_LEN: usize = 72;
const SYNC_FIRST: usize = 5;

/// Complex feature length: 72 DMRS bins plus 62 PSSS and 62 SSSS bins.
pub const FEATURE_COMPLEX_LEN: usize = DMRS_LEN + 2 * SYNC_LEN;
/// Real feature length after real/imaginary interleaving.
pub const FEATURE_REAL_LEN: usize = 2 * FEATURE_COMPLEX_LEN;

/// Rectangular delay-domain window: taps `[0, head_len)` and
/// `[points - tail_len, points)` are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub head_len: usize,
    pub tail_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            head_len: 8,
            tail_len: 2,
        }
    }
}

impl WindowSpec {
    pub fn new(head_len: usize, tail_len: usize) -> Self {
        WindowSpec { head_len, tail_len }
    }

    /// Window that keeps every tap of a `points`-point estimate.
    pub fn all_pass(points: usize) -> Self {
        WindowSpec {
            head_len: points,
            tail_len: 0,
        }
    }

    pub fn validate(&self, points: usize) -> Result<()> {
        let kept = self.head_len + self.tail_len;
        if kept == 0 || kept > points {
            return Err(Error::InvalidWindow {
                head: self.head_len,
                tail: self.tail_len,
                points,
            });
        }
        Ok(())
    }

    fn keeps(&self, n: usize, points: usize) -> bool {
        n < self.head_len || n >= points - self.tail_len
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Window for the 62-point PSSS/SSSS estimates.
    #[serde(default)]
    pub window_sync: WindowSpec,
    /// Window for the 72-point DMRS estimates.
    #[serde(default)]
    pub window_dmrs: WindowSpec,
    /// When false, the raw band values are used as features.
    #[serde(default = "default_true")]
    pub equalize: bool,
    /// Divide features by the known sequence.
    #[serde(default)]
    pub normalize_by_sequence: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            window_sync: WindowSpec::default(),
            window_dmrs: WindowSpec::default(),
            equalize: true,
            normalize_by_sequence: false,
        }
    }
}

impl ExtractorConfig {
    pub fn window_for(&self, kind: SequenceKind) -> WindowSpec {
        match kind {
            SequenceKind::Dmrs => self.window_dmrs,
            SequenceKind::Psss | SequenceKind::Ssss => self.window_sync,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window_sync.validate(SYNC_LEN)?;
        self.window_dmrs.validate(DMRS_LEN)
    }
}

/// `Y(k) / X(k)` over a band.
pub fn ls_estimate(y_band: &[Complex64], x_band: &[Complex64]) -> Result<Vec<Complex64>> {
    if y_band.len() != x_band.len() {
        return Err(Error::DimensionMismatch {
            expected: x_band.len(),
            actual: y_band.len(),
        });
    }
    Ok(y_band.iter().zip(x_band).map(|(y, x)| y / x).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedEstimate {
    /// Windowed delay-domain estimate.
    pub time: Vec<Complex64>,
    /// Its DFT back on the band.
    pub freq: Vec<Complex64>,
}

/// Delay-domain windowing of an initial estimate: inverse DFT (1/N), zero
/// the taps outside the window, forward DFT.
pub fn window_estimate(h_hat: &[Complex64], spec: WindowSpec) -> Result<WindowedEstimate> {
    let points = h_hat.len();
    spec.validate(points)?;
    let mut time = h_hat.to_vec();
    dft::inverse(&mut time);
    for (n, v) in time.iter_mut().enumerate() {
        if !spec.keeps(n, points) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    let mut freq = time.clone();
    dft::forward(&mut freq);
    Ok(WindowedEstimate { time, freq })
}

fn require<'a, T>(map: &'a BTreeMap<usize, T>, symbol: usize) -> Result<&'a T> {
    map.get(&symbol).ok_or(Error::MissingSymbol(symbol))
}

fn check_len(v: &[Complex64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Subframe channel estimate on subcarriers 0..=71: the mean of all seven
/// windowed estimates where the synchronization band overlaps, the DMRS
/// mean on the edge bins.
pub fn combine_estimates(windowed: &BTreeMap<usize, Vec<Complex64>>) -> Result<Vec<Complex64>> {
    for s in REFERENCE_SYMBOLS {
        let kind = SequenceKind::of_symbol(s).expect("reference symbol");
        check_len(require(windowed, s)?, kind.band_len())?;
    }
    let dmrs_sum = |k: usize| -> Complex64 { DMRS_SYMBOLS.iter().map(|s| windowed[s][k]).sum() };
    let sync_sum = |k: usize| -> Complex64 {
        PSSS_SYMBOLS
            .iter()
            .chain(&SSSS_SYMBOLS)
            .map(|s| windowed[s][k - SYNC_FIRST])
            .sum()
    };
    Ok(DMRS_BAND
        .map(|k| {
            if SYNC_BAND.contains(&k) {
                (sync_sum(k) + dmrs_sum(k)) / 7.0
            } else {
                dmrs_sum(k) / 3.0
            }
        })
        .collect())
}

/// Magnitude floor for the equalizer divisor: 1e-3 of the median `|H|`.
pub fn deep_fade_floor(h_tilde: &[Complex64]) -> f64 {
    let mut mags: Vec<f64> = h_tilde.iter().map(|h| h.norm()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let mid = mags.len() / 2;
    let median = if mags.len() % 2 == 0 {
        0.5 * (mags[mid - 1] + mags[mid])
    } else {
        mags[mid]
    };
    1e-3 * median
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub values: Vec<Complex64>,
    /// Subcarriers whose divisor was clamped to the floor.
    pub deep_fade_bins: Vec<usize>,
}

/// `R(k) = Y(k) / H(k)` for the band starting at subcarrier `first`.
/// Divisors at or below `floor` in magnitude are clamped to it, keeping
/// their phase, and the bin is flagged.
pub fn equalize(
    y_band: &[Complex64],
    h_tilde: &[Complex64],
    first: usize,
    floor: f64,
) -> Result<Equalized> {
    if first + y_band.len() > h_tilde.len() {
        return Err(Error::DimensionMismatch {
            expected: h_tilde.len(),
            actual: first + y_band.len(),
        });
    }
    let mut deep_fade_bins = Vec::new();
    let values = y_band
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let k = first + j;
            let h = h_tilde[k];
            let mag = h.norm();
            if mag > floor && mag.is_finite() {
                y / h
            } else {
                deep_fade_bins.push(k);
                let clamped = if mag > 0.0 && mag.is_finite() {
                    h / mag * floor
                } else {
                    Complex64::new(floor, 0.0)
                };
                y / clamped
            }
        })
        .collect();
    Ok(Equalized {
        values,
        deep_fade_bins,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub psss: Vec<Complex64>,
    pub dmrs: Vec<Complex64>,
    pub ssss: Vec<Complex64>,
}

fn mean_of(rows: &[&Vec<Complex64>]) -> Vec<Complex64> {
    let scale = 1.0 / rows.len() as f64;
    (0..rows[0].len())
        .map(|k| rows.iter().map(|r| r[k]).sum::<Complex64>() * scale)
        .collect()
}

/// Averages symbols carrying identical sequences. For odd SLSS IDs symbol 7
/// carries a different DMRS and is left out.
pub fn denoise(r: &BTreeMap<usize, Vec<Complex64>>, slss: SlssId) -> Result<Denoised> {
    let get = |s: usize, len: usize| -> Result<&Vec<Complex64>> {
        let v = require(r, s)?;
        check_len(v, len)?;
        Ok(v)
    };
    let psss = mean_of(&[get(2, SYNC_LEN)?, get(3, SYNC_LEN)?]);
    let ssss = mean_of(&[get(12, SYNC_LEN)?, get(13, SYNC_LEN)?]);
    let dmrs = if slss.is_odd() {
        mean_of(&[get(5, DMRS_LEN)?, get(10, DMRS_LEN)?])
    } else {
        mean_of(&[get(5, DMRS_LEN)?, get(7, DMRS_LEN)?, get(10, DMRS_LEN)?])
    };
    Ok(Denoised { psss, dmrs, ssss })
}

/// Final per-subframe fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct RffFeature {
    /// Subcarriers 5..=66.
    pub psss: Vec<Complex64>,
    /// Subcarriers 0..=71.
    pub dmrs: Vec<Complex64>,
    /// Subcarriers 5..=66.
    pub ssss: Vec<Complex64>,
    pub slss_odd: bool,
}

impl RffFeature {
    /// Feature values at subcarrier `k`: the DMRS value alone on the edge
    /// bins, `[PSSS, DMRS, SSSS]` inside the synchronization band.
    pub fn bin(&self, k: usize) -> Vec<Complex64> {
        if SYNC_BAND.contains(&k) {
            let j = k - SYNC_FIRST;
            vec![self.psss[j], self.dmrs[k], self.ssss[j]]
        } else {
            vec![self.dmrs[k]]
        }
    }

    /// DMRS bins 0..=71, then PSSS 5..=66, then SSSS 5..=66.
    pub fn complex(&self) -> Vec<Complex64> {
        self.dmrs
            .iter()
            .chain(&self.psss)
            .chain(&self.ssss)
            .copied()
            .collect()
    }

    /// [`Self::complex`] with real and imaginary parts interleaved.
    pub fn flatten(&self) -> Vec<f64> {
        self.complex().iter().flat_map(|c| [c.re, c.im]).collect()
    }
}

pub fn assemble(denoised: Denoised, slss: SlssId) -> Result<RffFeature> {
    check_len(&denoised.psss, SYNC_LEN)?;
    check_len(&denoised.dmrs, DMRS_LEN)?;
    check_len(&denoised.ssss, SYNC_LEN)?;
    Ok(RffFeature {
        psss: denoised.psss,
        dmrs: denoised.dmrs,
        ssss: denoised.ssss,
        slss_odd: slss.is_odd(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub initial: BTreeMap<usize, Vec<Complex64>>,
    pub windowed_time: BTreeMap<usize, Vec<Complex64>>,
    pub windowed_freq: BTreeMap<usize, Vec<Complex64>>,
    /// Subframe estimate on subcarriers 0..=71.
    pub combined: Vec<Complex64>,
}

/// Channel estimation for all reference symbols of a demapped subframe.
pub fn estimate_channel(
    demapped: &Demapped,
    slss: SlssId,
    cfg: &ExtractorConfig,
) -> Result<ChannelEstimate> {
    let mut initial = BTreeMap::new();
    let mut windowed_time = BTreeMap::new();
    let mut windowed_freq = BTreeMap::new();
    for s in REFERENCE_SYMBOLS {
        let kind = SequenceKind::of_symbol(s).expect("reference symbol");
        let y = demapped.band(s).ok_or(Error::MissingSymbol(s))?;
        let h = ls_estimate(y, &known_sequence(slss, s)?)?;
        let w = window_estimate(&h, cfg.window_for(kind))?;
        initial.insert(s, h);
        windowed_time.insert(s, w.time);
        windowed_freq.insert(s, w.freq);
    }
    let combined = combine_estimates(&windowed_freq)?;
    Ok(ChannelEstimate {
        initial,
        windowed_time,
        windowed_freq,
        combined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub feature: RffFeature,
    pub estimate: ChannelEstimate,
    pub deep_fade_bins: Vec<usize>,
}

/// Full extraction: estimate, equalize (unless disabled), denoise, assemble.
pub fn extract(demapped: &Demapped, slss: SlssId, cfg: &ExtractorConfig) -> Result<Extraction> {
    let estimate = estimate_channel(demapped, slss, cfg)?;
    let floor = deep_fade_floor(&estimate.combined);
    let mut deep_fade_bins = Vec::new();
    let mut r = BTreeMap::new();
    for s in REFERENCE_SYMBOLS {
        let kind = SequenceKind::of_symbol(s).expect("reference symbol");
        let y = demapped.band(s).ok_or(Error::MissingSymbol(s))?;
        let mut values = if cfg.equalize {
            let eq = equalize(y, &estimate.combined, *kind.band().start(), floor)?;
            deep_fade_bins.extend(eq.deep_fade_bins);
            eq.values
        } else {
            y.to_vec()
        };
        if cfg.normalize_by_sequence {
            for (v, x) in values.iter_mut().zip(known_sequence(slss, s)?) {
                *v /= x;
            }
        }
        r.insert(s, values);
    }
    deep_fade_bins.sort_unstable();
    deep_fade_bins.dedup();
    let feature = assemble(denoise(&r, slss)?, slss)?;
    Ok(Extraction {
        feature,
        estimate,
        deep_fade_bins,
    })
}
