//! Receiver front end: timing synchronization on the repeated PSSS, CFO
//! estimation from the PSSS and SSSS pairs, CFO compensation, CP removal and
//! per-symbol DFT demapping.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};
use crate::waveform::{
    zadoff_chu_62, Numerology, SequenceKind, SlssId, TimeSignal, PSSS_SYMBOLS,
    REFERENCE_SYMBOLS, SSSS_SYMBOLS,
};

/// Default DFT window advance. The timing estimate locks to the strongest
/// path, which in urban multipath trails the first arrival by up to about a
/// dozen samples.
pub const DEFAULT_FFT_BACKOFF: usize = 16;

/// PSSS roots tried during synchronization.
pub const PSSS_ROOTS: [u32; 2] = [26, 37];

/// Acceptance gate for the timing metric `P(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SyncThreshold {
    /// Fixed `P_TH`.
    Absolute(f64),
    /// `P(d)` must exceed this fraction of its Cauchy-Schwarz bound
    /// `E_x * (E_r(d) + E_r(d + N + N_CP))`.
    Normalized(f64),
}

impl Default for SyncThreshold {
    fn default() -> Self {
        SyncThreshold::Normalized(0.05)
    }
}

/// Front-end settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub threshold: SyncThreshold,
    /// Samples by which each DFT window is advanced into the cyclic prefix.
    pub fft_backoff: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            threshold: SyncThreshold::default(),
            fft_backoff: DEFAULT_FFT_BACKOFF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// Start of the first training symbol body.
    pub d_hat: usize,
    pub peak_metric: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfoEstimate {
    /// Cycles per sample.
    pub epsilon_hat: f64,
    /// Samples from the first PSSS body to the first SSSS body.
    pub delta_n: usize,
}

impl CfoEstimate {
    pub fn hz(&self, sample_rate: f64) -> f64 {
        self.epsilon_hat * sample_rate
    }
}

/// Distance between the two identical symbols of a pair.
fn pair_spacing(num: &Numerology) -> usize {
    num.fft_size + num.cp_rest
}

/// Time-domain body of a PSSS symbol with the given root, at unit grid scale.
pub fn psss_training(root: u32, num: &Numerology) -> Vec<Complex64> {
    let seq = zadoff_chu_62(root);
    let first = *SequenceKind::Psss.band().start();
    let mut body = vec![Complex64::new(0.0, 0.0); num.fft_size];
    for (j, v) in seq.iter().enumerate() {
        body[num.bin_of(first + j)] = *v;
    }
    dft::inverse(&mut body);
    body
}

// Running sums of |r|^2 for window energies.
fn energy_prefix(r: &[Complex64]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(r.len() + 1);
    acc.push(0.0);
    let mut total = 0.0;
    for s in r {
        total += s.norm_sqr();
        acc.push(total);
    }
    acc
}

// Scores every candidate in `range` against one template's correlation.
fn best_peak(
    corr: &[Complex64],
    prefix: &[f64],
    template_energy: f64,
    n: usize,
    spacing: usize,
    range: Range<usize>,
    threshold: SyncThreshold,
) -> Option<SyncResult> {
    let window = |d: usize| prefix[d + n] - prefix[d];
    let mut best: Option<SyncResult> = None;
    for d in range {
        let metric = corr[d].norm_sqr() + corr[d + spacing].norm_sqr();
        let p_th = match threshold {
            SyncThreshold::Absolute(v) => v,
            SyncThreshold::Normalized(f) => f * template_energy * (window(d) + window(d + spacing)),
        };
        if metric > p_th && best.is_none_or(|b| metric > b.peak_metric) {
            best = Some(SyncResult {
                d_hat: d,
                peak_metric: metric,
                threshold: p_th,
            });
        }
    }
    best
}

fn max_candidate(r_len: usize, num: &Numerology) -> Option<usize> {
    (r_len + 1).checked_sub(num.fft_size + pair_spacing(num))
}

/// Timing metric over every candidate `d`:
/// `P(d) = |sum r(n+d) x*(n)|^2 + |sum r(n+d+N+N_CP) x*(n)|^2`.
pub fn sync_metric(r: &TimeSignal, x: &[Complex64], num: &Numerology) -> Vec<f64> {
    let spacing = pair_spacing(num);
    let Some(count) = max_candidate(r.len(), num) else {
        return Vec::new();
    };
    let corr = dft::cross_correlate(&r.samples, x);
    (0..count)
        .map(|d| corr[d].norm_sqr() + corr[d + spacing].norm_sqr())
        .collect()
}

/// Returns the argmax of `P(d)` over all candidates that clear the threshold.
pub fn time_sync(
    r: &TimeSignal,
    x: &[Complex64],
    num: &Numerology,
    threshold: SyncThreshold,
) -> Result<SyncResult> {
    let count = max_candidate(r.len(), num).ok_or(Error::OutOfRange {
        needed: num.fft_size + pair_spacing(num),
        len: r.len(),
    })?;
    time_sync_in(r, &[x], num, threshold, 0..count).map(|(_, s)| s)
}

/// Searches `range` with several templates and keeps the strongest peak,
/// returning the winning template index.
pub fn time_sync_in(
    r: &TimeSignal,
    templates: &[&[Complex64]],
    num: &Numerology,
    threshold: SyncThreshold,
    range: Range<usize>,
) -> Result<(usize, SyncResult)> {
    let n = num.fft_size;
    let spacing = pair_spacing(num);
    let count = max_candidate(r.len(), num).unwrap_or(0);
    if range.end > count || range.is_empty() {
        return Err(Error::OutOfRange {
            needed: range.end + n + spacing - 1,
            len: r.len(),
        });
    }
    if templates.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: templates.iter().map(|x| x.len()).find(|&l| l != n).unwrap_or(0),
        });
    }
    // only the lags the search touches
    let span = &r.samples[range.start..range.end - 1 + n + spacing];
    let prefix = energy_prefix(span);
    let local = 0..range.len();
    let corrs = dft::cross_correlate_many(span, templates);
    let mut best: Option<(usize, SyncResult)> = None;
    for (t, (corr, x)) in corrs.iter().zip(templates).enumerate() {
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        if let Some(s) = best_peak(corr, &prefix, ex, n, spacing, local.clone(), threshold) {
            if best.is_none_or(|(_, b)| s.peak_metric > b.peak_metric) {
                best = Some((t, s));
            }
        }
    }
    best.map(|(t, s)| {
        (
            t,
            SyncResult {
                d_hat: s.d_hat + range.start,
                ..s
            },
        )
    })
    .ok_or(Error::NoSyncPeak)
}

/// Angle of the summed lag-`(N + N_CP)` autocorrelation over the PSSS and
/// SSSS pairs. The sign is chosen so that a positive frequency offset gives
/// a positive estimate.
pub fn estimate_cfo(r: &TimeSignal, d_hat: usize, num: &Numerology) -> Result<CfoEstimate> {
    let n = num.fft_size;
    let spacing = pair_spacing(num);
    let delta_n = num.body_start(SSSS_SYMBOLS[0]) - num.body_start(PSSS_SYMBOLS[0]);
    let needed = d_hat + delta_n + spacing + n;
    if needed > r.len() {
        return Err(Error::OutOfRange {
            needed,
            len: r.len(),
        });
    }
    let s = &r.samples;
    let pair = |start: usize| -> Complex64 {
        (0..n).map(|k| s[start + k] * s[start + k + spacing].conj()).sum()
    };
    let acc = pair(d_hat) + pair(d_hat + delta_n);
    Ok(CfoEstimate {
        epsilon_hat: -acc.arg() / (2.0 * PI * spacing as f64),
        delta_n,
    })
}

/// `y(n) = r(n) * exp(-j*2*pi*n*eps)`, with `n` counted from the first
/// sample of `r_tilde`.
pub fn compensate_cfo(r_tilde: &TimeSignal, est: &CfoEstimate) -> TimeSignal {
    let mut out = r_tilde.clone();
    let eps = est.epsilon_hat;
    if eps != 0.0 {
        for (k, s) in out.samples.iter_mut().enumerate() {
            let cycles = (eps * k as f64).rem_euclid(1.0);
            *s *= Complex64::from_polar(1.0, -2.0 * PI * cycles);
        }
    }
    out
}

/// One demapped reference symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct DemappedSymbol {
    pub index: usize,
    /// All `N` DFT bins in natural FFT order.
    pub spectrum: Vec<Complex64>,
    /// Values on the occupied band, first element at the band's first
    /// subcarrier.
    pub band: Vec<Complex64>,
}

impl DemappedSymbol {
    pub fn kind(&self) -> SequenceKind {
        SequenceKind::of_symbol(self.index).expect("reference symbol")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demapped {
    pub symbols: Vec<DemappedSymbol>,
}

impl Demapped {
    pub fn symbol(&self, index: usize) -> Option<&DemappedSymbol> {
        self.symbols.iter().find(|s| s.index == index)
    }

    pub fn band(&self, index: usize) -> Option<&[Complex64]> {
        self.symbol(index).map(|s| s.band.as_slice())
    }
}

/// Strips CPs and transforms the seven reference symbols of a subframe that
/// starts at sample 0 of `y`.
pub fn demap(y: &TimeSignal, num: &Numerology) -> Result<Demapped> {
    demap_with_backoff(y, num, 0)
}

/// As [`demap`], but each DFT window starts `backoff` samples into the
/// cyclic prefix. The resulting linear phase is removed, so a flat channel
/// demaps exactly as with no backoff while a late timing estimate no longer
/// pulls the next symbol into the window.
pub fn demap_with_backoff(y: &TimeSignal, num: &Numerology, backoff: usize) -> Result<Demapped> {
    let n = num.fft_size;
    if backoff > num.cp_rest {
        return Err(Error::Config(format!(
            "FFT backoff {backoff} exceeds the cyclic prefix {}",
            num.cp_rest
        )));
    }
    let last = REFERENCE_SYMBOLS[REFERENCE_SYMBOLS.len() - 1];
    let needed = num.body_start(last) + n;
    if y.len() < needed {
        return Err(Error::OutOfRange {
            needed,
            len: y.len(),
        });
    }
    let symbols = REFERENCE_SYMBOLS
        .iter()
        .map(|&index| {
            let start = num.body_start(index) - backoff;
            let mut spectrum = y.samples[start..start + n].to_vec();
            dft::forward(&mut spectrum);
            if backoff > 0 {
                for (bin, v) in spectrum.iter_mut().enumerate() {
                    let cycles = ((bin * backoff) % n) as f64 / n as f64;
                    *v *= Complex64::from_polar(1.0, 2.0 * PI * cycles);
                }
            }
            let kind = SequenceKind::of_symbol(index).expect("reference symbol");
            let band = kind.band().map(|k| spectrum[num.bin_of(k)]).collect();
            DemappedSymbol {
                index,
                spectrum,
                band,
            }
        })
        .collect();
    Ok(Demapped { symbols })
}

/// Everything the front end learns about one received subframe.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub sync: SyncResult,
    pub root: u32,
    pub cfo: CfoEstimate,
    /// Sample index of the subframe start in the received stream.
    pub subframe_start: usize,
    pub demapped: Demapped,
}

/// Sync, CFO estimation and compensation, then demapping.
///
/// The search covers every position at which a whole subframe fits in `r`.
/// Both PSSS roots are tried; the stronger peak must match `slss`.
pub fn preprocess(
    r: &TimeSignal,
    num: &Numerology,
    slss: SlssId,
    cfg: &ReceiverConfig,
) -> Result<Preprocessed> {
    let lead = num.body_start(PSSS_SYMBOLS[0]);
    let tail = num.subframe_len() - lead;
    let hi = (r.len() + 1).checked_sub(tail).ok_or(Error::OutOfRange {
        needed: num.subframe_len(),
        len: r.len(),
    })?;
    let templates: Vec<Vec<Complex64>> = PSSS_ROOTS.iter().map(|&u| psss_training(u, num)).collect();
    let refs: Vec<&[Complex64]> = templates.iter().map(Vec::as_slice).collect();
    let (which, sync) = time_sync_in(r, &refs, num, cfg.threshold, lead..hi)?;
    let root = PSSS_ROOTS[which];
    if root != slss.psss_root() {
        return Err(Error::SlssMismatch {
            detected: root,
            expected: slss.psss_root(),
        });
    }
    let cfo = estimate_cfo(r, sync.d_hat, num)?;
    let subframe_start = sync.d_hat - lead;
    let r_tilde = TimeSignal::new(
        r.samples[subframe_start..subframe_start + num.subframe_len()].to_vec(),
        r.sample_rate,
    );
    let y = compensate_cfo(&r_tilde, &cfo);
    Ok(Preprocessed {
        sync,
        root,
        cfo,
        subframe_start,
        demapped: demap_with_backoff(&y, num, cfg.fft_backoff)?,
    })
}
