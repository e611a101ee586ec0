//! PSBCH reference sequences and SC-FDMA subframe synthesis.
//!
//! A PSBCH subframe occupies the central 72 subcarriers for 14 symbols.
//! Symbols 2 and 3 carry the PSSS, 5, 7 and 10 the DMRS, and 12 and 13 the
//! SSSS. Payload symbols are left empty since extraction only needs the
//! known sequences.
//!
//! The sequence generators are deterministic stand-ins for the standard
//! ones: a length-63 Zadoff-Chu sequence with the middle element punctured
//! (PSSS), two interleaved scrambled m-sequences (SSSS) and QPSK from a
//! length-31 Gold sequence (DMRS).

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};

pub const PSSS_SYMBOLS: [usize; 2] = [2, 3];
pub const DMRS_SYMBOLS: [usize; 3] = [5, 7, 10];
pub const SSSS_SYMBOLS: [usize; 2] = [12, 13];
/// Every symbol carrying a known sequence, in subframe order.
pub const REFERENCE_SYMBOLS: [usize; 7] = [2, 3, 5, 7, 10, 12, 13];

/// Occupied subcarrier band of the synchronization sequences.
pub const SYNC_BAND: RangeInclusive<usize> = 5..=66;
/// Occupied subcarrier band of the DMRS.
pub const DMRS_BAND: RangeInclusive<usize> = 0..=71;

const SYNC_LEN: usize = 62;
const DMRS_LEN: usize = 72;

/// Which known sequence a reference symbol carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceKind {
    Psss,
    Dmrs,
    Ssss,
}

impl SequenceKind {
    pub fn of_symbol(symbol: usize) -> Option<Self> {
        match symbol {
            2 | 3 => Some(SequenceKind::Psss),
            5 | 7 | 10 => Some(SequenceKind::Dmrs),
            12 | 13 => Some(SequenceKind::Ssss),
            _ => None,
        }
    }

    pub fn band(self) -> RangeInclusive<usize> {
        match self {
            SequenceKind::Dmrs => DMRS_BAND,
            SequenceKind::Psss | SequenceKind::Ssss => SYNC_BAND,
        }
    }

    /// Number of occupied subcarriers, which is also the estimate DFT size.
    pub fn band_len(self) -> usize {
        match self {
            SequenceKind::Dmrs => DMRS_LEN,
            SequenceKind::Psss | SequenceKind::Ssss => SYNC_LEN,
        }
    }
}

/// Sample-level layout of one subframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub fft_size: usize,
    pub cp_first: usize,
    pub cp_rest: usize,
    pub sample_rate: f64,
    pub symbols_per_subframe: usize,
    pub occupied_subcarriers: usize,
}

impl Default for Numerology {
    fn default() -> Self {
        Self::lte_v2x()
    }
}

impl Numerology {
    /// 2048-point FFT at 30.72 Msps with normal cyclic prefix.
    pub fn lte_v2x() -> Self {
        Numerology {
            fft_size: 2048,
            cp_first: 160,
            cp_rest: 144,
            sample_rate: 30.72e6,
            symbols_per_subframe: 14,
            occupied_subcarriers: 72,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("numerology: {m}")));
        if self.fft_size != 2048 {
            return bad("fft_size must be 2048");
        }
        if !(self.cp_first > self.cp_rest && self.cp_rest > 0) {
            return bad("need cp_first > cp_rest > 0");
        }
        if self.symbols_per_subframe != 14 || self.occupied_subcarriers != 72 {
            return bad("PSBCH layout is 14 symbols x 72 subcarriers");
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be positive");
        }
        Ok(())
    }

    pub fn cp_len(&self, symbol: usize) -> usize {
        if symbol == 0 {
            self.cp_first
        } else {
            self.cp_rest
        }
    }

    pub fn symbol_len(&self, symbol: usize) -> usize {
        self.cp_len(symbol) + self.fft_size
    }

    /// Offset of the first CP sample of `symbol` from the subframe start.
    pub fn symbol_start(&self, symbol: usize) -> usize {
        (0..symbol).map(|s| self.symbol_len(s)).sum()
    }

    /// Offset of the first sample after the CP of `symbol`.
    pub fn body_start(&self, symbol: usize) -> usize {
        self.symbol_start(symbol) + self.cp_len(symbol)
    }

    pub fn subframe_len(&self) -> usize {
        self.symbol_start(self.symbols_per_subframe)
    }

    /// FFT bin of subcarrier `m`; subcarrier `occupied/2` sits at DC.
    pub fn bin_of(&self, subcarrier: usize) -> usize {
        let center = self.occupied_subcarriers / 2;
        (subcarrier + self.fft_size - center) % self.fft_size
    }

    /// Amplitude scale that gives a fully occupied symbol unit mean power.
    pub fn drive_gain(&self) -> f64 {
        self.fft_size as f64 / (self.occupied_subcarriers as f64).sqrt()
    }
}

/// Sidelink synchronization identity, 0..=335.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SlssId(u16);

impl SlssId {
    pub const MAX: u32 = 335;

    pub fn new(value: u32) -> Result<Self> {
        if value > Self::MAX {
            return Err(Error::InvalidSlss(value));
        }
        Ok(SlssId(value as u16))
    }

    pub fn value(self) -> u32 {
        self.0 as u32
    }

    pub fn is_odd(self) -> bool {
        self.0 % 2 == 1
    }

    /// Zadoff-Chu root used by the PSSS.
    pub fn psss_root(self) -> u32 {
        if self.0 < 168 {
            26
        } else {
            37
        }
    }
}

impl TryFrom<u32> for SlssId {
    type Error = Error;
    fn try_from(value: u32) -> Result<Self> {
        SlssId::new(value)
    }
}

impl From<SlssId> for u32 {
    fn from(id: SlssId) -> u32 {
        id.value()
    }
}

/// Length-62 punctured Zadoff-Chu sequence for root `u`.
pub fn zadoff_chu_62(root: u32) -> Vec<Complex64> {
    (0..SYNC_LEN as u64)
        .map(|n| {
            let m = if n < 31 { n * (n + 1) } else { (n + 1) * (n + 2) };
            // exp(-j*pi*u*m/63) only depends on u*m mod 126.
            let k = (root as u64 * m) % 126;
            Complex64::from_polar(1.0, -PI * k as f64 / 63.0)
        })
        .collect()
}

pub fn gen_psss(slss: SlssId) -> Vec<Complex64> {
    zadoff_chu_62(slss.psss_root())
}

/// Length-31 m-sequence from a degree-5 recurrence, mapped to +/-1.
/// `taps` lists the offsets summed into `x(i + 5)`.
fn m_sequence_31(taps: &[usize]) -> [i8; 31] {
    let mut x = [0u8; 31];
    x[4] = 1;
    for i in 0..26 {
        x[i + 5] = taps.iter().fold(0, |acc, &t| acc ^ x[i + t]);
    }
    let mut out = [0i8; 31];
    for (o, b) in out.iter_mut().zip(x) {
        *o = 1 - 2 * b as i8;
    }
    out
}

pub fn gen_ssss(slss: SlssId, symbol_index: usize) -> Result<Vec<Complex64>> {
    if !SSSS_SYMBOLS.contains(&symbol_index) {
        return Err(Error::InvalidSymbol {
            symbol: symbol_index,
            what: "SSSS",
        });
    }
    let id1 = (slss.value() % 168) as usize;
    let id2 = (slss.value() / 168) as usize;
    let q_prime = id1 / 30;
    let q = (id1 + q_prime * (q_prime + 1) / 2) / 30;
    let m_prime = id1 + q * (q + 1) / 2;
    let m0 = m_prime % 31;
    let m1 = (m0 + m_prime / 31 + 1) % 31;

    let s = m_sequence_31(&[0, 2]);
    let c = m_sequence_31(&[0, 3]);
    let z = m_sequence_31(&[0, 1, 2, 4]);

    let mut out = Vec::with_capacity(SYNC_LEN);
    for n in 0..31 {
        let even = s[(n + m0) % 31] * c[(n + id2) % 31];
        let odd = s[(n + m1) % 31] * c[(n + id2 + 3) % 31] * z[(n + m0 % 8) % 31];
        out.push(Complex64::new(even as f64, 0.0));
        out.push(Complex64::new(odd as f64, 0.0));
    }
    Ok(out)
}

/// Length-31 Gold sequence `c(n)` with the usual 1600-sample warm-up.
fn gold_sequence(c_init: u32, len: usize) -> Vec<u8> {
    const NC: usize = 1600;
    let total = NC + len;
    let mut x1 = vec![0u8; total + 31];
    let mut x2 = vec![0u8; total + 31];
    x1[0] = 1;
    for (i, b) in x2.iter_mut().take(31).enumerate() {
        *b = ((c_init >> i) & 1) as u8;
    }
    for n in 0..total {
        x1[n + 31] = x1[n + 3] ^ x1[n];
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n];
    }
    (0..len).map(|n| x1[n + NC] ^ x2[n + NC]).collect()
}

/// DMRS group index: symbols 5 and 10 always share a sequence, symbol 7
/// joins them only for even SLSS IDs.
fn dmrs_group(slss: SlssId, symbol_index: usize) -> u32 {
    if symbol_index == 7 && slss.is_odd() {
        1
    } else {
        0
    }
}

pub fn gen_dmrs(slss: SlssId, symbol_index: usize) -> Result<Vec<Complex64>> {
    if !DMRS_SYMBOLS.contains(&symbol_index) {
        return Err(Error::InvalidSymbol {
            symbol: symbol_index,
            what: "DMRS",
        });
    }
    let c_init = (slss.value() << 1) | dmrs_group(slss, symbol_index);
    let bits = gold_sequence(c_init, 2 * DMRS_LEN);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    Ok(bits
        .chunks_exact(2)
        .map(|b| Complex64::new(a * (1.0 - 2.0 * b[0] as f64), a * (1.0 - 2.0 * b[1] as f64)))
        .collect())
}

/// Known sequence carried by a reference symbol, indexed over its band.
pub fn known_sequence(slss: SlssId, symbol_index: usize) -> Result<Vec<Complex64>> {
    match SequenceKind::of_symbol(symbol_index) {
        Some(SequenceKind::Psss) => Ok(gen_psss(slss)),
        Some(SequenceKind::Dmrs) => gen_dmrs(slss, symbol_index),
        Some(SequenceKind::Ssss) => gen_ssss(slss, symbol_index),
        None => Err(Error::InvalidSymbol {
            symbol: symbol_index,
            what: "a reference sequence",
        }),
    }
}

/// Frequency-domain subframe content, `cells[symbol][subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    cells: Vec<Vec<Complex64>>,
}

impl ResourceGrid {
    pub fn zeros(symbols: usize, subcarriers: usize) -> Self {
        ResourceGrid {
            cells: vec![vec![Complex64::new(0.0, 0.0); subcarriers]; symbols],
        }
    }

    pub fn for_numerology(num: &Numerology) -> Self {
        Self::zeros(num.symbols_per_subframe, num.occupied_subcarriers)
    }

    pub fn symbols(&self) -> usize {
        self.cells.len()
    }

    pub fn subcarriers(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn get(&self, symbol: usize, subcarrier: usize) -> Complex64 {
        self.cells[symbol][subcarrier]
    }

    pub fn set(&mut self, symbol: usize, subcarrier: usize, value: Complex64) {
        self.cells[symbol][subcarrier] = value;
    }

    pub fn row(&self, symbol: usize) -> &[Complex64] {
        &self.cells[symbol]
    }

    pub fn row_mut(&mut self, symbol: usize) -> &mut [Complex64] {
        &mut self.cells[symbol]
    }

    /// Symbols carrying known sequences.
    pub fn occupied_symbols(&self) -> &'static [usize] {
        &REFERENCE_SYMBOLS
    }

    pub fn energy(&self) -> f64 {
        self.cells.iter().flatten().map(|c| c.norm_sqr()).sum()
    }
}

/// Complex baseband samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        TimeSignal {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(mut self, gain: f64) -> Self {
        for s in &mut self.samples {
            *s *= gain;
        }
        self
    }

    /// Mean power over `range`, clipped to the signal.
    pub fn mean_power(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.samples.len());
        let start = range.start.min(end);
        if end == start {
            return 0.0;
        }
        self.samples[start..end].iter().map(|s| s.norm_sqr()).sum::<f64>() / (end - start) as f64
    }
}

pub fn build_psbch_grid(slss: SlssId) -> ResourceGrid {
    let mut grid = ResourceGrid::zeros(14, DMRS_LEN);
    for symbol in REFERENCE_SYMBOLS {
        let kind = SequenceKind::of_symbol(symbol).expect("reference symbol");
        let seq = known_sequence(slss, symbol).expect("reference symbol");
        let first = *kind.band().start();
        grid.row_mut(symbol)[first..first + seq.len()].copy_from_slice(&seq);
    }
    grid
}

fn check_grid(grid: &ResourceGrid, num: &Numerology) -> Result<()> {
    if grid.symbols() != num.symbols_per_subframe {
        return Err(Error::DimensionMismatch {
            expected: num.symbols_per_subframe,
            actual: grid.symbols(),
        });
    }
    if grid.subcarriers() != num.occupied_subcarriers {
        return Err(Error::DimensionMismatch {
            expected: num.occupied_subcarriers,
            actual: grid.subcarriers(),
        });
    }
    Ok(())
}

/// Maps each symbol onto centered FFT bins, applies a 1/N inverse DFT and
/// prepends the cyclic prefix.
pub fn scfdma_modulate(grid: &ResourceGrid, num: &Numerology) -> Result<TimeSignal> {
    check_grid(grid, num)?;
    let n = num.fft_size;
    let mut samples = Vec::with_capacity(num.subframe_len());
    let mut body = vec![Complex64::new(0.0, 0.0); n];
    for symbol in 0..num.symbols_per_subframe {
        body.fill(Complex64::new(0.0, 0.0));
        let row = grid.row(symbol);
        if row.iter().any(|c| *c != Complex64::new(0.0, 0.0)) {
            for (m, v) in row.iter().enumerate() {
                body[num.bin_of(m)] = *v;
            }
            dft::inverse(&mut body);
        }
        let cp = num.cp_len(symbol);
        samples.extend_from_slice(&body[n - cp..]);
        samples.extend_from_slice(&body);
    }
    Ok(TimeSignal::new(samples, num.sample_rate))
}

/// Forward DFT of one symbol body, returned in subcarrier order.
pub fn demodulate_body(body: &[Complex64], num: &Numerology) -> Vec<Complex64> {
    let mut buf = body.to_vec();
    dft::forward(&mut buf);
    (0..num.occupied_subcarriers).map(|m| buf[num.bin_of(m)]).collect()
}

/// Inverse of [`scfdma_modulate`] for a signal starting at the subframe
/// boundary.
pub fn demodulate(signal: &TimeSignal, num: &Numerology) -> Result<ResourceGrid> {
    if signal.len() < num.subframe_len() {
        return Err(Error::OutOfRange {
            needed: num.subframe_len(),
            len: signal.len(),
        });
    }
    let mut grid = ResourceGrid::for_numerology(num);
    for symbol in 0..num.symbols_per_subframe {
        let start = num.body_start(symbol);
        let row = demodulate_body(&signal.samples[start..start + num.fft_size], num);
        grid.row_mut(symbol).copy_from_slice(&row);
    }
    Ok(grid)
}
