#![allow(dead_code)]

use psbch_rff::channel::{add_awgn, apply_channel, make_fading, ChannelConfig, FadingRealization};
use psbch_rff::extractor::{deep_fade_floor, equalize, estimate_channel, ChannelEstimate, ExtractorConfig};
use psbch_rff::impairments::{apply_rff, RffProfile};
use psbch_rff::receiver::{preprocess, Preprocessed, ReceiverConfig};
use psbch_rff::waveform::{
    build_psbch_grid, known_sequence, scfdma_modulate, Numerology, SequenceKind, SlssId, TimeSignal,
    REFERENCE_SYMBOLS,
};
use psbch_rff::{Complex64, Result};

pub fn num() -> Numerology {
    Numerology::default()
}

pub fn slss(v: u32) -> SlssId {
    SlssId::new(v).unwrap()
}

/// Transmitted subframe for `profile`, at the simulator's drive level.
pub fn transmit(profile: &RffProfile, slss: SlssId) -> TimeSignal {
    let num = num();
    let tx = scfdma_modulate(&build_psbch_grid(slss), &num).unwrap().scaled(num.drive_gain());
    apply_rff(&tx, profile).unwrap()
}

/// Mean power over the reference symbol bodies of a subframe starting at
/// `start`.
pub fn reference_power(rx: &TimeSignal, start: usize) -> f64 {
    let num = num();
    REFERENCE_SYMBOLS
        .iter()
        .map(|&s| {
            let b = start + num.body_start(s);
            rx.mean_power(b..b + num.fft_size)
        })
        .sum::<f64>()
        / REFERENCE_SYMBOLS.len() as f64
}

/// Channel, zero padding of `tail` samples, then noise per `cfg.snr_db`.
pub fn through(tx: &TimeSignal, fading: &FadingRealization, cfg: &ChannelConfig, tail: usize) -> TimeSignal {
    let mut rx = apply_channel(tx, fading, cfg).unwrap();
    rx.samples.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), tail));
    let p = reference_power(&rx, cfg.timing_offset);
    add_awgn(&rx, cfg.snr_db, p, cfg.seed ^ 0x5eed)
}

pub fn through_config(tx: &TimeSignal, cfg: &ChannelConfig, tail: usize) -> (TimeSignal, FadingRealization) {
    let f = make_fading(cfg, tx.len(), tx.sample_rate);
    (through(tx, &f, cfg, tail), f)
}

pub fn front_end(rx: &TimeSignal, slss: SlssId) -> Result<Preprocessed> {
    preprocess(rx, &num(), slss, &ReceiverConfig::default())
}

/// Per-symbol `R_i(k) / X_i(k)` and the channel estimate.
pub fn equalized_ratios(pre: &Preprocessed, slss: SlssId, cfg: &ExtractorConfig) -> (Vec<Vec<Complex64>>, ChannelEstimate) {
    let est = estimate_channel(&pre.demapped, slss, cfg).unwrap();
    let floor = deep_fade_floor(&est.combined);
    let ratios = REFERENCE_SYMBOLS
        .iter()
        .map(|&s| {
            let kind = SequenceKind::of_symbol(s).unwrap();
            let y = pre.demapped.band(s).unwrap();
            let r = equalize(y, &est.combined, *kind.band().start(), floor).unwrap();
            r.values
                .iter()
                .zip(known_sequence(slss, s).unwrap())
                .map(|(r, x)| r / x)
                .collect()
        })
        .collect();
    (ratios, est)
}

pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = a.iter().map(|x| x * x).sum();
    (d / n).sqrt()
}

/// Expected channel response on subcarriers 0..=71 for static taps seen
/// from a receiver whose time reference is `shift` samples late.
pub fn static_response(fading: &FadingRealization, shift: f64, gain: f64) -> Vec<Complex64> {
    let num = num();
    let n = num.fft_size as f64;
    (0..num.occupied_subcarriers)
        .map(|k| {
            let f = k as f64 - (num.occupied_subcarriers / 2) as f64;
            fading
                .tap_gains
                .iter()
                .zip(&fading.delays)
                .map(|(g, &d)| {
                    g[0] * gain * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * (d as f64 - shift) / n)
                })
                .sum()
        })
        .collect()
}
