mod common;

use common::*;
use psbch_rff::channel::{ChannelConfig, FadingRealization};
use psbch_rff::extractor::{extract, ExtractorConfig, WindowSpec};
use psbch_rff::impairments::{table_i_profiles, RffProfile};
use psbch_rff::waveform::{known_sequence, SlssId};
use psbch_rff::Complex64;

fn unit_link(profile: &RffProfile, slss: SlssId) -> Vec<Vec<Complex64>> {
    let tx = transmit(profile, slss);
    let f = FadingRealization::unit(tx.len());
    let rx = through(&tx, &f, &ChannelConfig::flat(0.0, f64::INFINITY, 0), 0);
    let pre = front_end(&rx, slss).unwrap();
    equalized_ratios(&pre, slss, &ExtractorConfig::default()).0
}

#[test]
fn null_pipeline_is_exact() {
    for s in [0, 1, 167, 335] {
        let ratios = unit_link(&RffProfile::neutral(), slss(s));
        let worst = ratios.iter().flatten().map(|r| (r - 1.0).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "slss {s}: {worst}");
    }
}

#[test]
fn null_pipeline_features_are_the_known_sequences() {
    let id = slss(10);
    let tx = transmit(&RffProfile::neutral(), id);
    let f = FadingRealization::unit(tx.len());
    let rx = through(&tx, &f, &ChannelConfig::flat(0.0, f64::INFINITY, 0), 0);
    let pre = front_end(&rx, id).unwrap();
    let feat = extract(&pre.demapped, id, &ExtractorConfig::default()).unwrap().feature;
    let want: Vec<Complex64> = [5, 2, 12]
        .iter()
        .flat_map(|&s| known_sequence(id, s).unwrap())
        .collect();
    for (a, b) in feat.complex().iter().zip(&want) {
        assert!((a - b).norm() < 1e-6);
    }
}

#[test]
fn filter_asymmetry_survives_equalization() {
    let t8 = &table_i_profiles()[7];
    let ratios = unit_link(t8, slss(0));
    let all: Vec<f64> = ratios.iter().flatten().map(|r| (r - 1.0).norm_sqr()).collect();
    let rms = (all.iter().sum::<f64>() / all.len() as f64).sqrt();
    assert!(rms > 0.01, "rms {rms}");
}

fn static_etu_error(seed: u64, ext: ExtractorConfig) -> f64 {
    let id = slss(0);
    let tx = transmit(&RffProfile::neutral(), id);
    let cfg = ChannelConfig {
        timing_offset: 40,
        ..ChannelConfig::etu(0.0, f64::INFINITY, seed)
    };
    let (rx, fading) = through_config(&tx, &cfg, 400);
    let pre = front_end(&rx, id).unwrap();
    let (_, est) = equalized_ratios(&pre, id, &ext);
    let shift = pre.subframe_start as f64 - cfg.timing_offset as f64;
    let want = static_response(&fading, shift, num().drive_gain());
    let err: f64 = est.combined.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum();
    let norm: f64 = want.iter().map(|b| b.norm_sqr()).sum();
    (err / norm).sqrt()
}

// The 8 + 2 window truncates ETU's delay spread at the band edges; the
// assertion covers the median realization.
#[test]
fn static_etu_estimate_matches_tap_response() {
    let mut errs: Vec<f64> = (0..20).map(|s| static_etu_error(s, ExtractorConfig::default())).collect();
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    println!("static ETU relative RMS error: median {median:.4}, max {:.4}", errs[errs.len() - 1]);
    assert!(median < 0.05, "median relative RMS error {median}");
}

#[test]
fn all_pass_window_estimate_is_near_exact_on_static_etu() {
    let e = static_etu_error(3, all_pass());
    assert!(e < 0.05, "{e}");
}

fn all_pass() -> ExtractorConfig {
    ExtractorConfig {
        window_sync: WindowSpec::all_pass(62),
        window_dmrs: WindowSpec::all_pass(72),
        ..ExtractorConfig::default()
    }
}

fn features(profile: &RffProfile, fading: &FadingRealization) -> Vec<f64> {
    features_with(profile, fading, &ExtractorConfig::default())
}

fn features_with(profile: &RffProfile, fading: &FadingRealization, ext: &ExtractorConfig) -> Vec<f64> {
    let id = slss(0);
    let tx = transmit(profile, id);
    let cfg = ChannelConfig {
        timing_offset: 40,
        ..ChannelConfig::flat(0.0, f64::INFINITY, 0)
    };
    let rx = through(&tx, fading, &cfg, 400);
    let pre = front_end(&rx, id).unwrap();
    extract(&pre.demapped, id, ext)
        .unwrap()
        .feature
        .flatten()
}

fn static_etu(seed: u64, len: usize) -> FadingRealization {
    psbch_rff::channel::make_fading(&ChannelConfig::etu(0.0, f64::INFINITY, seed), len, num().sample_rate)
}

#[test]
fn all_pass_features_nearly_channel_invariant() {
    // residual comes from the 154-sample tap overrunning the cyclic prefix
    let p = &table_i_profiles()[0];
    let len = num().subframe_len();
    let (a, b) = (static_etu(101, len), static_etu(202, len));
    let d = relative_distance(&features_with(p, &a, &all_pass()), &features_with(p, &b, &all_pass()));
    assert!(d < 0.05, "{d}");
}

#[test]
fn equalized_features_track_devices_not_channels() {
    let profiles = table_i_profiles();
    let len = num().subframe_len();
    let (ch_a, ch_b) = (static_etu(101, len), static_etu(202, len));
    let mut same_device = Vec::new();
    let mut cross_device = f64::INFINITY;
    for (i, p) in profiles.iter().enumerate() {
        let fa = features(p, &ch_a);
        same_device.push(relative_distance(&fa, &features(p, &ch_b)));
        for q in &profiles[i + 1..] {
            cross_device = cross_device.min(relative_distance(&fa, &features(q, &ch_a)));
        }
    }
    let worst_same = same_device.iter().copied().fold(0.0, f64::max);
    println!("same device, two channels: {same_device:.4?}");
    println!("closest pair of devices, one channel: {cross_device:.4}");
    assert!(worst_same < 0.05, "same-device distance {worst_same}");
    assert!(cross_device > 0.05, "cross-device distance {cross_device}");
}

#[test]
fn table_profiles_give_distinct_features() {
    let len = num().subframe_len();
    let unit = FadingRealization::unit(len);
    let feats: Vec<Vec<f64>> = table_i_profiles().iter().map(|p| features(p, &unit)).collect();
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let d = relative_distance(&feats[i], &feats[j]);
            assert!(d > 1e-3, "terminals {} and {}: {d}", i + 1, j + 1);
        }
    }
}

