//! Transmitter hardware impairments.
//!
//! The chain follows the analog transmit path: per-branch I/Q filters, DAC
//! DC offsets, mixer gain/phase imbalance and a memoryless envelope
//! polynomial for the power amplifier.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{
    build_psbch_grid, demodulate, scfdma_modulate, Numerology, ResourceGrid, SequenceKind,
    SlssId, TimeSignal, REFERENCE_SYMBOLS,
};

/// Maximum modulation-domain EVM accepted for a terminal profile, percent.
pub const EVM_LIMIT_PERCENT: f64 = 17.5;

/// One terminal's hardware fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffProfile {
    pub dc_i: f64,
    pub dc_q: f64,
    pub fir_i: Vec<f64>,
    pub fir_q: Vec<f64>,
    /// Linear gain error on the I branch.
    pub gain_imbalance: f64,
    /// Quadrature phase error, radians.
    pub phase_deviation: f64,
    /// `out = c1*x + c2*x*|x| + c3*x*|x|^2`.
    pub pa_coeffs: [Complex64; 3],
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl RffProfile {
    /// Impairment-free transmitter.
    pub fn neutral() -> Self {
        RffProfile {
            dc_i: 0.0,
            dc_q: 0.0,
            fir_i: vec![1.0],
            fir_q: vec![1.0],
            gain_imbalance: 0.0,
            phase_deviation: 0.0,
            pa_coeffs: [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fir_i.is_empty() || self.fir_q.is_empty() {
            return Err(Error::InvalidProfile("filter taps must be nonempty".into()));
        }
        if self.pa_coeffs[0] == c(0.0, 0.0) {
            return Err(Error::InvalidProfile("linear PA coefficient is zero".into()));
        }
        let finite = [self.dc_i, self.dc_q, self.gain_imbalance, self.phase_deviation]
            .iter()
            .chain(&self.fir_i)
            .chain(&self.fir_q)
            .all(|v| v.is_finite())
            && self.pa_coeffs.iter().all(|p| p.re.is_finite() && p.im.is_finite());
        if !finite {
            return Err(Error::InvalidProfile("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// The ten simulated terminals, in terminal-index order (1..=10).
pub fn table_i_profiles() -> Vec<RffProfile> {
    let row = |dc_i, dc_q, fir_i: &[f64], fir_q: &[f64], gain, phase, pa: [Complex64; 3]| {
        RffProfile {
            dc_i,
            dc_q,
            fir_i: fir_i.to_vec(),
            fir_q: fir_q.to_vec(),
            gain_imbalance: gain,
            phase_deviation: phase,
            pa_coeffs: pa,
        }
    };
    let linear = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
    let flat = [1.0, 0.0];
    vec![
        row(0.0, 0.0, &flat, &flat, 0.1, 0.1, linear),
        row(0.01, 0.0, &flat, &flat, 0.01, 0.01, linear),
        row(0.0, -0.01, &flat, &flat, 0.0, 0.0, linear),
        row(-0.005, 0.005, &flat, &flat, 0.01, 0.01, linear),
        row(0.005, -0.005, &flat, &flat, 0.0, 0.0, linear),
        row(
            0.0,
            0.0,
            &flat,
            &flat,
            0.05,
            0.0,
            [c(0.9, 0.15), c(0.1, 0.0), c(0.1, -0.15)],
        ),
        row(
            0.0,
            0.0,
            &flat,
            &flat,
            0.0,
            0.05,
            [c(1.15, 0.0), c(-0.2, 0.0), c(0.0, 0.0)],
        ),
        row(0.0, 0.0, &[0.825, 0.0], &[1.175, 0.0], 0.0, 0.0, linear),
        row(0.0, 0.0, &[1.0, 0.175], &[1.0, -0.175], 0.0, 0.0, linear),
        row(
            0.005,
            0.0,
            &[0.95, 0.0],
            &[1.0, 0.05],
            0.05,
            0.05,
            [c(0.95, -0.05), c(0.0, 0.0), c(0.0, 0.0)],
        ),
    ]
}

// Causal FIR with zero history, output truncated to the input length.
fn fir(input: impl Iterator<Item = f64>, taps: &[f64], len: usize) -> Vec<f64> {
    let x: Vec<f64> = input.collect();
    (0..len)
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, h)| h * x[n - k])
                .sum()
        })
        .collect()
}

pub fn apply_rff(signal: &TimeSignal, profile: &RffProfile) -> Result<TimeSignal> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    profile.validate()?;
    let len = signal.len();
    let i_branch = fir(signal.samples.iter().map(|s| s.re), &profile.fir_i, len);
    let q_branch = fir(signal.samples.iter().map(|s| s.im), &profile.fir_q, len);

    let gain = 1.0 + profile.gain_imbalance;
    let (sin_phi, cos_phi) = profile.phase_deviation.sin_cos();
    let [c1, c2, c3] = profile.pa_coeffs;

    let samples = i_branch
        .into_iter()
        .zip(q_branch)
        .map(|(i, q)| {
            let i = i + profile.dc_i;
            let q = q + profile.dc_q;
            let x = Complex64::new(gain * i, q * cos_phi + i * sin_phi);
            let a = x.norm();
            c1 * x + c2 * x * a + c3 * x * (a * a)
        })
        .collect();
    Ok(TimeSignal::new(samples, signal.sample_rate))
}

/// RMS error over the occupied reference cells relative to the RMS
/// reference magnitude, in percent. `drive_gain` is the amplitude scale the
/// impaired signal was transmitted at.
pub fn measure_evm(
    reference: &ResourceGrid,
    impaired: &TimeSignal,
    num: &Numerology,
    drive_gain: f64,
) -> Result<f64> {
    if reference.symbols() != num.symbols_per_subframe
        || reference.subcarriers() != num.occupied_subcarriers
    {
        return Err(Error::DimensionMismatch {
            expected: num.symbols_per_subframe * num.occupied_subcarriers,
            actual: reference.symbols() * reference.subcarriers(),
        });
    }
    let received = demodulate(impaired, num)?;
    let mut err = 0.0;
    let mut energy = 0.0;
    for symbol in REFERENCE_SYMBOLS {
        let kind = SequenceKind::of_symbol(symbol).expect("reference symbol");
        for k in kind.band() {
            let want = reference.get(symbol, k);
            let got = received.get(symbol, k) / drive_gain;
            err += (got - want).norm_sqr();
            energy += want.norm_sqr();
        }
    }
    Ok(100.0 * (err / energy).sqrt())
}

/// EVM after a per-subcarrier zero-forcing equalizer: each subcarrier's
/// complex gain is the least-squares fit over the reference symbols and is
/// divided out before the error is measured.
pub fn measure_evm_equalized(
    reference: &ResourceGrid,
    impaired: &TimeSignal,
    num: &Numerology,
) -> Result<f64> {
    let received = demodulate(impaired, num)?;
    if reference.subcarriers() != received.subcarriers() || reference.symbols() != received.symbols() {
        return Err(Error::DimensionMismatch {
            expected: received.symbols() * received.subcarriers(),
            actual: reference.symbols() * reference.subcarriers(),
        });
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    for k in 0..num.occupied_subcarriers {
        let cells: Vec<(Complex64, Complex64)> = REFERENCE_SYMBOLS
            .iter()
            .filter(|&&s| SequenceKind::of_symbol(s).is_some_and(|kind| kind.band().contains(&k)))
            .map(|&s| (reference.get(s, k), received.get(s, k)))
            .collect();
        let num_fit: Complex64 = cells.iter().map(|(r, z)| z * r.conj()).sum();
        let den: f64 = cells.iter().map(|(r, _)| r.norm_sqr()).sum();
        if den == 0.0 {
            continue;
        }
        let a = num_fit / den;
        for (r, z) in &cells {
            err += (z / a - r).norm_sqr();
            energy += r.norm_sqr();
        }
    }
    Ok(100.0 * (err / energy).sqrt())
}

/// Equalized EVM of `profile` on the reference subframe, failing above the
/// limit.
pub fn validate_profile(profile: &RffProfile, num: &Numerology, slss: SlssId) -> Result<f64> {
    profile.validate()?;
    let grid = build_psbch_grid(slss);
    let tx = scfdma_modulate(&grid, num)?.scaled(num.drive_gain());
    let evm = measure_evm_equalized(&grid, &apply_rff(&tx, profile)?, num)?;
    if evm > EVM_LIMIT_PERCENT {
        return Err(Error::EvmExceeded {
            evm,
            limit: EVM_LIMIT_PERCENT,
        });
    }
    Ok(evm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize) -> TimeSignal {
        let s = (0..len)
            .map(|n| Complex64::new((0.01 * n as f64).cos(), 0.0))
            .collect();
        TimeSignal::new(s, 30.72e6)
    }

    #[test]
    fn table_has_ten_valid_profiles() {
        let t = table_i_profiles();
        assert_eq!(t.len(), 10);
        for p in &t {
            p.validate().unwrap();
        }
        assert_eq!(t[7].fir_i, vec![0.825, 0.0]);
        assert_eq!(t[5].pa_coeffs[2], c(0.1, -0.15));
    }

    #[test]
    fn terminal3_on_zero_input_is_constant_dc() {
        let p = &table_i_profiles()[2];
        let zero = TimeSignal::new(vec![c(0.0, 0.0); 16], 1.0);
        let out = apply_rff(&zero, p).unwrap();
        for s in out.samples {
            assert_eq!(s, c(0.0, -0.01));
        }
    }

    #[test]
    fn neutral_is_identity() {
        let sig = TimeSignal::new(
            (0..64).map(|n| c((n as f64).sin(), (n as f64 * 0.3).cos())).collect(),
            1.0,
        );
        assert_eq!(apply_rff(&sig, &RffProfile::neutral()).unwrap(), sig);
    }

    #[test]
    fn gain_imbalance_scales_i_branch() {
        let p = &table_i_profiles()[1];
        let profile = RffProfile {
            dc_i: 0.0,
            ..p.clone()
        };
        let sig = tone(100);
        let out = apply_rff(&sig, &profile).unwrap();
        for (o, s) in out.samples.iter().zip(&sig.samples) {
            assert!((o.re - 1.01 * s.re).abs() < 1e-15);
            // the phase deviation leaks I into Q
            assert!((o.im - s.re * 0.01f64.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_tap_filter_uses_previous_sample() {
        let p = RffProfile {
            fir_i: vec![1.0, 0.5],
            ..RffProfile::neutral()
        };
        let sig = TimeSignal::new(vec![c(1.0, 0.0), c(2.0, 0.0), c(0.0, 1.0)], 1.0);
        let out = apply_rff(&sig, &p).unwrap();
        assert_eq!(out.samples, vec![c(1.0, 0.0), c(2.5, 0.0), c(1.0, 1.0)]);
    }

    #[test]
    fn empty_signal_rejected() {
        let sig = TimeSignal::new(vec![], 1.0);
        assert!(matches!(
            apply_rff(&sig, &RffProfile::neutral()),
            Err(Error::EmptySignal)
        ));
    }

    #[test]
    fn evm_of_clean_and_scaled_signal() {
        let num = Numerology::lte_v2x();
        let grid = build_psbch_grid(SlssId::new(0).unwrap());
        let gain = num.drive_gain();
        let tx = scfdma_modulate(&grid, &num).unwrap().scaled(gain);
        assert!(measure_evm(&grid, &tx, &num, gain).unwrap() < 1e-9);
        let scaled = RffProfile {
            pa_coeffs: [c(0.9, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            ..RffProfile::neutral()
        };
        let evm = measure_evm(&grid, &apply_rff(&tx, &scaled).unwrap(), &num, gain).unwrap();
        assert!((evm - 10.0).abs() < 0.1, "{evm}");
    }

    #[test]
    fn table_profiles_within_evm_limit() {
        let num = Numerology::lte_v2x();
        for slss in [0, 1, 200] {
            for (i, p) in table_i_profiles().iter().enumerate() {
                let evm = validate_profile(p, &num, SlssId::new(slss).unwrap())
                    .unwrap_or_else(|e| panic!("terminal {}: {e}", i + 1));
                assert!(evm <= EVM_LIMIT_PERCENT);
            }
        }
    }

    #[test]
    fn equalized_evm_ignores_complex_gain() {
        let num = Numerology::lte_v2x();
        let grid = build_psbch_grid(SlssId::new(3).unwrap());
        let tx = scfdma_modulate(&grid, &num).unwrap().scaled(num.drive_gain());
        let p = RffProfile {
            pa_coeffs: [c(0.8, 0.3), c(0.0, 0.0), c(0.0, 0.0)],
            ..RffProfile::neutral()
        };
        let rx = apply_rff(&tx, &p).unwrap();
        assert!(measure_evm_equalized(&grid, &rx, &num).unwrap() < 1e-9);
        assert!(measure_evm(&grid, &rx, &num, num.drive_gain()).unwrap() > 30.0);
    }

    #[test]
    fn excessive_impairment_rejected() {
        let num = Numerology::lte_v2x();
        let bad = RffProfile {
            pa_coeffs: [c(1.0, 0.0), c(0.0, 0.0), c(-0.6, 0.0)],
            ..RffProfile::neutral()
        };
        assert!(matches!(
            validate_profile(&bad, &num, SlssId::new(0).unwrap()),
            Err(Error::EvmExceeded { .. })
        ));
    }
}
