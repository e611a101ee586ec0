//! Tapped-delay-line fading channel with Doppler, CFO, timing offset and
//! AWGN.
//!
//! Each tap is an independent Rayleigh process built from a sum of
//! sinusoids with random angles of arrival (16 per quadrature branch), whose
//! ensemble autocorrelation is the Jakes `J0(2*pi*f_d*tau)` shape.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::waveform::TimeSignal;

/// Sinusoids per quadrature branch of each tap.
pub const SINUSOIDS_PER_TAP: usize = 16;

const SPEED_OF_LIGHT: f64 = 3.0e8;
const FADING_STREAM: u64 = 0x6661_6465;
// Phasor recurrences are re-anchored to exact values this often.
const RESYNC: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_ns: f64,
    pub power_db: f64,
}

/// Extended Typical Urban delay profile.
pub fn etu_profile() -> Vec<Tap> {
    const DELAYS: [f64; 9] = [0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0];
    const POWERS: [f64; 9] = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0];
    DELAYS
        .iter()
        .zip(POWERS)
        .map(|(&delay_ns, power_db)| Tap { delay_ns, power_db })
        .collect()
}

fn default_carrier() -> f64 {
    5.9e9
}

fn default_snr() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub taps: Vec<Tap>,
    pub speed_kmh: f64,
    #[serde(default = "default_carrier")]
    pub carrier_freq_hz: f64,
    /// `f64::INFINITY` disables noise.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub cfo_hz: f64,
    #[serde(default)]
    pub timing_offset: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelConfig {
    pub fn etu(speed_kmh: f64, snr_db: f64, seed: u64) -> Self {
        ChannelConfig {
            taps: etu_profile(),
            speed_kmh,
            carrier_freq_hz: default_carrier(),
            snr_db,
            cfo_hz: 0.0,
            timing_offset: 0,
            seed,
        }
    }

    /// Single tap at zero delay.
    pub fn flat(speed_kmh: f64, snr_db: f64, seed: u64) -> Self {
        ChannelConfig {
            taps: vec![Tap {
                delay_ns: 0.0,
                power_db: 0.0,
            }],
            ..Self::etu(speed_kmh, snr_db, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Config("channel needs at least one tap".into()));
        }
        if self
            .taps
            .windows(2)
            .any(|w| w[1].delay_ns < w[0].delay_ns)
            || self.taps.iter().any(|t| t.delay_ns < 0.0 || !t.power_db.is_finite())
        {
            return Err(Error::Config("tap delays must be nonnegative and nondecreasing".into()));
        }
        if !(0.0..=500.0).contains(&self.speed_kmh) {
            return Err(Error::Config(format!("speed {} km/h outside 0..=500", self.speed_kmh)));
        }
        if !(self.carrier_freq_hz > 0.0) || !self.cfo_hz.is_finite() || self.snr_db.is_nan() {
            return Err(Error::Config("invalid carrier, CFO or SNR".into()));
        }
        Ok(())
    }

    /// Linear tap powers normalized to unit sum.
    pub fn normalized_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }

    pub fn max_doppler(&self) -> f64 {
        self.speed_kmh / 3.6 * self.carrier_freq_hz / SPEED_OF_LIGHT
    }

    /// Tap delays rounded to whole samples.
    pub fn delays_in_samples(&self, sample_rate: f64) -> Vec<usize> {
        self.taps
            .iter()
            .map(|t| (t.delay_ns * 1e-9 * sample_rate).round() as usize)
            .collect()
    }
}

/// Time-varying tap gains, `tap_gains[tap][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingRealization {
    pub tap_gains: Vec<Vec<Complex64>>,
    pub delays: Vec<usize>,
    pub doppler_max: f64,
}

impl FadingRealization {
    /// Time-constant gains at the given sample delays.
    pub fn fixed(delays: Vec<usize>, gains: &[Complex64], n_samples: usize) -> Self {
        FadingRealization {
            tap_gains: gains.iter().map(|g| vec![*g; n_samples]).collect(),
            delays,
            doppler_max: 0.0,
        }
    }

    /// Ideal channel: one unit tap, no delay.
    pub fn unit(n_samples: usize) -> Self {
        Self::fixed(vec![0], &[Complex64::new(1.0, 0.0)], n_samples)
    }

    pub fn len(&self) -> usize {
        self.tap_gains.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }
}

struct Branch {
    freq: [f64; SINUSOIDS_PER_TAP],
    phase: [f64; SINUSOIDS_PER_TAP],
}

impl Branch {
    fn phasors(&self, t: f64) -> [Complex64; SINUSOIDS_PER_TAP] {
        std::array::from_fn(|m| Complex64::from_polar(1.0, self.freq[m] * t + self.phase[m]))
    }
}

// Fills `out` with sum_m cos(freq_m * n / fs + phase_m) via rotating phasors.
fn sum_of_cosines(branch: &Branch, sample_rate: f64, out: &mut [f64]) {
    let steps: [Complex64; SINUSOIDS_PER_TAP] =
        std::array::from_fn(|m| Complex64::from_polar(1.0, branch.freq[m] / sample_rate));
    for (block, chunk) in out.chunks_mut(RESYNC).enumerate() {
        let mut p = branch.phasors((block * RESYNC) as f64 / sample_rate);
        for o in chunk.iter_mut() {
            *o = p.iter().map(|z| z.re).sum();
            for (z, s) in p.iter_mut().zip(&steps) {
                *z *= s;
            }
        }
    }
}

pub fn make_fading(config: &ChannelConfig, n_samples: usize, sample_rate: f64) -> FadingRealization {
    let m = SINUSOIDS_PER_TAP;
    let fd = config.max_doppler();
    let omega = 2.0 * PI * fd;
    let mut rng = seed::rng(seed::derive(config.seed, &[FADING_STREAM]));
    let scale = (2.0 / m as f64).sqrt();

    let tap_gains = config
        .normalized_powers()
        .into_iter()
        .map(|power| {
            let theta: f64 = rng.random_range(-PI..PI);
            let alpha: [f64; SINUSOIDS_PER_TAP] = std::array::from_fn(|n| {
                (2.0 * PI * (n + 1) as f64 - PI + theta) / (4.0 * m as f64)
            });
            let cos_branch = Branch {
                freq: std::array::from_fn(|n| omega * alpha[n].cos()),
                phase: std::array::from_fn(|_| rng.random_range(-PI..PI)),
            };
            let sin_branch = Branch {
                freq: std::array::from_fn(|n| omega * alpha[n].sin()),
                phase: std::array::from_fn(|_| rng.random_range(-PI..PI)),
            };
            let amp = scale * (power / 2.0).sqrt();
            if fd == 0.0 {
                let re: f64 = cos_branch.phase.iter().map(|p| p.cos()).sum();
                let im: f64 = sin_branch.phase.iter().map(|p| p.cos()).sum();
                return vec![Complex64::new(re, im) * amp; n_samples];
            }
            let mut re = vec![0.0; n_samples];
            let mut im = vec![0.0; n_samples];
            sum_of_cosines(&cos_branch, sample_rate, &mut re);
            sum_of_cosines(&sin_branch, sample_rate, &mut im);
            re.into_iter()
                .zip(im)
                .map(|(a, b)| Complex64::new(a, b) * amp)
                .collect()
        })
        .collect();

    FadingRealization {
        tap_gains,
        delays: config.delays_in_samples(sample_rate),
        doppler_max: fd,
    }
}

/// Multiplies sample `n` by `exp(j*2*pi*cfo_hz*n/fs)`.
pub fn rotate(signal: &mut TimeSignal, cfo_hz: f64) {
    if cfo_hz == 0.0 {
        return;
    }
    let step = cfo_hz / signal.sample_rate;
    for (n, s) in signal.samples.iter_mut().enumerate() {
        // keep the argument small before the multiply by 2*pi
        let cycles = (step * n as f64).rem_euclid(1.0);
        *s *= Complex64::from_polar(1.0, 2.0 * PI * cycles);
    }
}

/// Tapped-delay-line convolution, then `timing_offset` leading zeros, then
/// CFO rotation. The output is `timing_offset` samples longer than the input.
pub fn apply_channel(
    signal: &TimeSignal,
    fading: &FadingRealization,
    config: &ChannelConfig,
) -> Result<TimeSignal> {
    let len = signal.len();
    if fading.len() < len {
        return Err(Error::FadingTooShort {
            needed: len,
            available: fading.len(),
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); config.timing_offset + len];
    let body = &mut out[config.timing_offset..];
    for (gains, &delay) in fading.tap_gains.iter().zip(&fading.delays) {
        for n in delay..len {
            body[n] += gains[n] * signal.samples[n - delay];
        }
    }
    let mut out = TimeSignal::new(out, signal.sample_rate);
    rotate(&mut out, config.cfo_hz);
    Ok(out)
}

/// Adds circular complex Gaussian noise of variance
/// `signal_power_ref / 10^(snr_db/10)`. An infinite SNR adds nothing.
pub fn add_awgn(signal: &TimeSignal, snr_db: f64, signal_power_ref: f64, seed: u64) -> TimeSignal {
    if snr_db == f64::INFINITY {
        return signal.clone();
    }
    let variance = signal_power_ref / 10f64.powf(snr_db / 10.0);
    let sigma = (variance / 2.0).sqrt();
    let mut rng = seed::rng(seed);
    let samples = signal
        .samples
        .iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    TimeSignal::new(samples, signal.sample_rate)
}
