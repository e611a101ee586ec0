// Thin wrappers over rustfft with a per-thread plan cache.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized forward DFT, in place.
pub(crate) fn forward(buf: &mut [Complex64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// Inverse DFT with 1/N scaling, in place.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// `out[d] = sum_n r[n + d] * conj(x[n])` for `d` in `0..=r.len() - x.len()`.
pub(crate) fn cross_correlate(r: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    cross_correlate_many(r, &[x]).pop().unwrap_or_default()
}

/// [`cross_correlate`] against several equal-length templates, sharing the
/// transform of `r`.
pub(crate) fn cross_correlate_many(r: &[Complex64], xs: &[&[Complex64]]) -> Vec<Vec<Complex64>> {
    let Some(tlen) = xs.first().map(|x| x.len()) else {
        return Vec::new();
    };
    if tlen == 0 || r.len() < tlen || xs.iter().any(|x| x.len() != tlen) {
        return xs.iter().map(|_| Vec::new()).collect();
    }
    let lags = r.len() - tlen + 1;
    let size = (r.len() + tlen).next_power_of_two();
    let mut rf = vec![Complex64::new(0.0, 0.0); size];
    rf[..r.len()].copy_from_slice(r);
    forward(&mut rf);
    xs.iter()
        .map(|x| {
            let mut xf = vec![Complex64::new(0.0, 0.0); size];
            xf[..tlen].copy_from_slice(x);
            forward(&mut xf);
            for (a, b) in xf.iter_mut().zip(&rf) {
                *a = b * a.conj();
            }
            inverse(&mut xf);
            xf.truncate(lags);
            xf
        })
        .collect()
}
