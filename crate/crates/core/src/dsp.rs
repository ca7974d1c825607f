//! Shared signal-processing primitives: FFT wrappers, window functions,
//! Butterworth biquad design, zero-phase filtering, Hilbert envelope and
//! autocorrelation.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Smallest power of two >= n (n >= 1).
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Tukey (tapered cosine) window: flat middle, cosine tapers covering
/// `alpha/2` of the length at each end.
pub fn tukey_window(n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let taper = alpha * (n - 1) as f64 / 2.0;
    (0..n)
        .map(|i| {
            let i = i as f64;
            let m = (n - 1) as f64;
            if i < taper {
                0.5 * (1.0 + (PI * (i / taper - 1.0)).cos())
            } else if i > m - taper {
                0.5 * (1.0 + (PI * ((m - i) / taper - 1.0)).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Centered moving average with window `2*half + 1` (shrinks at the edges).
pub fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(n);
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Forward complex FFT in place of a real signal, zero-padded to `n_fft`.
pub fn fft_real(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf
}

fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Magnitude of the analytic signal (Hilbert envelope).
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft_real(x, n);
    // One-sided doubling: keep DC (and Nyquist for even n), double positive
    // frequencies, zero the negative half.
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            // unchanged
        } else if k < half || (n % 2 == 1 && k == half) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft(&mut spec);
    spec.iter().map(|c| c.norm()).collect()
}

/// Linear interpolation of uniformly sampled `y` (spacing `dx`, origin `x0`)
/// at `x`. Clamps outside the support.
pub fn lerp_uniform(y: &[f64], x0: f64, dx: f64, x: f64) -> f64 {
    let pos = (x - x0) / dx;
    if pos <= 0.0 {
        return y[0];
    }
    let last = y.len() - 1;
    if pos >= last as f64 {
        return y[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    y[i] * (1.0 - frac) + y[i + 1] * frac
}

/// Biased-then-unbiased autocorrelation of `x` (mean NOT removed here) for
/// lags `0..=max_lag`, computed via FFT. Entry `tau` is
/// `sum_i x[i] x[i+tau] / (n - tau)`.
pub fn autocorrelation_unbiased(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    assert!(max_lag < n, "max_lag must be below the signal length");
    let n_fft = next_pow2(2 * n);
    let mut spec = fft_real(x, n_fft);
    for v in spec.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    ifft(&mut spec);
    (0..=max_lag)
        .map(|tau| spec[tau].re / (n - tau) as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// Butterworth biquad sections and zero-phase filtering
// ---------------------------------------------------------------------------

/// One second-order section, normalized so a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Causal single pass, direct form II transposed, zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        x.iter()
            .map(|&xi| {
                let y = self.b0 * xi + s1;
                s1 = self.b1 * xi - self.a1 * y + s2;
                s2 = self.b2 * xi - self.a2 * y;
                y
            })
            .collect()
    }
}

/// Analog Butterworth prototype poles for order `n` (unit cutoff).
fn butterworth_poles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect()
}

/// Bilinear transform of an analog pole/zero; `k = 2 fs` (no prewarp here,
/// cutoffs are prewarped before calling).
fn bilinear(s: Complex64, k: f64) -> Complex64 {
    (Complex64::new(k, 0.0) + s) / (Complex64::new(k, 0.0) - s)
}

fn cascade_response(sections: &[Biquad], omega: f64) -> Complex64 {
    let z1 = Complex64::new(omega.cos(), -omega.sin()); // z^-1
    let z2 = z1 * z1;
    sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
        acc * (Complex64::new(s.b0, 0.0) + z1 * s.b1 + z2 * s.b2)
            / (Complex64::new(1.0, 0.0) + z1 * s.a1 + z2 * s.a2)
    })
}

/// Normalize a cascade to unity magnitude at digital frequency `omega`.
fn normalize_gain(sections: &mut [Biquad], omega: f64) {
    let gain = cascade_response(sections, omega).norm();
    let correction = (1.0 / gain).powf(1.0 / sections.len() as f64);
    for s in sections.iter_mut() {
        s.b0 *= correction;
        s.b1 *= correction;
        s.b2 *= correction;
    }
}

/// Digital Butterworth band-pass of prototype order `order` (2*order poles),
/// designed by the analog LP→BP transform plus bilinear transform, returned
/// as biquad sections with unity gain at the band center.
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs: f64, order: usize) -> Vec<Biquad> {
    assert!(order >= 1 && low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0);
    let k = 2.0 * fs;
    let prewarp = |f: f64| k * (PI * f / fs).tan();
    let wl = prewarp(low_hz);
    let wh = prewarp(high_hz);
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // z-plane poles, represented once per conjugate pair (im > 0) or alone
    // for real poles.
    let mut conj_poles: Vec<Complex64> = Vec::new();
    let mut real_poles: Vec<f64> = Vec::new();
    let eps = 1e-9;
    for p in butterworth_poles(order) {
        if p.im < -eps {
            continue; // conjugate handled via the upper-half prototype pole
        }
        let proto_is_real = p.im.abs() <= eps;
        // LP pole p maps to the two roots of s^2 - p*bw*s + w0^2 = 0.
        let half = p * bw * 0.5;
        let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
        for s_pole in [half + disc, half - disc] {
            let zp = bilinear(s_pole, k);
            if zp.im.abs() <= eps {
                real_poles.push(zp.re);
            } else if proto_is_real {
                // real prototype splitting into a conjugate BP pair: keep once
                if zp.im > 0.0 {
                    conj_poles.push(zp);
                }
            } else {
                conj_poles.push(zp);
            }
        }
    }

    // Band-pass has `order` zeros at z = +1 and `order` at z = -1; each
    // section takes one of each: numerator 1 - z^-2.
    let mut sections: Vec<Biquad> = conj_poles
        .iter()
        .map(|p| Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * p.re,
            a2: p.norm_sqr(),
        })
        .collect();
    real_poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for pair in real_poles.chunks(2) {
        match pair {
            [r1, r2] => sections.push(Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -(r1 + r2),
                a2: r1 * r2,
            }),
            [r] => sections.push(Biquad {
                b0: 1.0,
                b1: -1.0,
                b2: 0.0,
                a1: -r,
                a2: 0.0,
            }),
            _ => unreachable!(),
        }
    }

    let f_center = (low_hz * high_hz).sqrt();
    normalize_gain(&mut sections, 2.0 * PI * f_center / fs);
    sections
}

/// Digital Butterworth low-pass of order `order`, unity DC gain.
pub fn design_lowpass(cutoff_hz: f64, fs: f64, order: usize) -> Vec<Biquad> {
    assert!(order >= 1 && cutoff_hz > 0.0 && cutoff_hz < fs / 2.0);
    let k = 2.0 * fs;
    let wc = k * (PI * cutoff_hz / fs).tan();

    let mut sections = Vec::new();
    for p in butterworth_poles(order) {
        let zp = bilinear(p * wc, k);
        if p.im > 1e-12 {
            // conjugate pair -> biquad with a double zero at z = -1
            sections.push(Biquad {
                b0: 1.0,
                b1: 2.0,
                b2: 1.0,
                a1: -2.0 * zp.re,
                a2: zp.norm_sqr(),
            });
        } else if p.im.abs() <= 1e-12 {
            // real pole -> first-order section padded into biquad form
            sections.push(Biquad {
                b0: 1.0,
                b1: 1.0,
                b2: 0.0,
                a1: -zp.re,
                a2: 0.0,
            });
        }
    }
    normalize_gain(&mut sections, 0.0);
    sections
}

fn cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        y = s.filter(&y);
    }
    y
}

/// Forward-backward (zero-phase) filtering with mirror padding of
/// `pad` samples at each end; the padding is discarded, so the output has
/// the input's length and the cascade's squared magnitude response.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(x[i]);
    }
    ext.extend_from_slice(x);
    for i in (n - 1 - pad..n - 1).rev() {
        ext.push(x[i]);
    }

    let mut y = cascade(sections, &ext);
    y.reverse();
    let mut y = cascade(sections, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn steady_amplitude(x: &[f64], skip: usize) -> f64 {
        x[skip..x.len() - skip]
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    #[test]
    fn hann_window_endpoints_and_peak() {
        let w = hann_window(101);
        assert_relative_eq!(w[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(w[100], 0.0, epsilon = 1e-12);
        assert_relative_eq!(w[50], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hilbert_envelope_of_tone_is_flat() {
        let fs = 1000.0;
        let x = sine(50.0, fs, 4000);
        let env = hilbert_envelope(&x);
        // away from the edges the envelope of a unit sine is 1
        for &e in &env[500..3500] {
            assert!((e - 1.0).abs() < 0.02, "envelope deviates: {e}");
        }
    }

    #[test]
    fn autocorrelation_peak_at_period() {
        let fs = 200.0;
        let x = sine(4.0, fs, 2000);
        let r = autocorrelation_unbiased(&x, 100);
        // period = 50 samples; local max there
        let peak_lag = (40..60).max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap()).unwrap();
        assert_eq!(peak_lag, 50);
    }

    #[test]
    fn bandpass_passes_center_and_rejects_stopband() {
        let fs = 1000.0;
        let sections = design_bandpass(20.0, 120.0, fs, 2);
        let n = 4000;

        let inband = cascade(&sections, &sine(49.0, fs, n));
        let a_in = steady_amplitude(&inband, 1000);
        assert!((a_in - 1.0).abs() < 0.05, "in-band amplitude {a_in}");

        let out = cascade(&sections, &sine(400.0, fs, n));
        let a_out = steady_amplitude(&out, 1000);
        assert!(a_out < 0.05, "stop-band amplitude {a_out}");
    }

    #[test]
    fn lowpass_dc_gain_is_unity() {
        let fs = 1000.0;
        let sections = design_lowpass(20.0, fs, 2);
        let y = cascade(&sections, &vec![1.0; 3000]);
        assert_relative_eq!(y[2999], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn filtfilt_impulse_response_is_symmetric() {
        let fs = 1000.0;
        let sections = design_bandpass(20.0, 120.0, fs, 2);
        let mut x = vec![0.0; 4001];
        x[2000] = 1.0;
        let y = filtfilt(&sections, &x, 1000);
        for k in 1..500 {
            assert!(
                (y[2000 + k] - y[2000 - k]).abs() < 1e-9,
                "asymmetry at lag {k}: {} vs {}",
                y[2000 + k],
                y[2000 - k]
            );
        }
    }

    #[test]
    fn filtfilt_preserves_length() {
        let sections = design_lowpass(20.0, 1000.0, 2);
        for n in [1usize, 2, 5, 100, 1001] {
            let x = vec![1.0; n];
            assert_eq!(filtfilt(&sections, &x, 1000).len(), n);
        }
    }
}
