//! Rate normalization and zero-phase 20-120 Hz band-pass filtering.

use crate::dataset_io::PcgRecording;
use crate::dsp;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("band [{low}, {high}] Hz is out of range for working rate {rate} Hz")]
    BandOutOfRange { low: f64, high: f64, rate: f64 },
    #[error("invalid preprocess config: {0}")]
    InvalidConfig(String),
}

/// Working rate and band-pass parameters. The 20-120 Hz band keeps the main
/// part of the heart sounds; 1 kHz leaves ample headroom above the band.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PreprocessConfig {
    pub working_rate_hz: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            working_rate_hz: 1000.0,
            band_low_hz: 20.0,
            band_high_hz: 120.0,
            filter_order: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.working_rate_hz > 0.0) || self.filter_order == 0 {
            return Err(PreprocessError::InvalidConfig(
                "working rate and filter order must be positive".into(),
            ));
        }
        if !(0.0 < self.band_low_hz
            && self.band_low_hz < self.band_high_hz
            && self.band_high_hz < self.working_rate_hz / 2.0)
        {
            return Err(PreprocessError::BandOutOfRange {
                low: self.band_low_hz,
                high: self.band_high_hz,
                rate: self.working_rate_hz,
            });
        }
        Ok(())
    }
}

/// Best rational approximation p/q of `x` with q <= max_denom (continued
/// fractions).
fn rational_approx(x: f64, max_denom: u64) -> (u64, u64) {
    let mut a = x.floor();
    let mut frac = x - a;
    let (mut p0, mut q0, mut p1, mut q1) = (1u64, 0u64, a as u64, 1u64);
    for _ in 0..64 {
        if frac < 1e-12 {
            break;
        }
        let r = 1.0 / frac;
        a = r.floor();
        frac = r - a;
        let p2 = (a as u64).saturating_mul(p1).saturating_add(p0);
        let q2 = (a as u64).saturating_mul(q1).saturating_add(q0);
        if q2 > max_denom {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    (p1.max(1), q1.max(1))
}

/// Polyphase rational resampler. Upsample by L (zero stuffing), windowed-sinc
/// anti-alias/anti-image low-pass at 0.9 of the narrower Nyquist, downsample
/// by M. The kernel is applied centered, so the output is delay-free, and the
/// output duration matches the input within one sample period.
pub fn resample(rec: &PcgRecording, target_rate: f64) -> PcgRecording {
    assert!(target_rate > 0.0, "target rate must be positive");
    let in_rate = rec.sample_rate_hz;
    if (target_rate - in_rate).abs() < 1e-9 {
        return rec.clone();
    }
    let (l, m) = rational_approx(target_rate / in_rate, 1 << 16);
    let l = l as usize;
    let m = m as usize;

    // Low-pass in the upsampled domain (rate = in_rate * L).
    let cutoff_hz = 0.45 * in_rate.min(target_rate); // 0.9 of the narrower Nyquist
    let fc = cutoff_hz / (in_rate * l as f64); // cycles per upsampled sample
    let taps_per_side = 12 * l.max(m); // 12 zero crossings per side
    let x = &rec.samples;
    let n_in = x.len();
    let n_out = (n_in * l).div_ceil(m);

    // h(t) = 2 fc sinc(2 fc t) * Hann, evaluated at integer offsets from the
    // center; scaled by L to preserve amplitude after zero stuffing.
    let kernel_len = 2 * taps_per_side + 1;
    let mut kernel = Vec::with_capacity(kernel_len);
    for i in 0..kernel_len {
        let t = i as f64 - taps_per_side as f64;
        let sinc = if t == 0.0 {
            2.0 * fc
        } else {
            (2.0 * PI * fc * t).sin() / (PI * t)
        };
        let w = 0.5 + 0.5 * (PI * t / taps_per_side as f64).cos();
        kernel.push(sinc * w * l as f64);
    }
    // Normalize DC gain of each polyphase branch to exactly 1 so constant
    // signals survive unchanged.
    let mut phase_sums = vec![0.0; l];
    for (i, &h) in kernel.iter().enumerate() {
        phase_sums[i % l] += h;
    }

    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        // Output sample n sits at upsampled index n*M; convolve with the
        // centered kernel hitting only indices that are multiples of L.
        let center = (n * m) as i64;
        let lo = center - taps_per_side as i64;
        let hi = center + taps_per_side as i64;
        // smallest multiple of L >= lo
        let mut up = lo.div_euclid(l as i64) * l as i64;
        if up < lo {
            up += l as i64;
        }
        let mut acc = 0.0;
        let phase_sum = {
            // branch index of the kernel positions hit for this output sample
            let k0 = (up - lo) as usize;
            phase_sums[k0 % l]
        };
        while up <= hi {
            let j = up / l as i64;
            if j >= 0 && (j as usize) < n_in {
                let k = (up - lo) as usize;
                acc += kernel[k] * x[j as usize];
            }
            up += l as i64;
        }
        let norm = phase_sum * (1.0 / l as f64);
        out.push(if norm.abs() > 1e-12 { acc / (l as f64 * norm) } else { acc });
    }

    PcgRecording {
        record_id: rec.record_id.clone(),
        samples: out,
        sample_rate_hz: target_rate,
    }
}

/// Zero-phase Butterworth band-pass: causal pass forward, then the same
/// cascade over the time-reversed signal. One second of mirror padding at
/// each end absorbs the startup transients and is discarded, so the output
/// length equals the input length and the net phase response is zero.
pub fn bandpass_zero_phase(
    rec: &PcgRecording,
    cfg: &PreprocessConfig,
) -> Result<PcgRecording, PreprocessError> {
    cfg.validate()?;
    let fs = rec.sample_rate_hz;
    if (fs - cfg.working_rate_hz).abs() > 1e-6 {
        return Err(PreprocessError::InvalidConfig(format!(
            "recording rate {fs} Hz does not match working rate {} Hz",
            cfg.working_rate_hz
        )));
    }
    let sections = dsp::design_bandpass(cfg.band_low_hz, cfg.band_high_hz, fs, cfg.filter_order);
    let pad = fs.round() as usize;
    let filtered = dsp::filtfilt(&sections, &rec.samples, pad);
    Ok(PcgRecording {
        record_id: rec.record_id.clone(),
        samples: filtered,
        sample_rate_hz: fs,
    })
}

/// Resample to the working rate and band-pass filter.
pub fn preprocess(
    rec: &PcgRecording,
    cfg: &PreprocessConfig,
) -> Result<PcgRecording, PreprocessError> {
    cfg.validate()?;
    let resampled = resample(rec, cfg.working_rate_hz);
    bandpass_zero_phase(&resampled, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    fn tone(record_id: &str, f: f64, fs: f64, n: usize) -> PcgRecording {
        let samples = (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
            .collect();
        PcgRecording::new(record_id, samples, fs)
    }

    /// Frequency of the largest DFT bin.
    fn dft_peak_hz(x: &[f64], fs: f64) -> f64 {
        let n_fft = dsp::next_pow2(x.len());
        let spec = dsp::fft_real(x, n_fft);
        let half = n_fft / 2;
        let peak = (1..half)
            .max_by(|&a, &b| spec[a].norm().partial_cmp(&spec[b].norm()).unwrap())
            .unwrap();
        peak as f64 * fs / n_fft as f64
    }

    #[test]
    fn decimation_by_two_halves_length() {
        let rec = tone("r", 50.0, 2000.0, 4000);
        let out = resample(&rec, 1000.0);
        assert_eq!(out.samples.len(), 2000);
        assert_eq!(out.sample_rate_hz, 1000.0);
    }

    #[test]
    fn identity_rate_is_identity() {
        let rec = tone("r", 50.0, 1000.0, 1000);
        let out = resample(&rec, 1000.0);
        assert_eq!(out.samples, rec.samples);
    }

    #[test]
    fn resample_preserves_dominant_tone() {
        let rec = tone("r", 50.0, 2000.0, 8000);
        let out = resample(&rec, 1000.0);
        let peak = dft_peak_hz(&out.samples[200..out.samples.len() - 200], 1000.0);
        assert!((peak - 50.0).abs() < 2.0, "peak at {peak} Hz");
    }

    #[test]
    fn upsample_preserves_dominant_tone_and_duration() {
        let rec = tone("r", 50.0, 1000.0, 4000);
        let out = resample(&rec, 2000.0);
        assert!((out.samples.len() as f64 / 2000.0 - 4.0).abs() < 1.0 / 1000.0);
        let peak = dft_peak_hz(&out.samples[400..out.samples.len() - 400], 2000.0);
        assert!((peak - 50.0).abs() < 2.0, "peak at {peak} Hz");
    }

    #[test]
    fn noninteger_ratio_duration_within_one_sample() {
        let rec = tone("r", 30.0, 2205.0, 2205 * 3);
        let out = resample(&rec, 1000.0);
        let d_in = 3.0;
        let d_out = out.samples.len() as f64 / 1000.0;
        assert!((d_in - d_out).abs() <= 1.0 / 1000.0, "duration {d_out}");
    }

    #[test]
    fn constant_signal_survives_resampling() {
        let rec = PcgRecording::new("c", vec![0.5; 3000], 1500.0);
        let out = resample(&rec, 1000.0);
        for &s in &out.samples[100..out.samples.len() - 100] {
            assert!((s - 0.5).abs() < 1e-6, "sample {s}");
        }
    }

    fn steady_amp(x: &[f64], fs: f64) -> f64 {
        let skip = (0.5 * fs) as usize;
        x[skip..x.len() - skip].iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    #[test]
    fn inband_tone_amplitude_preserved() {
        let cfg = PreprocessConfig::default();
        let rec = tone("r", 60.0, 1000.0, 5000);
        let out = bandpass_zero_phase(&rec, &cfg).unwrap();
        assert_eq!(out.samples.len(), rec.samples.len());
        let amp = steady_amp(&out.samples, 1000.0);
        assert!((amp - 1.0).abs() < 0.05, "in-band amplitude {amp}");
    }

    #[test]
    fn out_of_band_tone_attenuated_20db() {
        let cfg = PreprocessConfig::default();
        let rec = tone("r", 400.0, 1000.0, 5000);
        let out = bandpass_zero_phase(&rec, &cfg).unwrap();
        let amp = steady_amp(&out.samples, 1000.0);
        assert!(amp < 0.1, "stop-band amplitude {amp} (need >= 20 dB down)");
    }

    #[test]
    fn zero_phase_has_no_lag_on_inband_tone() {
        let cfg = PreprocessConfig::default();
        let rec = tone("r", 60.0, 1000.0, 6000);
        let out = bandpass_zero_phase(&rec, &cfg).unwrap();
        // cross-correlation peak over small lags must sit at 0
        let a = &rec.samples[1000..5000];
        let b = &out.samples[1000..5000];
        let mut best = (0i64, f64::NEG_INFINITY);
        for lag in -8i64..=8 {
            let mut acc = 0.0;
            for i in 0..a.len() {
                let j = i as i64 + lag;
                if j >= 0 && (j as usize) < b.len() {
                    acc += a[i] * b[j as usize];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0, "cross-correlation lag {}", best.0);
    }

    #[test]
    fn filter_is_linear() {
        let cfg = PreprocessConfig::default();
        let x = tone("x", 45.0, 1000.0, 3000);
        let y = tone("y", 80.0, 1000.0, 3000);
        let combo = PcgRecording::new(
            "c",
            x.samples
                .iter()
                .zip(&y.samples)
                .map(|(a, b)| 2.0 * a - 3.0 * b)
                .collect(),
            1000.0,
        );
        let fx = bandpass_zero_phase(&x, &cfg).unwrap();
        let fy = bandpass_zero_phase(&y, &cfg).unwrap();
        let fc = bandpass_zero_phase(&combo, &cfg).unwrap();
        let scale = fc.samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for i in 0..fc.samples.len() {
            let lhs = fc.samples[i];
            let rhs = 2.0 * fx.samples[i] - 3.0 * fy.samples[i];
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale.max(1.0),
                "nonlinearity at {i}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn invalid_band_rejected() {
        let cfg = PreprocessConfig {
            band_low_hz: 20.0,
            band_high_hz: 600.0,
            ..Default::default()
        };
        let rec = tone("r", 60.0, 1000.0, 1000);
        assert!(matches!(
            bandpass_zero_phase(&rec, &cfg),
            Err(PreprocessError::BandOutOfRange { .. })
        ));
    }
}
