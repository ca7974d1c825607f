//! Per-segment frequency-spectrum and power-spectral-density features.
//!
//! Every state segment of every beat is Hann-windowed, zero-padded to at
//! least four times its length (with a floor that keeps the DFT bin spacing
//! well under the 10 Hz grid step), and evaluated on the fixed grids:
//! 10-120 Hz for S1/S2 and 10-290 Hz for systole/diastole. Grid values are
//! linearly interpolated between DFT bins and averaged across beats.

use super::FeatureError;
use crate::dataset_io::PcgRecording;
use crate::dsp;
use crate::segmentation::BeatTable;

/// Grid frequencies in Hz: 10..=120 step 10 for S1/S2.
pub fn s1_s2_grid_hz() -> Vec<f64> {
    (1..=12).map(|k| 10.0 * k as f64).collect()
}

/// Grid frequencies in Hz: 10..=290 step 10 for Sys/Dia.
pub fn sys_dia_grid_hz() -> Vec<f64> {
    (1..=29).map(|k| 10.0 * k as f64).collect()
}

/// Minimum samples a segment needs before its spectrum is estimated.
pub const MIN_SEGMENT_LEN: usize = 8;

pub(crate) enum Window {
    Hann,
    Rect,
}

/// Magnitude spectrum and one-sided periodogram of one windowed, zero-padded
/// segment. Magnitudes are scaled so an in-bin unit-amplitude sine reads
/// roughly 1; the periodogram is scaled so its integral over frequency equals
/// the windowed mean square (Parseval).
pub(crate) struct SegmentSpectrum {
    mags: Vec<f64>,
    psd: Vec<f64>,
    df: f64,
}

impl SegmentSpectrum {
    pub(crate) fn compute(
        seg: &[f64],
        rate: f64,
        window: Window,
        min_nfft: usize,
    ) -> Result<Self, FeatureError> {
        Self::compute_with_min_len(seg, rate, window, min_nfft, MIN_SEGMENT_LEN)
    }

    pub(crate) fn compute_with_min_len(
        seg: &[f64],
        rate: f64,
        window: Window,
        min_nfft: usize,
        min_len: usize,
    ) -> Result<Self, FeatureError> {
        let n = seg.len();
        if n < min_len {
            return Err(FeatureError::SegmentTooShort(n));
        }
        let w = match window {
            Window::Hann => dsp::hann_window(n),
            Window::Rect => vec![1.0; n],
        };
        let windowed: Vec<f64> = seg.iter().zip(&w).map(|(x, wi)| x * wi).collect();
        let sum_w: f64 = w.iter().sum();
        let sum_w2: f64 = w.iter().map(|wi| wi * wi).sum();

        let n_fft = dsp::next_pow2((4 * n).max(min_nfft));
        let spec = dsp::fft_real(&windowed, n_fft);
        let half = n_fft / 2;
        let mag_scale = 2.0 / sum_w;
        let psd_scale = 1.0 / (rate * sum_w2);
        let mut mags = Vec::with_capacity(half + 1);
        let mut psd = Vec::with_capacity(half + 1);
        for (k, c) in spec.iter().take(half + 1).enumerate() {
            let m = c.norm();
            let one_sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            mags.push(m * mag_scale);
            psd.push(m * m * psd_scale * one_sided);
        }
        Ok(Self {
            mags,
            psd,
            df: rate / n_fft as f64,
        })
    }

    pub(crate) fn magnitude_at(&self, f_hz: f64) -> f64 {
        dsp::lerp_uniform(&self.mags, 0.0, self.df, f_hz)
    }

    pub(crate) fn psd_at(&self, f_hz: f64) -> f64 {
        dsp::lerp_uniform(&self.psd, 0.0, self.df, f_hz)
    }

    /// Integral of the one-sided periodogram over all bins.
    pub(crate) fn psd_integral(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df
    }
}

fn min_nfft_for(rate: f64) -> usize {
    // bin spacing <= 2.5 Hz so linear interpolation on a 10 Hz grid is sound
    (rate / 2.5).ceil() as usize
}

/// Magnitude spectrum of one segment evaluated at the given grid frequencies.
pub fn segment_spectrum_at(
    seg: &[f64],
    rate: f64,
    grid_hz: &[f64],
) -> Result<Vec<f64>, FeatureError> {
    let sp = SegmentSpectrum::compute(seg, rate, Window::Hann, min_nfft_for(rate))?;
    Ok(grid_hz.iter().map(|&f| sp.magnitude_at(f)).collect())
}

/// One-sided periodogram PSD of one segment at the given grid frequencies.
pub fn segment_psd_at(seg: &[f64], rate: f64, grid_hz: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let sp = SegmentSpectrum::compute(seg, rate, Window::Hann, min_nfft_for(rate))?;
    Ok(grid_hz.iter().map(|&f| sp.psd_at(f)).collect())
}

/// Rectangular-window periodogram of a whole segment, plus its integral and
/// mean square, for scaling sanity checks.
pub fn periodogram_energy_check(seg: &[f64], rate: f64) -> Result<(f64, f64), FeatureError> {
    let sp = SegmentSpectrum::compute(seg, rate, Window::Rect, MIN_SEGMENT_LEN)?;
    let ms = seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64;
    Ok((sp.psd_integral(), ms))
}

enum Estimator {
    Magnitude,
    Psd,
}

fn per_state_features(
    beats: &BeatTable,
    rec: &PcgRecording,
    estimator: Estimator,
) -> Result<[f64; 82], FeatureError> {
    if beats.beats.is_empty() {
        return Err(FeatureError::InsufficientBeats { need: 1, found: 0 });
    }
    let rate = rec.sample_rate_hz;
    let x = &rec.samples;
    let short_grid = s1_s2_grid_hz();
    let long_grid = sys_dia_grid_hz();
    let min_nfft = min_nfft_for(rate);

    // (start, end) extractors per state, catalog order S1, S2, Sys, Dia
    type Bounds = fn(&crate::segmentation::Beat) -> (usize, usize);
    let segs: [(Bounds, &[f64]); 4] = [
        (|b| (b.s1_start, b.s1_end), &short_grid),
        (|b| (b.sys_end, b.s2_end), &short_grid),
        (|b| (b.s1_end, b.sys_end), &long_grid),
        (|b| (b.s2_end, b.dia_end), &long_grid),
    ];

    let mut out = Vec::with_capacity(82);
    for (bounds, grid) in segs {
        let mut acc = vec![0.0f64; grid.len()];
        let mut count = 0usize;
        for beat in &beats.beats {
            let (a, b) = bounds(beat);
            let seg = &x[a..b];
            let sp = match SegmentSpectrum::compute(seg, rate, Window::Hann, min_nfft) {
                Ok(sp) => sp,
                // too-short segments are excluded per state, not fatal
                Err(FeatureError::SegmentTooShort(_)) => continue,
                Err(e) => return Err(e),
            };
            for (slot, &f) in acc.iter_mut().zip(grid.iter()) {
                *slot += match estimator {
                    Estimator::Magnitude => sp.magnitude_at(f),
                    Estimator::Psd => sp.psd_at(f),
                };
            }
            count += 1;
        }
        if count == 0 {
            out.extend(std::iter::repeat(f64::NAN).take(grid.len()));
        } else {
            out.extend(acc.into_iter().map(|v| v / count as f64));
        }
    }
    Ok(out.try_into().expect("12+12+29+29 = 82"))
}

/// The 82 frequency-spectrum features: per-beat magnitude spectra of the S1,
/// S2, systole and diastole segments averaged across beats (12+12+29+29).
pub fn spectrum_features(
    beats: &BeatTable,
    rec: &PcgRecording,
) -> Result<[f64; 82], FeatureError> {
    per_state_features(beats, rec, Estimator::Magnitude)
}

/// The 82 power-spectral-density features on the same grids.
pub fn psd_features(beats: &BeatTable, rec: &PcgRecording) -> Result<[f64; 82], FeatureError> {
    per_state_features(beats, rec, Estimator::Psd)
}
