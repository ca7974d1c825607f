//! Raw-moment kurtosis and cyclostationarity features.
//!
//! Kurtosis uses non-central moments, K = E[x^4]/(E[x^2])^2, so a constant
//! reads 1, a sine 1.5 and Gaussian noise 3. The cycle-frequency spectral
//! density gamma(alpha) is estimated as the magnitude DFT of the
//! mean-removed squared Hilbert envelope; the degree of cyclostationarity is
//! gamma at the basic cycle frequency (first prominent peak) normalized by
//! the integral of gamma up to the maximum considered cycle frequency, and
//! peak sharpness is max(gamma)/median(gamma).

use super::FeatureError;
use crate::dataset_io::PcgRecording;
use crate::dsp;
use crate::segmentation::{compute_envelope_with_cutoff, BeatTable};

/// Raw (non-central) moment kurtosis. The signal is pre-scaled by its peak
/// magnitude, which cancels in the ratio but keeps the moments in range and
/// makes the constant-signal case exact.
pub fn kurtosis(x: &[f64]) -> Result<f64, FeatureError> {
    assert!(!x.is_empty(), "kurtosis of an empty signal");
    let peak = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak == 0.0 {
        return Err(FeatureError::DegenerateSignal);
    }
    let n = x.len() as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &v in x {
        let y = v / peak;
        let y2 = y * y;
        m2 += y2;
        m4 += y2 * y2;
    }
    m2 /= n;
    m4 /= n;
    if m2 * peak * peak * (m2 * peak * peak) <= 1e-48 {
        return Err(FeatureError::DegenerateSignal);
    }
    Ok(m4 / (m2 * m2))
}

/// The 8 kurtosis features: per-beat kurtosis of the S1, S2, Sys and Dia
/// segments, mean and SD across beats. Degenerate (all-zero) segments are
/// excluded per state.
pub fn kurtosis_features(
    beats: &BeatTable,
    rec: &PcgRecording,
) -> Result<[f64; 8], FeatureError> {
    if beats.beats.is_empty() {
        return Err(FeatureError::InsufficientBeats { need: 1, found: 0 });
    }
    let x = &rec.samples;
    type Bounds = fn(&crate::segmentation::Beat) -> (usize, usize);
    let segs: [Bounds; 4] = [
        |b| (b.s1_start, b.s1_end),
        |b| (b.sys_end, b.s2_end),
        |b| (b.s1_end, b.sys_end),
        |b| (b.s2_end, b.dia_end),
    ];
    let mut out = [0.0f64; 8];
    for (si, bounds) in segs.iter().enumerate() {
        let mut ks = Vec::with_capacity(beats.beats.len());
        for beat in &beats.beats {
            let (a, b) = bounds(beat);
            if a >= b {
                continue;
            }
            if let Ok(k) = kurtosis(&x[a..b]) {
                ks.push(k);
            }
        }
        out[2 * si] = super::time::mean(&ks);
        out[2 * si + 1] = super::time::sample_sd(&ks);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CycloConfig {
    /// Length of the equal, non-overlapping analysis subsequences.
    pub subsequence_len_s: f64,
    /// Maximum cycle frequency considered (integration and peak range cap).
    pub max_cycle_freq_hz: f64,
    pub envelope_cutoff_hz: f64,
}

impl Default for CycloConfig {
    fn default() -> Self {
        Self {
            subsequence_len_s: 5.0,
            max_cycle_freq_hz: 3.0,
            envelope_cutoff_hz: 20.0,
        }
    }
}

impl CycloConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        // subsequences must hold at least two cycles of the slowest
        // physiological heart rate (0.5 Hz) and beta must sit above the
        // fastest (3 Hz)
        if self.subsequence_len_s < 4.0 || self.max_cycle_freq_hz < 3.0 {
            return Err(FeatureError::TooShort);
        }
        Ok(())
    }
}

/// Cycle-frequency spectral density on the discrete grid
/// `alpha_k = k * d_alpha`, k = 1.., up to `beta`; the DC bin is excluded.
/// Returns (d_alpha, gamma values).
pub fn cycle_freq_spectral_density(
    x: &[f64],
    rate: f64,
    beta: f64,
    envelope_cutoff_hz: f64,
) -> (f64, Vec<f64>) {
    let rec = PcgRecording::new("tmp", x.to_vec(), rate);
    let env = compute_envelope_with_cutoff(&rec, envelope_cutoff_hz);
    let sq: Vec<f64> = env.iter().map(|v| v * v).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let w = dsp::hann_window(sq.len());
    let centered: Vec<f64> = sq.iter().zip(&w).map(|(v, wi)| (v - mean) * wi).collect();
    let sum_w: f64 = w.iter().sum();

    let n_fft = dsp::next_pow2(4 * centered.len());
    let spec = dsp::fft_real(&centered, n_fft);
    let d_alpha = rate / n_fft as f64;
    let k_max = ((beta / d_alpha).floor() as usize).min(n_fft / 2);
    let gamma: Vec<f64> = (1..=k_max).map(|k| spec[k].norm() * 2.0 / sum_w).collect();
    (d_alpha, gamma)
}

/// Basic cycle frequency: first local maximum of gamma exceeding 3x its
/// median within the physiological 0.5-3 Hz band; falls back to the band
/// argmax when nothing is prominent (noise-like signals).
fn basic_cycle_index(gamma: &[f64], d_alpha: f64, beta: f64) -> Option<usize> {
    if gamma.is_empty() {
        return None;
    }
    let mut sorted = gamma.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_of_sorted(&sorted);
    let lo = ((0.5 / d_alpha).ceil() as usize).max(1);
    let hi = ((3.0f64.min(beta) / d_alpha).floor() as usize).min(gamma.len());
    if lo >= hi {
        return None;
    }
    // gamma[k-1] corresponds to alpha = k * d_alpha
    for k in lo..hi {
        let i = k - 1;
        let left = if i == 0 { f64::NEG_INFINITY } else { gamma[i - 1] };
        let right = if i + 1 < gamma.len() { gamma[i + 1] } else { f64::NEG_INFINITY };
        if gamma[i] > left && gamma[i] >= right && gamma[i] > 3.0 * median {
            return Some(i);
        }
    }
    (lo..hi)
        .map(|k| k - 1)
        .max_by(|&a, &b| gamma[a].partial_cmp(&gamma[b]).unwrap())
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Degree of cyclostationarity and peak sharpness for one subsequence.
pub fn cyclo_pair(x: &[f64], rate: f64, cfg: &CycloConfig) -> Option<(f64, f64)> {
    let (d_alpha, gamma) = cycle_freq_spectral_density(
        x,
        rate,
        cfg.max_cycle_freq_hz,
        cfg.envelope_cutoff_hz,
    );
    if gamma.len() < 4 {
        return None;
    }
    // trapezoidal integral over (0, beta] on the DC-free grid
    let mut integral = 0.5 * (gamma[0] + gamma[gamma.len() - 1]);
    for g in &gamma[1..gamma.len() - 1] {
        integral += g;
    }
    integral *= d_alpha;
    if !(integral > 0.0) {
        return None;
    }
    let mut sorted = gamma.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_of_sorted(&sorted);
    if !(median > 0.0) {
        return None;
    }
    let eta = basic_cycle_index(&gamma, d_alpha, cfg.max_cycle_freq_hz)?;
    let d = gamma[eta] / integral;
    let max = sorted[sorted.len() - 1];
    Some((d, max / median))
}

/// Output of [`cyclostationarity_features`]: the four feature values plus a
/// flag marking SDs that were pinned to 0 because only one subsequence fit.
#[derive(Debug, Clone, Copy)]
pub struct CycloFeatures {
    /// m_cyclostationarity_1, sd_cyclostationarity_1,
    /// m_cyclostationarity_2, sd_cyclostationarity_2
    pub values: [f64; 4],
    pub single_subsequence: bool,
}

/// Split the recording into equal non-overlapping subsequences (trailing
/// remainder discarded), compute the degree of cyclostationarity and peak
/// sharpness per subsequence, and summarize as mean and SD.
pub fn cyclostationarity_features(
    rec: &PcgRecording,
    cfg: &CycloConfig,
) -> Result<CycloFeatures, FeatureError> {
    cfg.validate()?;
    let rate = rec.sample_rate_hz;
    let sub_len = (cfg.subsequence_len_s * rate).round() as usize;
    let n_subs = rec.samples.len() / sub_len;
    if n_subs == 0 {
        return Err(FeatureError::TooShort);
    }
    let mut ds = Vec::with_capacity(n_subs);
    let mut sharps = Vec::with_capacity(n_subs);
    for k in 0..n_subs {
        let seg = &rec.samples[k * sub_len..(k + 1) * sub_len];
        if let Some((d, s)) = cyclo_pair(seg, rate, cfg) {
            ds.push(d);
            sharps.push(s);
        }
    }
    let single = ds.len() == 1;
    Ok(CycloFeatures {
        values: [
            super::time::mean(&ds),
            super::time::sample_sd(&ds),
            super::time::mean(&sharps),
            super::time::sample_sd(&sharps),
        ],
        single_subsequence: single,
    })
}
