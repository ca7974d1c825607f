//! Spectra of the beat-to-beat heart-rate, systole and diastole duration
//! sequences.
//!
//! The sequences are non-uniformly sampled (one point per beat, anchored at
//! the S1 onset), so they are first interpolated by a not-a-knot cubic
//! spline onto a uniform 2 Hz grid — Nyquist exactly at the 1 Hz top of the
//! feature grid — then mean-removed, Hann-windowed and evaluated on the
//! 0.05..1.00 Hz grid (19 points) as magnitude spectrum and periodogram PSD.

use super::spectral::{SegmentSpectrum, Window};
use super::FeatureError;
use crate::segmentation::BeatTable;

/// Uniform resampling rate for beat sequences.
pub const SEQUENCE_RATE_HZ: f64 = 2.0;

/// Grid frequencies 0.05..=1.00 step 0.05 (19 points).
pub fn sequence_grid_hz() -> Vec<f64> {
    (1..=19).map(|k| 0.05 * k as f64).collect()
}

/// A beat-anchored duration series: `times` are S1-onset timestamps in
/// seconds, `values` the associated durations in seconds.
#[derive(Debug, Clone)]
pub struct BeatSequence {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BeatSequence {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.windows(2).all(|w| w[1] > w[0]), "times must increase");
        Self { times, values }
    }
}

/// Not-a-knot cubic spline through (xs, ys); exact on cubic polynomials.
/// Returns the per-knot second derivatives.
fn spline_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 4, "not-a-knot spline needs at least 4 points");
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let rhs = |i: usize| {
        6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1])
    };

    // Interior unknowns m[1..=n-2]; m[0] and m[n-1] are eliminated with the
    // not-a-knot conditions
    //   h1*m0 - (h0+h1)*m1 + h0*m2 = 0
    //   h[n-2]*m[n-3] - (h[n-3]+h[n-2])*m[n-2] + h[n-3]*m[n-1] = 0.
    let k = n - 2; // unknown count
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut b = vec![0.0; k];
    for (row, i) in (1..=n - 2).enumerate() {
        sub[row] = h[i - 1];
        diag[row] = 2.0 * (h[i - 1] + h[i]);
        sup[row] = h[i];
        b[row] = rhs(i);
    }
    // fold m0 into row 0: m0 = ((h0+h1)m1 - h0*m2)/h1
    diag[0] += h[0] * (h[0] + h[1]) / h[1];
    sup[0] -= h[0] * h[0] / h[1];
    // fold m[n-1] into the last row:
    // m[n-1] = ((h[n-3]+h[n-2])m[n-2] - h[n-2]*m[n-3])/h[n-3]
    let hm2 = h[n - 2];
    let hm3 = h[n - 3];
    diag[k - 1] += hm2 * (hm3 + hm2) / hm3;
    sub[k - 1] -= hm2 * hm2 / hm3;

    // Thomas algorithm
    for row in 1..k {
        let w = sub[row] / diag[row - 1];
        diag[row] -= w * sup[row - 1];
        b[row] -= w * b[row - 1];
    }
    let mut m_in = vec![0.0; k];
    m_in[k - 1] = b[k - 1] / diag[k - 1];
    for row in (0..k - 1).rev() {
        m_in[row] = (b[row] - sup[row] * m_in[row + 1]) / diag[row];
    }

    let mut m = vec![0.0; n];
    m[1..=n - 2].copy_from_slice(&m_in);
    m[0] = ((h[0] + h[1]) * m[1] - h[0] * m[2]) / h[1];
    m[n - 1] = ((hm3 + hm2) * m[n - 2] - hm2 * m[n - 3]) / hm3;
    m
}

fn spline_eval(xs: &[f64], ys: &[f64], m: &[f64], t: f64) -> f64 {
    let n = xs.len();
    // locate the interval, clamping to the support
    let mut i = match xs.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(n - 2),
    };
    if i >= n - 1 {
        i = n - 2;
    }
    let h = xs[i + 1] - xs[i];
    let a = (xs[i + 1] - t) / h;
    let b = (t - xs[i]) / h;
    a * ys[i]
        + b * ys[i + 1]
        + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

/// Interpolate a beat sequence onto a uniform grid at `uniform_rate` spanning
/// `[times.first, times.last]`.
pub fn cubic_resample(seq: &BeatSequence, uniform_rate: f64) -> Result<Vec<f64>, FeatureError> {
    let n = seq.times.len();
    if n < 4 {
        return Err(FeatureError::TooFewBeats { need: 4, found: n });
    }
    let m = spline_second_derivatives(&seq.times, &seq.values);
    let t0 = seq.times[0];
    let t1 = seq.times[n - 1];
    let count = ((t1 - t0) * uniform_rate).floor() as usize + 1;
    Ok((0..count)
        .map(|k| spline_eval(&seq.times, &seq.values, &m, t0 + k as f64 / uniform_rate))
        .collect())
}

fn sequence_spectrum_pair(seq: &BeatSequence) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    let uniform = cubic_resample(seq, SEQUENCE_RATE_HZ)?;
    let mean = uniform.iter().sum::<f64>() / uniform.len() as f64;
    let centered: Vec<f64> = uniform.iter().map(|v| v - mean).collect();
    let sp = SegmentSpectrum::compute_with_min_len(&centered, SEQUENCE_RATE_HZ, Window::Hann, 256, 4)?;
    let grid = sequence_grid_hz();
    Ok((
        grid.iter().map(|&f| sp.magnitude_at(f)).collect(),
        grid.iter().map(|&f| sp.psd_at(f)).collect(),
    ))
}

/// Magnitude spectrum of one beat sequence on the 19-point grid.
pub fn sequence_spectrum(seq: &BeatSequence) -> Result<Vec<f64>, FeatureError> {
    sequence_spectrum_pair(seq).map(|(mag, _)| mag)
}

/// Build the RR, systole and diastole beat sequences from a beat table.
/// The RR sequence has one fewer point (intervals between onsets).
pub fn beat_sequences(beats: &BeatTable, rate: f64) -> [BeatSequence; 3] {
    let onsets: Vec<f64> = beats.beats.iter().map(|b| b.s1_start as f64 / rate).collect();
    let rr = beats.rr_intervals_s(rate);
    let sys: Vec<f64> = beats
        .beats
        .iter()
        .map(|b| (b.sys_end - b.s1_end) as f64 / rate)
        .collect();
    let dia: Vec<f64> = beats
        .beats
        .iter()
        .map(|b| (b.dia_end - b.s2_end) as f64 / rate)
        .collect();
    let n = onsets.len();
    [
        BeatSequence::new(onsets[..n - 1].to_vec(), rr),
        BeatSequence::new(onsets.clone(), sys),
        BeatSequence::new(onsets, dia),
    ]
}

/// The 114 sequence features: 19 spectrum values for each of the HR, Sys and
/// Dia sequences (57), then the 19 PSD values for each (57). Sequences with
/// fewer than 4 points yield NaN blocks for later imputation; fewer than 4
/// beats overall is an error.
pub fn sequence_features(beats: &BeatTable, rate: f64) -> Result<[f64; 114], FeatureError> {
    let n = beats.beats.len();
    if n < 4 {
        return Err(FeatureError::TooFewBeats { need: 4, found: n });
    }
    let sequences = beat_sequences(beats, rate);
    let mut spectra = Vec::with_capacity(57);
    let mut psds = Vec::with_capacity(57);
    for seq in &sequences {
        match sequence_spectrum_pair(seq) {
            Ok((mag, psd)) => {
                spectra.extend(mag);
                psds.extend(psd);
            }
            Err(FeatureError::TooFewBeats { .. }) | Err(FeatureError::SegmentTooShort(_)) => {
                spectra.extend(std::iter::repeat(f64::NAN).take(19));
                psds.extend(std::iter::repeat(f64::NAN).take(19));
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = [0.0; 114];
    out[..57].copy_from_slice(&spectra);
    out[57..].copy_from_slice(&psds);
    Ok(out)
}
