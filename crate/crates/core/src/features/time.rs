//! Interval, energy and autocorrelation heart-rate features.

use super::FeatureError;
use crate::dataset_io::{HeartState, PcgRecording};
use crate::dsp;
use crate::segmentation::{compute_envelope, to_beats, BeatTable, StateSequence};

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for a single value, NaN
/// for an empty series.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

fn mean_abs(samples: &[f64], a: usize, b: usize) -> f64 {
    if a >= b {
        return 0.0;
    }
    samples[a..b].iter().map(|v| v.abs()).sum::<f64>() / (b - a) as f64
}

/// The 22 interval features, in catalog order: means and SDs of the RR, S1,
/// S2, systole and diastole intervals, the per-beat Sys/RR, Dia/RR, Sys/Dia
/// duration ratios, the Sys/S1 and Dia/S2 mean-amplitude ratios, and the
/// S1/S2 duration ratio. Ratios against RR only exist for beats with a
/// following S1 onset, hence over the first n-1 beats.
pub fn interval_features(
    beats: &BeatTable,
    rec: &PcgRecording,
) -> Result<[f64; 22], FeatureError> {
    let n = beats.beats.len();
    if n < 2 {
        return Err(FeatureError::InsufficientBeats { need: 2, found: n });
    }
    let rate = rec.sample_rate_hz;
    let x = &rec.samples;

    let rr = beats.rr_intervals_s(rate);
    let dur = |a: usize, b: usize| (b - a) as f64 / rate;
    let s1: Vec<f64> = beats.beats.iter().map(|b| dur(b.s1_start, b.s1_end)).collect();
    let s2: Vec<f64> = beats.beats.iter().map(|b| dur(b.sys_end, b.s2_end)).collect();
    let sys: Vec<f64> = beats.beats.iter().map(|b| dur(b.s1_end, b.sys_end)).collect();
    let dia: Vec<f64> = beats.beats.iter().map(|b| dur(b.s2_end, b.dia_end)).collect();

    let ratio_sys_rr: Vec<f64> = sys.iter().zip(&rr).map(|(s, r)| s / r).collect();
    let ratio_dia_rr: Vec<f64> = dia.iter().zip(&rr).map(|(d, r)| d / r).collect();
    let ratio_sys_dia: Vec<f64> = sys.iter().zip(&dia).map(|(s, d)| s / d).collect();
    let ratio_s1_s2: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a / b).collect();

    // Amplitude ratios; beats whose denominator segment is silent are
    // excluded rather than poisoning the average.
    let mut amp_sys_s1 = Vec::with_capacity(n);
    let mut amp_dia_s2 = Vec::with_capacity(n);
    for b in &beats.beats {
        let a_s1 = mean_abs(x, b.s1_start, b.s1_end);
        let a_sys = mean_abs(x, b.s1_end, b.sys_end);
        if a_s1 > 1e-12 {
            amp_sys_s1.push(a_sys / a_s1);
        }
        let a_s2 = mean_abs(x, b.sys_end, b.s2_end);
        let a_dia = mean_abs(x, b.s2_end, b.dia_end);
        if a_s2 > 1e-12 {
            amp_dia_s2.push(a_dia / a_s2);
        }
    }

    Ok([
        mean(&rr),
        sample_sd(&rr),
        mean(&s1),
        sample_sd(&s1),
        mean(&s2),
        sample_sd(&s2),
        mean(&sys),
        sample_sd(&sys),
        mean(&dia),
        sample_sd(&dia),
        mean(&ratio_sys_rr),
        sample_sd(&ratio_sys_rr),
        mean(&ratio_dia_rr),
        sample_sd(&ratio_dia_rr),
        mean(&ratio_sys_dia),
        sample_sd(&ratio_sys_dia),
        mean(&amp_sys_s1),
        sample_sd(&amp_sys_s1),
        mean(&amp_dia_s2),
        sample_sd(&amp_dia_s2),
        mean(&ratio_s1_s2),
        sample_sd(&ratio_s1_s2),
    ])
}

/// The 10 energy features: heart-sound (S1 and S2) energy and absolute
/// magnitude against the whole recording and against the remaining (Sys and
/// Dia) samples, then the per-beat systole/cycle, diastole/cycle and
/// heart-sound/cycle energy ratios as mean and SD.
pub fn energy_features(
    seq: &StateSequence,
    rec: &PcgRecording,
) -> Result<[f64; 10], FeatureError> {
    assert_eq!(seq.labels.len(), rec.samples.len(), "labels must cover the recording");
    let x = &rec.samples;
    let n = x.len();

    let mut e_total = 0.0;
    let mut m_total = 0.0;
    let mut e_hs = 0.0;
    let mut m_hs = 0.0;
    let mut e_rem = 0.0;
    let mut m_rem = 0.0;
    for (v, &s) in x.iter().zip(&seq.labels) {
        let e = v * v;
        let m = v.abs();
        e_total += e;
        m_total += m;
        match s {
            HeartState::S1 | HeartState::S2 => {
                e_hs += e;
                m_hs += m;
            }
            HeartState::Sys | HeartState::Dia => {
                e_rem += e;
                m_rem += m;
            }
        }
    }
    let floor = 1e-12 * n as f64;
    if e_total < floor {
        return Err(FeatureError::DegenerateEnergy("total energy is zero".into()));
    }
    if e_rem < floor || m_rem < floor {
        return Err(FeatureError::DegenerateEnergy(
            "systole/diastole energy is zero".into(),
        ));
    }

    let energy = |a: usize, b: usize| x[a..b].iter().map(|v| v * v).sum::<f64>();
    let (mut r_sys, mut r_dia, mut r_hs) = (Vec::new(), Vec::new(), Vec::new());
    if let Ok(beats) = to_beats(seq) {
        for b in &beats.beats {
            let e_cycle = energy(b.s1_start, b.dia_end);
            if e_cycle < 1e-12 * (b.dia_end - b.s1_start) as f64 {
                continue;
            }
            r_sys.push(energy(b.s1_end, b.sys_end) / e_cycle);
            r_dia.push(energy(b.s2_end, b.dia_end) / e_cycle);
            r_hs.push((energy(b.s1_start, b.s1_end) + energy(b.sys_end, b.s2_end)) / e_cycle);
        }
    }

    Ok([
        e_hs / e_total,
        m_hs / m_total,
        e_hs / e_rem,
        m_hs / m_rem,
        mean(&r_sys),
        sample_sd(&r_sys),
        mean(&r_dia),
        sample_sd(&r_dia),
        mean(&r_hs),
        sample_sd(&r_hs),
    ])
}

/// Autocorrelation-based heart-rate estimate: the lag of the strongest
/// envelope-autocovariance peak within the physiological 0.3-2.0 s window,
/// per 10 s analysis window (50% overlap), summarized as mean and SD of the
/// cycle period in seconds. Deliberately independent of the beat table.
pub fn heart_rate_features(rec: &PcgRecording) -> Result<(f64, f64), FeatureError> {
    const MIN_DURATION_S: f64 = 5.0;
    const WINDOW_S: f64 = 10.0;
    const LAG_LO_S: f64 = 0.3;
    const LAG_HI_S: f64 = 2.0;
    // A peak must carry at least this fraction of the zero-lag
    // autocovariance to count as periodicity rather than noise.
    const MIN_PEAK_FRACTION: f64 = 0.15;

    let duration = rec.duration_s();
    if duration < MIN_DURATION_S {
        return Err(FeatureError::RecordingTooShort {
            duration_s: duration,
            need_s: MIN_DURATION_S,
        });
    }
    let rate = rec.sample_rate_hz;
    let env = compute_envelope(rec);
    let n = env.len();
    let win = ((WINDOW_S * rate) as usize).min(n);
    let hop = (win / 2).max(1);

    let mut periods = Vec::new();
    let mut start = 0;
    loop {
        if let Some(p) = window_period(
            &env[start..start + win],
            rate,
            LAG_LO_S,
            LAG_HI_S,
            MIN_PEAK_FRACTION,
        ) {
            periods.push(p);
        }
        if start + win >= n {
            break;
        }
        start = (start + hop).min(n - win);
    }
    if periods.is_empty() {
        return Err(FeatureError::NoPeakInRange);
    }
    Ok((mean(&periods), sample_sd(&periods)))
}

fn window_period(
    env: &[f64],
    rate: f64,
    lag_lo_s: f64,
    lag_hi_s: f64,
    min_peak_fraction: f64,
) -> Option<f64> {
    let n = env.len();
    let m = mean(env);
    let centered: Vec<f64> = env.iter().map(|v| v - m).collect();
    let lag_lo = (lag_lo_s * rate).round() as usize;
    let lag_hi = ((lag_hi_s * rate).round() as usize).min(n.saturating_sub(2));
    if lag_lo + 1 >= lag_hi {
        return None;
    }
    let r = dsp::autocorrelation_unbiased(&centered, lag_hi + 1);
    if !(r[0] > 0.0) {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for lag in lag_lo..=lag_hi {
        if r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] {
            if best.map_or(true, |(_, v)| r[lag] > v) {
                best = Some((lag, r[lag]));
            }
        }
    }
    best.and_then(|(lag, v)| (v >= min_peak_fraction * r[0]).then_some(lag as f64 / rate))
}
