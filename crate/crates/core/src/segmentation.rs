//! Four-state segmentation: S1 -> systole -> S2 -> diastole.
//!
//! The decoder is a duration-constrained Viterbi over a Hilbert-envelope
//! observation sequence decimated to a coarse frame rate, with per-state
//! Gaussian emissions fit unsupervised on the recording itself (a two-means
//! split of the envelope into "sound" and "silence"). State boundaries are
//! then refined at the full sample rate. Externally produced annotations can
//! be ingested instead; both paths feed identical downstream feature code.

use crate::dataset_io::{HeartState, PcgRecording, StateAnnotation, STATE_CYCLE};
use crate::dsp;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("recording too short: {duration_s:.3} s (need at least {need_s:.3} s)")]
    TooShort { duration_s: f64, need_s: f64 },
    #[error("no feasible state path under the duration bounds")]
    NoFeasiblePath,
    #[error("annotation index {index} out of range (recording has {n_samples} samples)")]
    IndexOutOfRange { index: usize, n_samples: usize },
    #[error("no complete S1->Sys->S2->Dia cycle in the sequence")]
    NoCompleteBeat,
    #[error("state grammar violated at sample {0}")]
    GrammarViolation(usize),
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

/// Per-sample state labels for one recording.
#[derive(Debug, Clone)]
pub struct StateSequence {
    pub record_id: String,
    pub labels: Vec<HeartState>,
    pub sample_rate_hz: f64,
}

/// One contiguous run of a single state: samples `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateRun {
    pub start: usize,
    pub end: usize,
    pub state: HeartState,
}

impl StateSequence {
    /// Run-length encoding of the labels.
    pub fn runs(&self) -> Vec<StateRun> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.labels.len() {
            if i == self.labels.len() || self.labels[i] != self.labels[start] {
                out.push(StateRun {
                    start,
                    end: i,
                    state: self.labels[start],
                });
                start = i;
            }
        }
        out
    }

    /// Check that consecutive runs follow the cyclic grammar.
    pub fn validate_grammar(&self) -> Result<(), SegmentationError> {
        for w in self.runs().windows(2) {
            if w[1].state != w[0].state.next() {
                return Err(SegmentationError::GrammarViolation(w[1].start));
            }
        }
        Ok(())
    }

    /// Boundary events (run starts), the inverse of [`from_annotation`].
    pub fn to_annotation(&self) -> StateAnnotation {
        StateAnnotation {
            record_id: self.record_id.clone(),
            events: self.runs().iter().map(|r| (r.start, r.state)).collect(),
        }
    }
}

/// One complete cardiac cycle; all indices are sample positions, ends
/// exclusive. `s1_end` doubles as the systole start, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Beat {
    pub s1_start: usize,
    pub s1_end: usize,
    pub sys_end: usize,
    pub s2_end: usize,
    pub dia_end: usize,
}

#[derive(Debug, Clone)]
pub struct BeatTable {
    pub beats: Vec<Beat>,
}

impl BeatTable {
    /// RR intervals in seconds between consecutive S1 onsets; one fewer entry
    /// than there are beats.
    pub fn rr_intervals_s(&self, rate: f64) -> Vec<f64> {
        self.beats
            .windows(2)
            .map(|w| (w[1].s1_start - w[0].s1_start) as f64 / rate)
            .collect()
    }
}

/// Per-state duration bounds in seconds.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DurationBounds {
    pub min_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SegmentationConfig {
    pub envelope_lowpass_hz: f64,
    /// Frame rate of the Viterbi lattice.
    pub viterbi_rate_hz: f64,
    pub s1_bounds: DurationBounds,
    pub sys_bounds: DurationBounds,
    pub s2_bounds: DurationBounds,
    pub dia_bounds: DurationBounds,
    pub expected_hr_range_bpm: (f64, f64),
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            envelope_lowpass_hz: 20.0,
            viterbi_rate_hz: 50.0,
            s1_bounds: DurationBounds { min_s: 0.05, max_s: 0.25 },
            sys_bounds: DurationBounds { min_s: 0.10, max_s: 0.50 },
            s2_bounds: DurationBounds { min_s: 0.04, max_s: 0.20 },
            dia_bounds: DurationBounds { min_s: 0.15, max_s: 1.50 },
            expected_hr_range_bpm: (30.0, 180.0),
        }
    }
}

impl SegmentationConfig {
    pub fn bounds(&self, state: HeartState) -> DurationBounds {
        match state {
            HeartState::S1 => self.s1_bounds,
            HeartState::Sys => self.sys_bounds,
            HeartState::S2 => self.s2_bounds,
            HeartState::Dia => self.dia_bounds,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        for s in STATE_CYCLE {
            let b = self.bounds(s);
            if !(b.min_s > 0.0 && b.min_s < b.max_s) {
                return Err(SegmentationError::InvalidConfig(format!(
                    "bad duration bounds for {s}"
                )));
            }
        }
        if !(self.viterbi_rate_hz > 0.0 && self.envelope_lowpass_hz > 0.0) {
            return Err(SegmentationError::InvalidConfig("rates must be positive".into()));
        }
        let (lo, hi) = self.expected_hr_range_bpm;
        if !(0.0 < lo && lo < hi) {
            return Err(SegmentationError::InvalidConfig("bad HR range".into()));
        }
        Ok(())
    }
}

/// Low-passed Hilbert envelope of a recording, clamped nonnegative. This is
/// the observation signal for the Viterbi decoder and the heart-rate
/// estimator.
pub fn compute_envelope(rec: &PcgRecording) -> Vec<f64> {
    compute_envelope_with_cutoff(rec, 20.0)
}

pub fn compute_envelope_with_cutoff(rec: &PcgRecording, cutoff_hz: f64) -> Vec<f64> {
    let env = dsp::hilbert_envelope(&rec.samples);
    let fs = rec.sample_rate_hz;
    if cutoff_hz >= fs / 2.0 {
        return env;
    }
    let sections = dsp::design_lowpass(cutoff_hz, fs, 2);
    let pad = (0.5 * fs) as usize;
    dsp::filtfilt(&sections, &env, pad)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

/// Expand boundary events to per-sample labels. Samples before the first
/// event take the cyclic predecessor of the first event's state, so the
/// grammar holds and the leading partial cycle is dropped by [`to_beats`].
pub fn from_annotation(
    ann: &StateAnnotation,
    n_samples: usize,
    rate: f64,
) -> Result<StateSequence, SegmentationError> {
    if let Some(&(idx, _)) = ann.events.iter().find(|(i, _)| *i >= n_samples) {
        return Err(SegmentationError::IndexOutOfRange { index: idx, n_samples });
    }
    let mut labels = Vec::with_capacity(n_samples);
    let first_state = ann.events.first().map(|e| e.1).unwrap_or(HeartState::Dia);
    let mut current = first_state.prev();
    let mut next_event = 0;
    for i in 0..n_samples {
        while next_event < ann.events.len() && ann.events[next_event].0 == i {
            current = ann.events[next_event].1;
            next_event += 1;
        }
        labels.push(current);
    }
    Ok(StateSequence {
        record_id: ann.record_id.clone(),
        labels,
        sample_rate_hz: rate,
    })
}

/// Collect complete S1->Sys->S2->Dia cycles. Leading and trailing partial
/// cycles are dropped; the final beat's diastole may be truncated by the end
/// of the recording (its RR interval is then simply unavailable).
pub fn to_beats(seq: &StateSequence) -> Result<BeatTable, SegmentationError> {
    let runs = seq.runs();
    let mut beats = Vec::new();
    let mut i = 0;
    while i + 3 < runs.len() {
        if runs[i].state == HeartState::S1
            && runs[i + 1].state == HeartState::Sys
            && runs[i + 2].state == HeartState::S2
            && runs[i + 3].state == HeartState::Dia
        {
            beats.push(Beat {
                s1_start: runs[i].start,
                s1_end: runs[i + 1].start,
                sys_end: runs[i + 2].start,
                s2_end: runs[i + 3].start,
                dia_end: runs[i + 3].end,
            });
            i += 4;
        } else {
            i += 1;
        }
    }
    if beats.is_empty() {
        return Err(SegmentationError::NoCompleteBeat);
    }
    Ok(BeatTable { beats })
}

// ---------------------------------------------------------------------------
// Viterbi decoding
// ---------------------------------------------------------------------------

struct Gaussian1 {
    mean: f64,
    inv_two_var: f64,
    log_norm: f64,
}

impl Gaussian1 {
    fn new(mean: f64, sd: f64) -> Self {
        Self {
            mean,
            inv_two_var: 0.5 / (sd * sd),
            log_norm: -sd.ln(),
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.log_norm - d * d * self.inv_two_var
    }
}

/// Two-means split of a scalar sequence; returns (low_items, high_items).
fn two_means_split(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut c_lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut c_hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..50 {
        let mid = 0.5 * (c_lo + c_hi);
        let (mut s_lo, mut n_lo, mut s_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v < mid {
                s_lo += v;
                n_lo += 1;
            } else {
                s_hi += v;
                n_hi += 1;
            }
        }
        if n_lo == 0 || n_hi == 0 {
            break;
        }
        let new_lo = s_lo / n_lo as f64;
        let new_hi = s_hi / n_hi as f64;
        if (new_lo - c_lo).abs() < 1e-12 && (new_hi - c_hi).abs() < 1e-12 {
            break;
        }
        c_lo = new_lo;
        c_hi = new_hi;
    }
    let mid = 0.5 * (c_lo + c_hi);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for &v in values {
        if v < mid {
            lo.push(v);
        } else {
            hi.push(v);
        }
    }
    (lo, hi)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Estimate the cardiac cycle length from the envelope autocorrelation;
/// falls back to the middle of the expected HR range.
fn estimate_period_s(env: &[f64], rate: f64, hr_range_bpm: (f64, f64)) -> f64 {
    let fallback = 0.5 * (60.0 / hr_range_bpm.0 + 60.0 / hr_range_bpm.1);
    let n = env.len();
    let lag_lo = (0.3 * rate).round() as usize;
    let lag_hi = ((2.0 * rate).round() as usize).min(n.saturating_sub(2));
    if lag_lo + 2 >= lag_hi {
        return fallback;
    }
    let mean = env.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let r = dsp::autocorrelation_unbiased(&centered, lag_hi + 1);
    let mut best: Option<(usize, f64)> = None;
    for lag in lag_lo..=lag_hi {
        if r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] > 0.0 {
            if best.map_or(true, |(_, v)| r[lag] > v) {
                best = Some((lag, r[lag]));
            }
        }
    }
    match best {
        Some((lag, v)) if v >= 0.15 * r[0] => lag as f64 / rate,
        _ => fallback,
    }
}

struct EmissionModel {
    value: [Gaussian1; 4],
    deriv: [Gaussian1; 4],
}

impl EmissionModel {
    fn log_pdf(&self, state: usize, value: f64, deriv: f64) -> f64 {
        self.value[state].log_pdf(value) + self.deriv[state].log_pdf(deriv)
    }
}

/// Fit the unsupervised sound/silence emission model on the normalized
/// envelope. S1 and S2 share the "sound" component, Sys and Dia the
/// "silence" component.
fn fit_emissions(env_norm: &[f64]) -> Option<EmissionModel> {
    let (silence, sound) = two_means_split(env_norm);
    if silence.len() < 2 || sound.len() < 2 {
        return None;
    }
    let (mu_sil, sd_sil) = mean_sd(&silence);
    let (mu_snd, sd_snd) = mean_sd(&sound);
    let sd_sil = sd_sil.max(0.02);
    let sd_snd = sd_snd.max(0.05);

    let mid = 0.5 * (mu_sil + mu_snd);
    let mut d_sil = Vec::new();
    let mut d_snd = Vec::new();
    for i in 1..env_norm.len() {
        let d = env_norm[i] - env_norm[i - 1];
        if env_norm[i] < mid {
            d_sil.push(d);
        } else {
            d_snd.push(d);
        }
    }
    let sdd_sil = mean_sd(&d_sil).1.max(0.01);
    let sdd_snd = mean_sd(&d_snd).1.max(0.02);

    let g = |mu: f64, sd: f64| Gaussian1::new(mu, sd);
    Some(EmissionModel {
        value: [
            g(mu_snd, sd_snd), // S1
            g(mu_sil, sd_sil), // Sys
            g(mu_snd, sd_snd), // S2
            g(mu_sil, sd_sil), // Dia
        ],
        deriv: [
            g(0.0, sdd_snd),
            g(0.0, sdd_sil),
            g(0.0, sdd_snd),
            g(0.0, sdd_sil),
        ],
    })
}

/// Duration log-prior per state, Gaussian around physiologically expected
/// durations conditioned on the estimated cycle length.
struct DurationModel {
    mean_s: [f64; 4],
    sd_s: [f64; 4],
}

impl DurationModel {
    fn from_period(period_s: f64, cfg: &SegmentationConfig) -> Self {
        let clamp = |v: f64, b: DurationBounds| v.clamp(b.min_s, b.max_s);
        let s1 = clamp(0.12, cfg.s1_bounds);
        let s2 = clamp(0.10, cfg.s2_bounds);
        let sys = clamp(0.20 * period_s, cfg.sys_bounds);
        let dia = clamp(period_s - s1 - s2 - sys, cfg.dia_bounds);
        let mean_s = [s1, sys, s2, dia];
        let sd_s = [
            (0.25 * s1).max(0.03),
            (0.30 * sys).max(0.05),
            (0.25 * s2).max(0.03),
            (0.35 * dia).max(0.08),
        ];
        Self { mean_s, sd_s }
    }

    fn log_prior(&self, state: usize, dur_s: f64) -> f64 {
        let z = (dur_s - self.mean_s[state]) / self.sd_s[state];
        -self.sd_s[state].ln() - 0.5 * z * z
    }
}

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Duration-constrained Viterbi over the four-state cycle. Returns state
/// runs in frame units.
fn viterbi_decode(
    obs_value: &[f64],
    obs_deriv: &[f64],
    frame_rate: f64,
    emissions: &EmissionModel,
    durations: &DurationModel,
    cfg: &SegmentationConfig,
) -> Option<Vec<(usize, usize, usize)>> {
    let t_len = obs_value.len();
    if t_len < 2 {
        return None;
    }
    let dmin: Vec<usize> = STATE_CYCLE
        .iter()
        .map(|&s| ((cfg.bounds(s).min_s * frame_rate).round() as usize).max(1))
        .collect();
    let dmax: Vec<usize> = STATE_CYCLE
        .iter()
        .map(|&s| ((cfg.bounds(s).max_s * frame_rate).round() as usize).max(1))
        .collect();

    // Cumulative per-state emission sums: cum[s][t+1] - cum[s][a] is the
    // segment score of frames [a, t].
    let mut cum = vec![vec![0.0f64; t_len + 1]; 4];
    for s in 0..4 {
        for t in 0..t_len {
            cum[s][t + 1] = cum[s][t] + emissions.log_pdf(s, obs_value[t], obs_deriv[t]);
        }
    }
    let seg_score = |s: usize, a: usize, t: usize| cum[s][t + 1] - cum[s][a];

    // delta[t][s]: best score of a path whose last segment is state s ending
    // exactly at frame t (complete, or truncated at the recording start).
    // back[t][s] = (duration, started_at_zero_truncated)
    let mut delta = vec![[NEG_INF; 4]; t_len];
    let mut back = vec![[(0usize, false); 4]; t_len];

    // State order with longer minimum duration first: deterministic
    // tie-breaking prefers the state that commits further ahead.
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| dmin[b].cmp(&dmin[a]).then(a.cmp(&b)));

    for t in 0..t_len {
        for &s in &order {
            let prev = STATE_CYCLE[s].prev().index();
            let mut best = NEG_INF;
            let mut best_bp = (0usize, false);
            // Truncated first segment: any duration, no duration prior.
            if t + 1 <= dmax[s] {
                let score = seg_score(s, 0, t);
                if score > best {
                    best = score;
                    best_bp = (t + 1, true);
                }
            }
            // Complete segment preceded by the previous state.
            let d_hi = dmax[s].min(t);
            for d in dmin[s]..=d_hi {
                let start = t + 1 - d;
                let p = delta[start - 1][prev];
                if p == NEG_INF {
                    continue;
                }
                let score =
                    p + seg_score(s, start, t) + durations.log_prior(s, d as f64 / frame_rate);
                if score > best {
                    best = score;
                    best_bp = (d, false);
                }
            }
            delta[t][s] = best;
            back[t][s] = best_bp;
        }
    }

    // Final segment may be truncated by the end of the recording: ending at
    // the last frame with any duration and no duration prior.
    let t_last = t_len - 1;
    let mut best_end = NEG_INF;
    let mut best_end_bp: Option<(usize, usize, bool)> = None; // (state, dur, truncated_start)
    for &s in &order {
        // complete last segment
        if delta[t_last][s] > best_end {
            best_end = delta[t_last][s];
            let (d, trunc) = back[t_last][s];
            best_end_bp = Some((s, d, trunc));
        }
        // truncated last segment
        let prev = STATE_CYCLE[s].prev().index();
        for d in 1..=dmax[s].min(t_len) {
            let start = t_len - d;
            let mut score = seg_score(s, start, t_last);
            let mut trunc = false;
            if start == 0 {
                trunc = true;
            } else {
                let p = delta[start - 1][prev];
                if p == NEG_INF {
                    continue;
                }
                score += p;
            }
            if score > best_end {
                best_end = score;
                best_end_bp = Some((s, d, trunc));
            }
        }
    }

    let (mut s, mut d, mut trunc) = best_end_bp?;
    if best_end == NEG_INF {
        return None;
    }
    let mut runs_rev: Vec<(usize, usize, usize)> = Vec::new();
    let mut end = t_len; // exclusive frame end of the current segment
    loop {
        let start = end - d;
        runs_rev.push((start, end, s));
        if trunc || start == 0 {
            break;
        }
        let t_prev = start - 1;
        s = STATE_CYCLE[s].prev().index();
        let bp = back[t_prev][s];
        d = bp.0;
        trunc = bp.1;
        end = start;
    }
    runs_rev.reverse();
    Some(runs_rev)
}

/// Segment a preprocessed recording into per-sample S1/Sys/S2/Dia labels.
pub fn segment(
    rec: &PcgRecording,
    cfg: &SegmentationConfig,
) -> Result<StateSequence, SegmentationError> {
    cfg.validate()?;
    let fs = rec.sample_rate_hz;
    let duration = rec.duration_s();
    let min_cycle_s = 60.0 / cfg.expected_hr_range_bpm.1;
    let need_s = 2.0 * min_cycle_s;
    if duration < need_s {
        return Err(SegmentationError::TooShort { duration_s: duration, need_s });
    }

    let env_full = compute_envelope_with_cutoff(rec, cfg.envelope_lowpass_hz);

    // Decimate to the Viterbi frame rate by averaging within frames.
    let fr = cfg.viterbi_rate_hz;
    let n = env_full.len();
    let frame_of = |k: usize| ((k as f64) * fs / fr).round() as usize;
    let t_len = ((n as f64) * fr / fs).floor() as usize;
    if t_len < 4 {
        return Err(SegmentationError::TooShort { duration_s: duration, need_s });
    }
    let mut env_c = Vec::with_capacity(t_len);
    for k in 0..t_len {
        let a = frame_of(k).min(n);
        let b = frame_of(k + 1).min(n).max(a + 1);
        env_c.push(env_full[a..b].iter().sum::<f64>() / (b - a) as f64);
    }

    // Robust normalization by the 95th percentile.
    let mut sorted = env_c.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = sorted[(0.95 * (sorted.len() - 1) as f64) as usize];
    if !(scale > 1e-12) {
        return Err(SegmentationError::NoFeasiblePath);
    }
    let env_norm: Vec<f64> = env_c.iter().map(|v| v / scale).collect();
    let deriv: Vec<f64> = std::iter::once(0.0)
        .chain(env_norm.windows(2).map(|w| w[1] - w[0]))
        .collect();

    let emissions = fit_emissions(&env_norm).ok_or(SegmentationError::NoFeasiblePath)?;
    let period = estimate_period_s(&env_norm, fr, cfg.expected_hr_range_bpm);
    let durations = DurationModel::from_period(period, cfg);

    let frame_runs = viterbi_decode(&env_norm, &deriv, fr, &emissions, &durations, cfg)
        .ok_or(SegmentationError::NoFeasiblePath)?;

    // Frame boundaries -> sample boundaries.
    let mut bounds: Vec<usize> = frame_runs.iter().map(|&(a, _, _)| frame_of(a)).collect();
    bounds.push(n);
    let states: Vec<usize> = frame_runs.iter().map(|&(_, _, s)| s).collect();

    // A lightly smoothed Hilbert magnitude keeps burst onsets sharp for the
    // sample-rate boundary refinement; the 20 Hz low-pass above smears them.
    let env_sharp = dsp::moving_average(
        &dsp::hilbert_envelope(&rec.samples),
        ((0.0025 * fs).round() as usize).max(1),
    );
    refine_boundaries(&env_sharp, &mut bounds, &states, fs, cfg);

    let mut labels = vec![HeartState::Dia; n];
    for (i, &s) in states.iter().enumerate() {
        for item in labels.iter_mut().take(bounds[i + 1].min(n)).skip(bounds[i]) {
            *item = STATE_CYCLE[s];
        }
    }
    let seq = StateSequence {
        record_id: rec.record_id.clone(),
        labels,
        sample_rate_hz: fs,
    };
    debug_assert!(seq.validate_grammar().is_ok());
    Ok(seq)
}

/// Shift each internal boundary at the full sample rate onto the burst
/// onset/offset: the crossing of the sharp envelope through a noise-floor
/// threshold. The search stays within one coarse frame of the Viterbi
/// boundary and never violates either neighbor's duration bounds. Boundaries
/// without a clean crossing (e.g. murmurs filling systole) keep their coarse
/// position.
fn refine_boundaries(
    env_sharp: &[f64],
    bounds: &mut [usize],
    states: &[usize],
    fs: f64,
    cfg: &SegmentationConfig,
) {
    let frame = (fs / cfg.viterbi_rate_hz).round() as usize;
    let n = env_sharp.len();

    // Noise floor from coarse-silence samples away from any boundary.
    let mut silence = Vec::new();
    for (i, &s) in states.iter().enumerate() {
        if STATE_CYCLE[s] == HeartState::Sys || STATE_CYCLE[s] == HeartState::Dia {
            let a = (bounds[i] + frame).min(n);
            let b = bounds[i + 1].saturating_sub(frame).min(n);
            if a < b {
                silence.extend_from_slice(&env_sharp[a..b]);
            }
        }
    }
    if silence.len() < 8 {
        return;
    }
    let (mu, sd) = mean_sd(&silence);
    let floor_thr = mu + 4.0 * sd.max(1e-6 * mu.max(1e-12));
    let debounce = ((0.004 * fs).round() as usize).max(2);

    for i in 1..states.len() {
        let (sa, sb) = (states[i - 1], states[i]);
        let b0 = bounds[i];
        let onset = matches!(STATE_CYCLE[sb], HeartState::S1 | HeartState::S2);

        let min_of = |s: usize| (cfg.bounds(STATE_CYCLE[s]).min_s * fs).round() as usize;
        let max_of = |s: usize| (cfg.bounds(STATE_CYCLE[s]).max_s * fs).round() as usize;
        // Runs at the sequence edges may legitimately be truncated.
        let (min_a, max_a) = if i == 1 { (1, usize::MAX) } else { (min_of(sa), max_of(sa)) };
        let (min_b, max_b) = if i == states.len() - 1 {
            (1, usize::MAX)
        } else {
            (min_of(sb), max_of(sb))
        };

        let reach = 2 * frame;
        let lo = (b0.saturating_sub(reach))
            .max(bounds[i - 1] + min_a)
            .max(bounds[i + 1].saturating_sub(max_b));
        let hi = (b0 + reach)
            .min(bounds[i + 1].saturating_sub(min_b))
            .min(bounds[i - 1].saturating_add(max_a))
            .min(n);
        if lo >= hi {
            continue;
        }

        // The analytic-signal envelope has slow tails outside a burst; a
        // threshold tied to the adjacent burst peak cuts through them where
        // the noise floor alone would not.
        let sound_run = if onset {
            (bounds[i], bounds[i + 1].min(n))
        } else {
            (bounds[i - 1], bounds[i].min(n))
        };
        let peak = env_sharp[sound_run.0..sound_run.1]
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let thr = floor_thr.max(0.06 * peak);

        let above = |j: usize| env_sharp[j] > thr;
        let mut split = None;
        if onset {
            // first sample where the envelope stays above the floor
            for j in lo..hi {
                if j + debounce <= n && (j..j + debounce).all(above) {
                    split = Some(j);
                    break;
                }
            }
        } else {
            // one past the last sample still above the floor
            for j in (lo..hi).rev() {
                if j + 1 >= debounce && (j + 1 - debounce..=j).all(above) {
                    split = Some(j + 1);
                    break;
                }
            }
        }
        if let Some(s) = split {
            bounds[i] = s.clamp(lo, hi);
        }
    }
}

/// Per-sample agreement between two label sequences of equal length.
pub fn state_accuracy(a: &[HeartState], b: &[HeartState]) -> f64 {
    assert_eq!(a.len(), b.len());
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn envelope_of_zero_signal_is_zero() {
        let rec = PcgRecording::new("z", vec![0.0; 2000], 1000.0);
        let env = compute_envelope(&rec);
        assert!(env.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn envelope_peak_at_burst_center() {
        let fs = 1000.0;
        let mut samples = vec![0.0; 4000];
        // Gaussian-windowed burst centered at sample 2000
        for i in 0..400 {
            let t = (i as f64 - 200.0) / 60.0;
            samples[1800 + i] =
                (-0.5 * t * t).exp() * (2.0 * std::f64::consts::PI * 60.0 * i as f64 / fs).sin();
        }
        let rec = PcgRecording::new("b", samples, fs);
        let env = compute_envelope(&rec);
        let peak = (0..env.len())
            .max_by(|&a, &b| env[a].partial_cmp(&env[b]).unwrap())
            .unwrap();
        assert!(
            (peak as f64 - 2000.0).abs() <= 10.0,
            "peak at {peak}, want 2000 +/- 10 (10 ms)"
        );
    }

    #[test]
    fn envelope_equal_bursts_equal_peaks() {
        let fs = 1000.0;
        let mut samples = vec![0.0; 4000];
        let w = crate::dsp::hann_window(100);
        for (offset, _) in [(1000usize, ()), (2800usize, ())] {
            for i in 0..100 {
                samples[offset + i] +=
                    w[i] * (2.0 * std::f64::consts::PI * 50.0 * i as f64 / fs).sin();
            }
        }
        let rec = PcgRecording::new("b", samples, fs);
        let env = compute_envelope(&rec);
        let p1 = env[800..1400].iter().cloned().fold(0.0f64, f64::max);
        let p2 = env[2600..3200].iter().cloned().fold(0.0f64, f64::max);
        assert!((p1 - p2).abs() / p1.max(p2) < 0.05, "peaks {p1} vs {p2}");
    }

    #[test]
    fn too_short_recording_rejected() {
        let rec = PcgRecording::new("s", vec![0.1; 500], 1000.0);
        assert!(matches!(
            segment(&rec, &SegmentationConfig::default()),
            Err(SegmentationError::TooShort { .. })
        ));
    }

    #[test]
    fn synthetic_accuracy_at_20db() {
        let synth = generate(
            "acc20",
            &SynthConfig {
                snr_db: Some(20.0),
                ..Default::default()
            },
        );
        let seq = segment(&synth.recording, &SegmentationConfig::default()).unwrap();
        let acc = state_accuracy(&seq.labels, &synth.truth.labels);
        assert!(acc >= 0.95, "accuracy {acc:.4} < 0.95");
    }

    #[test]
    fn synthetic_accuracy_at_40db() {
        let synth = generate(
            "acc40",
            &SynthConfig {
                snr_db: Some(40.0),
                ..Default::default()
            },
        );
        let seq = segment(&synth.recording, &SegmentationConfig::default()).unwrap();
        let acc = state_accuracy(&seq.labels, &synth.truth.labels);
        assert!(acc >= 0.99, "accuracy {acc:.4} < 0.99");
    }

    #[test]
    fn segment_is_deterministic() {
        let synth = generate(
            "det",
            &SynthConfig {
                snr_db: Some(20.0),
                ..Default::default()
            },
        );
        let cfg = SegmentationConfig::default();
        let a = segment(&synth.recording, &cfg).unwrap();
        let b = segment(&synth.recording, &cfg).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn decoded_sequence_obeys_grammar_and_bounds() {
        let synth = generate(
            "gram",
            &SynthConfig {
                snr_db: Some(15.0),
                n_beats: 12,
                ..Default::default()
            },
        );
        let cfg = SegmentationConfig::default();
        let seq = segment(&synth.recording, &cfg).unwrap();
        seq.validate_grammar().unwrap();
        let runs = seq.runs();
        let fs = seq.sample_rate_hz;
        for (i, r) in runs.iter().enumerate() {
            if i == 0 || i == runs.len() - 1 {
                continue; // edge runs may be truncated
            }
            let b = cfg.bounds(r.state);
            let dur = (r.end - r.start) as f64 / fs;
            // quantization slack of one coarse frame
            let slack = 1.0 / cfg.viterbi_rate_hz;
            assert!(
                dur >= b.min_s - slack && dur <= b.max_s + slack,
                "run {i} ({}) duration {dur:.3}s outside [{}, {}]",
                r.state,
                b.min_s,
                b.max_s
            );
        }
    }

    #[test]
    fn from_annotation_expands_events() {
        let ann = StateAnnotation {
            record_id: "x".into(),
            events: vec![
                (0, HeartState::S1),
                (100, HeartState::Sys),
                (300, HeartState::S2),
                (400, HeartState::Dia),
            ],
        };
        let seq = from_annotation(&ann, 800, 1000.0).unwrap();
        assert!(seq.labels[..100].iter().all(|&s| s == HeartState::S1));
        assert!(seq.labels[100..300].iter().all(|&s| s == HeartState::Sys));
        assert!(seq.labels[300..400].iter().all(|&s| s == HeartState::S2));
        assert!(seq.labels[400..].iter().all(|&s| s == HeartState::Dia));
    }

    #[test]
    fn from_annotation_rejects_out_of_range() {
        let ann = StateAnnotation {
            record_id: "x".into(),
            events: vec![(900, HeartState::S1)],
        };
        assert!(matches!(
            from_annotation(&ann, 800, 1000.0),
            Err(SegmentationError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn annotation_round_trip() {
        let ann = StateAnnotation {
            record_id: "x".into(),
            events: vec![
                (0, HeartState::S1),
                (100, HeartState::Sys),
                (300, HeartState::S2),
                (400, HeartState::Dia),
                (700, HeartState::S1),
            ],
        };
        let seq = from_annotation(&ann, 800, 1000.0).unwrap();
        let back = seq.to_annotation();
        assert_eq!(back.events, ann.events);
    }

    #[test]
    fn to_beats_counts_complete_cycles() {
        // 3 complete cycles + trailing partial S1
        let mut events = Vec::new();
        for b in 0..3usize {
            let t = b * 800;
            events.push((t, HeartState::S1));
            events.push((t + 100, HeartState::Sys));
            events.push((t + 300, HeartState::S2));
            events.push((t + 380, HeartState::Dia));
        }
        events.push((2400, HeartState::S1));
        let ann = StateAnnotation { record_id: "x".into(), events };
        let seq = from_annotation(&ann, 2500, 1000.0).unwrap();
        let beats = to_beats(&seq).unwrap();
        assert_eq!(beats.beats.len(), 3);
        assert_eq!(beats.rr_intervals_s(1000.0), vec![0.8, 0.8]);
    }

    #[test]
    fn to_beats_drops_leading_partial_cycle() {
        // starts mid-diastole
        let events = vec![
            (0, HeartState::Dia),
            (200, HeartState::S1),
            (300, HeartState::Sys),
            (500, HeartState::S2),
            (580, HeartState::Dia),
        ];
        let ann = StateAnnotation { record_id: "x".into(), events };
        let seq = from_annotation(&ann, 1000, 1000.0).unwrap();
        let beats = to_beats(&seq).unwrap();
        assert_eq!(beats.beats.len(), 1);
        assert_eq!(beats.beats[0].s1_start, 200);
        assert_eq!(beats.beats[0].dia_end, 1000);
    }

    #[test]
    fn single_cycle_without_closing_s1_has_no_rr() {
        let events = vec![
            (0, HeartState::S1),
            (100, HeartState::Sys),
            (300, HeartState::S2),
            (380, HeartState::Dia),
        ];
        let ann = StateAnnotation { record_id: "x".into(), events };
        let seq = from_annotation(&ann, 800, 1000.0).unwrap();
        let beats = to_beats(&seq).unwrap();
        assert_eq!(beats.beats.len(), 1);
        assert!(beats.rr_intervals_s(1000.0).is_empty());
    }

    #[test]
    fn no_complete_beat_is_an_error() {
        let events = vec![(0, HeartState::S1), (100, HeartState::Sys)];
        let ann = StateAnnotation { record_id: "x".into(), events };
        let seq = from_annotation(&ann, 300, 1000.0).unwrap();
        assert!(matches!(to_beats(&seq), Err(SegmentationError::NoCompleteBeat)));
    }
}
