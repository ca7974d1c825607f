//! Synthetic PCG generation with exact ground-truth state labels.
//!
//! Recordings are built beat by beat: Hann-windowed tone bursts for S1 and
//! S2, optional band-limited murmur noise during systole, white background
//! noise at a chosen SNR, and optional beat-to-beat RR modulation or drift.
//! The generator keeps the per-sample truth labels, which the segmentation
//! and feature tests use as their oracle.

use crate::dataset_io::{HeartState, PcgRecording};
use crate::dsp;
use crate::segmentation::StateSequence;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Beat-to-beat variation of the cycle length.
#[derive(Debug, Clone, Copy)]
pub enum RrPattern {
    /// Same RR for every beat.
    Constant,
    /// rr(t) = rr * (1 + depth * sin(2*pi*freq_hz*t)), t = beat onset time.
    Modulated { freq_hz: f64, depth: f64 },
    /// RR drifts linearly from `from_s` to `to_s` over the recording.
    Drift { from_s: f64, to_s: f64 },
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sample_rate_hz: f64,
    pub n_beats: usize,
    /// Nominal cycle length (S1 onset to next S1 onset), seconds.
    pub rr_s: f64,
    pub rr_pattern: RrPattern,
    pub s1_dur_s: f64,
    /// Gap between S1 end and S2 onset (the systolic interval), seconds.
    pub sys_dur_s: f64,
    pub s2_dur_s: f64,
    pub s1_freq_hz: f64,
    pub s2_freq_hz: f64,
    pub s1_amp: f64,
    pub s2_amp: f64,
    /// White-noise SNR in dB relative to the burst signal; `None` = clean.
    pub snr_db: Option<f64>,
    /// Murmur band noise (100-250 Hz) during systole, amplitude relative to
    /// the S1 burst amplitude; `None` = no murmur.
    pub murmur_rel_amp: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1000.0,
            n_beats: 10,
            rr_s: 0.8,
            rr_pattern: RrPattern::Constant,
            s1_dur_s: 0.10,
            sys_dur_s: 0.20,
            s2_dur_s: 0.08,
            s1_freq_hz: 50.0,
            s2_freq_hz: 70.0,
            s1_amp: 1.0,
            s2_amp: 0.8,
            snr_db: None,
            murmur_rel_amp: None,
            seed: 0,
        }
    }
}

/// A generated recording together with its exact state labels.
#[derive(Debug, Clone)]
pub struct SynthPcg {
    pub recording: PcgRecording,
    pub truth: StateSequence,
}

fn burst(out: &mut [f64], start: usize, dur: usize, freq: f64, amp: f64, fs: f64) {
    // Tapered-cosine envelope: compact support with crisp onset/offset, as a
    // mechanical valve sound presents after band-pass filtering.
    let w = dsp::tukey_window(dur, 0.3);
    for i in 0..dur {
        let idx = start + i;
        if idx < out.len() {
            out[idx] += amp * w[i] * (2.0 * PI * freq * i as f64 / fs).sin();
        }
    }
}

/// Generate a synthetic recording with ground-truth labels.
pub fn generate(record_id: &str, cfg: &SynthConfig) -> SynthPcg {
    let fs = cfg.sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Lay out beat boundaries in seconds first.
    let total_nominal = cfg.rr_s * cfg.n_beats as f64;
    let mut onsets = Vec::with_capacity(cfg.n_beats + 1);
    let mut t = 0.0;
    for b in 0..=cfg.n_beats {
        onsets.push(t);
        let rr = match cfg.rr_pattern {
            RrPattern::Constant => cfg.rr_s,
            RrPattern::Modulated { freq_hz, depth } => {
                cfg.rr_s * (1.0 + depth * (2.0 * PI * freq_hz * t).sin())
            }
            RrPattern::Drift { from_s, to_s } => {
                let frac = b as f64 / cfg.n_beats.max(1) as f64;
                from_s + (to_s - from_s) * frac
            }
        };
        t += rr;
    }
    let _ = total_nominal;

    let n = (onsets[cfg.n_beats] * fs).round() as usize;
    let mut signal = vec![0.0; n];
    let mut labels = vec![HeartState::Dia; n];

    let s1_n = (cfg.s1_dur_s * fs).round() as usize;
    let sys_n = (cfg.sys_dur_s * fs).round() as usize;
    let s2_n = (cfg.s2_dur_s * fs).round() as usize;

    let mut murmur_mask = vec![false; n];
    for b in 0..cfg.n_beats {
        let s1_start = (onsets[b] * fs).round() as usize;
        let beat_end = ((onsets[b + 1] * fs).round() as usize).min(n);
        let sys_start = s1_start + s1_n;
        let s2_start = sys_start + sys_n;
        let dia_start = s2_start + s2_n;

        burst(&mut signal, s1_start, s1_n, cfg.s1_freq_hz, cfg.s1_amp, fs);
        burst(&mut signal, s2_start, s2_n, cfg.s2_freq_hz, cfg.s2_amp, fs);

        for i in s1_start..beat_end.min(n) {
            labels[i] = if i < sys_start {
                HeartState::S1
            } else if i < s2_start {
                HeartState::Sys
            } else if i < dia_start {
                HeartState::S2
            } else {
                HeartState::Dia
            };
        }
        for i in sys_start..s2_start.min(n) {
            murmur_mask[i] = true;
        }
    }

    if let Some(rel) = cfg.murmur_rel_amp {
        // Band-limited noise gated to the systolic windows.
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sections = dsp::design_bandpass(100.0, 250.0, fs, 2);
        let band = dsp::filtfilt(&sections, &raw, fs as usize);
        let rms = (band.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let scale = if rms > 0.0 { rel * cfg.s1_amp / (3.0 * rms) } else { 0.0 };
        for i in 0..n {
            if murmur_mask[i] {
                signal[i] += scale * band[i];
            }
        }
    }

    if let Some(snr_db) = cfg.snr_db {
        let sig_power = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let noise_power = sig_power / 10f64.powf(snr_db / 10.0);
        let sigma = noise_power.sqrt();
        for v in signal.iter_mut() {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            *v += sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }

    let recording = PcgRecording::new(record_id, signal, fs);
    let truth = StateSequence {
        record_id: record_id.to_string(),
        labels,
        sample_rate_hz: fs,
    };
    SynthPcg { recording, truth }
}
