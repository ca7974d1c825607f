//! Multi-domain feature extraction (324 features per recording).

pub mod higher;
pub mod sequence;
pub mod spectral;
pub mod time;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least {need} complete beats, found {found}")]
    InsufficientBeats { need: usize, found: usize },
    #[error("degenerate energy: {0}")]
    DegenerateEnergy(String),
    #[error("no autocorrelation peak in the physiological lag range")]
    NoPeakInRange,
    #[error("recording too short: {duration_s:.2} s (need {need_s:.2} s)")]
    RecordingTooShort { duration_s: f64, need_s: f64 },
    #[error("too few beats for sequence interpolation: {found} (need {need})")]
    TooFewBeats { need: usize, found: usize },
    #[error("segment too short for spectral estimation: {0} samples")]
    SegmentTooShort(usize),
    #[error("degenerate signal (zero second moment)")]
    DegenerateSignal,
    #[error("recording shorter than one analysis subsequence")]
    TooShort,
}
