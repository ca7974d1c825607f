//! Classification of phonocardiogram (PCG) recordings as normal or abnormal.
//!
//! The pipeline mirrors a classic heart-sound screening chain:
//!
//! 1. [`preprocess`] — resample to a 1 kHz working rate and band-pass
//!    20–120 Hz with a zero-phase (forward-backward) Butterworth filter.
//! 2. [`segmentation`] — label every sample as S1, systole, S2 or diastole,
//!    either with a duration-constrained four-state Viterbi decoder over the
//!    Hilbert envelope or by ingesting an external annotation.
//! 3. [`features`] — extract 324 features across interval, energy, spectral,
//!    beat-sequence, kurtosis and cyclostationarity domains.
//! 4. [`mlp`] — a 324-10-5-1 feed-forward network (logistic sigmoid, then
//!    linear layers) trained by Levenberg-Marquardt on ±1 targets.
//! 5. [`calibration`] — decision threshold from the cross point of the
//!    class-conditional output histograms, averaged over input fractions,
//!    plus sensitivity/specificity evaluation harnesses.
//!
//! [`synth`] generates ground-truth synthetic PCG recordings used throughout
//! the test suites, and [`pipeline`] wires the stages together for batch use.

pub mod assembly;
pub mod calibration;
pub mod dataset_io;
pub mod dsp;
pub mod features;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod segmentation;
pub mod synth;

pub use dataset_io::{HeartState, Label, PcgRecording, ReferenceLabel, StateAnnotation};
pub use segmentation::{BeatTable, SegmentationConfig, StateSequence};
