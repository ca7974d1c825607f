//! Recording, label and annotation I/O.
//!
//! File formats follow the PhysioNet/CinC 2016 layout: 16-bit PCM mono WAV
//! recordings, a header-less `record_id,label` reference CSV with labels in
//! {-1, +1}, and a `sample_index,state` annotation CSV for externally
//! produced segmentations.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("bad label {value} for record {record_id} (expected -1 or 1)")]
    BadLabel { record_id: String, value: String },
    #[error("duplicate record id {0}")]
    DuplicateRecordId(String),
    #[error("annotation sample index not strictly increasing at row {0}")]
    NonMonotonicIndex(usize),
    #[error("annotation breaks the S1->Sys->S2->Dia cycle at row {0}")]
    BrokenStateCycle(usize),
    #[error("malformed CSV row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A mono phonocardiogram recording.
#[derive(Debug, Clone)]
pub struct PcgRecording {
    pub record_id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl PcgRecording {
    pub fn new(record_id: impl Into<String>, samples: Vec<f64>, sample_rate_hz: f64) -> Self {
        assert!(!samples.is_empty(), "recording must contain samples");
        assert!(sample_rate_hz > 0.0, "sample rate must be positive");
        Self {
            record_id: record_id.into(),
            samples,
            sample_rate_hz,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Class label: normal recordings are -1, abnormal +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Normal => -1.0,
            Label::Abnormal => 1.0,
        }
    }

    pub fn from_target(v: i32) -> Option<Self> {
        match v {
            -1 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => write!(f, "normal"),
            Label::Abnormal => write!(f, "abnormal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceLabel {
    pub record_id: String,
    pub label: Label,
}

/// The four heart-cycle states in their cyclic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeartState {
    S1,
    Sys,
    S2,
    Dia,
}

pub const STATE_CYCLE: [HeartState; 4] = [
    HeartState::S1,
    HeartState::Sys,
    HeartState::S2,
    HeartState::Dia,
];

impl HeartState {
    pub fn next(self) -> HeartState {
        match self {
            HeartState::S1 => HeartState::Sys,
            HeartState::Sys => HeartState::S2,
            HeartState::S2 => HeartState::Dia,
            HeartState::Dia => HeartState::S1,
        }
    }

    pub fn prev(self) -> HeartState {
        match self {
            HeartState::S1 => HeartState::Dia,
            HeartState::Sys => HeartState::S1,
            HeartState::S2 => HeartState::Sys,
            HeartState::Dia => HeartState::S2,
        }
    }

    pub fn index(self) -> usize {
        match self {
            HeartState::S1 => 0,
            HeartState::Sys => 1,
            HeartState::S2 => 2,
            HeartState::Dia => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeartState::S1 => "S1",
            HeartState::Sys => "Sys",
            HeartState::S2 => "S2",
            HeartState::Dia => "Dia",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "S1" => Some(HeartState::S1),
            "Sys" => Some(HeartState::Sys),
            "S2" => Some(HeartState::S2),
            "Dia" => Some(HeartState::Dia),
            _ => None,
        }
    }
}

impl fmt::Display for HeartState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Externally produced state boundaries: each event marks the sample index
/// where a state begins.
#[derive(Debug, Clone)]
pub struct StateAnnotation {
    pub record_id: String,
    pub events: Vec<(usize, HeartState)>,
}

impl StateAnnotation {
    /// Validate monotone indices and the cyclic state grammar.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (row, win) in self.events.windows(2).enumerate() {
            if win[1].0 <= win[0].0 {
                return Err(DatasetError::NonMonotonicIndex(row + 1));
            }
            if win[1].1 != win[0].1.next() {
                return Err(DatasetError::BrokenStateCycle(row + 1));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Load a 16-bit PCM mono WAV file. Samples are scaled by 1/32768 into
/// [-1, 1); the record id is the file stem.
pub fn load_recording(path: impl AsRef<Path>) -> Result<PcgRecording, DatasetError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;

    let bad = |m: &str| DatasetError::MalformedWav(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }

    let mut fmt_chunk: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(bad("chunk exceeds file length"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                fmt_chunk = Some((
                    read_u16(&bytes, body_start),
                    read_u16(&bytes, body_start + 2),
                    read_u32(&bytes, body_start + 4),
                    read_u16(&bytes, body_start + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }

    let (tag, channels, rate, bits) = fmt_chunk.ok_or_else(|| bad("missing fmt chunk"))?;
    if tag != 1 {
        return Err(DatasetError::UnsupportedFormat(format!(
            "{}: non-PCM format tag {tag}",
            path.display()
        )));
    }
    if channels != 1 {
        return Err(DatasetError::UnsupportedFormat(format!(
            "{}: {channels} channels (mono required)",
            path.display()
        )));
    }
    if bits != 16 {
        return Err(DatasetError::UnsupportedFormat(format!(
            "{}: {bits}-bit samples (16-bit required)",
            path.display()
        )));
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad("odd data payload length"));
    }
    if data.is_empty() {
        return Err(bad("empty data chunk"));
    }

    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    let record_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PcgRecording::new(record_id, samples, rate as f64))
}

/// Write a recording as 16-bit PCM mono WAV. Samples are clamped to
/// [-1, 32767/32768] and rounded to the nearest integer code.
pub fn save_recording(rec: &PcgRecording, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = rec.samples.len();
    let data_size = (n * 2) as u32;
    let rate = rec.sample_rate_hz.round() as u32;

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_size).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&rate.to_le_bytes())?;
    w.write_all(&(rate * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits per sample
    w.write_all(b"data")?;
    w.write_all(&data_size.to_le_bytes())?;
    for &s in &rec.samples {
        let code = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&code.to_le_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reference labels
// ---------------------------------------------------------------------------

/// Load a header-less `record_id,label` CSV with labels in {-1, 1}.
pub fn load_reference(path: impl AsRef<Path>) -> Result<Vec<ReferenceLabel>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    let mut out: Vec<ReferenceLabel> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(DatasetError::MalformedRow {
                row,
                reason: "expected record_id,label".into(),
            });
        }
        let record_id = record[0].trim().to_string();
        let raw = record[1].trim();
        let label = raw
            .parse::<i32>()
            .ok()
            .and_then(Label::from_target)
            .ok_or_else(|| DatasetError::BadLabel {
                record_id: record_id.clone(),
                value: raw.to_string(),
            })?;
        if !seen.insert(record_id.clone()) {
            return Err(DatasetError::DuplicateRecordId(record_id));
        }
        out.push(ReferenceLabel { record_id, label });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// State annotations
// ---------------------------------------------------------------------------

/// Load a `sample_index,state` annotation CSV (with header). The record id
/// is the file stem.
pub fn load_annotation(path: impl AsRef<Path>) -> Result<StateAnnotation, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut events = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(DatasetError::MalformedRow {
                row,
                reason: "expected sample_index,state".into(),
            });
        }
        let idx: usize = record[0].trim().parse().map_err(|_| DatasetError::MalformedRow {
            row,
            reason: format!("bad sample index {:?}", &record[0]),
        })?;
        let state = HeartState::parse(record[1].trim()).ok_or_else(|| DatasetError::MalformedRow {
            row,
            reason: format!("unknown state {:?}", &record[1]),
        })?;
        events.push((idx, state));
    }
    let ann = StateAnnotation {
        record_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        events,
    };
    ann.validate()?;
    Ok(ann)
}

/// Write an annotation CSV (`sample_index,state` with header). `header_comment`
/// lines, when given, are emitted first as `# ...` lines.
pub fn save_annotation(
    ann: &StateAnnotation,
    path: impl AsRef<Path>,
    header_comment: Option<&str>,
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "sample_index,state")?;
    for &(idx, state) in &ann.events {
        writeln!(w, "{idx},{state}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f.flush().unwrap();
        f
    }

    fn wav_bytes(rate: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2).to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn full_scale_wav_loads_near_unity() {
        let payload: Vec<u8> = std::iter::repeat(32767i16.to_le_bytes())
            .take(2000)
            .flatten()
            .collect();
        let f = write_temp(&wav_bytes(2000, &payload));
        let rec = load_recording(f.path()).unwrap();
        assert_eq!(rec.samples.len(), 2000);
        assert_eq!(rec.sample_rate_hz, 2000.0);
        for &s in &rec.samples {
            assert!((s - 1.0).abs() < 1e-3, "sample {s}");
        }
    }

    #[test]
    fn zero_wav_loads_as_zeros() {
        let payload = vec![0u8; 2000];
        let f = write_temp(&wav_bytes(1000, &payload));
        let rec = load_recording(f.path()).unwrap();
        assert_eq!(rec.sample_rate_hz, 1000.0);
        assert!(rec.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn odd_payload_is_malformed() {
        let payload = vec![0u8; 999];
        let f = write_temp(&wav_bytes(1000, &payload));
        assert!(matches!(
            load_recording(f.path()),
            Err(DatasetError::MalformedWav(_))
        ));
    }

    #[test]
    fn stereo_wav_is_unsupported() {
        let mut b = wav_bytes(1000, &[0u8; 4]);
        b[22] = 2; // channel count
        let f = write_temp(&b);
        assert!(matches!(
            load_recording(f.path()),
            Err(DatasetError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_chunk_is_malformed() {
        let mut b = wav_bytes(1000, &[0u8; 100]);
        b.truncate(b.len() - 10);
        let f = write_temp(&b);
        assert!(matches!(
            load_recording(f.path()),
            Err(DatasetError::MalformedWav(_))
        ));
    }

    #[test]
    fn wav_round_trip_within_one_lsb() {
        let samples: Vec<f64> = (0..500)
            .map(|i| (i as f64 * 0.01).sin() * 0.8)
            .collect();
        let rec = PcgRecording::new("rt", samples.clone(), 1000.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        save_recording(&rec, &path).unwrap();
        let back = load_recording(&path).unwrap();
        assert_eq!(back.samples.len(), samples.len());
        assert_eq!(back.record_id, "rt");
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn reference_parses_in_order() {
        let f = write_temp(b"a0001,1\na0002,-1\n");
        let labels = load_reference(f.path()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].record_id, "a0001");
        assert_eq!(labels[0].label, Label::Abnormal);
        assert_eq!(labels[1].label, Label::Normal);
    }

    #[test]
    fn reference_rejects_bad_label() {
        let f = write_temp(b"a0001,0\n");
        assert!(matches!(
            load_reference(f.path()),
            Err(DatasetError::BadLabel { .. })
        ));
    }

    #[test]
    fn reference_rejects_duplicate_id() {
        let f = write_temp(b"a0001,1\na0001,-1\n");
        assert!(matches!(
            load_reference(f.path()),
            Err(DatasetError::DuplicateRecordId(_))
        ));
    }

    #[test]
    fn annotation_round_trip() {
        let ann = StateAnnotation {
            record_id: "x".into(),
            events: vec![
                (0, HeartState::S1),
                (120, HeartState::Sys),
                (400, HeartState::S2),
                (520, HeartState::Dia),
            ],
        };
        ann.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        save_annotation(&ann, &path, Some("test artifact")).unwrap();
        let back = load_annotation(&path).unwrap();
        assert_eq!(back.events, ann.events);
        assert_eq!(back.record_id, "x");
    }

    #[test]
    fn annotation_rejects_broken_cycle() {
        let f = write_temp(b"sample_index,state\n0,S1\n120,S2\n");
        assert!(matches!(
            load_annotation(f.path()),
            Err(DatasetError::BrokenStateCycle(_))
        ));
    }

    #[test]
    fn annotation_rejects_nonmonotonic_index() {
        let f = write_temp(b"sample_index,state\n100,S1\n50,Sys\n");
        assert!(matches!(
            load_annotation(f.path()),
            Err(DatasetError::NonMonotonicIndex(_))
        ));
    }

    #[test]
    fn malformed_fixture_corpus_is_rejected() {
        let fixtures: &[&[u8]] = &[
            b"",                    // empty file
            b"RIFF",                // truncated header
            b"RIFX\0\0\0\0WAVE",    // wrong magic
            b"RIFF\x24\0\0\0WAVE",  // no chunks
        ];
        for (i, bytes) in fixtures.iter().enumerate() {
            let f = write_temp(bytes);
            assert!(load_recording(f.path()).is_err(), "fixture {i} accepted");
        }
        let csv_fixtures: &[&[u8]] = &[
            b"a0001,2\n",
            b"a0001,normal\n",
            b"a0001\n",
        ];
        for (i, bytes) in csv_fixtures.iter().enumerate() {
            let f = write_temp(bytes);
            assert!(load_reference(f.path()).is_err(), "csv fixture {i} accepted");
        }
    }
}
