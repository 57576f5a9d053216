//! Frame-based pitch representation: one pitch value per frame, 0 for rest.
//!
//! Kept around as the baseline the event codec is measured against; its two
//! documented weaknesses (repeated-note ambiguity and rest leakage) are
//! asserted by the tests here.

use crate::note::{is_monophonic, NoteSequence};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PianoRollError {
    #[error("sequence is not monophonic")]
    NotMonophonic,
    #[error("col_fs must be >= 1")]
    BadFrameRate,
}

/// Per-frame pitch samples; frame value 0 encodes rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitchFrameVector {
    pub frames: Vec<u8>,
    pub col_fs: u32,
}

/// Sample the sounding pitch at each frame center `(f + 0.5) / col_fs`.
///
/// Frame count is `ceil(total_duration * col_fs)`; frames whose center falls
/// in a gap hold 0.
pub fn encode_pianoroll(
    seq: &NoteSequence,
    col_fs: u32,
) -> Result<PitchFrameVector, PianoRollError> {
    if col_fs < 1 {
        return Err(PianoRollError::BadFrameRate);
    }
    if !is_monophonic(seq) {
        return Err(PianoRollError::NotMonophonic);
    }
    let fs = col_fs as f64;
    let n_frames = (seq.total_duration() * fs).ceil() as usize;
    let mut frames = vec![0u8; n_frames];
    for note in &seq.notes {
        // Frames whose center lies in [onset, offset). The skip is a
        // conservative lower bound; the center tests below decide.
        let first = ((note.onset * fs - 0.5).floor() - 1.0).max(0.0) as usize;
        for (f, slot) in frames.iter_mut().enumerate().skip(first) {
            let center = (f as f64 + 0.5) / fs;
            if center >= note.offset {
                break;
            }
            if center >= note.onset {
                *slot = note.pitch;
            }
        }
    }
    Ok(PitchFrameVector { frames, col_fs })
}

/// True iff any frame is a rest.
pub fn contains_rest(v: &PitchFrameVector) -> bool {
    v.frames.iter().any(|&f| f == 0)
}

/// One sample per line: comma-separated frame integers.
pub fn format_frames(v: &PitchFrameVector) -> String {
    v.frames
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
