//! Note-level data model shared by the parsers and codecs.
//!
//! All times are double-precision seconds from the start of the piece;
//! the codecs quantize at their own boundaries.

use serde::{Deserialize, Serialize};

pub const DEFAULT_VELOCITY: u8 = 64;

/// A single sounding note. `offset` is exclusive: the note occupies
/// `[onset, offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Note {
    /// MIDI note number in `[0, 127]`.
    pub pitch: u8,
    /// Start time in seconds, `>= 0`.
    pub onset: f64,
    /// End time in seconds, `> onset` for a valid note.
    pub offset: f64,
    /// MIDI velocity in `[0, 127]`.
    pub velocity: u8,
}

impl Note {
    pub fn new(pitch: u8, onset: f64, offset: f64) -> Self {
        Note {
            pitch,
            onset,
            offset,
            velocity: DEFAULT_VELOCITY,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    /// True if the sounding intervals `[onset, offset)` intersect.
    pub fn overlaps(&self, other: &Note) -> bool {
        self.onset < other.offset && other.onset < self.offset
    }
}

/// An ordered list of notes plus an opaque source label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoteSequence {
    pub notes: Vec<Note>,
    pub source_id: String,
}

impl NoteSequence {
    pub fn new(notes: Vec<Note>, source_id: impl Into<String>) -> Self {
        NoteSequence {
            notes,
            source_id: source_id.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    /// End of the last sounding note, or 0.0 for an empty sequence.
    pub fn total_duration(&self) -> f64 {
        self.notes.iter().map(|n| n.offset).fold(0.0, f64::max)
    }
}

/// Sort notes by `(onset, pitch)` and drop zero/negative-duration notes.
///
/// Idempotent, and preserves the multiset of positive-duration notes.
pub fn normalize(seq: &NoteSequence) -> NoteSequence {
    let mut notes: Vec<Note> = seq
        .notes
        .iter()
        .copied()
        .filter(|n| n.offset > n.onset)
        .collect();
    notes.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .expect("note times must not be NaN")
            .then(a.pitch.cmp(&b.pitch))
    });
    NoteSequence {
        notes,
        source_id: seq.source_id.clone(),
    }
}

/// True iff no two notes' sounding intervals overlap.
///
/// Expects a normalized sequence; back-to-back notes (offset == next onset)
/// do not count as overlapping.
pub fn is_monophonic(seq: &NoteSequence) -> bool {
    seq.notes.windows(2).all(|w| w[0].offset <= w[1].onset + 1e-12)
}
