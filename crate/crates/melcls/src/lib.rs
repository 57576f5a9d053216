//! Melody classification toolkit: symbolic-music parsing (SMF, MusicXML),
//! event-based and piano-roll encodings, and a small deterministic
//! recurrent-network classifier with everything needed to train and
//! evaluate it.

pub mod events;
pub mod musicxml;
pub mod note;
pub mod pianoroll;
pub mod smf;
