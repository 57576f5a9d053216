//! Standard MIDI File (format 0/1) reading and writing.
//!
//! Reading is lenient where real-world files demand it: running status,
//! tempo changes anywhere, unmatched note-ons closed at end of track.
//! Writing is minimal and fixed: format 0, 480 PPQ, a single 120 BPM
//! tempo, velocity 64.

use crate::note::{normalize, Note, NoteSequence};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

pub const WRITE_PPQ: u32 = 480;
pub const DEFAULT_TEMPO: u32 = 500_000; // microseconds per quarter = 120 BPM

#[derive(Debug, Error, PartialEq)]
pub enum SmfError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated chunk: {0}")]
    TruncatedChunk(String),
    #[error("bad variable-length quantity: {0}")]
    BadVarint(String),
    #[error("bad event: {0}")]
    BadEvent(String),
    #[error("pitch {0} out of MIDI range [0, 127]")]
    PitchOutOfRange(u8),
}

/// Tempo change points in ticks, plus the file's ticks-per-quarter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TempoMap {
    /// `(tick, microseconds per quarter)`, sorted by tick, first at tick 0.
    pub entries: Vec<(u64, u32)>,
    pub ppq: u32,
}

impl TempoMap {
    pub fn new(mut entries: Vec<(u64, u32)>, ppq: u32) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                // Last tempo at a tick wins.
                earlier.1 = later.1;
                true
            } else {
                false
            }
        });
        if entries.first().map(|e| e.0) != Some(0) {
            entries.insert(0, (0, DEFAULT_TEMPO));
        }
        TempoMap { entries, ppq }
    }

    /// Convert an absolute tick to seconds by integrating over tempo segments.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let mut seconds = 0.0;
        let mut prev_tick = 0u64;
        let mut prev_tempo = self.entries[0].1;
        for &(t, tempo) in &self.entries {
            if t >= tick {
                break;
            }
            seconds += (t - prev_tick) as f64 * prev_tempo as f64 * 1e-6 / self.ppq as f64;
            prev_tick = t;
            prev_tempo = tempo;
        }
        seconds + (tick - prev_tick) as f64 * prev_tempo as f64 * 1e-6 / self.ppq as f64
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self, what: &str) -> Result<u8, SmfError> {
        if self.pos >= self.data.len() {
            return Err(SmfError::TruncatedChunk(format!("EOF reading {what}")));
        }
        let b = self.data[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8], SmfError> {
        if self.remaining() < n {
            return Err(SmfError::TruncatedChunk(format!(
                "EOF reading {what} ({n} bytes wanted, {} left)",
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, SmfError> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, SmfError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity: 7 bits per byte, at most 4 bytes.
    fn varint(&mut self) -> Result<u32, SmfError> {
        let mut value: u32 = 0;
        for i in 0.. {
            let b = self.u8("varint")?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                return Err(SmfError::BadVarint("more than 4 bytes".into()));
            }
        }
        unreachable!()
    }
}

#[derive(Debug)]
struct RawNote {
    channel: u8,
    pitch: u8,
    velocity: u8,
    on_tick: u64,
    off_tick: u64,
}

/// Parse SMF bytes into a normalized `NoteSequence`.
///
/// All tracks are merged, note-on/note-off pairs are matched FIFO per
/// `(channel, pitch)`, and ticks become seconds through the tempo map
/// (120 BPM default when no tempo event exists).
pub fn parse_smf(bytes: &[u8]) -> Result<NoteSequence, SmfError> {
    let mut c = Cursor::new(bytes);
    if c.bytes(4, "chunk id").map_err(|_| header_err("shorter than a header"))? != b"MThd" {
        return Err(header_err("missing MThd magic"));
    }
    let header_len = c.u32("header length")?;
    if header_len < 6 {
        return Err(header_err("header length < 6"));
    }
    let format = c.u16("format")?;
    if format > 1 {
        return Err(SmfError::UnsupportedFormat(format!("format {format}")));
    }
    let declared_tracks = c.u16("track count")?;
    let division = c.u16("division")?;
    if division & 0x8000 != 0 {
        return Err(SmfError::UnsupportedFormat("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(header_err("zero ticks per quarter"));
    }
    // Skip any header extension bytes.
    c.bytes(header_len as usize - 6, "header extension")?;

    let mut raw_notes: Vec<RawNote> = Vec::new();
    let mut tempo_entries: Vec<(u64, u32)> = Vec::new();
    let mut tracks_seen = 0u16;
    while c.remaining() > 0 && tracks_seen < declared_tracks {
        let id = c.bytes(4, "chunk id")?;
        let len = c.u32("chunk length")? as usize;
        let body = c.bytes(len, "chunk body")?;
        if id == b"MTrk" {
            parse_track(body, &mut raw_notes, &mut tempo_entries)?;
            tracks_seen += 1;
        }
        // Unknown chunk types are skipped, per the SMF spec.
    }

    let tempo = TempoMap::new(tempo_entries, division as u32);
    let notes = raw_notes
        .iter()
        .map(|r| Note {
            pitch: r.pitch,
            onset: tempo.tick_to_seconds(r.on_tick),
            offset: tempo.tick_to_seconds(r.off_tick),
            velocity: r.velocity,
        })
        .collect();
    Ok(normalize(&NoteSequence::new(notes, "")))
}

fn header_err(msg: &str) -> SmfError {
    SmfError::MalformedHeader(msg.into())
}

fn parse_track(
    body: &[u8],
    notes: &mut Vec<RawNote>,
    tempo_entries: &mut Vec<(u64, u32)>,
) -> Result<(), SmfError> {
    let mut c = Cursor::new(body);
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let mut ended = false;

    while c.remaining() > 0 && !ended {
        tick += c.varint()? as u64;
        let first = c.u8("status")?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            // Running status reuses the previous channel status; the byte we
            // read is its first data byte.
            c.pos -= 1;
            running_status.ok_or_else(|| {
                SmfError::BadEvent("data byte with no running status".into())
            })?
        };

        match status {
            0x80..=0xEF => {
                running_status = Some(status);
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let d1 = data_byte(&mut c)?;
                match kind {
                    0x80 | 0x90 => {
                        let velocity = data_byte(&mut c)?;
                        if kind == 0x90 && velocity > 0 {
                            open.entry((channel, d1)).or_default().push_back((tick, velocity));
                        } else if let Some((on_tick, vel)) =
                            open.get_mut(&(channel, d1)).and_then(|q| q.pop_front())
                        {
                            notes.push(RawNote {
                                channel,
                                pitch: d1,
                                velocity: vel,
                                on_tick,
                                off_tick: tick,
                            });
                        }
                        // Unmatched note-off: discarded.
                    }
                    0xA0 | 0xB0 | 0xE0 => {
                        data_byte(&mut c)?;
                    }
                    0xC0 | 0xD0 => {}
                    _ => unreachable!(),
                }
            }
            0xFF => {
                running_status = None;
                let meta_type = c.u8("meta type")?;
                let len = c.varint()? as usize;
                let data = c.bytes(len, "meta data")?;
                match meta_type {
                    0x51 => {
                        if len != 3 {
                            return Err(SmfError::BadEvent(format!(
                                "tempo meta with length {len}"
                            )));
                        }
                        let uspq =
                            ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        if uspq == 0 {
                            return Err(SmfError::BadEvent("zero tempo".into()));
                        }
                        tempo_entries.push((tick, uspq));
                    }
                    0x2F => ended = true,
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let len = c.varint()? as usize;
                c.bytes(len, "sysex data")?;
            }
            _ => {
                return Err(SmfError::BadEvent(format!(
                    "unexpected status byte 0x{status:02X}"
                )));
            }
        }
    }

    // Salvage notes still sounding when the track ends.
    let end_tick = tick;
    let mut leftovers: Vec<((u8, u8), (u64, u8))> = open
        .into_iter()
        .flat_map(|(key, q)| q.into_iter().map(move |v| (key, v)))
        .collect();
    leftovers.sort();
    for ((channel, pitch), (on_tick, velocity)) in leftovers {
        if end_tick > on_tick {
            notes.push(RawNote { channel, pitch, velocity, on_tick, off_tick: end_tick });
        }
    }
    Ok(())
}

fn data_byte(c: &mut Cursor) -> Result<u8, SmfError> {
    let b = c.u8("data byte")?;
    if b & 0x80 != 0 {
        return Err(SmfError::BadEvent(format!("data byte 0x{b:02X} has high bit set")));
    }
    Ok(b)
}

fn push_varint(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(stack[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Write a normalized `NoteSequence` as a format-0 SMF.
///
/// 480 PPQ at a fixed 120 BPM puts one tick at ~1.04 ms, so a parse of the
/// written bytes reproduces the input within ~1.05 ms per time boundary.
pub fn write_smf(seq: &NoteSequence) -> Result<Vec<u8>, SmfError> {
    // 960 ticks per second at 480 PPQ / 120 BPM.
    let ticks_per_second = WRITE_PPQ as f64 * 1_000_000.0 / DEFAULT_TEMPO as f64;
    let to_tick = |t: f64| (t * ticks_per_second).round().max(0.0) as u64;

    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Kind {
        Off,
        On,
    }
    let mut events: Vec<(u64, Kind, u8)> = Vec::with_capacity(seq.notes.len() * 2);
    for note in &seq.notes {
        if note.pitch > 127 {
            return Err(SmfError::PitchOutOfRange(note.pitch));
        }
        let on = to_tick(note.onset);
        // Sub-tick notes are widened so they survive the round trip.
        let off = to_tick(note.offset).max(on + 1);
        events.push((on, Kind::On, note.pitch));
        events.push((off, Kind::Off, note.pitch));
    }
    events.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track = Vec::new();
    // Fixed tempo, written for players that don't assume the default.
    push_varint(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x51, 0x03]);
    track.extend_from_slice(&DEFAULT_TEMPO.to_be_bytes()[1..]);
    let mut prev_tick = 0u64;
    for (tick, kind, pitch) in &events {
        push_varint(&mut track, (tick - prev_tick) as u32);
        prev_tick = *tick;
        let status = if *kind == Kind::On { 0x90 } else { 0x80 };
        track.extend_from_slice(&[status, *pitch, 64]);
    }
    push_varint(&mut track, 0);
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(14 + 8 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(WRITE_PPQ as u16).to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}
