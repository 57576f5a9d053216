//! MusicXML (score-partwise) lead-sheet ingestion: first part only,
//! chords collapsed to their top note, ties merged, truncated to a bar
//! budget. The output is always monophonic.

use crate::note::{is_monophonic, normalize, Note, NoteSequence};
use thiserror::Error;

pub const DEFAULT_TEMPO_QPM: f64 = 120.0;
pub const DEFAULT_MAX_BARS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum MusicXmlError {
    #[error("XML parse error: {0}")]
    UnparseableXml(String),
    #[error("root element is <{0}>, only score-partwise is supported")]
    NotPartwise(String),
    #[error("score has no <part> element")]
    NoParts,
    #[error("bad or missing <divisions> (a positive value must precede timed content)")]
    BadDivisions,
    #[error("compressed MusicXML (.mxl) is not supported; unzip it and pass the .xml")]
    CompressedMxl,
}

/// Walk state while reading one part: current divisions/tempo and the
/// position within the measure stream.
#[derive(Debug)]
struct MeasureCursor {
    divisions: Option<u32>,
    tempo_qpm: f64,
    measure_index: usize,
    position_div: i64,
    time_sec: f64,
}

impl MeasureCursor {
    fn new() -> Self {
        MeasureCursor {
            divisions: None,
            tempo_qpm: DEFAULT_TEMPO_QPM,
            measure_index: 0,
            position_div: 0,
            time_sec: 0.0,
        }
    }

    fn seconds_per_division(&self) -> Result<f64, MusicXmlError> {
        let div = self.divisions.ok_or(MusicXmlError::BadDivisions)?;
        Ok(60.0 / (self.tempo_qpm * div as f64))
    }

    fn advance(&mut self, divisions: i64) -> Result<(), MusicXmlError> {
        let spd = self.seconds_per_division()?;
        self.position_div = (self.position_div + divisions).max(0);
        self.time_sec = (self.time_sec + divisions as f64 * spd).max(0.0);
        Ok(())
    }
}

/// Detect the zip container before attempting to parse text.
pub fn ingest_musicxml_bytes(
    bytes: &[u8],
    max_bars: usize,
) -> Result<NoteSequence, MusicXmlError> {
    if bytes.starts_with(b"PK\x03\x04") {
        return Err(MusicXmlError::CompressedMxl);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|e| MusicXmlError::UnparseableXml(e.to_string()))?;
    ingest_musicxml(text, max_bars)
}

/// Convert a score-partwise document into a melody-only `NoteSequence`.
///
/// First part, first voice; chords collapse to the highest pitch; ties
/// merge into single notes; rests advance time; grace notes are skipped;
/// measures beyond `max_bars` contribute nothing. Times are seconds at the
/// written tempo (120 QPM when the score gives none).
pub fn ingest_musicxml(text: &str, max_bars: usize) -> Result<NoteSequence, MusicXmlError> {
    if text.starts_with("PK\u{3}\u{4}") {
        return Err(MusicXmlError::CompressedMxl);
    }
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| MusicXmlError::UnparseableXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(MusicXmlError::NotPartwise(root.tag_name().name().to_string()));
    }
    let part = root
        .children()
        .find(|n| n.is_element() && n.tag_name().name() == "part")
        .ok_or(MusicXmlError::NoParts)?;

    let mut cursor = MeasureCursor::new();
    let mut notes: Vec<Note> = Vec::new();
    // pitch -> index of the note awaiting its tie continuation
    let mut open_ties: std::collections::HashMap<u8, usize> = std::collections::HashMap::new();
    let mut melody_voice: Option<String> = None;

    for measure in part
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "measure")
        .take(max_bars)
    {
        cursor.measure_index += 1;
        for el in measure.children().filter(|n| n.is_element()) {
            match el.tag_name().name() {
                "attributes" => {
                    if let Some(div) = child_text(&el, "divisions") {
                        match div.trim().parse::<i64>() {
                            Ok(d) if d > 0 => cursor.divisions = Some(d as u32),
                            _ => return Err(MusicXmlError::BadDivisions),
                        }
                    }
                }
                "direction" | "sound" => {
                    if let Some(qpm) = extract_tempo(&el) {
                        if qpm > 0.0 {
                            cursor.tempo_qpm = qpm;
                        }
                    }
                }
                "backup" => {
                    let d = duration_of(&el);
                    if d > 0 {
                        cursor.advance(-d)?;
                    }
                }
                "forward" => {
                    let d = duration_of(&el);
                    if d > 0 {
                        cursor.advance(d)?;
                    }
                }
                "note" => handle_note(
                    &el,
                    &mut cursor,
                    &mut notes,
                    &mut open_ties,
                    &mut melody_voice,
                )?,
                _ => {}
            }
        }
    }

    // Resolve any overlap by truncating the earlier note at the next onset.
    notes.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .expect("times are finite")
            .then(a.pitch.cmp(&b.pitch))
    });
    for i in 1..notes.len() {
        let next_onset = notes[i].onset;
        if notes[i - 1].offset > next_onset {
            notes[i - 1].offset = next_onset;
        }
    }
    let out = normalize(&NoteSequence::new(notes, ""));
    debug_assert!(is_monophonic(&out));
    Ok(out)
}

fn handle_note(
    el: &roxmltree::Node,
    cursor: &mut MeasureCursor,
    notes: &mut Vec<Note>,
    open_ties: &mut std::collections::HashMap<u8, usize>,
    melody_voice: &mut Option<String>,
) -> Result<(), MusicXmlError> {
    if has_child(el, "grace") {
        return Ok(());
    }
    let duration = duration_of(el);
    let is_chord = has_child(el, "chord");
    let is_rest = has_child(el, "rest");
    let pitch = parse_pitch(el);

    let voice = child_text(el, "voice").map(|s| s.trim().to_string());
    let in_melody_voice = match (&voice, &*melody_voice) {
        (Some(v), Some(mv)) => v == mv,
        (Some(v), None) => {
            *melody_voice = Some(v.clone());
            true
        }
        (None, _) => true,
    };

    if is_chord {
        // A chord member shares the previous note's onset; keep the top pitch.
        if in_melody_voice && !is_rest {
            if let (Some(p), Some(last)) = (pitch, notes.last_mut()) {
                if (last.offset - cursor.time_sec).abs() < 1e-9 && p > last.pitch {
                    last.pitch = p;
                }
            }
        }
        return Ok(());
    }

    if duration <= 0 {
        // Non-grace note without a usable duration: nothing to place.
        return Ok(());
    }

    let onset = cursor.time_sec;
    cursor.advance(duration)?;
    let offset = cursor.time_sec;

    if is_rest || !in_melody_voice {
        return Ok(());
    }
    let Some(pitch) = pitch else {
        return Ok(());
    };

    let (tie_start, tie_stop) = tie_flags(el);
    if tie_stop {
        if let Some(&idx) = open_ties.get(&pitch) {
            if (notes[idx].offset - onset).abs() < 1e-6 {
                notes[idx].offset = offset;
                if !tie_start {
                    open_ties.remove(&pitch);
                }
                return Ok(());
            }
            open_ties.remove(&pitch);
        }
        // Stop without a matching start: fall through as a plain note.
    }
    notes.push(Note::new(pitch, onset, offset));
    if tie_start {
        open_ties.insert(pitch, notes.len() - 1);
    }
    Ok(())
}

fn has_child(el: &roxmltree::Node, name: &str) -> bool {
    el.children().any(|c| c.is_element() && c.tag_name().name() == name)
}

fn child_text<'a>(el: &'a roxmltree::Node, name: &str) -> Option<&'a str> {
    el.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
        .and_then(|c| c.text())
}

fn duration_of(el: &roxmltree::Node) -> i64 {
    child_text(el, "duration")
        .and_then(|t| t.trim().parse::<i64>().ok())
        .unwrap_or(0)
        .max(0)
}

fn tie_flags(el: &roxmltree::Node) -> (bool, bool) {
    let mut start = false;
    let mut stop = false;
    for tie in el.children().filter(|c| c.is_element() && c.tag_name().name() == "tie") {
        match tie.attribute("type") {
            Some("start") => start = true,
            Some("stop") => stop = true,
            _ => {}
        }
    }
    (start, stop)
}

/// Tempo from `<sound tempo=...>` or `<metronome>` under a direction,
/// scaled to quarters per minute.
fn extract_tempo(el: &roxmltree::Node) -> Option<f64> {
    if let Some(t) = el.attribute("tempo").and_then(|v| v.trim().parse::<f64>().ok()) {
        return Some(t);
    }
    for d in el.descendants().filter(|n| n.is_element()) {
        match d.tag_name().name() {
            "sound" => {
                if let Some(t) = d.attribute("tempo").and_then(|v| v.trim().parse::<f64>().ok())
                {
                    return Some(t);
                }
            }
            "metronome" => {
                let per_minute = child_text(&d, "per-minute")
                    .and_then(|v| v.trim().parse::<f64>().ok())?;
                let unit = child_text(&d, "beat-unit").unwrap_or("quarter");
                let quarters_per_beat = match unit {
                    "whole" => 4.0,
                    "half" => 2.0,
                    "quarter" => 1.0,
                    "eighth" => 0.5,
                    "16th" => 0.25,
                    _ => 1.0,
                };
                let dotted = d
                    .children()
                    .filter(|c| c.is_element() && c.tag_name().name() == "beat-unit-dot")
                    .count() as f64;
                return Some(per_minute * quarters_per_beat * (1.5f64).powf(dotted));
            }
            _ => {}
        }
    }
    None
}

fn parse_pitch(el: &roxmltree::Node) -> Option<u8> {
    let pitch_el = el
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "pitch")?;
    let step = child_text(&pitch_el, "step")?.trim();
    let semitone: i32 = match step {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        _ => return None,
    };
    let octave: i32 = child_text(&pitch_el, "octave")?.trim().parse().ok()?;
    let alter: i32 = child_text(&pitch_el, "alter")
        .and_then(|t| t.trim().parse::<f64>().ok())
        .map(|a| a.round() as i32)
        .unwrap_or(0);
    let midi = (octave + 1) * 12 + semitone + alter;
    (0..=127).contains(&midi).then_some(midi as u8)
}
