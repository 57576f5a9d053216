//! Event-based melody representation: NOTE_ON / NOTE_OFF / TIME_SHIFT
//! events drawn from a finite vocabulary, plus fixed-length sequence
//! preparation for the classifier.
//!
//! Id layout (frozen, part of the on-disk contract):
//!
//! ```text
//! 0                PAD
//! 1                EOS
//! 2 .. 2+P         NOTE_ON(min_pitch ..= max_pitch)
//! 2+P .. 2+2P      NOTE_OFF(min_pitch ..= max_pitch)
//! 2+2P ..          TIME_SHIFT(1 ..= steps_per_second)
//! ```
//!
//! where `P = max_pitch - min_pitch + 1`. Velocity bins occupy the tail
//! when `num_velocity_bins > 0`; the classifier pipeline runs with 0 bins
//! and never emits them.

use crate::note::{normalize, Note, NoteSequence, DEFAULT_VELOCITY};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("pitch {0} outside configured range [{1}, {2}]")]
    PitchOutOfRange(u8, u8, u8),
    #[error("event id {0} outside vocabulary of size {1}")]
    IdOutOfVocab(u32, u32),
    #[error("value {0} out of range for {1}")]
    ValueOutOfRange(u32, &'static str),
    #[error("sequence is not monophonic")]
    NotMonophonic,
}

/// Encoder settings: pitch range, time-shift resolution and velocity bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceConfig {
    pub min_pitch: u8,
    pub max_pitch: u8,
    pub steps_per_second: u32,
    pub num_velocity_bins: u32,
}

impl Default for PerformanceConfig {
    fn default() -> Self {
        PerformanceConfig {
            min_pitch: 21,
            max_pitch: 108,
            steps_per_second: 100,
            num_velocity_bins: 0,
        }
    }
}

impl PerformanceConfig {
    pub fn with_steps(steps_per_second: u32) -> Self {
        PerformanceConfig {
            steps_per_second,
            ..Default::default()
        }
    }

    /// Number of distinct pitches in range.
    pub fn pitch_span(&self) -> u32 {
        (self.max_pitch - self.min_pitch) as u32 + 1
    }

    /// Seconds covered by one time step.
    pub fn step_seconds(&self) -> f64 {
        1.0 / self.steps_per_second as f64
    }
}

/// One element of the event vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Pad,
    Eos,
    NoteOn(u8),
    NoteOff(u8),
    /// Advance the clock by `k` steps, `1 <= k <= steps_per_second`.
    TimeShift(u32),
    /// Unused by the pipeline (velocity bins fixed at 0) but part of the
    /// id layout when configured.
    Velocity(u32),
}

/// A melody as integer event ids in `[0, vocab_size)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    pub ids: Vec<u32>,
}

impl EventSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        EventSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Total vocabulary size:
/// `2 * pitch_span + steps_per_second + num_velocity_bins + 2`.
pub fn vocab_size(cfg: &PerformanceConfig) -> u32 {
    2 * cfg.pitch_span() + cfg.steps_per_second + cfg.num_velocity_bins + 2
}

fn check_pitch(pitch: u8, cfg: &PerformanceConfig) -> Result<(), CodecError> {
    if pitch < cfg.min_pitch || pitch > cfg.max_pitch {
        return Err(CodecError::PitchOutOfRange(pitch, cfg.min_pitch, cfg.max_pitch));
    }
    Ok(())
}

/// Map an event to its vocabulary id.
pub fn event_to_id(event: Event, cfg: &PerformanceConfig) -> Result<u32, CodecError> {
    let p = cfg.pitch_span();
    match event {
        Event::Pad => Ok(PAD_ID),
        Event::Eos => Ok(EOS_ID),
        Event::NoteOn(pitch) => {
            check_pitch(pitch, cfg)?;
            Ok(2 + (pitch - cfg.min_pitch) as u32)
        }
        Event::NoteOff(pitch) => {
            check_pitch(pitch, cfg)?;
            Ok(2 + p + (pitch - cfg.min_pitch) as u32)
        }
        Event::TimeShift(k) => {
            if k < 1 || k > cfg.steps_per_second {
                return Err(CodecError::ValueOutOfRange(k, "TIME_SHIFT steps"));
            }
            Ok(2 + 2 * p + (k - 1))
        }
        Event::Velocity(bin) => {
            if bin >= cfg.num_velocity_bins {
                return Err(CodecError::ValueOutOfRange(bin, "velocity bin"));
            }
            Ok(2 + 2 * p + cfg.steps_per_second + bin)
        }
    }
}

/// Inverse of [`event_to_id`].
pub fn id_to_event(id: u32, cfg: &PerformanceConfig) -> Result<Event, CodecError> {
    let p = cfg.pitch_span();
    let vocab = vocab_size(cfg);
    if id >= vocab {
        return Err(CodecError::IdOutOfVocab(id, vocab));
    }
    Ok(match id {
        0 => Event::Pad,
        1 => Event::Eos,
        _ if id < 2 + p => Event::NoteOn(cfg.min_pitch + (id - 2) as u8),
        _ if id < 2 + 2 * p => Event::NoteOff(cfg.min_pitch + (id - 2 - p) as u8),
        _ if id < 2 + 2 * p + cfg.steps_per_second => Event::TimeShift(id - 2 - 2 * p + 1),
        _ => Event::Velocity(id - 2 - 2 * p - cfg.steps_per_second),
    })
}

/// Round a time to the nearest step, ties up.
fn quantize(t: f64, cfg: &PerformanceConfig) -> u64 {
    (t * cfg.steps_per_second as f64 + 0.5).floor() as u64
}

/// Encode a normalized monophonic sequence as performance events.
///
/// Onsets and offsets are quantized to the step grid; notes whose quantized
/// duration is zero are widened to one step. Gaps longer than one second
/// become multiple consecutive TIME_SHIFT events. EOS is appended.
pub fn encode_events(
    seq: &NoteSequence,
    cfg: &PerformanceConfig,
) -> Result<EventSequence, CodecError> {
    // Timed markers, NOTE_OFF ordered before NOTE_ON at equal step so
    // back-to-back repeated notes decode without overlap.
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Kind {
        Off,
        On,
    }
    let mut markers: Vec<(u64, Kind, u8)> = Vec::with_capacity(seq.notes.len() * 2);
    for note in &seq.notes {
        if note.pitch < cfg.min_pitch || note.pitch > cfg.max_pitch {
            return Err(CodecError::PitchOutOfRange(
                note.pitch,
                cfg.min_pitch,
                cfg.max_pitch,
            ));
        }
        let on = quantize(note.onset, cfg);
        let mut off = quantize(note.offset, cfg);
        if off == on {
            off = on + 1;
        }
        markers.push((on, Kind::On, note.pitch));
        markers.push((off, Kind::Off, note.pitch));
    }
    markers.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut ids = Vec::new();
    let mut clock = 0u64;
    for (step, kind, pitch) in markers {
        let mut gap = step - clock;
        while gap > 0 {
            let k = gap.min(cfg.steps_per_second as u64) as u32;
            ids.push(event_to_id(Event::TimeShift(k), cfg)?);
            gap -= k as u64;
        }
        clock = step;
        let event = match kind {
            Kind::On => Event::NoteOn(pitch),
            Kind::Off => Event::NoteOff(pitch),
        };
        ids.push(event_to_id(event, cfg)?);
    }
    ids.push(EOS_ID);
    Ok(EventSequence::new(ids))
}

/// Replay an event stream back into notes.
///
/// NOTE_ON opens a note; a matching NOTE_OFF (FIFO per pitch) closes it.
/// PAD and EOS are ignored, unmatched NOTE_OFFs are discarded, and notes
/// still open at stream end are closed there with a one-step minimum
/// duration.
pub fn decode_events(
    ev: &EventSequence,
    cfg: &PerformanceConfig,
) -> Result<NoteSequence, CodecError> {
    use std::collections::HashMap;
    let step = cfg.step_seconds();
    let mut open: HashMap<u8, std::collections::VecDeque<u64>> = HashMap::new();
    let mut notes = Vec::new();
    let mut clock = 0u64;
    let close = |pitch: u8, on: u64, off: u64, notes: &mut Vec<Note>| {
        let off = if off == on { on + 1 } else { off };
        notes.push(Note {
            pitch,
            onset: on as f64 * step,
            offset: off as f64 * step,
            velocity: DEFAULT_VELOCITY,
        });
    };
    for &id in &ev.ids {
        match id_to_event(id, cfg)? {
            Event::Pad | Event::Eos | Event::Velocity(_) => {}
            Event::TimeShift(k) => clock += k as u64,
            Event::NoteOn(p) => open.entry(p).or_default().push_back(clock),
            Event::NoteOff(p) => {
                if let Some(on) = open.get_mut(&p).and_then(|q| q.pop_front()) {
                    close(p, on, clock, &mut notes);
                }
            }
        }
    }
    let mut leftovers: Vec<(u8, u64)> = open
        .into_iter()
        .flat_map(|(p, q)| q.into_iter().map(move |on| (p, on)))
        .collect();
    leftovers.sort();
    for (p, on) in leftovers {
        close(p, on, clock, &mut notes);
    }
    Ok(normalize(&NoteSequence::new(notes, "")))
}

/// Pad with PAD(0) or truncate to exactly `max_len` ids.
///
/// Truncation keeps the head of the sequence; the EOS marker is lost when
/// the cut drops it.
pub fn prepare_sequence(ev: &EventSequence, max_len: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(max_len);
    out.extend(ev.ids.iter().take(max_len));
    out.resize(max_len, PAD_ID);
    out
}

/// One encoded, labeled sample; the JSON Lines interchange record between
/// the encoding and training stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub id: String,
    pub label: u8,
    pub steps_per_second: u32,
    pub events: Vec<u32>,
}

/// Serialize samples as JSON Lines.
pub fn write_jsonl<W: std::io::Write>(
    mut w: W,
    samples: &[EncodedSample],
) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse JSON Lines written by [`write_jsonl`]. Blank lines are skipped.
pub fn read_jsonl<R: std::io::BufRead>(r: R) -> anyhow::Result<Vec<EncodedSample>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: EncodedSample = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("line {}: {}", lineno + 1, e))?;
        if sample.label > 1 {
            anyhow::bail!("line {}: label must be 0 or 1", lineno + 1);
        }
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::note::is_monophonic;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn seq(notes: &[(u8, f64, f64)]) -> NoteSequence {
        normalize(&NoteSequence::new(
            notes.iter().map(|&(p, on, off)| Note::new(p, on, off)).collect(),
            "test",
        ))
    }

    #[test]
    fn vocab_size_matches_formula() {
        let cases = [
            ((21, 108, 100, 0), 278),
            ((21, 108, 1, 0), 179),
            ((0, 127, 10, 0), 268),
        ];
        for ((lo, hi, steps, bins), expected) in cases {
            let cfg = PerformanceConfig {
                min_pitch: lo,
                max_pitch: hi,
                steps_per_second: steps,
                num_velocity_bins: bins,
            };
            assert_eq!(vocab_size(&cfg), expected);
        }
    }

    #[test]
    fn id_layout_hand_traced() {
        let cfg = PerformanceConfig::default();
        assert_eq!(event_to_id(Event::NoteOn(60), &cfg).unwrap(), 41);
        assert_eq!(event_to_id(Event::TimeShift(100), &cfg).unwrap(), 277);
        assert_eq!(event_to_id(Event::Pad, &cfg).unwrap(), 0);
        assert_eq!(event_to_id(Event::Eos, &cfg).unwrap(), 1);
        assert_eq!(event_to_id(Event::NoteOff(60), &cfg).unwrap(), 129);
    }

    #[test]
    fn id_range_checks() {
        let cfg = PerformanceConfig::default();
        assert!(matches!(
            event_to_id(Event::NoteOn(20), &cfg),
            Err(CodecError::PitchOutOfRange(20, 21, 108))
        ));
        assert!(matches!(
            event_to_id(Event::TimeShift(101), &cfg),
            Err(CodecError::ValueOutOfRange(101, _))
        ));
        assert!(matches!(
            id_to_event(278, &cfg),
            Err(CodecError::IdOutOfVocab(278, 278))
        ));
    }

    #[test]
    fn encode_single_note() {
        let cfg = PerformanceConfig::default();
        let ev = encode_events(&seq(&[(60, 0.0, 0.5)]), &cfg).unwrap();
        assert_eq!(ev.ids, vec![41, 227, 129, 1]);
    }

    #[test]
    fn encode_splits_long_gap() {
        let cfg = PerformanceConfig::default();
        let ev = encode_events(&seq(&[(60, 0.0, 0.5), (62, 2.85, 3.0)]), &cfg).unwrap();
        assert_eq!(ev.ids, vec![41, 227, 129, 277, 277, 212, 43, 192, 131, 1]);
    }

    #[test]
    fn encode_coarse_steps_widens_zero_duration() {
        // At 1 step/s, 0.4 rounds to step 0 and 0.7 rounds to step 1, so the
        // note keeps a one-step duration without widening; TIME_SHIFT(1) sits
        // at the top of the 179-wide vocabulary (id 178).
        let cfg = PerformanceConfig::with_steps(1);
        let ev = encode_events(&seq(&[(60, 0.4, 0.7)]), &cfg).unwrap();
        assert_eq!(ev.ids, vec![41, 178, 129, 1]);
        // 0.4..0.6 collapses to step 0 and is widened to one step.
        let ev = encode_events(&seq(&[(60, 0.4, 0.6)]), &cfg).unwrap();
        assert_eq!(ev.ids, vec![41, 178, 129, 1]);
    }

    #[test]
    fn encode_rejects_out_of_range_pitch() {
        let cfg = PerformanceConfig::default();
        assert!(matches!(
            encode_events(&seq(&[(10, 0.0, 0.5)]), &cfg),
            Err(CodecError::PitchOutOfRange(10, 21, 108))
        ));
    }

    #[test]
    fn decode_single_note() {
        let cfg = PerformanceConfig::default();
        let out = decode_events(&EventSequence::new(vec![41, 227, 129]), &cfg).unwrap();
        assert_eq!(out.notes, seq(&[(60, 0.0, 0.5)]).notes);
    }

    #[test]
    fn decode_empty() {
        let cfg = PerformanceConfig::default();
        assert!(decode_events(&EventSequence::default(), &cfg).unwrap().is_empty());
    }

    #[test]
    fn decode_closes_unmatched_note_on_at_stream_end() {
        let cfg = PerformanceConfig::default();
        let out = decode_events(&EventSequence::new(vec![41]), &cfg).unwrap();
        assert_eq!(out.notes.len(), 1);
        assert_eq!(out.notes[0].pitch, 60);
        assert!((out.notes[0].onset - 0.0).abs() < 1e-12);
        assert!((out.notes[0].offset - 0.01).abs() < 1e-12);
    }

    #[test]
    fn decode_discards_unmatched_note_off() {
        let cfg = PerformanceConfig::default();
        let out = decode_events(&EventSequence::new(vec![129, 227, 41, 227, 129]), &cfg).unwrap();
        assert_eq!(out.notes, seq(&[(60, 0.5, 1.0)]).notes);
    }

    #[test]
    fn prepare_pads_with_zeros() {
        let ev = EventSequence::new((2..152).collect());
        let out = prepare_sequence(&ev, 200);
        assert_eq!(out.len(), 200);
        assert_eq!(&out[..150], &ev.ids[..]);
        assert!(out[150..].iter().all(|&id| id == PAD_ID));
    }

    #[test]
    fn prepare_truncates_to_head() {
        let ev = EventSequence::new((2..252).collect());
        let out = prepare_sequence(&ev, 200);
        assert_eq!(out, ev.ids[..200].to_vec());
    }

    #[test]
    fn prepare_exact_length_unchanged() {
        let ev = EventSequence::new((2..202).collect());
        assert_eq!(prepare_sequence(&ev, 200), ev.ids);
    }

    #[test]
    fn jsonl_round_trip() {
        let samples = vec![
            EncodedSample {
                id: "a".into(),
                label: 1,
                steps_per_second: 100,
                events: vec![41, 227, 129, 1],
            },
            EncodedSample {
                id: "b".into(),
                label: 0,
                steps_per_second: 100,
                events: vec![1],
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &samples).unwrap();
        let back = read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, samples);
    }

    /// Deterministic random monophonic sequence with durations and gaps in
    /// multiples of no particular grid.
    pub(crate) fn random_monophonic(
        rng: &mut impl Rng,
        max_notes: usize,
        min_dur: f64,
    ) -> NoteSequence {
        let n = rng.gen_range(0..=max_notes);
        let mut t = rng.gen_range(0.0..0.3);
        let mut notes = Vec::with_capacity(n);
        for _ in 0..n {
            let dur = min_dur + rng.gen_range(0.0..1.5);
            let pitch = rng.gen_range(21..=108) as u8;
            notes.push(Note::new(pitch, t, t + dur));
            t += dur + if rng.gen_bool(0.3) { rng.gen_range(0.0..2.5) } else { 0.0 };
        }
        NoteSequence::new(notes, "rand")
    }

    #[test]
    fn round_trip_at_100_steps_within_half_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cfg = PerformanceConfig::default();
        for _ in 0..300 {
            let s = random_monophonic(&mut rng, 30, 0.010);
            let decoded = decode_events(&encode_events(&s, &cfg).unwrap(), &cfg).unwrap();
            assert_eq!(decoded.len(), s.len());
            for (a, b) in s.notes.iter().zip(&decoded.notes) {
                assert_eq!(a.pitch, b.pitch);
                assert!((a.onset - b.onset).abs() <= 0.005 + 1e-9);
                assert!((a.offset - b.offset).abs() <= 0.005 + 1e-9);
            }
        }
    }

    #[test]
    fn monotonic_resolution_on_nested_grids() {
        // Total round-trip timing error at s1 never exceeds the error at s2
        // when s1 is an integer multiple of s2.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pairs = [(100u32, 10u32), (100, 1), (10, 5), (50, 2)];
        for _ in 0..50 {
            let s = random_monophonic(&mut rng, 15, 1.0);
            for (fine, coarse) in pairs {
                let err = |steps: u32| -> f64 {
                    let cfg = PerformanceConfig::with_steps(steps);
                    let d = decode_events(&encode_events(&s, &cfg).unwrap(), &cfg).unwrap();
                    assert_eq!(d.len(), s.len());
                    s.notes
                        .iter()
                        .zip(&d.notes)
                        .map(|(a, b)| (a.onset - b.onset).abs() + (a.offset - b.offset).abs())
                        .sum()
                };
                assert!(err(fine) <= err(coarse) + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn bijection_over_full_vocab(steps in 1u32..=120, bins in 0u32..=4) {
            let cfg = PerformanceConfig {
                min_pitch: 21,
                max_pitch: 108,
                steps_per_second: steps,
                num_velocity_bins: bins,
            };
            let mut distinct = std::collections::HashSet::new();
            for id in 0..vocab_size(&cfg) {
                let ev = id_to_event(id, &cfg).unwrap();
                prop_assert_eq!(event_to_id(ev, &cfg).unwrap(), id);
                distinct.insert(id);
            }
            prop_assert_eq!(distinct.len() as u32, vocab_size(&cfg));
        }

        #[test]
        fn time_shifts_always_in_range(seed in 0u64..500, steps in 1u32..=100) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = random_monophonic(&mut rng, 12, 0.01);
            let cfg = PerformanceConfig::with_steps(steps);
            for &id in &encode_events(&s, &cfg).unwrap().ids {
                if let Event::TimeShift(k) = id_to_event(id, &cfg).unwrap() {
                    prop_assert!(k >= 1 && k <= steps);
                }
            }
        }

        #[test]
        fn decoded_output_is_monophonic_for_monophonic_input(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = random_monophonic(&mut rng, 20, 0.02);
            let cfg = PerformanceConfig::default();
            let d = decode_events(&encode_events(&s, &cfg).unwrap(), &cfg).unwrap();
            prop_assert!(is_monophonic(&d));
        }
    }
}
