//! Standard MIDI File (format 0/1) parsing into [`Score`].
//!
//! Onsets and durations are exact rationals over the file's tick grid
//! (`tick / ticks_per_quarter` crotchets). Downbeats are derived from
//! time-signature meta events: a bar of numerator `n` over denominator
//! `d` spans `n*4/d` crotchets; files without a time signature default
//! to 4/4 from tick 0. A note-on with velocity 0 is a note-off.
//!
//! Irregularities that common writers produce are repaired and reported
//! instead of failing the parse: an unmatched note-on is closed at the
//! end of its track, a second note-on for a sounding (track, channel,
//! pitch) closes the earlier note at the later onset (last-on wins), and
//! a note-off with no matching note-on is dropped.

use num_rational::Ratio;

use super::{validate_score, Beat, Note, Score, TimeUnit};
use crate::error::{CoreError, Result};

/// One decoded MIDI event relevant to score building, at an absolute tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub tick: u64,
    pub track: u32,
    pub kind: RawEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawEventKind {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    TempoChange { micros_per_quarter: u32 },
    TimeSignature { numerator: u8, denominator: u32 },
}

/// Parse result with repair warnings attached.
#[derive(Debug)]
pub struct SmfReport {
    pub score: Score,
    pub warnings: Vec<String>,
}

/// Parse an SMF, logging any repair warnings.
pub fn parse_smf(bytes: &[u8]) -> Result<Score> {
    let report = parse_smf_report(bytes)?;
    for w in &report.warnings {
        log::warn!("smf: {w}");
    }
    Ok(report.score)
}

/// Parse an SMF and return the score together with repair warnings.
pub fn parse_smf_report(bytes: &[u8]) -> Result<SmfReport> {
    let mut rd = Reader::new(bytes);

    let magic = rd.take(4)?;
    if magic != b"MThd" {
        return Err(CoreError::Midi("malformed header: missing MThd".into()));
    }
    let header_len = rd.u32()?;
    if header_len < 6 {
        return Err(CoreError::Midi(format!(
            "malformed header: length {header_len} < 6"
        )));
    }
    let format = rd.u16()?;
    let n_tracks = rd.u16()?;
    let division = rd.u16()?;
    rd.skip(header_len as usize - 6)?;

    if format == 2 {
        return Err(CoreError::Midi("unsupported SMF format 2".into()));
    }
    if format > 2 {
        return Err(CoreError::Midi(format!("malformed header: format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(CoreError::Midi("SMPTE division is unsupported".into()));
    }
    let tpq = division as i64;
    if tpq == 0 {
        return Err(CoreError::Midi("malformed header: zero ticks/quarter".into()));
    }

    let mut events: Vec<RawEvent> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut track_ends: Vec<u64> = Vec::new();

    let mut parsed_tracks = 0u32;
    while parsed_tracks < n_tracks as u32 {
        if rd.at_end() {
            return Err(CoreError::Midi(format!(
                "truncated file: {parsed_tracks} of {n_tracks} tracks present"
            )));
        }
        let chunk_type = rd.take(4)?.to_vec();
        let chunk_len = rd.u32()? as usize;
        if chunk_type != b"MTrk" {
            // Alien chunks are skipped per the SMF spec.
            rd.skip(chunk_len)?;
            continue;
        }
        let track_bytes = rd
            .take(chunk_len)
            .map_err(|_| CoreError::Midi(format!("truncated track chunk {parsed_tracks}")))?;
        let end_tick = parse_track(track_bytes, parsed_tracks, &mut events, &mut warnings)?;
        track_ends.push(end_tick);
        parsed_tracks += 1;
    }
    let span_tick = track_ends.iter().copied().max().unwrap_or(0);

    let (notes, note_warnings) = assemble_notes(&events, tpq, &track_ends);
    warnings.extend(note_warnings);

    let span_beats = Ratio::new(span_tick as i64, tpq);
    let downbeats = derive_downbeats(&events, tpq, span_beats);

    let mut score = Score::new(notes, downbeats, TimeUnit::Beats);
    score.source_meta = format!("smf format={format} tpq={tpq} tracks={n_tracks}");
    let score = validate_score(score)?;
    Ok(SmfReport { score, warnings })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Midi("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<()> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(CoreError::Midi("variable-length quantity too long".into()))
    }
}

/// Parse one track chunk; returns the track's final tick.
fn parse_track(
    bytes: &[u8],
    track: u32,
    events: &mut Vec<RawEvent>,
    warnings: &mut Vec<String>,
) -> Result<u64> {
    let mut rd = Reader::new(bytes);
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;

    while !rd.at_end() {
        let delta = rd
            .varlen()
            .map_err(|_| CoreError::Midi(format!("truncated track chunk {track}")))?;
        tick += delta as u64;

        let first = rd.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            rd.pos -= 1; // data byte: reuse running status
            running_status.ok_or_else(|| {
                CoreError::Midi(format!("track {track}: data byte with no running status"))
            })?
        };

        match status {
            0xFF => {
                running_status = None;
                let meta_type = rd.u8()?;
                let len = rd.varlen()? as usize;
                let data = rd.take(len)?;
                match meta_type {
                    0x51 if len == 3 => {
                        let us = ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        events.push(RawEvent {
                            tick,
                            track,
                            kind: RawEventKind::TempoChange { micros_per_quarter: us },
                        });
                    }
                    0x58 if len >= 2 => {
                        events.push(RawEvent {
                            tick,
                            track,
                            kind: RawEventKind::TimeSignature {
                                numerator: data[0],
                                denominator: 1u32 << data[1].min(16),
                            },
                        });
                    }
                    0x2F => return Ok(tick), // end of track
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let len = rd.varlen()? as usize;
                rd.skip(len)?;
            }
            _ => {
                running_status = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 => {
                        let pitch = rd.u8()? & 0x7F;
                        let _vel = rd.u8()?;
                        events.push(RawEvent {
                            tick,
                            track,
                            kind: RawEventKind::NoteOff { channel, pitch },
                        });
                    }
                    0x90 => {
                        let pitch = rd.u8()? & 0x7F;
                        let vel = rd.u8()? & 0x7F;
                        let kind = if vel == 0 {
                            RawEventKind::NoteOff { channel, pitch }
                        } else {
                            RawEventKind::NoteOn { channel, pitch, velocity: vel }
                        };
                        events.push(RawEvent { tick, track, kind });
                    }
                    0xA0 | 0xB0 | 0xE0 => {
                        rd.skip(2)?;
                    }
                    0xC0 | 0xD0 => {
                        rd.skip(1)?;
                    }
                    _ => {
                        return Err(CoreError::Midi(format!(
                            "track {track}: unexpected status byte 0x{status:02X}"
                        )))
                    }
                }
            }
        }
    }
    warnings.push(format!("track {track}: missing end-of-track meta event"));
    Ok(tick)
}

/// Pair note-on/note-off events into notes. Last-on wins for overlapping
/// same-pitch notes on one (track, channel); unmatched note-ons close at
/// the end of their track.
fn assemble_notes(events: &[RawEvent], tpq: i64, track_ends: &[u64]) -> (Vec<Note>, Vec<String>) {
    use std::collections::HashMap;

    let mut warnings = Vec::new();
    let mut notes = Vec::new();
    // open note per (track, channel, pitch): (onset tick, velocity)
    let mut open: HashMap<(u32, u8, u8), (u64, u8)> = HashMap::new();

    let close = |onset_tick: u64, off_tick: u64, pitch: u8, velocity: u8, track: u32,
                 notes: &mut Vec<Note>| {
        // A zero-length note would violate duration > 0; give it one tick.
        let end = off_tick.max(onset_tick + 1);
        notes.push(Note {
            onset: Ratio::new(onset_tick as i64, tpq),
            duration: Ratio::new((end - onset_tick) as i64, tpq),
            pitch,
            velocity: Some(velocity),
            track,
        });
    };

    for ev in events {
        match ev.kind {
            RawEventKind::NoteOn { channel, pitch, velocity } => {
                let key = (ev.track, channel, pitch);
                if let Some((onset, vel)) = open.insert(key, (ev.tick, velocity)) {
                    warnings.push(format!(
                        "track {}: overlapping note-on for pitch {pitch}; earlier note closed",
                        ev.track
                    ));
                    close(onset, ev.tick, pitch, vel, ev.track, &mut notes);
                }
            }
            RawEventKind::NoteOff { channel, pitch } => {
                let key = (ev.track, channel, pitch);
                match open.remove(&key) {
                    Some((onset, vel)) => close(onset, ev.tick, pitch, vel, ev.track, &mut notes),
                    None => warnings.push(format!(
                        "track {}: note-off for pitch {pitch} with no matching note-on",
                        ev.track
                    )),
                }
            }
            _ => {}
        }
    }

    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_unstable_by_key(|&((track, channel, pitch), _)| (track, channel, pitch));
    for ((track, _channel, pitch), (onset, vel)) in dangling {
        let end = track_ends.get(track as usize).copied().unwrap_or(onset);
        warnings.push(format!(
            "track {track}: unmatched note-on for pitch {pitch}; closed at track end"
        ));
        close(onset, end, pitch, vel, track, &mut notes);
    }

    (notes, warnings)
}

/// Downbeats over `[0, span]` from time-signature events (beats).
fn derive_downbeats(events: &[RawEvent], tpq: i64, span: Beat) -> Vec<Beat> {
    // (beat position, bar length in crotchets), sorted by position.
    let mut sigs: Vec<(Beat, Beat)> = events
        .iter()
        .filter_map(|ev| match ev.kind {
            RawEventKind::TimeSignature { numerator, denominator } => Some((
                Ratio::new(ev.tick as i64, tpq),
                Ratio::new(numerator as i64 * 4, denominator as i64),
            )),
            _ => None,
        })
        .collect();
    sigs.sort_by_key(|&(pos, _)| pos);
    sigs.dedup_by_key(|&mut (pos, _)| pos); // later tracks do not override track 0

    let four = Ratio::new(4i64, 1);
    if sigs.first().map(|&(pos, _)| pos) != Some(Ratio::new(0, 1)) {
        sigs.insert(0, (Ratio::new(0, 1), four)); // default 4/4 from tick 0
    }

    let mut downbeats = Vec::new();
    for (i, &(start, bar_len)) in sigs.iter().enumerate() {
        let until = sigs.get(i + 1).map(|&(pos, _)| pos).unwrap_or(span);
        let mut db = start;
        // Each segment contributes downbeats in [start, until); the last
        // segment is inclusive of a downbeat landing exactly on the span.
        while db < until || (i + 1 == sigs.len() && db <= until) {
            downbeats.push(db);
            if bar_len <= Ratio::new(0, 1) {
                break; // degenerate signature; avoid an infinite loop
            }
            db += bar_len;
        }
    }
    downbeats
}
