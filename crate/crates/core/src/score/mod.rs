//! Validated in-memory scores: notes with rational onset/duration plus
//! downbeat timings.
//!
//! Time is kept as exact rationals (crotchet beats over the source tick
//! grid) until quantization so that no float drift accumulates before
//! tokenization. Scores in seconds (performance MIDI) carry
//! [`TimeUnit::Seconds`] and skip downbeat derivation.

pub mod smf;
pub mod text;

use num_rational::Ratio;
use num_traits::Signed;

use crate::error::{CoreError, Result};

/// Time in crotchet beats (or seconds for performance input), exact.
pub type Beat = Ratio<i64>;

/// Grid used when converting floating-point input to rational time:
/// 1/3840 of a crotchet (or of a second). Fine enough for every duty the
/// pipeline has (quantization targets are 1/4 and 1/8 crotchet).
pub const SNAP_DENOM: i64 = 3840;

pub fn beat(num: i64, den: i64) -> Beat {
    Ratio::new(num, den)
}

/// Snap a floating-point time to the 1/3840 grid.
pub fn beat_from_f64(x: f64) -> Beat {
    Ratio::new((x * SNAP_DENOM as f64).round() as i64, SNAP_DENOM)
}

pub fn beat_to_f64(b: Beat) -> f64 {
    *b.numer() as f64 / *b.denom() as f64
}

/// Round half-up to the nearest integer: floor(r + 1/2).
pub fn round_half_up(r: Beat) -> i64 {
    (r + Ratio::new(1, 2)).floor().to_integer()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Beats,
    Seconds,
}

/// A single note. `onset`/`duration` are in the score's time unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub onset: Beat,
    pub duration: Beat,
    pub pitch: u8,
    pub velocity: Option<u8>,
    pub track: u32,
}

impl Note {
    pub fn new(onset: Beat, duration: Beat, pitch: u8) -> Self {
        Note {
            onset,
            duration,
            pitch,
            velocity: None,
            track: 0,
        }
    }

    fn sort_key(&self) -> (Beat, u8, u32) {
        (self.onset, self.pitch, self.track)
    }
}

/// A piece: notes plus downbeat timings.
///
/// Equality ignores `source_meta` (provenance only), so round trips
/// through tokenization can be compared exactly.
#[derive(Debug, Clone)]
pub struct Score {
    pub notes: Vec<Note>,
    pub downbeats: Vec<Beat>,
    pub time_unit: TimeUnit,
    pub source_meta: String,
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.notes == other.notes
            && self.downbeats == other.downbeats
            && self.time_unit == other.time_unit
    }
}

impl Score {
    pub fn new(notes: Vec<Note>, downbeats: Vec<Beat>, time_unit: TimeUnit) -> Self {
        Score {
            notes,
            downbeats,
            time_unit,
            source_meta: String::new(),
        }
    }

    pub fn n_notes(&self) -> usize {
        self.notes.len()
    }
}

/// Re-sort notes by (onset, pitch, track) and check every score
/// invariant. Idempotent; errors carry the offending note index.
pub fn validate_score(mut score: Score) -> Result<Score> {
    score.notes.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    for (i, n) in score.notes.iter().enumerate() {
        if !n.duration.is_positive() {
            return Err(CoreError::Score(format!(
                "note {i}: non-positive duration {}",
                n.duration
            )));
        }
        if n.pitch > 127 {
            return Err(CoreError::Score(format!("note {i}: pitch {} > 127", n.pitch)));
        }
        if n.onset.is_negative() {
            return Err(CoreError::Score(format!("note {i}: negative onset {}", n.onset)));
        }
        if let Some(v) = n.velocity {
            if v == 0 || v > 127 {
                return Err(CoreError::Score(format!(
                    "note {i}: velocity {v} outside [1,127]"
                )));
            }
        }
    }

    for w in score.downbeats.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::Score(
                "downbeats not strictly increasing".to_string(),
            ));
        }
    }

    if let Some(&first_db) = score.downbeats.first() {
        for (i, n) in score.notes.iter().enumerate() {
            if n.onset < first_db {
                return Err(CoreError::Score(format!(
                    "note {i}: onset {} before first downbeat {}",
                    n.onset, first_db
                )));
            }
        }
    }

    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Score {
        Score::new(
            vec![
                Note::new(beat(4, 1), beat(1, 2), 69),
                Note::new(beat(0, 1), beat(1, 1), 60),
            ],
            vec![beat(0, 1), beat(4, 1)],
            TimeUnit::Beats,
        )
    }

    #[test]
    fn validate_sorts_notes() {
        let s = validate_score(sample()).unwrap();
        assert_eq!(s.notes[0].pitch, 60);
        assert_eq!(s.notes[1].pitch, 69);
    }

    #[test]
    fn validate_is_idempotent() {
        let once = validate_score(sample()).unwrap();
        let twice = validate_score(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn validate_rejects_equal_downbeats() {
        let mut s = sample();
        s.downbeats = vec![beat(0, 1), beat(0, 1)];
        let err = validate_score(s).unwrap_err().to_string();
        assert!(err.contains("strictly increasing"), "{err}");
    }

    #[test]
    fn validate_rejects_zero_duration() {
        let mut s = sample();
        s.notes[0].duration = beat(0, 1);
        assert!(validate_score(s).is_err());
    }

    #[test]
    fn validate_rejects_onset_before_first_downbeat() {
        let mut s = sample();
        s.downbeats = vec![beat(1, 1)];
        assert!(validate_score(s).is_err());
    }

    #[test]
    fn round_half_up_at_boundary() {
        assert_eq!(round_half_up(beat(1, 2)), 1);
        assert_eq!(round_half_up(beat(3, 2)), 2);
        assert_eq!(round_half_up(beat(1, 4)), 0);
        assert_eq!(round_half_up(beat(7, 1)), 7);
    }

    #[test]
    fn beat_snap_is_exact_on_grid() {
        assert_eq!(beat_from_f64(0.25), beat(1, 4));
        assert_eq!(beat_from_f64(1.5), beat(3, 2));
    }
}
