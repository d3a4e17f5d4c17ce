//! Plain text score format (one JSON document per piece):
//!
//! ```json
//! {
//!   "time_unit": "beats",
//!   "downbeats": [0.0, 4.0],
//!   "notes": [{"onset": 0.0, "duration": 1.0, "pitch": 60,
//!              "velocity": 80, "track": 0}]
//! }
//! ```
//!
//! `velocity` and `track` are optional. Numbers are snapped to the
//! 1/3840 grid on ingestion (see [`super::SNAP_DENOM`]).

use serde::{Deserialize, Serialize};

use super::{beat_from_f64, beat_to_f64, validate_score, Note, Score, TimeUnit};
use crate::error::{CoreError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TextScore {
    time_unit: String,
    downbeats: Vec<f64>,
    notes: Vec<TextNote>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextNote {
    onset: f64,
    duration: f64,
    pitch: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    velocity: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track: Option<i64>,
}

/// Parse a text score document into a validated [`Score`].
pub fn parse_text_score(text: &str) -> Result<Score> {
    let doc: TextScore =
        serde_json::from_str(text).map_err(|e| CoreError::Schema(format!("text score: {e}")))?;

    let time_unit = match doc.time_unit.as_str() {
        "beats" => TimeUnit::Beats,
        "seconds" => TimeUnit::Seconds,
        other => {
            return Err(CoreError::Schema(format!(
                "time_unit must be \"beats\" or \"seconds\", got {other:?}"
            )))
        }
    };

    let mut notes = Vec::with_capacity(doc.notes.len());
    for (i, n) in doc.notes.iter().enumerate() {
        if n.pitch < 0 || n.pitch > 127 {
            return Err(CoreError::Schema(format!(
                "note {i}: pitch {} outside [0,127]",
                n.pitch
            )));
        }
        if n.duration <= 0.0 {
            return Err(CoreError::Schema(format!(
                "note {i}: non-positive duration {}",
                n.duration
            )));
        }
        let velocity = match n.velocity {
            None => None,
            Some(v) if (1..=127).contains(&v) => Some(v as u8),
            Some(v) => {
                return Err(CoreError::Schema(format!(
                    "note {i}: velocity {v} outside [1,127]"
                )))
            }
        };
        notes.push(Note {
            onset: beat_from_f64(n.onset),
            duration: beat_from_f64(n.duration),
            pitch: n.pitch as u8,
            velocity,
            track: n.track.unwrap_or(0).max(0) as u32,
        });
    }

    let downbeats = doc.downbeats.iter().map(|&d| beat_from_f64(d)).collect();
    validate_score(Score::new(notes, downbeats, time_unit))
}

/// Serialize a score back to the text format (used by fixtures and the
/// inspection command; times are emitted as floats).
pub fn write_text_score(score: &Score) -> String {
    let doc = TextScore {
        time_unit: match score.time_unit {
            TimeUnit::Beats => "beats".to_string(),
            TimeUnit::Seconds => "seconds".to_string(),
        },
        downbeats: score.downbeats.iter().map(|&d| beat_to_f64(d)).collect(),
        notes: score
            .notes
            .iter()
            .map(|n| TextNote {
                onset: beat_to_f64(n.onset),
                duration: beat_to_f64(n.duration),
                pitch: n.pitch as i64,
                velocity: n.velocity.map(|v| v as i64),
                track: if n.track == 0 { None } else { Some(n.track as i64) },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("text score serialization")
}
