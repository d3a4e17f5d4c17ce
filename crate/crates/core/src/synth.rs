//! Seeded synthetic scores and corpora for tests, benchmarks, and smoke
//! runs. Pieces have enough melodic/rhythmic structure (scale-bounded
//! pitch walks, a small duration alphabet, legato onsets) that tiny
//! models can learn them quickly.

use rand::Rng as _;

use crate::rng::{seeded, Stream};
use crate::score::{beat, validate_score, Note, Score, TimeUnit};
use crate::tokenizer::shard::Piece;
use crate::tokenizer::tokenize;

/// Grid-aligned 4/4 score: onsets on the 1/4-crotchet grid, durations on
/// the 1/8 grid, pitches within the token range, no velocity, track 0.
/// Downbeats cover the bars containing note onsets, so the score
/// round-trips exactly through tokenization.
pub fn synth_grid_score(seed: u64, n_notes: usize) -> Score {
    let mut rng = seeded(seed, Stream::Synthesis, 0);
    let mut notes = Vec::with_capacity(n_notes);
    let mut onset_q = 0i64; // in 1/4 crotchets
    let mut pitch = 60i32;
    for _ in 0..n_notes {
        let dur_units = [1i64, 2, 4, 8, 12][rng.random_range(0..5usize)]; // 1/8 crotchets
        pitch = (pitch + rng.random_range(-5..=5)).clamp(22, 107);
        notes.push(Note::new(beat(onset_q, 4), beat(dur_units, 8), pitch as u8));
        onset_q += rng.random_range(1..=4);
    }
    let max_bar = notes.iter().map(|n| (n.onset / 4).floor().to_integer()).max().unwrap_or(0);
    let downbeats = (0..=max_bar).map(|m| beat(4 * m, 1)).collect();
    validate_score(Score::new(notes, downbeats, TimeUnit::Beats)).unwrap()
}

/// Arbitrary off-grid score with awkward rational times, for
/// quantization error-bound tests.
pub fn synth_free_score(seed: u64, n_notes: usize) -> Score {
    let mut rng = seeded(seed, Stream::Synthesis, 1);
    let mut notes = Vec::with_capacity(n_notes);
    let mut onset = beat(0, 1);
    for _ in 0..n_notes {
        let num = rng.random_range(1..960i64);
        let den = [3i64, 5, 7, 480][rng.random_range(0..4usize)];
        notes.push(Note {
            onset,
            duration: beat(num, den * 4).clamp(beat(1, 16), beat(8, 1)),
            pitch: rng.random_range(0..=127u8),
            velocity: Some(rng.random_range(1..=127u8)),
            track: rng.random_range(0..3u32),
        });
        onset += beat(rng.random_range(1..480i64), 480);
    }
    let max_bar = notes.iter().map(|n| (n.onset / 4).floor().to_integer()).max().unwrap_or(0);
    let downbeats = (0..=max_bar).map(|m| beat(4 * m, 1)).collect();
    validate_score(Score::new(notes, downbeats, TimeUnit::Beats)).unwrap()
}

/// A melodically structured piece as clean tokens.
pub fn synth_piece(seed: u64, n_notes: usize) -> Piece {
    let score = synth_structured_score(seed, n_notes);
    Piece { id: format!("synth{seed}"), tokens: tokenize(&score).unwrap() }
}

/// The score behind [`synth_piece`]; velocities rise with pitch so
/// velocity-class labels are predictable from content.
pub fn synth_structured_score(seed: u64, n_notes: usize) -> Score {
    let mut rng = seeded(seed, Stream::Synthesis, 2);
    let mut notes = Vec::with_capacity(n_notes);
    let mut onset_units = 0i64; // 1/8 crotchets
    let mut pitch = rng.random_range(50..=70i32);
    for _ in 0..n_notes {
        let dur_units = match rng.random_range(0..10u8) {
            0..=4 => 2i64,
            5..=7 => 4,
            _ => 8,
        };
        pitch = (pitch + rng.random_range(-4..=4i32)).clamp(45, 80);
        notes.push(Note {
            onset: beat(onset_units, 8),
            duration: beat(dur_units, 8),
            pitch: pitch as u8,
            velocity: Some(((30 + (pitch - 40).max(0) * 2) as u8).clamp(1, 127)),
            track: 0,
        });
        onset_units += dur_units;
        if rng.random_range(0..8u8) == 0 {
            onset_units += 2; // occasional rest
        }
    }
    let max_bar = notes.iter().map(|n| (n.onset / 4).floor().to_integer()).max().unwrap_or(0);
    let downbeats = (0..=max_bar).map(|m| beat(4 * m, 1)).collect();
    validate_score(Score::new(notes, downbeats, TimeUnit::Beats)).unwrap()
}

/// Corpus of structured synthetic pieces with sizes drawn from `notes`.
pub fn synth_corpus(seed: u64, n_pieces: usize, notes: std::ops::Range<usize>) -> Vec<Piece> {
    (0..n_pieces)
        .map(|i| {
            let mut rng = seeded(seed, Stream::Synthesis, 100 + i as u64);
            let n = rng.random_range(notes.clone());
            let mut piece = synth_piece(seed.wrapping_mul(31).wrapping_add(i as u64), n);
            piece.id = format!("piece{i:04}");
            piece
        })
        .collect()
}
