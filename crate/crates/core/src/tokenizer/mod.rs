//! Compound note tokens: each note becomes a (bar flag, position, pitch,
//! duration) tuple on a normalized 4-crotchet bar grid.
//!
//! * `bar_flag` is 1 on the first note token of each bar, else 0.
//! * `position` is the onset within the bar in 1/4-crotchet tatums, 0..=15.
//! * `pitch` is the MIDI pitch octave-shifted into 22..=107.
//! * `duration` is in 1/8-crotchet units, clamped to 1..=64 (up to two bars).
//!
//! Rounding is half-up. Bars of any length are first rescaled onto the
//! 4-crotchet grid by [`rescale_bars`]; windows of at most `max_len`
//! tokens are cut by [`segment`]. Segmentation follows token order only:
//! windows may split bars.

pub mod shard;

use num_rational::Ratio;

use crate::error::{CoreError, Result};
use crate::score::{beat, round_half_up, validate_score, Beat, Note, Score, TimeUnit};

pub const N_ATTRS: usize = 4;

/// The four token attributes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attr {
    BarFlag = 0,
    Position = 1,
    Pitch = 2,
    Duration = 3,
}

pub const ATTRS: [Attr; N_ATTRS] = [Attr::BarFlag, Attr::Position, Attr::Pitch, Attr::Duration];

/// Per-attribute vocabulary layout. Real values occupy ids
/// `0..cardinality`; `mask_id = cardinality` and `pad_id = cardinality+1`
/// are reserved and never appear in clean tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
pub struct VocabSpec;

impl VocabSpec {
    pub const fn cardinality(attr: Attr) -> u16 {
        match attr {
            Attr::BarFlag => 2,
            Attr::Position => 16,
            Attr::Pitch => 86,
            Attr::Duration => 64,
        }
    }

    /// Smallest semantic value of the attribute (id 0 maps to it).
    pub const fn semantic_min(attr: Attr) -> u16 {
        match attr {
            Attr::BarFlag => 0,
            Attr::Position => 0,
            Attr::Pitch => 22,
            Attr::Duration => 1,
        }
    }

    pub const fn semantic_max(attr: Attr) -> u16 {
        Self::semantic_min(attr) + Self::cardinality(attr) - 1
    }

    pub const fn mask_id(attr: Attr) -> u16 {
        Self::cardinality(attr)
    }

    pub const fn pad_id(attr: Attr) -> u16 {
        Self::cardinality(attr) + 1
    }

    /// Embedding-table rows: real ids plus mask and pad.
    pub const fn table_rows(attr: Attr) -> usize {
        Self::cardinality(attr) as usize + 2
    }
}

/// One compound note token, in semantic value space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpToken {
    pub bar_flag: u8,
    pub position: u8,
    pub pitch: u8,
    pub duration: u8,
}

impl CpToken {
    pub fn new(bar_flag: u8, position: u8, pitch: u8, duration: u8) -> Result<Self> {
        let t = CpToken { bar_flag, position, pitch, duration };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (Attr::BarFlag, self.bar_flag),
            (Attr::Position, self.position),
            (Attr::Pitch, self.pitch),
            (Attr::Duration, self.duration),
        ];
        for (attr, v) in fields {
            if (v as u16) < VocabSpec::semantic_min(attr) || (v as u16) > VocabSpec::semantic_max(attr)
            {
                return Err(CoreError::Tokenizer(format!(
                    "{attr:?} value {v} outside [{}, {}]",
                    VocabSpec::semantic_min(attr),
                    VocabSpec::semantic_max(attr)
                )));
            }
        }
        Ok(())
    }

    pub fn attr(&self, attr: Attr) -> u16 {
        match attr {
            Attr::BarFlag => self.bar_flag as u16,
            Attr::Position => self.position as u16,
            Attr::Pitch => self.pitch as u16,
            Attr::Duration => self.duration as u16,
        }
    }

    /// Embedding id of an attribute (semantic value minus the attribute's
    /// minimum).
    pub fn attr_id(&self, attr: Attr) -> u16 {
        self.attr(attr) - VocabSpec::semantic_min(attr)
    }
}

/// A token in embedding-id space; unlike [`CpToken`] it can carry mask
/// and pad ids. Order: bar flag, position, pitch, duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenIds(pub [u16; N_ATTRS]);

impl TokenIds {
    pub fn from_token(t: &CpToken) -> Self {
        TokenIds([
            t.attr_id(Attr::BarFlag),
            t.attr_id(Attr::Position),
            t.attr_id(Attr::Pitch),
            t.attr_id(Attr::Duration),
        ])
    }

    pub fn pad() -> Self {
        TokenIds([
            VocabSpec::pad_id(Attr::BarFlag),
            VocabSpec::pad_id(Attr::Position),
            VocabSpec::pad_id(Attr::Pitch),
            VocabSpec::pad_id(Attr::Duration),
        ])
    }

    pub fn mask() -> Self {
        TokenIds([
            VocabSpec::mask_id(Attr::BarFlag),
            VocabSpec::mask_id(Attr::Position),
            VocabSpec::mask_id(Attr::Pitch),
            VocabSpec::mask_id(Attr::Duration),
        ])
    }

    pub fn is_pad(&self) -> bool {
        self.0[0] == VocabSpec::pad_id(Attr::BarFlag)
    }

    pub fn get(&self, attr: Attr) -> u16 {
        self.0[attr as usize]
    }

    pub fn set(&mut self, attr: Attr, id: u16) {
        self.0[attr as usize] = id;
    }
}

/// A bounded window of tokens from one piece. `tokens` is the (possibly
/// corrupted) model input in id space; `clean_tokens` is the immutable
/// clean copy used for targets and losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tokens: Vec<TokenIds>,
    pub bar_index: Vec<u32>,
    pub piece_id: String,
    pub clean_tokens: Vec<CpToken>,
}

impl Segment {
    /// Build a segment from clean tokens, checking the windowed
    /// invariants: non-empty, length within `max_len`, bar indices
    /// non-decreasing, and interior bar changes flagged with bar_flag=1.
    /// (The first token keeps whatever flag it had in the full piece.)
    pub fn from_clean(
        clean: Vec<(CpToken, u32)>,
        piece_id: impl Into<String>,
        max_len: usize,
    ) -> Result<Self> {
        if clean.is_empty() {
            return Err(CoreError::Tokenizer("empty segment".into()));
        }
        if clean.len() > max_len {
            return Err(CoreError::Tokenizer(format!(
                "segment length {} exceeds max_len {max_len}",
                clean.len()
            )));
        }
        for i in 1..clean.len() {
            let (prev_bar, bar) = (clean[i - 1].1, clean[i].1);
            if bar < prev_bar {
                return Err(CoreError::Tokenizer(format!(
                    "bar_index decreases at token {i}"
                )));
            }
            let expect_flag = (bar != prev_bar) as u8;
            if clean[i].0.bar_flag != expect_flag {
                return Err(CoreError::Tokenizer(format!(
                    "token {i}: bar_flag {} does not match bar change",
                    clean[i].0.bar_flag
                )));
            }
        }
        let tokens = clean.iter().map(|(t, _)| TokenIds::from_token(t)).collect();
        let bar_index = clean.iter().map(|&(_, b)| b).collect();
        let clean_tokens = clean.into_iter().map(|(t, _)| t).collect();
        Ok(Segment {
            tokens,
            bar_index,
            piece_id: piece_id.into(),
            clean_tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Absolute onset tatum of each clean token (16 tatums per bar).
    pub fn onset_tatums(&self) -> Vec<u32> {
        self.clean_tokens
            .iter()
            .zip(&self.bar_index)
            .map(|(t, &bar)| 16 * bar + t.position as u32)
            .collect()
    }
}

/// Affinely map every bar onto a 4-crotchet bar.
///
/// Bar m spans `[db_m, db_{m+1})` and maps onto `[4m, 4(m+1))`; onset
/// offsets and durations scale by `4 / bar_length`, where a note's bar is
/// the one containing its onset. The final open-ended bar reuses the
/// preceding bar's length (4 crotchets when there is only one downbeat).
/// Output downbeats are `0, 4, 8, ...` with the input's count.
pub fn rescale_bars(score: &Score) -> Result<Score> {
    if score.time_unit != TimeUnit::Beats {
        return Err(CoreError::Tokenizer(
            "bar rescaling needs a score in beat units".into(),
        ));
    }
    if score.downbeats.is_empty() {
        return Err(CoreError::Tokenizer("empty downbeat list".into()));
    }
    let dbs = &score.downbeats;
    let four = beat(4, 1);
    let last_len = if dbs.len() >= 2 {
        dbs[dbs.len() - 1] - dbs[dbs.len() - 2]
    } else {
        four
    };

    let bar_of = |onset: Beat| -> usize {
        // last m with db_m <= onset
        match dbs.binary_search_by(|db| db.partial_cmp(&onset).unwrap()) {
            Ok(m) => m,
            Err(0) => 0, // validate_score guarantees onset >= db_0
            Err(ins) => ins - 1,
        }
    };

    let mut notes = Vec::with_capacity(score.notes.len());
    for n in &score.notes {
        let m = bar_of(n.onset);
        let bar_len = if m + 1 < dbs.len() { dbs[m + 1] - dbs[m] } else { last_len };
        let scale = four / bar_len;
        notes.push(Note {
            onset: beat(4 * m as i64, 1) + (n.onset - dbs[m]) * scale,
            duration: n.duration * scale,
            ..n.clone()
        });
    }

    let downbeats = (0..dbs.len()).map(|m| beat(4 * m as i64, 1)).collect();
    let mut out = Score::new(notes, downbeats, TimeUnit::Beats);
    out.source_meta = score.source_meta.clone();
    validate_score(out)
}

/// Quantize a rescaled score into compound tokens, one per note, with the
/// containing bar index. Order is preserved.
pub fn tokenize(score: &Score) -> Result<Vec<(CpToken, u32)>> {
    if score.time_unit != TimeUnit::Beats {
        return Err(CoreError::Tokenizer("tokenize needs a score in beat units".into()));
    }
    for w in score.downbeats.windows(2) {
        if w[1] - w[0] != beat(4, 1) {
            return Err(CoreError::Tokenizer(
                "score is not on the 4-crotchet bar grid; rescale bars first".into(),
            ));
        }
    }

    let mut out = Vec::with_capacity(score.notes.len());
    let mut prev_bar: Option<u32> = None;
    for n in &score.notes {
        // Round the onset to the global tatum grid first, then split into
        // bar and within-bar position. An onset in the last half-tatum of
        // a bar therefore lands on the next bar's downbeat instead of
        // clamping, keeping the quantization error within 1/8 crotchet.
        let tatum = round_half_up(n.onset * Ratio::from_integer(4));
        let bar = (tatum / 16) as u32;
        let position = (tatum % 16).clamp(0, 15) as u8;
        let duration = round_half_up(n.duration * Ratio::from_integer(8)).clamp(1, 64) as u8;
        let mut pitch = n.pitch as i16;
        while pitch < 22 {
            pitch += 12;
        }
        while pitch > 107 {
            pitch -= 12;
        }
        let bar_flag = (prev_bar != Some(bar)) as u8;
        prev_bar = Some(bar);

        out.push((
            CpToken::new(bar_flag, position, pitch as u8, duration)?,
            bar,
        ));
    }
    Ok(out)
}

/// Cut a piece's token list into consecutive windows of at most
/// `max_len` tokens. Only the final window may be shorter; the first
/// token of each window keeps its original bar flag.
pub fn segment(
    tokens: &[(CpToken, u32)],
    piece_id: &str,
    max_len: usize,
) -> Result<Vec<Segment>> {
    if max_len == 0 {
        return Err(CoreError::Tokenizer("max_len must be >= 1".into()));
    }
    tokens
        .chunks(max_len)
        .map(|chunk| Segment::from_clean(chunk.to_vec(), piece_id, max_len))
        .collect()
}

/// Reconstruct a score from tokens: `onset = 4*bar + position/4`,
/// `duration = duration_units/8`, pitch verbatim. Velocity and track are
/// not represented in tokens and come back as `None`/0. Downbeats cover
/// the bars containing note onsets.
pub fn detokenize(tokens: &[(CpToken, u32)]) -> Result<Score> {
    let notes: Vec<Note> = tokens
        .iter()
        .map(|(t, bar)| {
            Note::new(
                beat(4 * *bar as i64, 1) + beat(t.position as i64, 4),
                beat(t.duration as i64, 8),
                t.pitch,
            )
        })
        .collect();
    let max_bar = tokens.iter().map(|&(_, b)| b).max().unwrap_or(0);
    let downbeats = (0..=max_bar).map(|m| beat(4 * m as i64, 1)).collect();
    validate_score(Score::new(notes, downbeats, TimeUnit::Beats))
}
