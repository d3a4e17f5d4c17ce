//! Bar-level pianoroll and chromagram targets.
//!
//! For each note the target is the binary pianoroll of the bar holding
//! its onset: a 16x86 (tatum x pitch-token) grid where a cell is 1 iff
//! some note of the bar sounds there, plus its 16x12 pitch-class fold.
//! A token duration of `d` eighth-crotchet units sounds for `ceil(d/2)`
//! tatums from its onset tatum, truncated at the bar boundary. Targets
//! are always built from clean tokens, never corrupted ones; notes in
//! the same bar share the same grids.

use crate::tokenizer::Segment;

pub const N_TATUMS: usize = 16;
pub const N_PITCH: usize = 86;
pub const N_CHROMA: usize = 12;

/// Binary grids for one bar; `pr` is 16x86 row-major, `cm` 16x12.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarTarget {
    pub pr: Vec<u8>,
    pub cm: Vec<u8>,
}

impl BarTarget {
    fn zeros() -> Self {
        BarTarget { pr: vec![0; N_TATUMS * N_PITCH], cm: vec![0; N_TATUMS * N_CHROMA] }
    }

    pub fn pr_at(&self, tatum: usize, pitch_col: usize) -> u8 {
        self.pr[tatum * N_PITCH + pitch_col]
    }

    pub fn cm_at(&self, tatum: usize, class: usize) -> u8 {
        self.cm[tatum * N_CHROMA + class]
    }
}

/// Per-note view of its bar's target plus the local tatum row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PianorollTarget<'a> {
    pub pr: &'a [u8],
    pub cm: &'a [u8],
    pub local_row: u8,
}

/// Targets for a whole segment, with per-bar grids shared by the notes
/// of that bar.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTargets {
    pub bars: Vec<BarTarget>,
    /// Index into `bars` for each note.
    pub note_bar: Vec<usize>,
    /// Clean onset tatum of each note.
    pub local_row: Vec<u8>,
}

impl SegmentTargets {
    pub fn n_notes(&self) -> usize {
        self.note_bar.len()
    }

    pub fn for_note(&self, n: usize) -> PianorollTarget<'_> {
        let bar = &self.bars[self.note_bar[n]];
        PianorollTarget { pr: &bar.pr, cm: &bar.cm, local_row: self.local_row[n] }
    }
}

/// Number of tatums a duration token sounds for: one tatum is two
/// eighth-crotchet units; ceil keeps minimal notes visible.
pub(crate) fn sustain_tatums(duration: u8) -> usize {
    (duration as usize).div_ceil(2)
}

/// Build targets from a segment's clean tokens.
pub fn build_targets(segment: &Segment) -> SegmentTargets {
    let mut bars: Vec<BarTarget> = Vec::new();
    let mut note_bar = Vec::with_capacity(segment.len());
    let mut local_row = Vec::with_capacity(segment.len());

    let mut run_start = 0usize;
    while run_start < segment.len() {
        let bar_id = segment.bar_index[run_start];
        let mut run_end = run_start;
        while run_end < segment.len() && segment.bar_index[run_end] == bar_id {
            run_end += 1;
        }

        let mut target = BarTarget::zeros();
        for token in &segment.clean_tokens[run_start..run_end] {
            let onset = token.position as usize;
            let end = (onset + sustain_tatums(token.duration)).min(N_TATUMS);
            let pitch_col = token.pitch as usize - 22;
            let class = token.pitch as usize % 12;
            for t in onset..end {
                target.pr[t * N_PITCH + pitch_col] = 1;
                target.cm[t * N_CHROMA + class] = 1;
            }
        }

        let slot = bars.len();
        bars.push(target);
        for token in &segment.clean_tokens[run_start..run_end] {
            note_bar.push(slot);
            local_row.push(token.position);
        }
        run_start = run_end;
    }

    SegmentTargets { bars, note_bar, local_row }
}
