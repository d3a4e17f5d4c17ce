//! Token corruption for pre-training.
//!
//! Bounded denoising (`Rc`) redraws each attribute of a selected note
//! uniformly from a half-open interval `[clip(v-r), clip(v+r))` around
//! its value, clipped to the attribute domain; the bar flag is always
//! redrawn from {0,1}. `RcInf` draws from the full attribute domain.
//! `Mlm` follows the classic 80/10/10 masking recipe with per-attribute
//! mask ids.
//!
//! The half-open interval is taken literally, which makes the original
//! value unreachable when clipping bites at the top of the domain (e.g.
//! pitch 107 with range 12 draws from [95, 107)). `inclusive_upper`
//! widens the interval to include the clipped upper endpoint instead.
//!
//! Draws happen in ascending index order, attributes in (bar flag,
//! position, pitch, duration) order; outputs are a pure function of
//! (segment, indices, config, rng seed).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tokenizer::{Attr, CpToken, Segment, TokenIds, VocabSpec, ATTRS};
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// Bounded random corruption with per-attribute ranges.
    Rc,
    /// Resampling from the full attribute domains.
    RcInf,
    /// 80/10/10 mask / random / keep.
    Mlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Fraction of note tokens to corrupt.
    pub ratio: f64,
    pub mode: CorruptionMode,
    pub r_pos: u16,
    pub r_pit: u16,
    pub r_dur: u16,
    /// Widen the sampling interval to include the clipped upper bound.
    pub inclusive_upper: bool,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            ratio: 0.30,
            mode: CorruptionMode::Rc,
            r_pos: 4,
            r_pit: 12,
            r_dur: 12,
            inclusive_upper: false,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(CoreError::Corruption(format!(
                "ratio {} outside [0,1]",
                self.ratio
            )));
        }
        Ok(())
    }

    fn range_for(&self, attr: Attr) -> u16 {
        match attr {
            Attr::Position => self.r_pos,
            Attr::Pitch => self.r_pit,
            Attr::Duration => self.r_dur,
            Attr::BarFlag => 0, // bar flag is always fully redrawn
        }
    }
}

/// Which notes were corrupted, their clean originals, and the mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    /// Sorted, unique indices into the segment.
    pub corrupted_indices: Vec<usize>,
    pub originals: Vec<CpToken>,
    pub mode: CorruptionMode,
}

/// `floor(ratio * n)` with a snap to the nearest integer to undo f64
/// representation error (0.3 * 10 must select 3 notes, not 2).
fn corruption_count(ratio: f64, n: usize) -> usize {
    let t = ratio * n as f64;
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r as usize
    } else {
        t.floor() as usize
    }
}

/// Uniformly sample exactly `floor(ratio * n_tokens)` distinct indices.
pub fn sample_corruption_set(
    n_tokens: usize,
    config: &CorruptionConfig,
    rng: &mut Rng,
) -> Vec<usize> {
    let k = corruption_count(config.ratio, n_tokens).min(n_tokens);
    let mut indices = rand::seq::index::sample(rng, n_tokens, k).into_vec();
    indices.sort_unstable();
    indices
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    for w in indices.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::Corruption("indices not sorted unique".into()));
        }
    }
    if let Some(&last) = indices.last() {
        if last >= len {
            return Err(CoreError::Corruption(format!(
                "index {last} out of range for segment of {len}"
            )));
        }
    }
    Ok(())
}

/// Uniform integer from `[lo, hi)` in semantic value space; an empty
/// interval keeps the original value.
fn sample_bounded(
    value: u16,
    range: u16,
    attr: Attr,
    inclusive_upper: bool,
    rng: &mut Rng,
) -> u16 {
    let min = VocabSpec::semantic_min(attr) as i32;
    let max = VocabSpec::semantic_max(attr) as i32;
    let clip = |z: i32| z.clamp(min, max);
    let lo = clip(value as i32 - range as i32);
    let hi = if inclusive_upper {
        clip(value as i32 + range as i32) + 1
    } else {
        clip(value as i32 + range as i32)
    };
    if lo >= hi {
        return value;
    }
    rng.random_range(lo..hi) as u16
}

fn sample_full_domain(attr: Attr, rng: &mut Rng) -> u16 {
    let min = VocabSpec::semantic_min(attr);
    let max = VocabSpec::semantic_max(attr);
    rng.random_range(min..=max)
}

fn record_for(segment: &Segment, indices: &[usize], mode: CorruptionMode) -> CorruptionRecord {
    CorruptionRecord {
        corrupted_indices: indices.to_vec(),
        originals: indices.iter().map(|&i| segment.clean_tokens[i]).collect(),
        mode,
    }
}

fn ids_from_semantic(values: [u16; 4]) -> TokenIds {
    TokenIds([
        values[0] - VocabSpec::semantic_min(Attr::BarFlag),
        values[1] - VocabSpec::semantic_min(Attr::Position),
        values[2] - VocabSpec::semantic_min(Attr::Pitch),
        values[3] - VocabSpec::semantic_min(Attr::Duration),
    ])
}

/// Bounded (or full-domain) random corruption at the given indices.
pub fn corrupt_rc(
    segment: &Segment,
    indices: &[usize],
    config: &CorruptionConfig,
    rng: &mut Rng,
) -> Result<(Segment, CorruptionRecord)> {
    if config.mode == CorruptionMode::Mlm {
        return Err(CoreError::Corruption("corrupt_rc called with MLM mode".into()));
    }
    check_indices(indices, segment.len())?;

    let mut out = segment.clone();
    for &i in indices {
        let clean = &segment.clean_tokens[i];
        let bar_flag = rng.random_range(0u16..2);
        let mut values = [bar_flag, 0, 0, 0];
        for attr in [Attr::Position, Attr::Pitch, Attr::Duration] {
            values[attr as usize] = match config.mode {
                CorruptionMode::RcInf => sample_full_domain(attr, rng),
                _ => sample_bounded(
                    clean.attr(attr),
                    config.range_for(attr),
                    attr,
                    config.inclusive_upper,
                    rng,
                ),
            };
        }
        out.tokens[i] = ids_from_semantic(values);
    }
    let record = record_for(segment, indices, config.mode);
    Ok((out, record))
}

/// Classic MLM corruption: per selected token, mask all four attributes
/// with p=0.8, resample each uniformly from its clean domain with p=0.1,
/// keep with p=0.1.
pub fn corrupt_mlm(
    segment: &Segment,
    indices: &[usize],
    rng: &mut Rng,
) -> Result<(Segment, CorruptionRecord)> {
    check_indices(indices, segment.len())?;

    let mut out = segment.clone();
    for &i in indices {
        match rng.random_range(0u8..10) {
            0..=7 => out.tokens[i] = TokenIds::mask(),
            8 => {
                let values = [
                    sample_full_domain(Attr::BarFlag, rng),
                    sample_full_domain(Attr::Position, rng),
                    sample_full_domain(Attr::Pitch, rng),
                    sample_full_domain(Attr::Duration, rng),
                ];
                out.tokens[i] = ids_from_semantic(values);
            }
            _ => {} // keep
        }
    }
    let record = record_for(segment, indices, CorruptionMode::Mlm);
    Ok((out, record))
}

/// Dispatch on the configured mode.
pub fn corrupt(
    segment: &Segment,
    indices: &[usize],
    config: &CorruptionConfig,
    rng: &mut Rng,
) -> Result<(Segment, CorruptionRecord)> {
    match config.mode {
        CorruptionMode::Mlm => corrupt_mlm(segment, indices, rng),
        _ => corrupt_rc(segment, indices, config, rng),
    }
}

/// Debug audit lines `{segment, index, attribute, old, new}` for every
/// attribute the corruption changed. No stability guarantee.
pub fn audit_lines(label: &str, corrupted: &Segment, record: &CorruptionRecord) -> Vec<String> {
    let mut lines = Vec::new();
    for (&i, original) in record.corrupted_indices.iter().zip(&record.originals) {
        let ids = &corrupted.tokens[i];
        for attr in ATTRS {
            let old_id = original.attr_id(attr);
            let new_id = ids.get(attr);
            if old_id == new_id {
                continue;
            }
            let new = if new_id == VocabSpec::mask_id(attr) {
                "\"mask\"".to_string()
            } else {
                (new_id + VocabSpec::semantic_min(attr)).to_string()
            };
            lines.push(format!(
                "{{\"segment\":\"{label}\",\"index\":{i},\"attribute\":\"{attr:?}\",\"old\":{},\"new\":{new}}}",
                original.attr(attr),
            ));
        }
    }
    lines
}
