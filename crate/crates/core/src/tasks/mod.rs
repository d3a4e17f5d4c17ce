//! Downstream-task adapters: task definitions, the performance-MIDI
//! pseudo-tokenization heuristic, velocity binning, tatum/note label
//! projections, and fold construction.

pub mod labels;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::MetricKind;
use crate::rng::{seeded, Stream};
use crate::score::{beat, round_half_up, validate_score, Beat, Note, Score, TimeUnit};
use crate::tokenizer::Segment;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskName {
    /// Symbolic genre classification.
    Sgc,
    /// Piano performer style classification.
    Ps,
    /// Emotion recognition.
    Er,
    /// Beat note prediction (performance MIDI).
    Bp,
    /// Downbeat note prediction.
    Dbp,
    /// Chord root estimation (tatum labels, CSR metric).
    Cr,
    /// Local key estimation.
    Lk,
    /// Melody extraction.
    Me,
    /// Velocity class estimation.
    Ve,
    /// Motif note identification.
    Mnid,
    /// Violin fingering prediction.
    Vf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Note,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSpec {
    Fixed,
    KFold { k: usize, seed: u64 },
}

impl TaskName {
    pub fn level(self) -> TaskLevel {
        match self {
            TaskName::Sgc | TaskName::Ps | TaskName::Er => TaskLevel::Sequence,
            _ => TaskLevel::Note,
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            TaskName::Bp | TaskName::Dbp | TaskName::Mnid => MetricKind::F1,
            TaskName::Cr | TaskName::Lk => MetricKind::Csr,
            _ => MetricKind::Accuracy,
        }
    }

    /// Canonical class count, where the task pins one. Chord root and
    /// local key vocabularies depend on the dataset and must be given
    /// explicitly.
    pub fn default_classes(self) -> Option<usize> {
        match self {
            TaskName::Sgc => Some(5),
            TaskName::Ps => Some(8),
            TaskName::Er => Some(4),
            TaskName::Bp | TaskName::Dbp | TaskName::Mnid => Some(2),
            TaskName::Me => Some(3),
            TaskName::Ve => Some(6),
            TaskName::Vf => Some(240),
            TaskName::Cr | TaskName::Lk => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SGC" => Ok(TaskName::Sgc),
            "PS" => Ok(TaskName::Ps),
            "ER" => Ok(TaskName::Er),
            "BP" => Ok(TaskName::Bp),
            "DBP" => Ok(TaskName::Dbp),
            "CR" => Ok(TaskName::Cr),
            "LK" => Ok(TaskName::Lk),
            "ME" => Ok(TaskName::Me),
            "VE" => Ok(TaskName::Ve),
            "MNID" => Ok(TaskName::Mnid),
            "VF" => Ok(TaskName::Vf),
            other => Err(CoreError::Task(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for TaskName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskName::Sgc => "SGC",
            TaskName::Ps => "PS",
            TaskName::Er => "ER",
            TaskName::Bp => "BP",
            TaskName::Dbp => "DBP",
            TaskName::Cr => "CR",
            TaskName::Lk => "LK",
            TaskName::Me => "ME",
            TaskName::Ve => "VE",
            TaskName::Mnid => "MNID",
            TaskName::Vf => "VF",
        };
        write!(f, "{s}")
    }
}

/// A fully resolved task definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    pub level: TaskLevel,
    pub n_classes: usize,
    pub metric: MetricKind,
    pub split: SplitSpec,
}

impl TaskSpec {
    pub fn new(name: TaskName, n_classes: Option<usize>) -> Result<Self> {
        let n_classes = n_classes.or(name.default_classes()).ok_or_else(|| {
            CoreError::Task(format!("task {name} needs an explicit class count"))
        })?;
        Ok(TaskSpec {
            name,
            level: name.level(),
            n_classes,
            metric: name.metric(),
            split: SplitSpec::Fixed,
        })
    }

    pub fn with_split(mut self, split: SplitSpec) -> Self {
        self.split = split;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.level != self.name.level() {
            return Err(CoreError::Task(format!(
                "task {} is a {:?}-level task",
                self.name,
                self.name.level()
            )));
        }
        if self.metric != self.name.metric() {
            return Err(CoreError::Task(format!(
                "task {} uses the {} metric",
                self.name,
                self.name.metric()
            )));
        }
        if self.n_classes == 0 {
            return Err(CoreError::Task("n_classes must be >= 1".into()));
        }
        if let SplitSpec::KFold { k, .. } = self.split {
            if k < 2 {
                return Err(CoreError::Task("k-fold needs k >= 2".into()));
            }
        }
        Ok(())
    }
}

/// Labels for one segment-sized example.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleLabels {
    Note(Vec<u32>),
    Seq(u32),
}

/// A segment paired with its labels; `tatum_gt` carries the tatum-level
/// ground truth needed for CSR scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub segment: Segment,
    pub labels: ExampleLabels,
    pub tatum_gt: Option<Vec<u32>>,
}

/// Train/valid/test examples for one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Fold the tempo into [40, 200] BPM by repeated doubling/halving.
pub fn fold_tempo(mut bpm: Beat) -> Beat {
    let lo = Ratio::from_integer(40);
    let hi = Ratio::from_integer(200);
    while bpm < lo {
        bpm *= 2;
    }
    while bpm > hi {
        bpm /= 2;
    }
    bpm
}

/// Tempo implied by a median note duration in seconds.
pub fn bp_tempo(median_duration_secs: Beat) -> Beat {
    fold_tempo(Ratio::from_integer(60) / median_duration_secs)
}

fn median(mut values: Vec<Beat>) -> Beat {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2
    }
}

/// Convert a performance score in seconds into a quantized beat-unit
/// score by assuming a constant tempo and 4/4 bars.
///
/// The beat length is the median note duration, folded into [40, 200]
/// BPM; onsets quantize to 1/4-crotchet and durations to 1/8-crotchet
/// steps (floored at 1/8); downbeats run every 4 crotchets from the
/// first quantized onset.
pub fn bp_preprocess(score: &Score) -> Result<Score> {
    if score.time_unit != TimeUnit::Seconds {
        return Err(CoreError::Task("bp_preprocess expects a seconds-unit score".into()));
    }
    if score.notes.is_empty() {
        return Err(CoreError::Task("bp_preprocess: empty note list".into()));
    }

    let tempo = bp_tempo(median(score.notes.iter().map(|n| n.duration).collect()));
    let secs_to_beats = tempo / 60;

    let quarter = beat(1, 4);
    let eighth_of_crotchet = beat(1, 8);
    let mut notes = Vec::with_capacity(score.notes.len());
    for n in &score.notes {
        let onset = beat(round_half_up(n.onset * secs_to_beats * 4), 4);
        let duration = beat(round_half_up(n.duration * secs_to_beats * 8), 8)
            .max(eighth_of_crotchet);
        debug_assert!(onset.denom().abs() <= 4 && (onset / quarter).is_integer());
        notes.push(Note { onset, duration, ..n.clone() });
    }

    let first = notes.iter().map(|n| n.onset).min().unwrap();
    let last = notes.iter().map(|n| n.onset).max().unwrap();
    let mut downbeats = Vec::new();
    let mut db = first;
    while db <= last {
        downbeats.push(db);
        db += 4;
    }

    let mut out = Score::new(notes, downbeats, TimeUnit::Beats);
    out.source_meta = format!("{} [tempo {} bpm]", score.source_meta, tempo);
    validate_score(out)
}

/// Dynamics class names for the six velocity bins.
pub const VELOCITY_CLASS_NAMES: [&str; 6] = ["pp", "p", "mp", "mf", "f", "ff"];

/// Lower bounds of classes p..ff; velocities below 32 are pp.
pub const VELOCITY_BIN_EDGES: [u8; 5] = [32, 48, 64, 80, 96];

pub fn velocity_to_class(velocity: u8) -> Result<u32> {
    velocity_to_class_with(&VELOCITY_BIN_EDGES, velocity)
}

pub fn velocity_to_class_with(edges: &[u8; 5], velocity: u8) -> Result<u32> {
    if velocity == 0 || velocity > 127 {
        return Err(CoreError::Task(format!("velocity {velocity} outside [1,127]")));
    }
    Ok(edges.iter().filter(|&&e| velocity >= e).count() as u32)
}

/// Onset tatum of each note on the normalized grid (round half-up of
/// 4x onset in crotchets).
pub fn onset_tatums(score: &Score) -> Result<Vec<u32>> {
    if score.time_unit != TimeUnit::Beats {
        return Err(CoreError::Task("onset tatums need a beat-unit score".into()));
    }
    score
        .notes
        .iter()
        .map(|n| {
            let t = round_half_up(n.onset * 4);
            u32::try_from(t).map_err(|_| CoreError::Task(format!("negative tatum {t}")))
        })
        .collect()
}

/// Give each note the label of its onset tatum.
pub fn project_tatum_labels(score: &Score, tatum_labels: &[u32]) -> Result<Vec<u32>> {
    let onsets = onset_tatums(score)?;
    onsets
        .iter()
        .map(|&t| {
            tatum_labels.get(t as usize).copied().ok_or_else(|| {
                CoreError::Task(format!(
                    "coverage gap: note at tatum {t} but only {} tatum labels",
                    tatum_labels.len()
                ))
            })
        })
        .collect()
}

/// Project per-note predictions back onto a tatum grid: each tatum takes
/// the prediction of the most recent note onset at or before it; ties at
/// one tatum resolve by majority, then lowest class id. Tatums before
/// the first onset take the first note's prediction (with a warning).
pub fn notes_to_tatum_predictions(
    note_preds: &[u32],
    onset_tatums: &[u32],
    n_tatums: usize,
) -> Result<Vec<u32>> {
    if note_preds.len() != onset_tatums.len() {
        return Err(CoreError::Task(format!(
            "{} predictions vs {} onsets",
            note_preds.len(),
            onset_tatums.len()
        )));
    }
    if note_preds.is_empty() || n_tatums == 0 {
        return Err(CoreError::Task("need at least one note and one tatum".into()));
    }

    use std::collections::BTreeMap;
    let mut by_tatum: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&pred, &t) in note_preds.iter().zip(onset_tatums) {
        by_tatum.entry(t).or_default().push(pred);
    }

    let resolved: Vec<(u32, u32)> = by_tatum
        .into_iter()
        .map(|(t, preds)| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for p in preds {
                *counts.entry(p).or_default() += 1;
            }
            let best = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&label, _)| label)
                .unwrap();
            (t, best)
        })
        .collect();

    if resolved[0].0 > 0 {
        log::warn!(
            "tatums 0..{} precede the first note onset; using the first note's prediction",
            resolved[0].0
        );
    }
    let mut out = Vec::with_capacity(n_tatums);
    let mut cursor = 0usize;
    let mut current = resolved[0].1;
    for t in 0..n_tatums as u32 {
        while cursor < resolved.len() && resolved[cursor].0 <= t {
            current = resolved[cursor].1;
            cursor += 1;
        }
        out.push(current);
    }
    Ok(out)
}

/// Score-based wrapper over [`notes_to_tatum_predictions`].
pub fn notes_to_tatum_predictions_for_score(
    note_preds: &[u32],
    score: &Score,
    n_tatums: usize,
) -> Result<Vec<u32>> {
    let onsets = onset_tatums(score)?;
    notes_to_tatum_predictions(note_preds, &onsets, n_tatums)
}

/// Seeded round-robin folds over piece ids. Folds partition the input;
/// sizes differ by at most one.
pub fn make_folds(piece_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(CoreError::Task("k must be >= 2".into()));
    }
    if piece_ids.len() < k {
        return Err(CoreError::Task(format!(
            "{} pieces cannot fill {k} folds",
            piece_ids.len()
        )));
    }
    let mut order: Vec<String> = piece_ids.to_vec();
    order.shuffle(&mut seeded(seed, Stream::Folds, 0));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}
