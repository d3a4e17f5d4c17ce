//! Label files, split manifests, and dataset assembly.
//!
//! A label file is one JSON document per piece:
//! `{"piece": id, "level": "note"|"sequence"|"tatum", "labels": [int...]}`
//! with note labels aligned to the validated (sorted) note order and
//! tatum labels aligned to the normalized 1/4-crotchet grid of the
//! prepared score. A split manifest is either explicit id lists
//! (`{"train": [...], "valid": [...], "test": [...]}`) or
//! `{"folds": k, "seed": s}` for seeded cross-validation.
//!
//! Sequence-level and tatum-level pieces become a single example from
//! the piece's first segment; pieces longer than the segment cap are
//! truncated with a warning. Note-level pieces yield one example per
//! segment.

use serde::{Deserialize, Serialize};

use super::{
    bp_preprocess, project_tatum_labels, ExampleLabels, LabeledExample, TaskDataset, TaskLevel,
    TaskSpec,
};
use crate::error::{CoreError, Result};
use crate::score::{Score, TimeUnit};
use crate::tokenizer::{rescale_bars, segment, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub piece: String,
    pub level: String,
    pub labels: Vec<i64>,
}

pub fn parse_label_file(text: &str) -> Result<LabelFile> {
    let file: LabelFile =
        serde_json::from_str(text).map_err(|e| CoreError::Schema(format!("label file: {e}")))?;
    match file.level.as_str() {
        "note" | "sequence" | "tatum" => {}
        other => {
            return Err(CoreError::Schema(format!(
                "label level must be note/sequence/tatum, got {other:?}"
            )))
        }
    }
    if file.labels.iter().any(|&l| l < 0) {
        return Err(CoreError::Schema("negative label".into()));
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitManifest {
    Fixed { train: Vec<String>, valid: Vec<String>, test: Vec<String> },
    KFold { folds: usize, seed: u64 },
}

pub fn parse_split_manifest(text: &str) -> Result<SplitManifest> {
    serde_json::from_str(text).map_err(|e| CoreError::Schema(format!("split manifest: {e}")))
}

/// One piece with its labels, ready for example assembly.
#[derive(Debug, Clone)]
pub struct LabeledPiece {
    pub id: String,
    pub score: Score,
    pub labels: LabelFile,
}

/// Normalize a score for tokenization: performance input in seconds goes
/// through the tempo heuristic, beat input through bar rescaling.
pub fn prepare_score(score: &Score) -> Result<Score> {
    match score.time_unit {
        TimeUnit::Seconds => rescale_bars(&bp_preprocess(score)?),
        TimeUnit::Beats => rescale_bars(score),
    }
}

/// Build the examples for one piece under a task definition.
pub fn piece_examples(
    task: &TaskSpec,
    piece: &LabeledPiece,
    max_seq_len: usize,
) -> Result<Vec<LabeledExample>> {
    let prepared = prepare_score(&piece.score)?;
    let tokens = tokenize(&prepared)?;
    if tokens.is_empty() {
        return Err(CoreError::Task(format!("piece {}: no notes", piece.id)));
    }
    let labels_u32: Vec<u32> = piece.labels.labels.iter().map(|&l| l as u32).collect();

    match (task.level, piece.labels.level.as_str()) {
        (TaskLevel::Note, "note") => {
            if labels_u32.len() != tokens.len() {
                return Err(CoreError::Task(format!(
                    "piece {}: {} labels for {} notes",
                    piece.id,
                    labels_u32.len(),
                    tokens.len()
                )));
            }
            let segments = segment(&tokens, &piece.id, max_seq_len)?;
            let mut out = Vec::with_capacity(segments.len());
            let mut offset = 0;
            for seg in segments {
                let n = seg.len();
                out.push(LabeledExample {
                    segment: seg,
                    labels: ExampleLabels::Note(labels_u32[offset..offset + n].to_vec()),
                    tatum_gt: None,
                });
                offset += n;
            }
            Ok(out)
        }
        (TaskLevel::Note, "tatum") => {
            let note_labels = project_tatum_labels(&prepared, &labels_u32)?;
            let kept = tokens.len().min(max_seq_len);
            if kept < tokens.len() {
                log::warn!(
                    "piece {}: truncated to the first {kept} of {} notes for tatum labels",
                    piece.id,
                    tokens.len()
                );
            }
            let seg = segment(&tokens[..kept], &piece.id, max_seq_len)?.remove(0);
            let covered = 16 * (seg.bar_index.last().copied().unwrap() as usize + 1);
            let n_tatums = covered.min(labels_u32.len());
            Ok(vec![LabeledExample {
                labels: ExampleLabels::Note(note_labels[..kept].to_vec()),
                tatum_gt: Some(labels_u32[..n_tatums].to_vec()),
                segment: seg,
            }])
        }
        (TaskLevel::Sequence, "sequence") => {
            if labels_u32.len() != 1 {
                return Err(CoreError::Task(format!(
                    "piece {}: sequence level needs exactly one label",
                    piece.id
                )));
            }
            let kept = tokens.len().min(max_seq_len);
            if kept < tokens.len() {
                log::warn!("piece {}: truncated to {kept} notes for a sequence example", piece.id);
            }
            let seg = segment(&tokens[..kept], &piece.id, max_seq_len)?.remove(0);
            Ok(vec![LabeledExample {
                segment: seg,
                labels: ExampleLabels::Seq(labels_u32[0]),
                tatum_gt: None,
            }])
        }
        (level, file_level) => Err(CoreError::Task(format!(
            "piece {}: {file_level:?} labels cannot serve a {level:?}-level task",
            piece.id
        ))),
    }
}

fn collect_split(
    task: &TaskSpec,
    pieces: &[LabeledPiece],
    ids: &[String],
    max_seq_len: usize,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for id in ids {
        let piece = pieces
            .iter()
            .find(|p| &p.id == id)
            .ok_or_else(|| CoreError::Task(format!("split references unknown piece {id:?}")))?;
        out.extend(piece_examples(task, piece, max_seq_len)?);
    }
    Ok(out)
}

/// Assemble a dataset from explicit train/valid/test piece id lists.
pub fn assemble_fixed(
    task: &TaskSpec,
    pieces: &[LabeledPiece],
    train: &[String],
    valid: &[String],
    test: &[String],
    max_seq_len: usize,
) -> Result<TaskDataset> {
    Ok(TaskDataset {
        train: collect_split(task, pieces, train, max_seq_len)?,
        valid: collect_split(task, pieces, valid, max_seq_len)?,
        test: collect_split(task, pieces, test, max_seq_len)?,
    })
}

/// Assemble the dataset for one fold of seeded k-fold cross-validation:
/// fold `i` is the test split, fold `(i+1) % k` the validation split,
/// the rest train.
pub fn assemble_fold(
    task: &TaskSpec,
    pieces: &[LabeledPiece],
    k: usize,
    seed: u64,
    fold: usize,
    max_seq_len: usize,
) -> Result<TaskDataset> {
    if fold >= k {
        return Err(CoreError::Task(format!("fold {fold} out of range for k={k}")));
    }
    let ids: Vec<String> = pieces.iter().map(|p| p.id.clone()).collect();
    let folds = super::make_folds(&ids, k, seed)?;
    let test = folds[fold].clone();
    let valid = folds[(fold + 1) % k].clone();
    let train: Vec<String> = (0..k)
        .filter(|&j| j != fold && j != (fold + 1) % k)
        .flat_map(|j| folds[j].clone())
        .collect();
    if train.is_empty() {
        return Err(CoreError::Task("k too small: no training fold left".into()));
    }
    assemble_fixed(task, pieces, &train, &valid, &test, max_seq_len)
}
