//! Fine-tuning: attach a fresh task head to a pre-trained encoder and
//! jointly optimize both, selecting the best checkpoint by the task's
//! designated validation metric.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::{stable_adamw_step, OptimizerConfig, TrainState};
use super::pretrain::MetricRecord;
use crate::error::{CoreError, Result};
use crate::metrics::{accuracy, csr, f1_binary, MetricKind, MetricReport};
use crate::model::{argmax_rows, softmax_rows, Encoder, TaskHead, TaskModel};
use crate::par;
use crate::rng::{seeded, Stream};
use crate::tasks::{
    notes_to_tatum_predictions, ExampleLabels, LabeledExample, TaskDataset, TaskLevel, TaskSpec,
};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            optimizer: OptimizerConfig::default(),
            batch_size: 12,
            steps: 500,
            eval_interval: 50,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub model: TaskModel,
    pub best_valid: f64,
    pub best_step: u64,
    pub test: MetricReport,
    pub metrics: Vec<MetricRecord>,
}

fn validate_examples(task: &TaskSpec, examples: &[LabeledExample], split: &str) -> Result<()> {
    for (i, ex) in examples.iter().enumerate() {
        match (&ex.labels, task.level) {
            (ExampleLabels::Note(labels), TaskLevel::Note) => {
                if labels.len() != ex.segment.len() {
                    return Err(CoreError::Task(format!(
                        "{split} example {i}: {} labels for {} notes",
                        labels.len(),
                        ex.segment.len()
                    )));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l as usize >= task.n_classes) {
                    return Err(CoreError::Task(format!(
                        "{split} example {i}: label {bad} >= n_classes {}",
                        task.n_classes
                    )));
                }
            }
            (ExampleLabels::Seq(label), TaskLevel::Sequence) => {
                if *label as usize >= task.n_classes {
                    return Err(CoreError::Task(format!(
                        "{split} example {i}: label {label} >= n_classes {}",
                        task.n_classes
                    )));
                }
            }
            _ => {
                return Err(CoreError::Task(format!(
                    "{split} example {i}: label level does not match task level {:?}",
                    task.level
                )))
            }
        }
    }
    Ok(())
}

/// Cross-entropy against integer labels; returns (loss, dlogits).
fn ce_rows(logits: &Array2<f64>, labels: &[u32]) -> (f64, Array2<f64>) {
    let probs = softmax_rows(logits);
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        loss -= probs[(i, label as usize)].max(1e-300).ln() / n;
        dlogits[(i, label as usize)] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / n);
    (loss, dlogits)
}

fn example_loss_and_grads(
    model: &TaskModel,
    ex: &LabeledExample,
) -> Result<(f64, TaskModel)> {
    let mut grads = model.zeros_like();
    let (h, cache) = model.encoder.forward_train(&ex.segment.tokens, None)?;
    let pad = vec![false; ex.segment.len()];

    let (loss, dh) = match (&model.head, &ex.labels) {
        (TaskHead::Note(head), ExampleLabels::Note(labels)) => {
            let logits = head.forward(&h);
            let (loss, dlogits) = ce_rows(&logits, labels);
            let ghead = match &mut grads.head {
                TaskHead::Note(g) => g,
                _ => unreachable!(),
            };
            (loss, head.backward(&h, &dlogits, ghead))
        }
        (TaskHead::Seq(head), ExampleLabels::Seq(label)) => {
            let (logits, seq_cache) = head.forward(&h, &pad)?;
            let (loss, dlogits) = ce_rows(&logits, &[*label]);
            let ghead = match &mut grads.head {
                TaskHead::Seq(g) => g,
                _ => unreachable!(),
            };
            (loss, head.backward(&seq_cache, &dlogits, ghead))
        }
        _ => return Err(CoreError::Task("head/label level mismatch".into())),
    };

    model.encoder.backward(&cache, &dh, &mut grads.encoder);
    Ok((loss, grads))
}

/// Predictions for one example: per note, or one per sequence.
fn predict(model: &TaskModel, ex: &LabeledExample) -> Result<Vec<u32>> {
    let (h, _) = model.encoder.forward(&ex.segment.tokens)?;
    match &model.head {
        TaskHead::Note(head) => {
            let logits = head.forward(&h);
            Ok(argmax_rows(&logits).iter().map(|&i| i as u32).collect())
        }
        TaskHead::Seq(head) => {
            let pad = vec![false; ex.segment.len()];
            let (logits, _) = head.forward(&h, &pad)?;
            Ok(vec![argmax_rows(&logits)[0] as u32])
        }
    }
}

/// Evaluate the task's designated metric over a split, micro-averaged.
pub fn evaluate_task(
    model: &TaskModel,
    task: &TaskSpec,
    examples: &[LabeledExample],
) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(CoreError::Task("empty evaluation split".into()));
    }
    let preds: Vec<Result<Vec<u32>>> = par::map(examples, |ex| predict(model, ex));

    let mut all_pred: Vec<u32> = Vec::new();
    let mut all_gt: Vec<u32> = Vec::new();
    for (ex, pred) in examples.iter().zip(preds) {
        let pred = pred?;
        match (&ex.labels, task.metric) {
            (ExampleLabels::Note(_), MetricKind::Csr) => {
                let gt_tatums = ex.tatum_gt.as_ref().ok_or_else(|| {
                    CoreError::Task("CSR evaluation needs tatum ground truth".into())
                })?;
                let onsets = ex.segment.onset_tatums();
                let pred_tatums =
                    notes_to_tatum_predictions(&pred, &onsets, gt_tatums.len())?;
                all_pred.extend(pred_tatums);
                all_gt.extend_from_slice(gt_tatums);
            }
            (ExampleLabels::Note(labels), _) => {
                all_pred.extend(pred);
                all_gt.extend_from_slice(labels);
            }
            (ExampleLabels::Seq(label), _) => {
                all_pred.extend(pred);
                all_gt.push(*label);
            }
        }
    }

    let value = match task.metric {
        MetricKind::Accuracy => accuracy(&all_pred, &all_gt)?,
        MetricKind::F1 => f1_binary(&all_pred, &all_gt)?,
        MetricKind::Csr => csr(&all_pred, &all_gt)?,
    };
    Ok(MetricReport { metric: task.metric, value, support: all_gt.len(), per_class: None })
}

/// Fine-tune `encoder` on a task dataset.
pub fn finetune(
    encoder: Encoder,
    task: &TaskSpec,
    data: &TaskDataset,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.optimizer.validate()?;
    task.validate()?;
    if data.train.is_empty() || data.valid.is_empty() || data.test.is_empty() {
        return Err(CoreError::Task("finetune needs train, valid and test examples".into()));
    }
    for (split, examples) in
        [("train", &data.train), ("valid", &data.valid), ("test", &data.test)]
    {
        validate_examples(task, examples, split)?;
    }

    let mut model = match task.level {
        TaskLevel::Note => TaskModel::with_note_head(encoder, task.n_classes, config.seed),
        TaskLevel::Sequence => TaskModel::with_seq_head(encoder, task.n_classes, config.seed),
    };
    let mut state = TrainState::new(&model.params());
    let mut metrics = Vec::new();

    let mut best: Option<(f64, u64, TaskModel)> = None;
    let mut run_eval = |step: u64,
                        model: &TaskModel,
                        metrics: &mut Vec<MetricRecord>,
                        best: &mut Option<(f64, u64, TaskModel)>|
     -> Result<()> {
        let report = evaluate_task(model, task, &data.valid)?;
        metrics.push(MetricRecord {
            step,
            split: "valid".into(),
            metric: report.metric.to_string(),
            value: report.value,
        });
        if best.as_ref().map(|(v, _, _)| report.value > *v).unwrap_or(true) {
            *best = Some((report.value, step, model.clone()));
        }
        Ok(())
    };
    run_eval(0, &model, &mut metrics, &mut best)?;

    let n_train = data.train.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epoch = 0u64;
    order.shuffle(&mut seeded(config.seed, Stream::Shuffle, epoch));
    let mut cursor = 0usize;

    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == n_train {
                epoch += 1;
                order.shuffle(&mut seeded(config.seed, Stream::Shuffle, epoch));
                cursor = 0;
                if !batch.is_empty() {
                    break;
                }
            }
            batch.push(&data.train[order[cursor]]);
            cursor += 1;
        }

        let results: Vec<Result<(f64, TaskModel)>> =
            par::map(&batch, |ex| example_loss_and_grads(&model, ex));

        let mut grads = model.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * scale;
            for ((_, a), (_, o)) in grads.params_mut().into_iter().zip(g.params()) {
                a.scaled_add(scale, o);
            }
        }
        if !loss.is_finite() {
            return Err(CoreError::Training(format!("non-finite loss at step {step}")));
        }
        stable_adamw_step(&mut model.params_mut(), &grads.params(), &mut state, &config.optimizer)?;

        metrics.push(MetricRecord {
            step,
            split: "train".into(),
            metric: "loss".into(),
            value: loss,
        });
        if step % config.eval_interval == 0 || step == config.steps {
            run_eval(step, &model, &mut metrics, &mut best)?;
        }
    }

    let (best_valid, best_step, best_model) = best.expect("at least one evaluation ran");
    let test = evaluate_task(&best_model, task, &data.test)?;
    metrics.push(MetricRecord {
        step: best_step,
        split: "test".into(),
        metric: test.metric.to_string(),
        value: test.value,
    });
    Ok(FinetuneOutcome { model: best_model, best_valid, best_step, test, metrics })
}
