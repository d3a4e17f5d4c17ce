//! Pre-training: corrupt, forward, loss, StableAdamW step; checkpoint
//! selection by validation token reconstruction accuracy.
//!
//! Determinism: piece split, epoch shuffles, per-visit corruption and
//! dropout all draw from streams derived from the run seed; batch
//! gradients are computed in parallel but reduced sequentially in slot
//! order, so results are bit-identical across runs and thread counts.

use serde::{Deserialize, Serialize};

use super::checkpoint::ValidationMeta;
use super::loss::{pretrain_loss, pretrain_loss_with_grads, LossBreakdown};
use super::optim::{stable_adamw_step, OptimizerConfig, TrainState};
use crate::error::{CoreError, Result};
use crate::model::{HeadOutputs, ModelConfig, PretrainModel};
use crate::par;
use crate::rng::{seeded, Stream};
use crate::ssl::{
    build_targets, corrupt, sample_corruption_set, CorruptionConfig, CorruptionRecord,
    SegmentTargets,
};
use crate::tokenizer::shard::Piece;
use crate::tokenizer::{segment, Attr, Segment, TokenIds, ATTRS};
use rand::seq::SliceRandom;

/// Corruption seed namespace for validation segments, far above any
/// train-step index.
const VAL_SEED_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub corruption: CorruptionConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub eval_interval: u64,
    /// Cap on validation segments per evaluation; 0 means all.
    pub eval_max_segments: usize,
    pub valid_fraction: f64,
    pub max_seq_len: usize,
    /// Enable the pianoroll/chromagram prediction objective.
    pub pianoroll: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            corruption: CorruptionConfig::default(),
            batch_size: 12,
            steps: 2000,
            eval_interval: 200,
            eval_max_segments: 0,
            valid_fraction: 0.15,
            max_seq_len: 1024,
            pianoroll: true,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.corruption.validate()?;
        if self.batch_size == 0 || self.max_seq_len == 0 {
            return Err(CoreError::Training("batch_size and max_seq_len must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(CoreError::Training("eval_interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(CoreError::Training("valid_fraction outside [0,1)".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// Model at the best validation checkpoint.
    pub model: PretrainModel,
    /// Optimizer state at that checkpoint.
    pub state: TrainState,
    pub best: ValidationMeta,
    pub metrics: Vec<MetricRecord>,
}

/// Aggregate validation statistics.
#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    pub token_accuracy: f64,
    pub attr_accuracy: [f64; 4],
    pub token_ce: f64,
    pub pianoroll: f64,
    pub loss: f64,
}

struct TrainItem {
    ids: Vec<TokenIds>,
    record: CorruptionRecord,
    targets_slot: Option<usize>,
    n_real: usize,
}

/// A validation segment corrupted once with a fixed derived seed.
pub struct EvalItem {
    pub segment_index: usize,
    pub ids: Vec<TokenIds>,
    pub record: CorruptionRecord,
    pub targets: Option<SegmentTargets>,
    pub n_real: usize,
}

fn pad_ids(ids: &[TokenIds], len: usize) -> Vec<TokenIds> {
    let mut out = ids.to_vec();
    out.resize(len, TokenIds::pad());
    out
}

/// 85/15-style piece-level split, seeded. With a single piece the
/// validation side reuses the training pieces.
pub fn split_pieces(n: usize, valid_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, Stream::Split, 0));
    let n_valid = ((valid_fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    let valid: Vec<usize> = order[..n_valid].to_vec();
    let train: Vec<usize> = order[n_valid..].to_vec();
    if valid.is_empty() {
        log::warn!("corpus too small for a held-out split; validating on the training pieces");
        return (train.clone(), train);
    }
    (train, valid)
}

fn segments_of(pieces: &[&Piece], max_seq_len: usize) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for piece in pieces {
        if piece.tokens.is_empty() {
            log::warn!("piece {} has no notes; skipped", piece.id);
            continue;
        }
        out.extend(segment(&piece.tokens, &piece.id, max_seq_len)?);
    }
    Ok(out)
}

/// Corrupt the validation segments once with fixed seeds.
pub fn make_eval_items(
    segments: &[Segment],
    config: &PretrainConfig,
) -> Result<Vec<EvalItem>> {
    let cap = if config.eval_max_segments == 0 {
        segments.len()
    } else {
        config.eval_max_segments.min(segments.len())
    };
    (0..cap)
        .map(|j| {
            let seg = &segments[j];
            let mut rng = seeded(config.seed, Stream::Corruption, VAL_SEED_OFFSET + j as u64);
            let indices = sample_corruption_set(seg.len(), &config.corruption, &mut rng);
            let (corrupted, record) = corrupt(seg, &indices, &config.corruption, &mut rng)?;
            Ok(EvalItem {
                segment_index: j,
                ids: corrupted.tokens,
                record,
                targets: config.pianoroll.then(|| build_targets(seg)),
                n_real: seg.len(),
            })
        })
        .collect()
}

fn item_loss_and_grads(
    model: &PretrainModel,
    item: &TrainItem,
    targets: Option<&SegmentTargets>,
    dropout_seed: Option<u64>,
) -> Result<(LossBreakdown, PretrainModel)> {
    let mut rng = dropout_seed.map(|s| seeded(s, Stream::Dropout, 0));
    let (h, cache) = model.encoder.forward_train(&item.ids, rng.as_mut())?;
    let outputs = model.head.forward(&h);
    let (breakdown, lgrads) =
        pretrain_loss_with_grads(&outputs, &item.record, targets, item.n_real)?;

    let mut grads = model.zeros_like();
    let d_outputs = HeadOutputs {
        token_logits: lgrads.d_token_logits,
        pr: lgrads.d_pr,
        cm: lgrads.d_cm,
    };
    let dh = model.head.backward(&h, &d_outputs, &mut grads.head);
    model.encoder.backward(&cache, &dh, &mut grads.encoder);
    Ok((breakdown, grads))
}

fn add_scaled(acc: &mut PretrainModel, other: &PretrainModel, scale: f64) {
    for ((_, a), (_, o)) in acc.params_mut().into_iter().zip(other.params()) {
        a.scaled_add(scale, o);
    }
}

/// Evaluate reconstruction quality on fixed corrupted segments.
/// Accuracy is micro-averaged over corrupted positions: a token counts
/// as correct only when all four attribute argmaxes match the clean
/// token.
pub fn evaluate(model: &PretrainModel, items: &[EvalItem]) -> Result<EvalStats> {
    let results: Vec<Result<(LossBreakdown, [u64; 4], u64, u64)>> = par::map(items, |item| {
        let (h, _) = model.encoder.forward(&item.ids)?;
        let outputs = model.head.forward(&h);
        let breakdown =
            pretrain_loss(&outputs, &item.record, item.targets.as_ref(), item.n_real)?;

        let mut attr_hits = [0u64; 4];
        let mut token_hits = 0u64;
        for (&idx, original) in item.record.corrupted_indices.iter().zip(&item.record.originals)
        {
            let row = outputs.token_logits.row(idx);
            let mut all = true;
            for attr in ATTRS {
                let range = crate::model::attr_logit_range(attr);
                let pred = range
                    .clone()
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap()
                    - range.start;
                if pred == original.attr_id(attr) as usize {
                    attr_hits[attr as usize] += 1;
                } else {
                    all = false;
                }
            }
            token_hits += all as u64;
        }
        Ok((breakdown, attr_hits, token_hits, item.record.corrupted_indices.len() as u64))
    });

    let mut token_ce = 0.0;
    let mut pianoroll = 0.0;
    let mut attr_hits = [0u64; 4];
    let mut token_hits = 0u64;
    let mut corrupted = 0u64;
    let n = items.len().max(1) as f64;
    for r in results {
        let (b, ah, th, c) = r?;
        token_ce += b.token_ce / n;
        pianoroll += b.pianoroll() / n;
        for (acc, h) in attr_hits.iter_mut().zip(ah) {
            *acc += h;
        }
        token_hits += th;
        corrupted += c;
    }
    let denom = corrupted.max(1) as f64;
    Ok(EvalStats {
        token_accuracy: token_hits as f64 / denom,
        attr_accuracy: attr_hits.map(|h| h as f64 / denom),
        token_ce,
        pianoroll,
        loss: token_ce + pianoroll,
    })
}

/// Run pre-training over a token corpus.
pub fn pretrain(pieces: &[Piece], config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if pieces.is_empty() {
        return Err(CoreError::Training("empty corpus".into()));
    }

    let (train_idx, valid_idx) = split_pieces(pieces.len(), config.valid_fraction, config.seed);
    let train_pieces: Vec<&Piece> = train_idx.iter().map(|&i| &pieces[i]).collect();
    let valid_pieces: Vec<&Piece> = valid_idx.iter().map(|&i| &pieces[i]).collect();

    let train_segments = segments_of(&train_pieces, config.max_seq_len)?;
    let valid_segments = segments_of(&valid_pieces, config.max_seq_len)?;
    if train_segments.is_empty() || valid_segments.is_empty() {
        return Err(CoreError::Training("corpus produced no segments".into()));
    }

    let train_targets: Vec<Option<SegmentTargets>> = if config.pianoroll {
        par::map(&train_segments, |seg| Some(build_targets(seg)))
    } else {
        train_segments.iter().map(|_| None).collect()
    };
    let eval_items = make_eval_items(&valid_segments, config)?;

    let mut model = PretrainModel::init(&config.model, config.seed)?;
    let mut state = TrainState::new(&model.params());
    let mut metrics: Vec<MetricRecord> = Vec::new();

    let mut best: Option<(ValidationMeta, PretrainModel, TrainState)> = None;
    let run_eval = |step: u64,
                    model: &PretrainModel,
                        state: &TrainState,
                        metrics: &mut Vec<MetricRecord>,
                        best: &mut Option<(ValidationMeta, PretrainModel, TrainState)>|
     -> Result<()> {
        let stats = evaluate(model, &eval_items)?;
        let rec = |metric: &str, value: f64| MetricRecord {
            step,
            split: "valid".into(),
            metric: metric.into(),
            value,
        };
        metrics.push(rec("loss", stats.loss));
        metrics.push(rec("token_ce", stats.token_ce));
        metrics.push(rec("pianoroll", stats.pianoroll));
        metrics.push(rec("token_accuracy", stats.token_accuracy));
        for (attr, acc) in ATTRS.iter().zip(stats.attr_accuracy) {
            let name = match attr {
                Attr::BarFlag => "accuracy_bar_flag",
                Attr::Position => "accuracy_position",
                Attr::Pitch => "accuracy_pitch",
                Attr::Duration => "accuracy_duration",
            };
            metrics.push(rec(name, acc));
        }
        let is_better = best
            .as_ref()
            .map(|(meta, _, _)| stats.token_accuracy > meta.token_accuracy)
            .unwrap_or(true);
        if is_better {
            let meta = ValidationMeta {
                step,
                token_accuracy: stats.token_accuracy,
                attr_accuracy: stats.attr_accuracy,
                token_ce: stats.token_ce,
            };
            *best = Some((meta, model.clone(), state.clone()));
        }
        Ok(())
    };

    run_eval(0, &model, &state, &mut metrics, &mut best)?;

    let n_train = train_segments.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epoch: u64 = 0;
    order.shuffle(&mut seeded(config.seed, Stream::Shuffle, epoch));
    let mut cursor = 0usize;
    let mut divergence_strikes = 0u32;

    for step in 1..=config.steps {
        // assemble the batch, reshuffling at epoch boundaries
        let mut batch_idx = Vec::with_capacity(config.batch_size);
        while batch_idx.len() < config.batch_size {
            if cursor == n_train {
                epoch += 1;
                order.shuffle(&mut seeded(config.seed, Stream::Shuffle, epoch));
                cursor = 0;
                if !batch_idx.is_empty() {
                    break; // batches never mix epochs
                }
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }

        let max_len = batch_idx.iter().map(|&i| train_segments[i].len()).max().unwrap();
        let items: Vec<(TrainItem, Option<u64>)> = batch_idx
            .iter()
            .enumerate()
            .map(|(slot, &seg_i)| {
                let seg = &train_segments[seg_i];
                let visit = step * config.batch_size as u64 + slot as u64;
                let mut rng = seeded(config.seed, Stream::Corruption, visit);
                let indices = sample_corruption_set(seg.len(), &config.corruption, &mut rng);
                let (corrupted, record) = corrupt(seg, &indices, &config.corruption, &mut rng)?;
                let dropout_seed = (config.model.dropout > 0.0)
                    .then(|| crate::rng::derive_seed(config.seed, Stream::Dropout, visit));
                Ok((
                    TrainItem {
                        ids: pad_ids(&corrupted.tokens, max_len),
                        record,
                        targets_slot: Some(seg_i),
                        n_real: seg.len(),
                    },
                    dropout_seed,
                ))
            })
            .collect::<Result<_>>()?;

        let results: Vec<Result<(LossBreakdown, PretrainModel)>> =
            par::map(&items, |(item, dropout_seed)| {
                let targets = item.targets_slot.and_then(|i| train_targets[i].as_ref());
                item_loss_and_grads(&model, item, targets, *dropout_seed)
            });

        let mut grads = model.zeros_like();
        let mut batch_loss = LossBreakdown::default();
        let scale = 1.0 / items.len() as f64;
        let mut finite = true;
        for r in results {
            let (breakdown, g) = r?;
            finite &= breakdown.total.is_finite();
            batch_loss.total += breakdown.total * scale;
            batch_loss.token_ce += breakdown.token_ce * scale;
            batch_loss.pr_bar += breakdown.pr_bar * scale;
            batch_loss.cm_bar += breakdown.cm_bar * scale;
            batch_loss.pr_local += breakdown.pr_local * scale;
            batch_loss.cm_local += breakdown.cm_local * scale;
            add_scaled(&mut grads, &g, scale);
        }

        if !finite {
            divergence_strikes += 1;
            log::warn!("step {step}: non-finite loss; skipping optimizer step");
        } else {
            let step_result = stable_adamw_step(
                &mut model.params_mut(),
                &grads.params(),
                &mut state,
                &config.optimizer,
            );
            match step_result {
                Ok(()) => divergence_strikes = 0,
                Err(e) => {
                    divergence_strikes += 1;
                    log::warn!("step {step}: {e}");
                }
            }
        }
        if divergence_strikes >= 2 {
            return Err(CoreError::Training(format!(
                "training diverged: non-finite loss or gradients at consecutive steps (step {step})"
            )));
        }

        let rec = |metric: &str, value: f64| MetricRecord {
            step,
            split: "train".into(),
            metric: metric.into(),
            value,
        };
        metrics.push(rec("loss", batch_loss.total));
        metrics.push(rec("token_ce", batch_loss.token_ce));
        metrics.push(rec("pianoroll", batch_loss.pianoroll()));

        if step % config.eval_interval == 0 || step == config.steps {
            run_eval(step, &model, &state, &mut metrics, &mut best)?;
        }
    }

    let (best_meta, best_model, best_state) = best.expect("at least one evaluation ran");
    let mut state = best_state;
    state.best_valid_acc = Some(best_meta.token_accuracy);
    Ok(PretrainOutcome { model: best_model, state, best: best_meta, metrics })
}
