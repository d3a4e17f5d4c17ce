//! Pre-training loss: cross-entropy over corrupted positions plus the
//! four-term pianoroll regression.
//!
//! The token loss is the mean over corrupted notes of the sum of the
//! four per-attribute cross-entropies against the clean values. The
//! pianoroll loss is the mean over all (non-pad) notes of
//! `mse(PR, PR^) + mse(CM, CM^) + mse(PR[pos], PR^[pos]) +
//! mse(CM[pos], CM^[pos])`, each mean-squared-error taken over its own
//! elements; local rows are indexed by the clean onset tatum. Total =
//! token + pianoroll with equal weight.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::model::heads::{attr_logit_range, HeadOutputs, TOKEN_LOGIT_DIM};
use crate::ssl::{CorruptionRecord, SegmentTargets, N_CHROMA, N_PITCH, N_TATUMS};
use crate::tokenizer::ATTRS;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub token_ce: f64,
    pub pr_bar: f64,
    pub cm_bar: f64,
    pub pr_local: f64,
    pub cm_local: f64,
}

impl LossBreakdown {
    pub fn pianoroll(&self) -> f64 {
        self.pr_bar + self.cm_bar + self.pr_local + self.cm_local
    }
}

/// Gradients of the loss w.r.t. the head outputs.
pub struct LossGrads {
    pub d_token_logits: Array2<f64>,
    pub d_pr: Array2<f64>,
    pub d_cm: Array2<f64>,
}

fn check_shapes(outputs: &HeadOutputs, n_real: usize) -> Result<()> {
    let s = outputs.token_logits.nrows();
    if outputs.token_logits.ncols() != TOKEN_LOGIT_DIM
        || outputs.pr.dim() != (s, N_TATUMS * N_PITCH)
        || outputs.cm.dim() != (s, N_TATUMS * N_CHROMA)
    {
        return Err(CoreError::Training("head output shapes are inconsistent".into()));
    }
    if n_real > s {
        return Err(CoreError::Training(format!(
            "{n_real} real notes but only {s} output rows"
        )));
    }
    Ok(())
}

/// Forward-only loss; `targets` absent means the pianoroll objective is
/// off and only the token term contributes. `n_real` is the number of
/// non-pad rows (pads, if any, come after).
pub fn pretrain_loss(
    outputs: &HeadOutputs,
    record: &CorruptionRecord,
    targets: Option<&SegmentTargets>,
    n_real: usize,
) -> Result<LossBreakdown> {
    let (breakdown, _) = loss_impl(outputs, record, targets, n_real, false)?;
    Ok(breakdown)
}

/// Loss plus gradients w.r.t. head outputs.
pub fn pretrain_loss_with_grads(
    outputs: &HeadOutputs,
    record: &CorruptionRecord,
    targets: Option<&SegmentTargets>,
    n_real: usize,
) -> Result<(LossBreakdown, LossGrads)> {
    let (breakdown, grads) = loss_impl(outputs, record, targets, n_real, true)?;
    Ok((breakdown, grads.expect("grads requested")))
}

fn loss_impl(
    outputs: &HeadOutputs,
    record: &CorruptionRecord,
    targets: Option<&SegmentTargets>,
    n_real: usize,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<LossGrads>)> {
    check_shapes(outputs, n_real)?;
    if let Some(t) = targets {
        if t.n_notes() != n_real {
            return Err(CoreError::Training(format!(
                "targets cover {} notes but segment has {n_real}",
                t.n_notes()
            )));
        }
    }

    let mut grads = want_grads.then(|| LossGrads {
        d_token_logits: Array2::zeros(outputs.token_logits.raw_dim()),
        d_pr: Array2::zeros(outputs.pr.raw_dim()),
        d_cm: Array2::zeros(outputs.cm.raw_dim()),
    });

    // Token reconstruction cross-entropy over corrupted positions.
    let n_corrupted = record.corrupted_indices.len();
    let mut token_ce = 0.0;
    if n_corrupted == 0 {
        log::warn!("pretrain loss: empty corruption set; token loss is 0");
    }
    for (&idx, original) in record.corrupted_indices.iter().zip(&record.originals) {
        if idx >= n_real {
            return Err(CoreError::Training(format!(
                "corrupted index {idx} beyond segment length {n_real}"
            )));
        }
        let row = outputs.token_logits.row(idx);
        for attr in ATTRS {
            let range = attr_logit_range(attr);
            let target_id = original.attr_id(attr) as usize;

            let max = range.clone().map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = range.clone().map(|c| (row[c] - max).exp()).sum();
            let lse = max + sum_exp.ln();
            token_ce += lse - row[range.start + target_id];

            if let Some(g) = grads.as_mut() {
                for (k, c) in range.clone().enumerate() {
                    let p = (row[c] - lse).exp();
                    let onehot = (k == target_id) as u8 as f64;
                    g.d_token_logits[(idx, c)] += (p - onehot) / n_corrupted as f64;
                }
            }
        }
    }
    if n_corrupted > 0 {
        token_ce /= n_corrupted as f64;
    }

    // Pianoroll regression over all real notes.
    let mut pr_bar = 0.0;
    let mut cm_bar = 0.0;
    let mut pr_local = 0.0;
    let mut cm_local = 0.0;
    if let Some(targets) = targets {
        let n = n_real as f64;
        let pr_cells = (N_TATUMS * N_PITCH) as f64;
        let cm_cells = (N_TATUMS * N_CHROMA) as f64;
        for note in 0..n_real {
            let target = targets.for_note(note);
            let row = target.local_row as usize;

            let pr_pred = outputs.pr.row(note);
            for (j, &t) in target.pr.iter().enumerate() {
                let diff = pr_pred[j] - t as f64;
                pr_bar += diff * diff / pr_cells / n;
                if let Some(g) = grads.as_mut() {
                    g.d_pr[(note, j)] += 2.0 * diff / pr_cells / n;
                }
            }
            for j in row * N_PITCH..(row + 1) * N_PITCH {
                let diff = pr_pred[j] - target.pr[j] as f64;
                pr_local += diff * diff / N_PITCH as f64 / n;
                if let Some(g) = grads.as_mut() {
                    g.d_pr[(note, j)] += 2.0 * diff / N_PITCH as f64 / n;
                }
            }

            let cm_pred = outputs.cm.row(note);
            for (j, &t) in target.cm.iter().enumerate() {
                let diff = cm_pred[j] - t as f64;
                cm_bar += diff * diff / cm_cells / n;
                if let Some(g) = grads.as_mut() {
                    g.d_cm[(note, j)] += 2.0 * diff / cm_cells / n;
                }
            }
            for j in row * N_CHROMA..(row + 1) * N_CHROMA {
                let diff = cm_pred[j] - target.cm[j] as f64;
                cm_local += diff * diff / N_CHROMA as f64 / n;
                if let Some(g) = grads.as_mut() {
                    g.d_cm[(note, j)] += 2.0 * diff / N_CHROMA as f64 / n;
                }
            }
        }
    }

    let breakdown = LossBreakdown {
        total: token_ce + pr_bar + cm_bar + pr_local + cm_local,
        token_ce,
        pr_bar,
        cm_bar,
        pr_local,
        cm_local,
    };
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::{build_targets, CorruptionMode};
    use crate::tokenizer::{CpToken, Segment};

    fn segment() -> Segment {
        Segment::from_clean(
            vec![
                (CpToken::new(1, 0, 60, 8).unwrap(), 0),
                (CpToken::new(0, 4, 64, 4).unwrap(), 0),
                (CpToken::new(1, 2, 72, 2).unwrap(), 1),
            ],
            "t",
            1024,
        )
        .unwrap()
    }

    fn record(seg: &Segment, indices: Vec<usize>) -> CorruptionRecord {
        CorruptionRecord {
            originals: indices.iter().map(|&i| seg.clean_tokens[i]).collect(),
            corrupted_indices: indices,
            mode: CorruptionMode::Rc,
        }
    }

    fn zero_outputs(s: usize) -> HeadOutputs {
        HeadOutputs {
            token_logits: Array2::zeros((s, TOKEN_LOGIT_DIM)),
            pr: Array2::zeros((s, N_TATUMS * N_PITCH)),
            cm: Array2::zeros((s, N_TATUMS * N_CHROMA)),
        }
    }

    #[test]
    fn uniform_logits_give_log_cardinality_ce() {
        let seg = segment();
        let rec = record(&seg, vec![0, 2]);
        let out = zero_outputs(3);
        let b = pretrain_loss(&out, &rec, None, 3).unwrap();
        let expect = (2.0f64).ln() + (16.0f64).ln() + (86.0f64).ln() + (64.0f64).ln();
        assert!((b.token_ce - expect).abs() < 1e-12, "{} vs {expect}", b.token_ce);
        assert_eq!(b.total, b.token_ce);
    }

    #[test]
    fn zero_predictions_loss_is_mean_squared_targets() {
        let seg = segment();
        let targets = build_targets(&seg);
        let rec = record(&seg, vec![]);
        let out = zero_outputs(3);
        let b = pretrain_loss(&out, &rec, Some(&targets), 3).unwrap();
        assert_eq!(b.token_ce, 0.0);

        let mut expect_pr = 0.0;
        for n in 0..3 {
            let t = targets.for_note(n);
            let ones: f64 = t.pr.iter().map(|&v| v as f64).sum();
            expect_pr += ones / (N_TATUMS * N_PITCH) as f64 / 3.0;
        }
        assert!((b.pr_bar - expect_pr).abs() < 1e-12);
        assert!(b.total > 0.0);
    }

    #[test]
    fn near_perfect_predictions_give_near_zero_loss() {
        let seg = segment();
        let targets = build_targets(&seg);
        let rec = record(&seg, vec![0, 1, 2]);
        let mut out = zero_outputs(3);
        for (i, tok) in seg.clean_tokens.iter().enumerate() {
            for attr in ATTRS {
                let range = attr_logit_range(attr);
                out.token_logits[(i, range.start + tok.attr_id(attr) as usize)] = 1e4;
            }
            let t = targets.for_note(i);
            for (j, &v) in t.pr.iter().enumerate() {
                out.pr[(i, j)] = v as f64;
            }
            for (j, &v) in t.cm.iter().enumerate() {
                out.cm[(i, j)] = v as f64;
            }
        }
        let b = pretrain_loss(&out, &rec, Some(&targets), 3).unwrap();
        assert!(b.total.abs() < 1e-10, "total {}", b.total);
    }

    #[test]
    fn loss_grads_match_finite_differences() {
        let seg = segment();
        let targets = build_targets(&seg);
        let rec = record(&seg, vec![0, 2]);
        let mut out = zero_outputs(3);
        // arbitrary smooth values
        for (i, v) in out.token_logits.iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.13;
        }
        for (i, v) in out.pr.iter_mut().enumerate() {
            *v = ((i * 17 % 7) as f64 - 3.0) * 0.21;
        }
        for (i, v) in out.cm.iter_mut().enumerate() {
            *v = ((i * 29 % 5) as f64 - 2.0) * 0.17;
        }
        let (_, grads) = pretrain_loss_with_grads(&out, &rec, Some(&targets), 3).unwrap();

        let h = 1e-6;
        let f = |o: &HeadOutputs| pretrain_loss(o, &rec, Some(&targets), 3).unwrap().total;
        for (r, c) in [(0usize, 0usize), (0, 5), (2, 100), (1, 120)] {
            let mut p = out.clone();
            p.token_logits[(r, c)] += h;
            let mut m = out.clone();
            m.token_logits[(r, c)] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let ana = grads.d_token_logits[(r, c)];
            assert!((num - ana).abs() < 1e-6, "logits[{r},{c}] {num} vs {ana}");
        }
        for (r, c) in [(0usize, 38usize), (1, 500), (2, 1375)] {
            let mut p = out.clone();
            p.pr[(r, c)] += h;
            let mut m = out.clone();
            m.pr[(r, c)] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            assert!((num - grads.d_pr[(r, c)]).abs() < 1e-6);
        }
        for (r, c) in [(0usize, 0usize), (2, 191)] {
            let mut p = out.clone();
            p.cm[(r, c)] += h;
            let mut m = out.clone();
            m.cm[(r, c)] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            assert!((num - grads.d_cm[(r, c)]).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_corruption_set_gives_zero_token_loss() {
        let seg = segment();
        let rec = record(&seg, vec![]);
        let out = zero_outputs(3);
        let b = pretrain_loss(&out, &rec, None, 3).unwrap();
        assert_eq!(b.total, 0.0);
    }
}
