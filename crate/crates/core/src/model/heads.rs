//! Prediction heads on top of the encoder.
//!
//! Pre-training uses one shared linear map producing the four attribute
//! logit blocks plus two linear regression heads for the bar pianoroll
//! and chromagram (local predictions are row slices of the bar
//! prediction). Fine-tuning attaches either a per-note linear classifier
//! or an attention-pooled sequence classifier. None of the heads use
//! dropout.

use ndarray::{Array1, Array2, Axis};

use super::encoder::{Params, ParamsMut};
use super::layers::Linear;
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::ssl::{N_CHROMA, N_PITCH, N_TATUMS};
use crate::tokenizer::{Attr, VocabSpec, ATTRS};

/// Total width of the four concatenated attribute logit blocks.
pub const TOKEN_LOGIT_DIM: usize = 2 + 16 + 86 + 64;

/// Column range of one attribute's logits inside the shared block.
pub fn attr_logit_range(attr: Attr) -> std::ops::Range<usize> {
    let mut offset = 0;
    for a in ATTRS {
        let width = VocabSpec::cardinality(a) as usize;
        if a == attr {
            return offset..offset + width;
        }
        offset += width;
    }
    unreachable!()
}

/// Per-note outputs of the pre-training head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// (S, 168): four categorical blocks per note.
    pub token_logits: Array2<f64>,
    /// (S, 16*86): bar pianoroll regression, row-major tatum x pitch.
    pub pr: Array2<f64>,
    /// (S, 16*12): bar chromagram regression.
    pub cm: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainHead {
    pub token: Linear,
    pub pr: Linear,
    pub cm: Linear,
}

impl PretrainHead {
    pub fn init(d_model: usize, rng: &mut Rng) -> Self {
        PretrainHead {
            token: Linear::init(d_model, TOKEN_LOGIT_DIM, true, rng),
            pr: Linear::init(d_model, N_TATUMS * N_PITCH, true, rng),
            cm: Linear::init(d_model, N_TATUMS * N_CHROMA, true, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PretrainHead {
            token: self.token.zeros_like(),
            pr: self.pr.zeros_like(),
            cm: self.cm.zeros_like(),
        }
    }

    pub fn forward(&self, h: &Array2<f64>) -> HeadOutputs {
        HeadOutputs {
            token_logits: self.token.forward(h),
            pr: self.pr.forward(h),
            cm: self.cm.forward(h),
        }
    }

    /// dL/dh from the three output gradients.
    pub fn backward(
        &self,
        h: &Array2<f64>,
        d_outputs: &HeadOutputs,
        grad: &mut PretrainHead,
    ) -> Array2<f64> {
        let mut dh = self.token.backward(h, &d_outputs.token_logits, &mut grad.token);
        dh += &self.pr.backward(h, &d_outputs.pr, &mut grad.pr);
        dh += &self.cm.backward(h, &d_outputs.cm, &mut grad.cm);
        dh
    }

    pub fn params(&self) -> Params<'_> {
        let mut out: Params = vec![("head.token.w".into(), &self.token.w)];
        out.push(("head.token.b".into(), self.token.b.as_ref().unwrap()));
        out.push(("head.pr.w".into(), &self.pr.w));
        out.push(("head.pr.b".into(), self.pr.b.as_ref().unwrap()));
        out.push(("head.cm.w".into(), &self.cm.w));
        out.push(("head.cm.b".into(), self.cm.b.as_ref().unwrap()));
        out
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        let mut out: ParamsMut = vec![("head.token.w".into(), &mut self.token.w)];
        out.push(("head.token.b".into(), self.token.b.as_mut().unwrap()));
        out.push(("head.pr.w".into(), &mut self.pr.w));
        out.push(("head.pr.b".into(), self.pr.b.as_mut().unwrap()));
        out.push(("head.cm.w".into(), &mut self.cm.w));
        out.push(("head.cm.b".into(), self.cm.b.as_mut().unwrap()));
        out
    }
}

/// Per-note classification head: a single linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteHead {
    pub out: Linear,
}

impl NoteHead {
    pub fn init(d_model: usize, n_classes: usize, rng: &mut Rng) -> Self {
        NoteHead { out: Linear::init(d_model, n_classes, true, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        NoteHead { out: self.out.zeros_like() }
    }

    pub fn forward(&self, h: &Array2<f64>) -> Array2<f64> {
        self.out.forward(h)
    }

    pub fn backward(
        &self,
        h: &Array2<f64>,
        dlogits: &Array2<f64>,
        grad: &mut NoteHead,
    ) -> Array2<f64> {
        self.out.backward(h, dlogits, &mut grad.out)
    }
}

/// Sequence classification head: a two-layer scorer with tanh between
/// the linear maps decides a softmax weight per non-pad note, the
/// weighted average of note states is classified by one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqHead {
    pub score_w: Linear,
    pub score_u: Linear,
    pub out: Linear,
}

pub struct SeqHeadCache {
    h: Array2<f64>,
    pre_tanh: Array2<f64>,
    tanh: Array2<f64>,
    pub weights: Vec<f64>,
    pooled: Array2<f64>,
    pad: Vec<bool>,
}

impl SeqHead {
    pub fn init(d_model: usize, n_classes: usize, rng: &mut Rng) -> Self {
        SeqHead {
            score_w: Linear::init(d_model, d_model, true, rng),
            score_u: Linear::init(d_model, 1, true, rng),
            out: Linear::init(d_model, n_classes, true, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SeqHead {
            score_w: self.score_w.zeros_like(),
            score_u: self.score_u.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    /// Returns (1, n_classes) logits for the sequence.
    pub fn forward(&self, h: &Array2<f64>, pad: &[bool]) -> Result<(Array2<f64>, SeqHeadCache)> {
        if pad.iter().all(|&p| p) {
            return Err(CoreError::Model("sequence head needs a non-pad note".into()));
        }
        let pre_tanh = self.score_w.forward(h);
        let tanh = pre_tanh.mapv(f64::tanh);
        let scores = self.score_u.forward(&tanh); // (S, 1)

        let mut max = f64::NEG_INFINITY;
        for (i, &p) in pad.iter().enumerate() {
            if !p {
                max = max.max(scores[(i, 0)]);
            }
        }
        let mut weights = vec![0.0; pad.len()];
        let mut sum = 0.0;
        for (i, &p) in pad.iter().enumerate() {
            if !p {
                let e = (scores[(i, 0)] - max).exp();
                weights[i] = e;
                sum += e;
            }
        }
        for w in &mut weights {
            *w /= sum;
        }

        let mut pooled = Array2::zeros((1, h.ncols()));
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                pooled.row_mut(0).scaled_add(w, &h.row(i));
            }
        }
        let logits = self.out.forward(&pooled);
        Ok((
            logits,
            SeqHeadCache { h: h.clone(), pre_tanh, tanh, weights, pooled, pad: pad.to_vec() },
        ))
    }

    pub fn backward(
        &self,
        cache: &SeqHeadCache,
        dlogits: &Array2<f64>,
        grad: &mut SeqHead,
    ) -> Array2<f64> {
        let (s, d) = cache.h.dim();
        let dpooled = self.out.backward(&cache.pooled, dlogits, &mut grad.out); // (1, d)

        // pooled = sum_i w_i h_i
        let mut dh = Array2::zeros((s, d));
        let mut dw = vec![0.0; s];
        for i in 0..s {
            let w = cache.weights[i];
            if w != 0.0 {
                dh.row_mut(i).scaled_add(w, &dpooled.row(0));
            }
            dw[i] = dpooled.row(0).dot(&cache.h.row(i));
        }

        // softmax over non-pad scores
        let dot: f64 = (0..s).map(|i| cache.weights[i] * dw[i]).sum();
        let mut dscores = Array2::zeros((s, 1));
        for i in 0..s {
            if !cache.pad[i] {
                dscores[(i, 0)] = cache.weights[i] * (dw[i] - dot);
            }
        }

        let dtanh = self.score_u.backward(&cache.tanh, &dscores, &mut grad.score_u);
        let dpre = ndarray::Zip::from(&dtanh)
            .and(&cache.tanh)
            .map_collect(|&g, &t| g * (1.0 - t * t));
        dh += &self.score_w.backward(&cache.h, &dpre, &mut grad.score_w);
        dh
    }
}

/// Fine-tuning head for a task level.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskHead {
    Note(NoteHead),
    Seq(SeqHead),
}

impl TaskHead {
    pub fn zeros_like(&self) -> Self {
        match self {
            TaskHead::Note(h) => TaskHead::Note(h.zeros_like()),
            TaskHead::Seq(h) => TaskHead::Seq(h.zeros_like()),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TaskHead::Note(h) => h.out.w.ncols(),
            TaskHead::Seq(h) => h.out.w.ncols(),
        }
    }

    pub fn params(&self) -> Params<'_> {
        match self {
            TaskHead::Note(h) => vec![
                ("head.out.w".into(), &h.out.w),
                ("head.out.b".into(), h.out.b.as_ref().unwrap()),
            ],
            TaskHead::Seq(h) => vec![
                ("head.score_w.w".into(), &h.score_w.w),
                ("head.score_w.b".into(), h.score_w.b.as_ref().unwrap()),
                ("head.score_u.w".into(), &h.score_u.w),
                ("head.score_u.b".into(), h.score_u.b.as_ref().unwrap()),
                ("head.out.w".into(), &h.out.w),
                ("head.out.b".into(), h.out.b.as_ref().unwrap()),
            ],
        }
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        match self {
            TaskHead::Note(h) => vec![
                ("head.out.w".into(), &mut h.out.w),
                ("head.out.b".into(), h.out.b.as_mut().unwrap()),
            ],
            TaskHead::Seq(h) => vec![
                ("head.score_w.w".into(), &mut h.score_w.w),
                ("head.score_w.b".into(), h.score_w.b.as_mut().unwrap()),
                ("head.score_u.w".into(), &mut h.score_u.w),
                ("head.score_u.b".into(), h.score_u.b.as_mut().unwrap()),
                ("head.out.w".into(), &mut h.out.w),
                ("head.out.b".into(), h.out.b.as_mut().unwrap()),
            ],
        }
    }
}

/// Row-stable softmax used by evaluation code.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Argmax per row; ties resolve to the first maximum.
pub fn argmax_rows(logits: &Array2<f64>) -> Array1<usize> {
    Array1::from_iter(logits.axis_iter(Axis(0)).map(|row| {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }))
}
