//! Encoder backbone, prediction heads, and assembled models.

pub mod config;
pub mod encoder;
pub mod heads;
pub mod layers;

pub use config::ModelConfig;
pub use encoder::{Encoder, HiddenStates, Params, ParamsMut};
pub use heads::{
    argmax_rows, attr_logit_range, softmax_rows, HeadOutputs, NoteHead, PretrainHead, SeqHead,
    TaskHead, TOKEN_LOGIT_DIM,
};

use crate::error::Result;
use crate::rng::{seeded, Stream};

/// Backbone plus pre-training head.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel {
    pub encoder: Encoder,
    pub head: PretrainHead,
}

impl PretrainModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed, Stream::WeightInit, 0);
        let encoder = Encoder::init(config, &mut rng)?;
        let head = PretrainHead::init(config.d_model, &mut rng);
        Ok(PretrainModel { encoder, head })
    }

    pub fn zeros_like(&self) -> Self {
        PretrainModel { encoder: self.encoder.zeros_like(), head: self.head.zeros_like() }
    }

    pub fn params(&self) -> Params<'_> {
        let mut out = self.encoder.params();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Backbone plus a fine-tuning head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub encoder: Encoder,
    pub head: TaskHead,
}

impl TaskModel {
    /// Attach a fresh per-note head to an existing (typically
    /// pre-trained) encoder.
    pub fn with_note_head(encoder: Encoder, n_classes: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, Stream::WeightInit, 1);
        let head = TaskHead::Note(NoteHead::init(encoder.config.d_model, n_classes, &mut rng));
        TaskModel { encoder, head }
    }

    pub fn with_seq_head(encoder: Encoder, n_classes: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, Stream::WeightInit, 1);
        let head = TaskHead::Seq(SeqHead::init(encoder.config.d_model, n_classes, &mut rng));
        TaskModel { encoder, head }
    }

    pub fn zeros_like(&self) -> Self {
        TaskModel { encoder: self.encoder.zeros_like(), head: self.head.zeros_like() }
    }

    pub fn params(&self) -> Params<'_> {
        let mut out = self.encoder.params();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}
