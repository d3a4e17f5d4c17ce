//! Self-supervised pre-training material: corrupted inputs (bounded
//! token denoising, full-domain resampling, and mask-based MLM) and
//! bar-level pianoroll/chromagram prediction targets.

mod corruption;
mod targets;

pub use corruption::{
    audit_lines, corrupt, corrupt_mlm, corrupt_rc, sample_corruption_set, CorruptionConfig,
    CorruptionMode, CorruptionRecord,
};
pub use targets::{
    build_targets, BarTarget, PianorollTarget, SegmentTargets, N_CHROMA, N_PITCH, N_TATUMS,
};
