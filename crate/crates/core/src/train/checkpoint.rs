//! Versioned checkpoint container.
//!
//! Layout: the magic `CDZCKPT1`, a little-endian u64 header length, a
//! JSON header (format version, model config, head spec, seed, best
//! validation metadata, optimizer metadata, tensor directory), then the
//! tensors as row-major little-endian f32 in directory order. Optimizer
//! moments, when present, follow the parameters as `opt.m.*` / `opt.v.*`.
//!
//! Saving a freshly loaded checkpoint reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::{Moments, OptimizerConfig, TrainState};
use crate::error::{CoreError, Result};
use crate::model::{Encoder, ModelConfig, NoteHead, PretrainModel, SeqHead, TaskHead, TaskModel};
use crate::rng::{seeded, Stream};

const MAGIC: &[u8; 8] = b"CDZCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadSpec {
    Pretrain,
    Note { n_classes: usize },
    Seq { n_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMeta {
    pub step: u64,
    pub token_accuracy: f64,
    pub attr_accuracy: [f64; 4],
    pub token_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: OptimizerConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub head: HeadSpec,
    pub seed: u64,
    pub best: Option<ValidationMeta>,
    pub optimizer: Option<OptimizerMeta>,
    pub tensors: Vec<TensorMeta>,
}

fn encode(header: &CheckpointHeader, tensors: &[(String, &Array2<f64>)]) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend((header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, tensor) in tensors {
        for &v in tensor.iter() {
            out.extend((v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Array2<f64>>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16 + header_len;
    if bytes.len() < body_start {
        return Err(CoreError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])?;
    if header.version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    let mut offset = body_start;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let n = meta.rows * meta.cols;
        let end = offset + 4 * n;
        if bytes.len() < end {
            return Err(CoreError::Checkpoint(format!("truncated tensor {}", meta.name)));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in bytes[offset..end].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        tensors.push(
            Array2::from_shape_vec((meta.rows, meta.cols), data)
                .map_err(|e| CoreError::Checkpoint(e.to_string()))?,
        );
        offset = end;
    }
    if offset != bytes.len() {
        return Err(CoreError::Checkpoint("trailing bytes".into()));
    }
    Ok((header, tensors))
}

fn tensor_list<'a>(
    params: Vec<(String, &'a Array2<f64>)>,
    optimizer: Option<&'a TrainState>,
) -> Vec<(String, &'a Array2<f64>)> {
    let mut out = params;
    if let Some(state) = optimizer {
        let names: Vec<String> = out.iter().map(|(n, _)| n.clone()).collect();
        for (name, moments) in names.iter().zip(&state.moments) {
            out.push((format!("opt.m.{name}"), &moments.m));
            out.push((format!("opt.v.{name}"), &moments.v));
        }
    }
    out
}

fn build_header(
    model_config: &ModelConfig,
    head: HeadSpec,
    seed: u64,
    best: Option<ValidationMeta>,
    optimizer: Option<(&OptimizerConfig, &TrainState)>,
    tensors: &[(String, &Array2<f64>)],
) -> CheckpointHeader {
    CheckpointHeader {
        version: FORMAT_VERSION,
        model: model_config.clone(),
        head,
        seed,
        best,
        optimizer: optimizer.map(|(config, state)| OptimizerMeta {
            config: *config,
            step: state.step,
        }),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorMeta { name: name.clone(), rows: t.nrows(), cols: t.ncols() })
            .collect(),
    }
}

pub fn save_pretrain(
    path: &Path,
    model: &PretrainModel,
    seed: u64,
    best: Option<ValidationMeta>,
    optimizer: Option<(&OptimizerConfig, &TrainState)>,
) -> Result<()> {
    let tensors = tensor_list(model.params(), optimizer.map(|(_, s)| s));
    let header = build_header(
        &model.encoder.config,
        HeadSpec::Pretrain,
        seed,
        best,
        optimizer,
        &tensors,
    );
    fs::write(path, encode(&header, &tensors)?)?;
    Ok(())
}

pub fn save_task(
    path: &Path,
    model: &TaskModel,
    seed: u64,
    best: Option<ValidationMeta>,
) -> Result<()> {
    let head = match &model.head {
        TaskHead::Note(_) => HeadSpec::Note { n_classes: model.head.n_classes() },
        TaskHead::Seq(_) => HeadSpec::Seq { n_classes: model.head.n_classes() },
    };
    let tensors = tensor_list(model.params(), None);
    let header = build_header(&model.encoder.config, head, seed, best, None, &tensors);
    fs::write(path, encode(&header, &tensors)?)?;
    Ok(())
}

fn assign_params(
    params: Vec<(String, &mut Array2<f64>)>,
    header: &CheckpointHeader,
    tensors: &[Array2<f64>],
) -> Result<usize> {
    if header.tensors.len() < params.len() {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint has {} tensors, model needs {}",
            header.tensors.len(),
            params.len()
        )));
    }
    let mut used = 0;
    for ((name, param), (meta, data)) in params.into_iter().zip(header.tensors.iter().zip(tensors))
    {
        if meta.name != name {
            return Err(CoreError::Checkpoint(format!(
                "tensor order mismatch: expected {name}, found {}",
                meta.name
            )));
        }
        if param.raw_dim() != data.raw_dim() {
            return Err(CoreError::Checkpoint(format!(
                "tensor {name}: shape {:?} vs {:?}",
                data.dim(),
                param.dim()
            )));
        }
        param.assign(data);
        used += 1;
    }
    Ok(used)
}

fn load_moments(
    header: &CheckpointHeader,
    tensors: &[Array2<f64>],
    from: usize,
) -> Result<Option<TrainState>> {
    let Some(meta) = &header.optimizer else {
        return Ok(None);
    };
    let rest_meta = &header.tensors[from..];
    if rest_meta.len() % 2 != 0 {
        return Err(CoreError::Checkpoint("odd optimizer tensor count".into()));
    }
    let mut moments = Vec::with_capacity(rest_meta.len() / 2);
    for (pair_meta, pair) in rest_meta.chunks_exact(2).zip(tensors[from..].chunks_exact(2)) {
        if !pair_meta[0].name.starts_with("opt.m.") || !pair_meta[1].name.starts_with("opt.v.") {
            return Err(CoreError::Checkpoint("malformed optimizer tensor pair".into()));
        }
        moments.push(Moments { m: pair[0].clone(), v: pair[1].clone() });
    }
    Ok(Some(TrainState {
        step: meta.step,
        moments,
        best_valid_acc: header.best.map(|b| b.token_accuracy),
    }))
}

pub fn load_pretrain(path: &Path) -> Result<(PretrainModel, CheckpointHeader, Option<TrainState>)> {
    let bytes = fs::read(path)?;
    let (header, tensors) = decode(&bytes)?;
    if header.head != HeadSpec::Pretrain {
        return Err(CoreError::Checkpoint("not a pre-training checkpoint".into()));
    }
    let mut model = PretrainModel::init(&header.model, header.seed)?;
    let used = assign_params(model.params_mut(), &header, &tensors)?;
    let state = load_moments(&header, &tensors, used)?;
    Ok((model, header, state))
}

pub fn load_task(path: &Path) -> Result<(TaskModel, CheckpointHeader)> {
    let bytes = fs::read(path)?;
    let (header, tensors) = decode(&bytes)?;
    let mut rng = seeded(header.seed, Stream::WeightInit, 1);
    let encoder = Encoder::init(&header.model, &mut seeded(header.seed, Stream::WeightInit, 0))?;
    let mut model = match header.head {
        HeadSpec::Note { n_classes } => TaskModel {
            head: TaskHead::Note(NoteHead::init(header.model.d_model, n_classes, &mut rng)),
            encoder,
        },
        HeadSpec::Seq { n_classes } => TaskModel {
            head: TaskHead::Seq(SeqHead::init(header.model.d_model, n_classes, &mut rng)),
            encoder,
        },
        HeadSpec::Pretrain => {
            return Err(CoreError::Checkpoint("expected a task checkpoint".into()))
        }
    };
    assign_params(model.params_mut(), &header, &tensors)?;
    Ok((model, header))
}

/// Load just the encoder from a pre-training checkpoint (fine-tuning
/// drops the pre-training head).
pub fn load_encoder(path: &Path) -> Result<(Encoder, CheckpointHeader)> {
    let (model, header, _) = load_pretrain(path)?;
    Ok((model.encoder, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_model() -> PretrainModel {
        PretrainModel::init(&ModelConfig::tiny(1, 8), 7).unwrap()
    }

    #[test]
    fn save_load_save_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let model = tiny_model();
        let cfg = OptimizerConfig::default();
        let state = TrainState::new(&model.params());
        save_pretrain(&path, &model, 7, None, Some((&cfg, &state))).unwrap();
        let bytes_a = fs::read(&path).unwrap();

        let (loaded, header, loaded_state) = load_pretrain(&path).unwrap();
        assert_eq!(header.seed, 7);
        let path_b = dir.path().join("b.ckpt");
        save_pretrain(
            &path_b,
            &loaded,
            header.seed,
            header.best,
            Some((&header.optimizer.as_ref().unwrap().config, &loaded_state.unwrap())),
        )
        .unwrap();
        let bytes_b = fs::read(&path_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn loaded_weights_match_saved_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let model = tiny_model();
        save_pretrain(&path, &model, 7, None, None).unwrap();
        let (loaded, _, state) = load_pretrain(&path).unwrap();
        assert!(state.is_none());
        for ((_, a), (_, b)) in model.params().iter().zip(loaded.params().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn task_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let encoder = tiny_model().encoder;
        let model = TaskModel::with_seq_head(encoder, 4, 3);
        save_task(&path, &model, 3, None).unwrap();
        let (loaded, header) = load_task(&path).unwrap();
        assert_eq!(header.head, HeadSpec::Seq { n_classes: 4 });
        assert_eq!(loaded.head.n_classes(), 4);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_pretrain(&path, &tiny_model(), 7, None, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        assert!(load_pretrain(&path).is_err());
    }
}
