//! Binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! "CXP1"                      magic
//! u32                         format version
//! u32 + UTF-8                 config: canonical key=value lines, then
//!                             meta.* lines for training metadata
//! u32                         tensor count
//! per tensor:
//!   u32 + UTF-8               name
//!   u32                       rank
//!   u64 × rank                dims
//!   f64 × product(dims)       data, row-major
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{parameter_shapes, parse_pairs, CapsNet, ConfigError, ModelConfig, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CXP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint tensor {tensor}: expected shape {expected:?} from embedded config, found {found:?}")]
    Shape { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint parameters: {0}")]
    Parameters(String),
}

/// Summary of the run that produced a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub steps: usize,
    pub samples: usize,
    pub final_margin_loss: f64,
    pub final_reconstruction_loss: f64,
    pub final_accuracy: f64,
}

impl TrainingMetadata {
    fn to_lines(&self) -> String {
        format!(
            "meta.epochs={}\nmeta.seed={}\nmeta.steps={}\nmeta.samples={}\nmeta.final_margin_loss={:?}\nmeta.final_reconstruction_loss={:?}\nmeta.final_accuracy={:?}\n",
            self.epochs,
            self.seed,
            self.steps,
            self.samples,
            self.final_margin_loss,
            self.final_reconstruction_loss,
            self.final_accuracy
        )
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Option<Self>, ConfigError> {
        if pairs.is_empty() {
            return Ok(None);
        }
        fn get<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T, ConfigError> {
            let full = format!("meta.{key}");
            let (_, v) = pairs.iter().find(|(k, _)| *k == full).ok_or_else(|| ConfigError::Missing(full.clone()))?;
            v.parse().map_err(|_| ConfigError::Invalid { key: full, detail: format!("unparsable value {v:?}") })
        }
        Ok(Some(TrainingMetadata {
            epochs: get(pairs, "epochs")?,
            seed: get(pairs, "seed")?,
            steps: get(pairs, "steps")?,
            samples: get(pairs, "samples")?,
            final_margin_loss: get(pairs, "final_margin_loss")?,
            final_reconstruction_loss: get(pairs, "final_reconstruction_loss")?,
            final_accuracy: get(pairs, "final_accuracy")?,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CapsNet,
    pub metadata: Option<TrainingMetadata>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &CapsNet, metadata: Option<&TrainingMetadata>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_parameters() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let mut text = model.config().to_canonical();
    if let Some(meta) = metadata {
        text.push_str(&meta.to_lines());
    }
    put_str(&mut out, &text);
    put_u32(&mut out, model.params().len() as u32);
    for (name, tensor) in model.params() {
        put_str(&mut out, name);
        put_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| CheckpointError::Format {
            offset: self.pos,
            detail: format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.pos),
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Format { offset: at, detail: format!("{what} is not UTF-8") })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::Format { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format { offset: 4, detail: format!("unsupported format version {version}") });
    }
    let text = r.string("config")?;
    let (meta_pairs, config_pairs): (Vec<_>, Vec<_>) = parse_pairs(&text)?.into_iter().partition(|(k, _)| k.starts_with("meta."));
    let config_text: String = config_pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let config = ModelConfig::from_canonical(&config_text)?;
    let metadata = TrainingMetadata::from_pairs(&meta_pairs)?;

    let expected = parameter_shapes(&config);
    let count_at = r.pos;
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(CheckpointError::Format {
            offset: count_at,
            detail: format!("{count} tensors stored, config implies {}", expected.len()),
        });
    }
    let mut params = Vec::with_capacity(count);
    for (exp_name, exp_shape) in &expected {
        let name_at = r.pos;
        let name = r.string("tensor name")?;
        if &name != exp_name {
            return Err(CheckpointError::Format { offset: name_at, detail: format!("expected tensor {exp_name}, found {name}") });
        }
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("tensor dims")? as usize);
        }
        if &shape != exp_shape {
            return Err(CheckpointError::Shape { tensor: name, expected: exp_shape.clone(), found: shape });
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Format { offset: r.pos, detail: format!("{} trailing bytes", bytes.len() - r.pos) });
    }
    let model = CapsNet::from_params(config, params).map_err(|e| match e {
        ModelError::Shape { tensor, expected, found } => CheckpointError::Shape { tensor, expected, found },
        other => CheckpointError::Parameters(other.to_string()),
    })?;
    Ok(Checkpoint { model, metadata })
}

pub fn save_checkpoint(model: &CapsNet, metadata: Option<&TrainingMetadata>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(model, metadata))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}
