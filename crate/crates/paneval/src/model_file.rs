//! Binary serialization of a trained model.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"MTDE"
//! u32     format version (1)
//! u32     embedding dim
//! u32     head count
//! per head (sorted by name):
//!   u16 name length, UTF-8 name bytes
//!   u32 layer count
//!   per layer: u32 rows, u32 cols, rows*cols f64 weights (row-major),
//!              rows f64 biases
//!   f64 sigma
//! u32     judge count
//! per judge (sorted by id):
//!   u16 name length, UTF-8 name bytes
//!   per head (same order as the head section): f64 alpha_logit, f64 beta_logit
//! u32     CRC32 of every preceding byte
//! ```
//!
//! Writing the same model twice yields identical bytes; head and judge order
//! are fixed by sorted names, and no timestamp or other volatile metadata is
//! stored.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{
    EvaluatorModel, JudgePanel, JudgeReliability, ModelError, ModelMetadata, QualityHead,
};

pub const MODEL_MAGIC: [u8; 4] = *b"MTDE";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("trailing bytes after checksum")]
    TrailingBytes,
    #[error("name is not valid UTF-8")]
    BadName(#[from] std::string::FromUtf8Error),
    #[error("inconsistent layer shape: {0}")]
    BadShape(String),
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("{0} count {1} is implausibly large")]
    ImplausibleCount(&'static str, u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated { context });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(
            self.take(2, context)?.try_into().unwrap(),
        ))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    fn f64(&mut self, context: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }

    fn name(&mut self, context: &'static str) -> Result<String, FormatError> {
        let len = self.u16(context)? as usize;
        Ok(String::from_utf8(self.take(len, context)?.to_vec())?)
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    debug_assert!(name.len() <= u16::MAX as usize);
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

/// Serialize `model` to the byte layout documented at module level.
pub fn write_model_bytes(model: &EvaluatorModel) -> Result<Vec<u8>, FormatError> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.embedding_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.heads.len() as u32).to_le_bytes());
    for (name, head) in &model.heads {
        put_name(&mut out, name);
        out.extend_from_slice(&(head.n_layers() as u32).to_le_bytes());
        let dims = head.layer_dims();
        for l in 0..head.n_layers() {
            let (rows, cols) = (dims[l + 1] as u32, dims[l] as u32);
            out.extend_from_slice(&rows.to_le_bytes());
            out.extend_from_slice(&cols.to_le_bytes());
            for w in head.weights(l) {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in head.biases(l) {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out.extend_from_slice(&head.sigma().to_le_bytes());
    }
    out.extend_from_slice(&(model.panel.judge_count() as u32).to_le_bytes());
    for judge in model.panel.judges() {
        put_name(&mut out, judge);
        for head in model.heads.keys() {
            let r = model.panel.get(judge, head)?;
            out.extend_from_slice(&r.alpha_logit.to_le_bytes());
            out.extend_from_slice(&r.beta_logit.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse a model from bytes produced by [`write_model_bytes`].
///
/// The trailing CRC32 is verified before any content is interpreted, so a
/// flipped bit anywhere in the file is reported as [`FormatError::ChecksumMismatch`]
/// rather than as garbage parameters.
pub fn read_model_bytes(bytes: &[u8]) -> Result<EvaluatorModel, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated { context: "magic" });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(FormatError::BadMagic {
            expected: MODEL_MAGIC,
            found,
        });
    }
    if bytes.len() < 8 {
        return Err(FormatError::Truncated {
            context: "checksum",
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dim = cur.u32("embedding dim")? as usize;
    let head_count = cur.u32("head count")? as usize;
    if head_count > 64 {
        return Err(FormatError::ImplausibleCount("head", head_count as u64));
    }

    let mut heads: BTreeMap<String, QualityHead> = BTreeMap::new();
    let mut head_order = Vec::with_capacity(head_count);
    for _ in 0..head_count {
        let name = cur.name("head name")?;
        let layer_count = cur.u32("layer count")? as usize;
        if layer_count == 0 || layer_count > 64 {
            return Err(FormatError::ImplausibleCount("layer", layer_count as u64));
        }
        let mut layer_dims = Vec::with_capacity(layer_count + 1);
        let mut weights = Vec::with_capacity(layer_count);
        let mut biases = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let rows = cur.u32("layer rows")? as usize;
            let cols = cur.u32("layer cols")? as usize;
            if l == 0 {
                if cols != dim {
                    return Err(FormatError::BadShape(format!(
                        "head `{name}` first layer consumes {cols} inputs, dim is {dim}"
                    )));
                }
                layer_dims.push(cols);
            } else if cols != *layer_dims.last().unwrap() {
                return Err(FormatError::BadShape(format!(
                    "head `{name}` layer {l} consumes {cols} inputs, previous layer emits {}",
                    layer_dims.last().unwrap()
                )));
            }
            layer_dims.push(rows);
            if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
                return Err(FormatError::BadShape(format!(
                    "head `{name}` layer {l} is empty"
                )));
            }
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                w.push(cur.f64("layer weights")?);
            }
            let mut b = Vec::with_capacity(rows);
            for _ in 0..rows {
                b.push(cur.f64("layer biases")?);
            }
            weights.push(w);
            biases.push(b);
        }
        let sigma = cur.f64("sigma")?;
        let head = QualityHead::from_parts(layer_dims, weights, biases, sigma)?;
        if heads.insert(name.clone(), head).is_some() {
            return Err(FormatError::DuplicateName { kind: "head", name });
        }
        head_order.push(name);
    }

    let judge_count = cur.u32("judge count")? as usize;
    if judge_count > 4096 {
        return Err(FormatError::ImplausibleCount("judge", judge_count as u64));
    }
    let mut panel = JudgePanel::new();
    for _ in 0..judge_count {
        let judge = cur.name("judge name")?;
        if panel.heads_for(&judge).is_some() {
            return Err(FormatError::DuplicateName {
                kind: "judge",
                name: judge,
            });
        }
        for head in &head_order {
            let alpha_logit = cur.f64("alpha logit")?;
            let beta_logit = cur.f64("beta logit")?;
            panel.set(
                &judge,
                head,
                JudgeReliability {
                    alpha_logit,
                    beta_logit,
                },
            );
        }
    }
    if cur.pos != body.len() {
        return Err(FormatError::TrailingBytes);
    }

    let model = EvaluatorModel {
        embedding_dim: dim,
        heads,
        panel,
        // Not stored in the file; see the module docs.
        metadata: ModelMetadata::default(),
    };
    model.validate()?;
    Ok(model)
}

/// Write `model` to `path`.
pub fn write_model(model: &EvaluatorModel, path: &Path) -> Result<(), FormatError> {
    let bytes = write_model_bytes(model)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a model from `path`.
pub fn read_model(path: &Path) -> Result<EvaluatorModel, FormatError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_model_bytes(&bytes)
}
