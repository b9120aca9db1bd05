//! Binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ELEMCKPT" | u32 version | u32 header_len | header JSON
//! u32 tensor_count
//! per tensor: u32 name_len | name | u32 ndim | u64 dims... | f32 data...
//! ```
//!
//! The header echoes the [`ModelConfig`], the model kind and the vocabulary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClauseModel, ModelConfig, ModelParameters, Parameters};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ELEMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SavedModel {
    Hierarchical(ModelParameters),
    Clause(ClauseModel),
}

impl SavedModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            SavedModel::Hierarchical(m) => &m.config,
            SavedModel::Clause(m) => &m.config,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            SavedModel::Hierarchical(_) => "hierarchical",
            SavedModel::Clause(_) => "clause",
        }
    }

    fn tensors(&self) -> Vec<(String, &super::Tensor)> {
        match self {
            SavedModel::Hierarchical(m) => m.tensors(),
            SavedModel::Clause(m) => m.tensors(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SavedModel,
    pub vocabulary: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: ModelConfig,
    /// Tokens after the two reserved ones.
    vocabulary: Vec<String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(checkpoint: &Checkpoint, out: &mut impl Write) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let header = Header {
        kind: checkpoint.model.kind().to_string(),
        config: checkpoint.model.config().clone(),
        vocabulary: checkpoint.vocabulary.tokens()[2..].to_vec(),
    };
    let header = serde_json::to_vec(&header)?;
    let tensors = checkpoint.model.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        for d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    let vocabulary = Vocabulary::from_tokens(header.vocabulary)?;
    if vocabulary.len() != header.config.vocab_size {
        return Err(bad(format!(
            "vocabulary has {} entries but config says {}",
            vocabulary.len(),
            header.config.vocab_size
        )));
    }
    let mut model = match header.kind.as_str() {
        "hierarchical" => SavedModel::Hierarchical(ModelParameters::zeros(&header.config)?),
        "clause" => {
            let mut m = ClauseModel::init(&header.config, 0)?;
            m.zero();
            SavedModel::Clause(m)
        }
        other => return Err(bad(format!("unknown model kind {other:?}"))),
    };

    let count = cur.u32()? as usize;
    let mut slots: BTreeMap<String, &mut super::Tensor> = match &mut model {
        SavedModel::Hierarchical(m) => m.tensors_mut().into_iter().collect(),
        SavedModel::Clause(m) => m.tensors_mut().into_iter().collect(),
    };
    if count != slots.len() {
        return Err(bad(format!("expected {} tensors, found {count}", slots.len())));
    }
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        let ndim = cur.u32()? as usize;
        let dims = (0..ndim).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let slot = slots.remove(&name).ok_or_else(|| bad(format!("unexpected or repeated tensor {name:?}")))?;
        if dims != slot.shape() {
            return Err(Error::Shape {
                name,
                expected: slot.shape().to_vec(),
                actual: dims,
            });
        }
        let raw = cur.take(slot.len() * 4)?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(bad(format!("non-finite value in {name}")));
            }
            *dst = v as f64;
        }
    }
    drop(slots);
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { model, vocabulary })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(checkpoint, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
