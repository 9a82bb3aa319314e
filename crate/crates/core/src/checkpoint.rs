//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SNCL" | u32 version | u32 header_len | header JSON (model config + vocab)
//! u32 block_count | blocks...
//! block: u32 name_len | name | u32 rows | u32 cols | rows*cols f32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::model::HelpfulnessModel;

pub const MAGIC: &[u8; 4] = b"SNCL";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocab,
    /// Whether the embedding table was trainable.
    embedding_trainable: bool,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint {
        version: VERSION,
        message: format!("{v} does not fit in u32"),
    })?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &HelpfulnessModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        vocab: model.embedding.vocab.clone(),
        embedding_trainable: model.store.get(model.embedding.weights).trainable,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, header.len())?;
    out.extend_from_slice(&header);
    put_u32(&mut out, model.store.len())?;
    for (_, p) in model.store.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rows())?;
        put_u32(&mut out, p.value.cols())?;
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    version: u32,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            version: self.version,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<HelpfulnessModel> {
    let mut r = Reader { bytes, pos: 0, version: 0 };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic; not a checkpoint"));
    }
    r.version = r.u32()? as u32;
    if r.version != VERSION {
        return Err(r.err(format!("unsupported version (this build reads {VERSION})")));
    }
    let len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| r.err(format!("header: {e}")))?;
    let mut model = HelpfulnessModel::new(header.model, header.vocab, None, header.embedding_trainable, 0)?;
    let blocks = r.u32()?;
    if blocks != model.store.len() {
        return Err(r.err(format!("{blocks} parameter blocks, model defines {}", model.store.len())));
    }
    for _ in 0..blocks {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| r.err("parameter name is not UTF-8"))?.to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let id = model.store.id(&name).ok_or_else(|| r.err(format!("unknown parameter `{name}`")))?;
        let expected = model.store.value(id).shape();
        if expected != (rows, cols) {
            return Err(r.err(format!("`{name}` is {rows}x{cols}, config expects {}x{}", expected.0, expected.1)));
        }
        let payload = r.take(rows * cols * 4)?;
        let data = model.store.get_mut(id).value.data_mut();
        for (d, c) in data.iter_mut().zip(payload.chunks_exact(4)) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(r.err(format!("`{name}` holds a non-finite value")));
            }
            *d = f64::from(v);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after the last block"));
    }
    Ok(model)
}

pub fn save(model: &HelpfulnessModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<HelpfulnessModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mode;

    fn small() -> HelpfulnessModel {
        let config = ModelConfig {
            mode: Mode::Multimodal,
            embed_dim: 4,
            hidden_dim: 3,
            visual_input_dim: 5,
            visual_dim: 3,
            shared_dim: 2,
            ..ModelConfig::default()
        };
        HelpfulnessModel::new(config, Vocab::build(["a", "b"]), None, true, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&small()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::Checkpoint { version: 2, .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
