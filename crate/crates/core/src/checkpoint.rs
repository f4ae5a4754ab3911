//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "LDOCCKPT"
//! version      u32      1
//! value width  u8       4 (f32) or 8 (f64)
//! config       u32 length + JSON of PipelineConfig
//! count        u32      number of parameters
//! per parameter:
//!   name       u16 length + UTF-8
//!   trainable  u8
//!   rank       u8, then u32 per dimension
//!   values     raw little-endian floats
//! crc32        u32      over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelState, PipelineConfig};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"LDOCCKPT";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(state: &ModelState<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + state.parameter_count() * T::DTYPE.byte_width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.byte_width() as u8);
    let config = serde_json::to_vec(&state.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(state.params.len() as u32).to_le_bytes());
    for p in &state.params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::from(p.trainable));
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint(
            "checksum mismatch (truncated or corrupted file)".into(),
        ));
    }
    let width = r.u8("value width")? as usize;
    if width != T::DTYPE.byte_width() {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {width}-byte values, caller expects {:?}",
            T::DTYPE
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config: PipelineConfig =
        serde_json::from_slice(r.take(config_len, "config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let count = r.u32("parameter count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("parameter {i}: name is not UTF-8")))?
            .to_string();
        let trainable = r.u8("trainable flag")? != 0;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * width, &name)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        tensors.push((name, trainable, tensor));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    ModelState::from_parts(config, tensors)
}

pub fn save_checkpoint<T: Scalar>(state: &ModelState<T>, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads and additionally requires the stored model shape to match `expected`.
pub fn load_checkpoint_expecting<T: Scalar>(path: &Path, expected: &PipelineConfig) -> Result<ModelState<T>> {
    let state = load_checkpoint::<T>(path)?;
    let (a, b) = (&state.config, expected);
    if a.encoder != b.encoder || a.recurrence != b.recurrence {
        return Err(Error::Checkpoint(format!(
            "model shape mismatch: checkpoint has dim {} / {} layers / hidden {}, config wants dim {} / {} layers / hidden {}",
            a.encoder.dim,
            a.encoder.n_layers,
            a.recurrence.hidden_width,
            b.encoder.dim,
            b.encoder.n_layers,
            b.recurrence.hidden_width
        )));
    }
    Ok(state)
}
