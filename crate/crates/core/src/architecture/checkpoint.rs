//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DFCKPT01" | u32 version | u64 seed | u32 len, config text
//! u32 count | count × (u32 len, name | u32 rank | rank × u32 dim | f64 data)
//! ```
//!
//! Loading checks every name and shape against the structure the stored
//! configuration implies, so a file always yields a runnable model.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::ModelConfig;
use super::model::{model_spec, Model};
use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DFCKPT01";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes `model` to bytes.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    put_str(&mut out, &model.config.to_text());
    let names = model.params.names();
    put_u32(&mut out, names.len());
    model.params.visit(&mut |name, t| {
        put_str(&mut out, name);
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let start = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Format { offset: start as u64, msg: format!("{what} is not UTF-8") })
    }
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        c.pos = 0;
        return Err(c.fail("not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != VERSION as usize {
        c.pos -= 4;
        return Err(c.fail(format!("unsupported version {version}")));
    }
    let seed = c.u64("seed")?;
    let config_at = c.pos;
    let config = ModelConfig::from_text(&c.string("config")?)
        .and_then(|cfg| cfg.validate().map(|_| cfg))
        .map_err(|e| Error::Format { offset: config_at as u64, msg: format!("bad config: {e}") })?;
    let spec = model_spec(&config);
    let names = spec.names();
    let shapes: Vec<Vec<usize>> = spec.leaves().into_iter().map(|s| s.shape).collect();
    let count = c.u32("parameter count")?;
    if count != names.len() {
        c.pos -= 4;
        return Err(c.fail(format!("{count} parameters stored, configuration has {}", names.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in names.iter().zip(&shapes) {
        let at = c.pos;
        let stored = c.string("parameter name")?;
        if &stored != name {
            c.pos = at;
            return Err(c.fail(format!("expected parameter {name}, found {stored}")));
        }
        let rank = c.u32("rank")?;
        let dims = (0..rank).map(|_| c.u32("dimension")).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            c.pos = at;
            return Err(c.fail(format!("{name} has shape {dims:?}, expected {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let raw = c.take(n * 8, name)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(dims, data)?);
    }
    if c.pos != bytes.len() {
        return Err(c.fail(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let params = spec.rebuild(tensors)?;
    Ok(Model { config, seed, params })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::build_model;

    #[test]
    fn round_trip_is_exact() {
        let m = build_model(&ModelConfig::tiny(), 7).unwrap();
        let bytes = write_checkpoint(&m);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_reports_offset() {
        let m = build_model(&ModelConfig::tiny(), 7).unwrap();
        let bytes = write_checkpoint(&m);
        match read_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err() {
            Error::Format { offset, .. } => assert!(offset > 8),
            e => panic!("{e}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad).unwrap_err(), Error::Format { offset: 0, .. }));
    }
}
