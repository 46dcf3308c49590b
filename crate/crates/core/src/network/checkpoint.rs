//! Versioned single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DRSEG1\n"
//! u32 len, NetConfig as TOML
//! u64 training step
//! u8  scalar width in bytes (4 = f32, 8 = f64)
//! u32 tensor count
//! per tensor: u32 name len, name, u32 rank, u32 dims..., values
//! ```

use std::path::Path;

use super::config::NetConfig;
use super::params::{param_layout, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8] = b"DRSEG1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: NetConfig,
    pub params: ModelParams<T>,
    pub step: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = toml::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(T::BYTES as u8);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; values stored at another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC) {
            return Err(Error::Format("missing DRSEG1 magic header".into()));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
        let config: NetConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        config.validate()?;
        let step = r.u64()?;
        let width = r.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(Error::Format(format!("unsupported scalar width {width}")));
        }
        let count = r.u32()? as usize;
        let mut params = ModelParams::new();
        for _ in 0..count {
            let nl = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nl)?)
                .map_err(|e| Error::Format(e.to_string()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * width)?;
            let data: Vec<T> = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == T::BYTES {
                        T::read_le(c)
                    } else if width == 4 {
                        T::lit(f32::read_le(c) as f64)
                    } else {
                        T::lit(f64::read_le(c))
                    }
                })
                .collect();
            params.insert(name, Tensor::from_vec(&shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let ckpt = Checkpoint { config, params, step };
        ckpt.check_layout()?;
        Ok(ckpt)
    }

    /// Verifies that parameter names and shapes match the configuration.
    pub fn check_layout(&self) -> Result<()> {
        let layout = param_layout(&self.config);
        if layout.len() != self.params.len() {
            return Err(Error::Format(format!(
                "config expects {} tensors, checkpoint holds {}",
                layout.len(),
                self.params.len()
            )));
        }
        for spec in layout {
            let t = self
                .params
                .get(&spec.name)
                .map_err(|_| Error::Format(format!("checkpoint lacks `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Format(format!(
                    "`{}` has shape {:?}, config expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
