//! `FRRC1` checkpoints.
//!
//! ```text
//! "FRRC1" | u64 config_len | config text (key = value lines)
//!         | u64 n_tensors
//!         | n × ( u64 name_len | name | u64 rank | rank × u64 dims | f64 data... )
//! ```
//!
//! Integers and reals are little-endian. Tensors appear in parameter order.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use super::{ModelConfig, ModelError, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FRRC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        params.check(&config)?;
        Ok(Self { config, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let cfg = self.config.to_kv_text();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(r.err(0, "bad magic, expected FRRC1"));
        }
        let cfg_len = r.len()?;
        let cfg_at = r.pos;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| r.err(cfg_at, "config is not UTF-8"))?;
        let config = ModelConfig::from_kv_text(cfg_text)?;
        let n = r.len()?;
        let mut tensors = IndexMap::new();
        for _ in 0..n {
            let name_len = r.len()?;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err(name_at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.len()?;
            if rank == 0 || rank > 8 {
                return Err(r.err(r.pos - 8, &format!("{name}: bad rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| r.err(r.pos, &format!("{name}: shape overflows")))?;
            let data: Vec<f64> = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(r.err(name_at, &format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        let params = ModelParams::from_tensors(&config, tensors)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> ModelError {
        ModelError::Checkpoint {
            offset,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.pos, &format!("truncated: need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn len(&mut self) -> Result<usize, ModelError> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| self.err(at, "length overflows"))
    }
}
