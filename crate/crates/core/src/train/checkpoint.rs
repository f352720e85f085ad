//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic "B3DCKPT\0" | version u32
//! config json (u32 length + bytes) | model config hash (u32 length + bytes)
//! epoch u64 | rng seed u64 | rng next epoch u64
//! best flag u8 | best metric f64 | best epoch u64
//! target mean f64 | target std f64
//! adam t u64 | parameter count u32
//! per parameter: name (u32 length + bytes) | rank u32 | dims u32 x rank
//!                value f32 x n | adam m f32 x n | adam v f32 x n
//! ```
//!
//! The rng state is the seed plus the next epoch index; every random stream
//! used in training derives from those two values.

use std::path::Path;

use crate::architecture::{build_bagnet3d, Model};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::metrics::TargetScaler;

pub const MAGIC: [u8; 8] = *b"B3DCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Best {
    pub metric: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub names: Vec<String>,
    pub params: Vec<Tensor<f32>>,
    pub adam: AdamState<f32>,
    pub scaler: TargetScaler,
    pub best: Option<Best>,
}

impl Checkpoint {
    /// Rebuilds the model the checkpoint was taken from.
    pub fn model(&self) -> Result<Model<f32>> {
        let config = self.config.model_config()?;
        let mut model: Model<f32> = build_bagnet3d(&config, self.config.task.output_dim(), self.config.seed)?;
        if model.config_hash() != self.config_hash {
            return Err(Error::config(format!(
                "checkpoint config hash {} does not match rebuilt model {}",
                self.config_hash,
                model.config_hash()
            )));
        }
        model.set_param_values(self.params.clone())?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u32(VERSION);
        w.str(&self.config.to_json());
        w.str(&self.config_hash);
        w.u64(self.epoch as u64);
        w.u64(self.config.seed);
        w.u64(self.epoch as u64);
        let best = self.best.unwrap_or(Best {
            metric: f64::NAN,
            epoch: 0,
        });
        w.0.push(self.best.is_some() as u8);
        w.f64(best.metric);
        w.u64(best.epoch as u64);
        w.f64(self.scaler.mean);
        w.f64(self.scaler.std);
        w.u64(self.adam.t);
        w.u32(self.params.len() as u32);
        for (i, p) in self.params.iter().enumerate() {
            w.str(&self.names[i]);
            w.u32(p.rank() as u32);
            for &d in p.shape() {
                w.u32(d as u32);
            }
            for t in [p, &self.adam.m[i], &self.adam.v[i]] {
                for v in t.data() {
                    w.0.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let config_at = r.pos;
        let config = TrainConfig::from_json(&r.str()?).map_err(|e| Error::format(config_at, e.to_string()))?;
        let config_hash = r.str()?;
        let epoch = r.u64()? as usize;
        let seed = r.u64()?;
        let next_epoch = r.u64()? as usize;
        if seed != config.seed || next_epoch != epoch {
            return Err(Error::format(r.pos, "rng state disagrees with config seed or epoch"));
        }
        let has_best = r.take(1)?[0] != 0;
        let best = Best {
            metric: r.f64()?,
            epoch: r.u64()? as usize,
        };
        let scaler = TargetScaler {
            mean: r.f64()?,
            std: r.f64()?,
        };
        let t = r.u64()?;
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut params = Vec::with_capacity(count);
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            names.push(r.str()?);
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            for out in [&mut params, &mut m, &mut v] {
                let n: usize = shape.iter().product();
                let data = r
                    .take(4 * n)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                out.push(Tensor::new(shape.clone(), data).map_err(|e| Error::format(at, e.to_string()))?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            config_hash,
            epoch,
            names,
            params,
            adam: AdamState { m, v, t },
            scaler,
            best: has_best.then_some(best),
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len(),
                format!(
                    "checkpoint truncated: need {n} bytes at offset {}, missing {} bytes",
                    self.pos,
                    end - self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(at, "invalid utf-8 string"))
    }
}
