use std::path::Path;

use crate::adaptors::PitchStats;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::params::ParamStore;

use super::optim::{Lamb, OptimState};

const MAGIC: &[u8; 4] = b"MTCK";
const VERSION: u32 = 1;
const MOMENT1: &str = "opt/m/";
const MOMENT2: &str = "opt/v/";

/// Everything needed to resume training or run inference.
///
/// Layout: `MTCK`, u32 version, u64 step, length-prefixed config TOML,
/// f64 pitch mean and std, u32 tensor count, then per tensor a
/// length-prefixed UTF-8 name, u32 rank, u32 dims and little-endian f32
/// values. Optimizer moments are stored under `opt/m/` and `opt/v/`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: Config,
    pub pitch_stats: PitchStats,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn capture(step: u64, config: &Config, stats: PitchStats, params: &ParamStore<f32>, opt: &Lamb<f32>) -> Self {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec(), t.to_vec()))
            .collect();
        for (prefix, moments) in [(MOMENT1, &opt.state.m), (MOMENT2, &opt.state.v)] {
            for ((_, name, t), values) in params.iter().zip(moments) {
                tensors.push((format!("{prefix}{name}"), t.shape().to_vec(), values.clone()));
            }
        }
        Checkpoint {
            step,
            config: config.clone(),
            pitch_stats: stats,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut buf, &self.config.to_toml());
        buf.extend_from_slice(&self.pitch_stats.mean.to_le_bytes());
        buf.extend_from_slice(&self.pitch_stats.std.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let step = r.u64()?;
        let config = Config::from_toml(&r.string()?)?;
        let pitch_stats = PitchStats {
            mean: r.f64()?,
            std: r.f64()?,
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            step,
            config,
            pitch_stats,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn lookup(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f32>)> {
        self.tensors.iter().find(|(n, _, _)| n == name)
    }

    /// Rebuilds the model and its parameters.
    pub fn restore_model(&self) -> Result<(Model, ParamStore<f32>)> {
        let (model, mut params) = Model::from_config::<f32>(&self.config.model, self.config.train.seed)?;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = params.name(id).to_string();
            let (_, shape, data) = self
                .lookup(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            params.set(id, Tensor::new(shape, data.clone())?)?;
        }
        Ok((model, params))
    }

    /// Rebuilds the model, parameters and optimizer state.
    pub fn restore_training(&self) -> Result<(Model, ParamStore<f32>, Lamb<f32>)> {
        let (model, params) = self.restore_model()?;
        let mut state = OptimState::zeros(&params);
        state.step = self.step;
        for (k, (_, name, t)) in params.iter().enumerate() {
            for (prefix, slot) in [(MOMENT1, &mut state.m[k]), (MOMENT2, &mut state.v[k])] {
                let (_, _, data) = self
                    .lookup(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer state for {name}")))?;
                if data.len() != t.numel() {
                    return Err(Error::Format(format!("optimizer state for {name} has the wrong size")));
                }
                slot.clone_from(data);
            }
        }
        let opt = Lamb {
            cfg: self.config.train.optimizer.clone(),
            state,
        };
        Ok((model, params, opt))
    }
}
