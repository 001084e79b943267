use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dgann, ModelConfig};
use crate::molgraph::Target;
use crate::preprocess::{LsmModel, Standardize, TargetTransform};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGNN";
pub const FORMAT_VERSION: u32 = 1;

/// Trained model, its target transform and selection metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub transform: TargetTransform,
    pub seed: u64,
    pub best_epoch: u64,
    pub best_val_mae: f64,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(model: &Dgann, transform: TargetTransform, seed: u64, best_epoch: u64, best_val_mae: f64) -> Self {
        Checkpoint {
            config: model.config,
            transform,
            seed,
            best_epoch,
            best_val_mae,
            params: model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn model(&self) -> Result<Dgann> {
        Dgann::from_named(self.config, self.params.clone())
    }

    pub fn target(&self) -> Target {
        self.transform.target
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.d_model, c.n_heads, c.n_interaction, c.n_transformer, c.ffn_multiplier] {
            w.extend_from_slice(&(v as u64).to_le_bytes());
        }
        put_str(&mut w, self.transform.target.name());
        match &self.transform.lsm {
            Some(l) => {
                w.push(1);
                for t in l.theta {
                    w.extend_from_slice(&t.to_le_bytes());
                }
            }
            None => w.push(0),
        }
        match self.transform.standardize {
            Some(s) => {
                w.push(1);
                w.extend_from_slice(&s.mean.to_le_bytes());
                w.extend_from_slice(&s.std.to_le_bytes());
            }
            None => w.push(0),
        }
        w.extend_from_slice(&self.seed.to_le_bytes());
        w.extend_from_slice(&self.best_epoch.to_le_bytes());
        w.extend_from_slice(&self.best_val_mae.to_le_bytes());
        w.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            put_str(&mut w, name);
            w.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                w.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a DGANN checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {})",
                version, FORMAT_VERSION
            )));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let config = ModelConfig {
            d_model: dims[0],
            n_heads: dims[1],
            n_interaction: dims[2],
            n_transformer: dims[3],
            ffn_multiplier: dims[4],
        };
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let target: Target = r.string()?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
        let lsm = match r.flag()? {
            true => {
                let mut theta = [0.0; 6];
                for t in &mut theta {
                    *t = r.f64()?;
                }
                Some(LsmModel {
                    theta,
                    fitted: true,
                    target: target.name().to_string(),
                })
            }
            false => None,
        };
        let standardize = match r.flag()? {
            true => Some(Standardize {
                mean: r.f64()?,
                std: r.f64()?,
            }),
            false => None,
        };
        let seed = r.u64()?;
        let best_epoch = r.u64()?;
        let best_val_mae = r.f64()?;
        let n = r.usize()?;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("parameter '{}' has {} dimensions", name, ndim)));
            }
            let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|&l| l <= r.remaining() / 8)
                .ok_or_else(|| Error::Checkpoint(format!("parameter '{}' shape {:?} exceeds file", name, shape)))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        let ckpt = Checkpoint {
            config,
            transform: TargetTransform {
                target,
                lsm,
                standardize,
            },
            seed,
            best_epoch,
            best_val_mae,
            params,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))
    }
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
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

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!("bad flag byte {}", b))),
        }
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
}
