//! `FCFT` checkpoint container.
//!
//! ```text
//! "FCFT" | u16 version | u32 len, header JSON (canonical)
//! u32 n_params | per param: u32 len, path | u32 ndim | u32 dims.. | f32 data
//! u8 has_optimizer | u64 t | u32 n | per entry: u32 index | u32 len | f32 m | f32 v
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_json, read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::{FreezePlan, LoraConfig, Model, ModelConfig, ParamStore};
use crate::optim::{AdamW, AdamWConfig, LossScaler, Moments};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCFT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    plan: FreezePlan,
    lora: Option<LoraConfig>,
    optimizer: Option<AdamWConfig>,
    scaler: Option<LossScaler>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamW<f32>>,
    pub scaler: Option<LossScaler>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config().clone(),
            plan: self.model.plan(),
            lora: self.model.lora().cloned(),
            optimizer: self.optimizer.as_ref().map(|o| o.config),
            scaler: self.scaler,
        };
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.str(&canonical_json(&header)?);
        let params = self.model.params();
        w.u32(params.len() as u32);
        for p in params.iter() {
            w.str(&p.path);
            w.u32(p.tensor.shape().len() as u32);
            for &d in p.tensor.shape() {
                w.u32(d as u32);
            }
            w.f32s(p.tensor.data());
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.t);
                let entries: Vec<_> = opt
                    .moments
                    .iter()
                    .enumerate()
                    .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
                    .collect();
                w.u32(entries.len() as u32);
                for (i, m) in entries {
                    w.u32(i as u32);
                    w.u32(m.m.len() as u32);
                    w.f32s(&m.m);
                    w.f32s(&m.v);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        let magic = r.array::<4>("magic")?;
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header: Header = serde_json::from_str(&r.string("header")?)?;
        let n = r.u32("parameter count")? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let p = r.string("parameter path")?;
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32("shape").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let data = r.f32s(len, &p)?;
            store.insert(p, Tensor::new(shape, data)?)?;
        }
        let model = Model::from_parts(header.model, store, header.plan, header.lora)?;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let cfg = header
                    .optimizer
                    .ok_or_else(|| Error::Checkpoint("optimizer state without config".into()))?;
                let mut opt = AdamW::new(cfg);
                opt.t = r.u64("optimizer step")?;
                opt.moments = vec![None; model.params().len()];
                let entries = r.u32("moment count")? as usize;
                for _ in 0..entries {
                    let i = r.u32("moment index")? as usize;
                    let len = r.u32("moment length")? as usize;
                    if i >= model.params().len() || model.params().by_index(i).tensor.len() != len {
                        return Err(Error::Checkpoint(format!("moment entry {i} does not fit the model")));
                    }
                    let m = r.f32s(len, "first moment")?;
                    let v = r.f32s(len, "second moment")?;
                    opt.moments[i] = Some(Moments { m, v });
                }
                Some(opt)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            model,
            optimizer,
            scaler: header.scaler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
