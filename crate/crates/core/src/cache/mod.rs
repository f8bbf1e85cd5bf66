//! Frozen-prefix representation cache.
//!
//! Each sample's output at the split layer is stored once in a `W2CC` file;
//! a manifest written last ties the entries to the model that produced them.
//!
//! ```text
//! "W2CC" | u16 version | u16 dtype | u32 split_layer | u32 frames | u32 dim
//! u32 id_len | id bytes | frames·dim values, little-endian
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{canonical_json, read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::{Group, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"W2CC";
pub const VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "cache_manifest.json";
pub const ENTRY_DIR: &str = "entries";
const FIXED_HEADER_BYTES: u64 = 4 + 2 + 2 + 4 + 4 + 4 + 4;

mod verify;
pub use verify::{verify_cache_equivalence, EquivalenceReport, SampleDivergence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheDtype {
    #[default]
    F32,
    /// binary16 payload, for disk-budget experiments only.
    F16,
}

impl CacheDtype {
    pub fn code(self) -> u16 {
        match self {
            CacheDtype::F32 => 0,
            CacheDtype::F16 => 1,
        }
    }

    fn from_code(c: u16) -> Option<Self> {
        match c {
            0 => Some(CacheDtype::F32),
            1 => Some(CacheDtype::F16),
            _ => None,
        }
    }

    pub fn width(self) -> u64 {
        match self {
            CacheDtype::F32 => 4,
            CacheDtype::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub sample_id: String,
    pub split_layer: usize,
    pub frames: usize,
    pub dim: usize,
    pub dtype: CacheDtype,
    /// `frames×dim`, row-major.
    pub payload: Vec<f32>,
}

impl CacheEntry {
    pub fn from_tensor(sample_id: &str, split_layer: usize, t: &Tensor<f32>, dtype: CacheDtype) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Contract(format!("cache entry needs [frames×dim], got {s:?}")));
        }
        if !t.all_finite() {
            return Err(Error::Contract(format!("non-finite representation for `{sample_id}`")));
        }
        let payload = match dtype {
            CacheDtype::F32 => t.data().to_vec(),
            CacheDtype::F16 => t.to_half().into_data(),
        };
        Ok(Self {
            sample_id: sample_id.into(),
            split_layer,
            frames: s[0],
            dim: s[1],
            dtype,
            payload,
        })
    }

    pub fn tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.frames, self.dim], self.payload.clone()).expect("validated on decode")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u16(self.dtype.code());
        w.u32(self.split_layer as u32);
        w.u32(self.frames as u32);
        w.u32(self.dim as u32);
        w.str(&self.sample_id);
        match self.dtype {
            CacheDtype::F32 => w.f32s(&self.payload),
            CacheDtype::F16 => {
                for &v in &self.payload {
                    w.u16(::half::f16::from_f32(v).to_bits());
                }
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        let magic = r.array::<4>("magic")?;
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let header = |detail: String| Error::CacheHeader {
            path: path.to_path_buf(),
            detail,
        };
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(header(format!("unsupported version {version}")));
        }
        let code = r.u16("dtype")?;
        let dtype = CacheDtype::from_code(code).ok_or_else(|| header(format!("unknown dtype code {code}")))?;
        let split_layer = r.u32("split_layer")? as usize;
        let frames = r.u32("frames")? as usize;
        let dim = r.u32("dim")? as usize;
        let sample_id = r.string("sample id")?;
        if frames == 0 || dim == 0 {
            return Err(header(format!("empty payload {frames}×{dim}")));
        }
        let n = frames * dim;
        let payload = match dtype {
            CacheDtype::F32 => r.f32s(n, "payload")?,
            CacheDtype::F16 => {
                let raw = r.take(n * 2, "payload")?;
                raw.chunks_exact(2)
                    .map(|c| ::half::f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f32())
                    .collect()
            }
        };
        if r.remaining() != 0 {
            return Err(header(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            sample_id,
            split_layer,
            frames,
            dim,
            dtype,
            payload,
        })
    }

    pub fn encoded_len(&self) -> u64 {
        entry_bytes(self.frames, self.dim, self.sample_id.len(), self.dtype)
    }
}

/// Size of one cache file.
pub fn entry_bytes(frames: usize, dim: usize, id_len: usize, dtype: CacheDtype) -> u64 {
    FIXED_HEADER_BYTES + id_len as u64 + frames as u64 * dim as u64 * dtype.width()
}

/// Disk footprint of caching `hours` of audio at `frames_per_second`.
pub fn estimate_bytes(hours: f64, frames_per_second: f64, dim: usize, n_samples: u64, avg_id_len: usize, dtype: CacheDtype) -> u64 {
    let frames = hours * 3600.0 * frames_per_second;
    (frames * dim as f64 * dtype.width() as f64).round() as u64 + n_samples * (FIXED_HEADER_BYTES + avg_id_len as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub path: PathBuf,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheManifest {
    pub fingerprint: String,
    pub split_layer: usize,
    pub dim: usize,
    pub dtype: CacheDtype,
    pub entries: Vec<ManifestEntry>,
}

/// SHA-256 over the config, the split layer and every parameter the cached
/// prefix depends on (front-end, positional block, layers below the split).
pub fn fingerprint(model: &Model<f32>, split_layer: usize) -> Result<String> {
    let mut h = Sha256::new();
    h.update(canonical_json(model.config())?.as_bytes());
    h.update((split_layer as u64).to_le_bytes());
    for p in model.params().iter() {
        let in_prefix = match p.group {
            Group::FrontEnd | Group::Positional => true,
            Group::Layer(i) => i < split_layer,
            Group::Adapter(_) | Group::Head => false,
        };
        if !in_prefix {
            continue;
        }
        h.update((p.path.len() as u64).to_le_bytes());
        h.update(p.path.as_bytes());
        for &d in p.tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub manifest: CacheManifest,
    pub bytes_written: u64,
}

pub(crate) fn check_plan(model: &Model<f32>, split_layer: usize) -> Result<()> {
    let n = model.config().n_layers;
    match model.plan().split_layer(n) {
        Some(s) if s == split_layer => Ok(()),
        Some(s) => Err(Error::Contract(format!(
            "plan {} splits at layer {s}, not {split_layer}",
            model.plan()
        ))),
        None => Err(Error::Contract(format!(
            "caching needs a caching_partial plan, model has {}",
            model.plan()
        ))),
    }
}

fn entry_file(id: &str) -> PathBuf {
    PathBuf::from(ENTRY_DIR).join(format!("{id}.w2cc"))
}

/// Runs the frozen prefix once per sample (batch of one, eval mode) and
/// writes one file per sample, then the manifest.
///
/// An existing manifest with a different fingerprint is never overwritten.
pub fn build_cache<'a, I>(model: &Model<f32>, samples: I, split_layer: usize, out_dir: &Path, dtype: CacheDtype) -> Result<BuildReport>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    check_plan(model, split_layer)?;
    let fp = fingerprint(model, split_layer)?;
    let mpath = out_dir.join(MANIFEST_FILE);
    if mpath.exists() {
        let old: CacheManifest = serde_json::from_slice(&read_file(&mpath)?)?;
        if old.fingerprint != fp || old.split_layer != split_layer {
            return Err(Error::CacheClash(out_dir.to_path_buf()));
        }
    }
    let dir = out_dir.join(ENTRY_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::new();
    let mut bytes = 0u64;
    let mut last: Option<String> = None;
    for (id, audio) in samples {
        let x = Tensor::new(vec![1, audio.len()], audio.to_vec())?;
        let rep = model.forward_prefix(&x, split_layer)?;
        let entry = CacheEntry::from_tensor(id, split_layer, &rep, dtype)?;
        let rel = entry_file(id);
        let encoded = entry.encode();
        let written = fs::File::create(out_dir.join(&rel)).and_then(|mut f| f.write_all(&encoded));
        if let Err(source) = written {
            return Err(Error::PartialBuild {
                completed: entries.len(),
                last,
                source,
            });
        }
        bytes += encoded.len() as u64;
        last = Some(id.to_string());
        entries.push(ManifestEntry {
            sample_id: id.into(),
            path: rel,
            frames: entry.frames,
        });
    }
    let manifest = CacheManifest {
        fingerprint: fp,
        split_layer,
        dim: model.config().d_model,
        dtype,
        entries,
    };
    let json = canonical_json(&manifest)?;
    bytes += json.len() as u64;
    write_atomic(&mpath, json.as_bytes())?;
    Ok(BuildReport {
        manifest,
        bytes_written: bytes,
    })
}

/// Read access to a built cache.
#[derive(Debug, Clone)]
pub struct CacheReader {
    root: PathBuf,
    manifest: CacheManifest,
    index: HashMap<String, usize>,
}

impl CacheReader {
    /// Opens the manifest. When `model` is given its fingerprint must match
    /// before any entry is touched.
    pub fn open(root: &Path, model: Option<&Model<f32>>) -> Result<Self> {
        let mpath = root.join(MANIFEST_FILE);
        let manifest: CacheManifest = serde_json::from_slice(&read_file(&mpath)?)?;
        if let Some(m) = model {
            let fp = fingerprint(m, manifest.split_layer)?;
            if fp != manifest.fingerprint {
                return Err(Error::Fingerprint {
                    manifest: manifest.fingerprint.clone(),
                    model: fp,
                });
            }
        }
        let index = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.sample_id.clone(), i))
            .collect();
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            index,
        })
    }

    pub fn manifest(&self) -> &CacheManifest {
        &self.manifest
    }

    pub fn read(&self, sample_id: &str) -> Result<CacheEntry> {
        let i = *self
            .index
            .get(sample_id)
            .ok_or_else(|| Error::MissingSample(sample_id.into()))?;
        let me = &self.manifest.entries[i];
        let path = self.root.join(&me.path);
        let e = CacheEntry::decode(&read_file(&path)?, &path)?;
        let mismatch = |detail: String| Error::CacheHeader {
            path: path.clone(),
            detail,
        };
        if e.sample_id != me.sample_id {
            return Err(mismatch(format!("id `{}` != `{}`", e.sample_id, me.sample_id)));
        }
        if e.split_layer != self.manifest.split_layer {
            return Err(mismatch(format!("split layer {} != {}", e.split_layer, self.manifest.split_layer)));
        }
        if e.frames != me.frames {
            return Err(mismatch(format!("frames {} != {}", e.frames, me.frames)));
        }
        if e.dim != self.manifest.dim || e.dtype != self.manifest.dtype {
            return Err(mismatch(format!("dim/dtype {}/{:?} differ from manifest", e.dim, e.dtype)));
        }
        Ok(e)
    }
}

/// Cached representations zero-padded along time to the batch maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedBatch {
    pub ids: Vec<String>,
    /// `[B×T_max×d]`
    pub representations: Tensor<f32>,
    pub true_lengths: Vec<usize>,
    /// `[B×2]`
    pub labels: Tensor<f32>,
}

/// Stacks entries into one batch. No attention mask is produced: padded
/// frames are exact zeros and take part in everything downstream.
pub fn assemble_batch(entries: &[&CacheEntry], labels: &[[f64; 2]]) -> Result<CachedBatch> {
    if entries.len() < 2 {
        return Err(Error::BatchSize(entries.len()));
    }
    if labels.len() != entries.len() {
        return Err(Error::Dimension {
            op: "assemble_batch",
            lhs: vec![entries.len()],
            rhs: vec![labels.len()],
        });
    }
    let dim = entries[0].dim;
    if entries.iter().any(|e| e.dim != dim) {
        return Err(Error::Contract("entries disagree on dim".into()));
    }
    let t_max = entries.iter().map(|e| e.frames).max().expect("non-empty");
    let mut data = vec![0.0f32; entries.len() * t_max * dim];
    for (b, e) in entries.iter().enumerate() {
        let off = b * t_max * dim;
        data[off..off + e.payload.len()].copy_from_slice(&e.payload);
    }
    Ok(CachedBatch {
        ids: entries.iter().map(|e| e.sample_id.clone()).collect(),
        representations: Tensor::new(vec![entries.len(), t_max, dim], data)?,
        true_lengths: entries.iter().map(|e| e.frames).collect(),
        labels: Tensor::new(
            vec![labels.len(), 2],
            labels.iter().flatten().map(|&v| v as f32).collect(),
        )?,
    })
}

/// Entries of a whole split loaded into memory, in split order.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSplit {
    pub entries: Vec<CacheEntry>,
    pub labels: Vec<[f64; 2]>,
}

impl CachedSplit {
    pub fn load(reader: &CacheReader, data: &crate::data::Dataset) -> Result<Self> {
        let entries = data.items.iter().map(|s| reader.read(&s.id)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            labels: data.items.iter().map(|s| s.labels).collect(),
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<CachedBatch> {
        let e: Vec<&CacheEntry> = indices.iter().map(|&i| &self.entries[i]).collect();
        let l: Vec<[f64; 2]> = indices.iter().map(|&i| self.labels[i]).collect();
        assemble_batch(&e, &l)
    }
}
