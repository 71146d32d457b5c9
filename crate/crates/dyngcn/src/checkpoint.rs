//! Checkpoint container, all integers `u32` little-endian:
//!
//! ```text
//! magic "DGCNCKPT" | version (1)
//! meta length | meta TOML: model config and input modality
//! layout length | layout text
//! tensor count
//! per tensor: kind (u8: 0 parameter, 1 running mean, 2 running variance)
//!             name length | name | rank | dims... | little-endian f32 values
//! ```
//!
//! Unknown or missing tensors are errors on load; order is not significant.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dyngcn_core::graph::SkeletonLayout;
use dyngcn_core::model::{DynamicGcn, Modality, ModelConfig};
use dyngcn_core::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DGCNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub modality: Modality,
    pub model: ModelConfig,
}

/// A trained model with everything needed to rebuild it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub layout: SkeletonLayout,
    pub store: ParamStore<f32>,
    pub model: DynamicGcn<f32>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Kind {
    Param = 0,
    Mean = 1,
    Var = 2,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, kind: Kind, name: &str, shape: &[usize], data: &[f32]) {
    out.push(kind as u8);
    put_str(out, name);
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(meta: &CheckpointMeta, layout: &SkeletonLayout, store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_str(&mut out, &toml::to_string(meta).expect("checkpoint metadata serializes"));
    put_str(&mut out, &layout.to_text());
    put_u32(&mut out, store.params().len() + 2 * store.all_stats().len());
    for p in store.params() {
        put_tensor(&mut out, Kind::Param, &p.name, p.value.shape(), p.value.data());
    }
    for s in store.all_stats() {
        put_tensor(&mut out, Kind::Mean, &s.name, &[s.stats.mean.len()], &s.stats.mean);
        put_tensor(&mut out, Kind::Var, &s.name, &[s.stats.var.len()], &s.stats.var);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, format!("offset {}", self.pos), msg)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len().saturating_sub(self.pos) < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| self.err("string is not UTF-8"))
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(path, "offset 0", "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::parse(path, "offset 8", format!("unsupported checkpoint version {version}")));
    }
    let meta_text = r.string()?;
    let meta: CheckpointMeta = toml::from_str(&meta_text).map_err(|e| r.err(format!("metadata: {}", e.message())))?;
    let layout_text = r.string()?;
    let layout = SkeletonLayout::parse(&layout_text).map_err(|e| r.err(format!("layout: {e}")))?;
    let count = r.u32()?;
    let mut tensors: BTreeMap<(Kind, String), (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..count {
        let kind = match r.take(1)?[0] {
            0 => Kind::Param,
            1 => Kind::Mean,
            2 => Kind::Var,
            k => return Err(r.err(format!("unknown tensor kind {k}"))),
        };
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r.take(numel * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if tensors.insert((kind, name.clone()), (shape, data)).is_some() {
            return Err(r.err(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes after the last tensor"));
    }

    let mut store = ParamStore::new();
    let model = DynamicGcn::new(&meta.model, layout.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut take = |kind: Kind, name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let (s, d) = tensors.remove(&(kind, name.to_string())).ok_or_else(|| Error::parse(path, name, format!("missing {kind:?} tensor")))?;
        if s != shape {
            return Err(Error::parse(path, name, format!("shape {s:?} does not match the model's {shape:?}")));
        }
        Ok(d)
    };
    for p in store.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::new(&shape, take(Kind::Param, &p.name, &shape)?)?;
    }
    for s in store.all_stats_mut() {
        let c = s.stats.mean.len();
        s.stats.mean = take(Kind::Mean, &s.name, &[c])?;
        s.stats.var = take(Kind::Var, &s.name, &[c])?;
    }
    if let Some(((_, name), _)) = tensors.into_iter().next() {
        return Err(Error::parse(path, name, "tensor not used by the model"));
    }
    Ok(Checkpoint { meta, layout, store, model })
}

pub fn save(path: &Path, meta: &CheckpointMeta, layout: &SkeletonLayout, store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, encode(meta, layout, store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}
