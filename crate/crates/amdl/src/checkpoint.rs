//! `AMDL` checkpoints: base networks and per-domain adapter bundles.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AMDL" | u16 version | u8 kind (0 base, 1 bundle)
//! u16 n_meta  { u16 len, key | u16 len, value }*
//! u32 n_tensor { u16 len, name | u8 rank | u32 dim* | f32 value* }*
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use amdl_core::data::Normalization;
use amdl_core::model::{BaseNetwork, DomainAdapterSet, ExitTopology, NetworkConfig, ParamKind, ParamStore};
use amdl_core::Tensor;

use crate::binio::{Reader, Writer};
use crate::error::{AppError, AppResult, FormatError};

pub const MAGIC: &[u8; 4] = b"AMDL";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Base = 0,
    Bundle = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// The decoded file: ordered metadata and tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u8(self.kind as u8);
        w.u16(self.metadata.len() as u16);
        for (k, v) in &self.metadata {
            w.str16(k);
            w.str16(v);
        }
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.str16(&t.name);
            w.u8(t.shape.len() as u8);
            for &d in &t.shape {
                w.u32(d as u32);
            }
            for v in &t.values {
                w.bytes(&v.to_le_bytes());
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.header(MAGIC, VERSION)?;
        let at = r.pos;
        let kind = match r.u8("kind")? {
            0 => Kind::Base,
            1 => Kind::Bundle,
            k => return Err(FormatError::new(at, format!("unknown checkpoint kind {k}"))),
        };
        let n_meta = r.u16("metadata count")?;
        let mut metadata = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            let k = r.str16("metadata key")?;
            let v = r.str16("metadata value")?;
            metadata.push((k, v));
        }
        let n = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = r.str16("tensor name")?;
            let rank = r.u8("rank")?;
            let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let at = r.pos;
            let numel = numel.filter(|n| n.checked_mul(4).is_some()).ok_or_else(|| FormatError::new(at, format!("tensor {name}: shape {shape:?} overflows")))?;
            let raw = r.take(numel * 4, "tensor values")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        r.trailer()?;
        Ok(Self { kind, metadata, tensors })
    }

    pub fn meta(&self, key: &str) -> AppResult<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| AppError::usage(format!("checkpoint has no '{key}' entry")))
    }

    /// Tensors whose names start with `prefix`, prefix stripped.
    fn store(&self, prefix: &str) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for t in self.tensors.iter().filter(|t| t.name.starts_with(prefix)) {
            let tensor = Tensor::new(&t.shape, t.values.clone()).expect("decoded shape matches values");
            s.insert(t.name[prefix.len()..].to_string(), ParamKind::Buffer, tensor);
        }
        s
    }
}

fn push_store(out: &mut Vec<NamedTensor>, prefix: &str, store: &ParamStore<f32>) {
    for (name, _, t) in store.entries() {
        out.push(NamedTensor { name: format!("{prefix}{name}"), shape: t.shape().to_vec(), values: t.data().to_vec() });
    }
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(key: &str, s: &str) -> AppResult<Vec<f64>> {
    s.split(',').map(|x| x.parse::<f64>().map_err(|_| AppError::usage(format!("bad '{key}' entry '{s}'")))).collect()
}

fn parse_num<N: std::str::FromStr>(ck: &Checkpoint, key: &str) -> AppResult<N> {
    let v = ck.meta(key)?;
    v.parse().map_err(|_| AppError::usage(format!("bad '{key}' entry '{v}'")))
}

fn norm_meta(meta: &mut Vec<(String, String)>, norm: &Normalization) {
    meta.push(("norm_mean".into(), floats(&norm.mean)));
    meta.push(("norm_std".into(), floats(&norm.std)));
}

fn norm_from(ck: &Checkpoint) -> AppResult<Normalization> {
    Ok(Normalization { mean: parse_floats("norm_mean", ck.meta("norm_mean")?)?, std: parse_floats("norm_std", ck.meta("norm_std")?)? })
}

/// A base network with the input normalization it was trained under.
#[derive(Debug, Clone)]
pub struct SavedBase {
    pub base: BaseNetwork<f32>,
    pub norm: Normalization,
}

pub fn base_checkpoint(base: &BaseNetwork<f32>, norm: &Normalization) -> Checkpoint {
    let mut metadata = vec![
        ("config".into(), base.config.canonical()),
        ("classes".into(), base.num_classes.to_string()),
        ("config_hash".into(), format!("{:016x}", base.config_hash())),
        ("frozen".into(), u8::from(base.is_frozen()).to_string()),
    ];
    norm_meta(&mut metadata, norm);
    let mut tensors = Vec::new();
    push_store(&mut tensors, "shared/", &base.shared_store);
    push_store(&mut tensors, "home/", &base.home_store);
    Checkpoint { kind: Kind::Base, metadata, tensors }
}

pub fn base_from_checkpoint(ck: &Checkpoint) -> AppResult<SavedBase> {
    if ck.kind != Kind::Base {
        return Err(AppError::usage("expected a base checkpoint, found an adapter bundle"));
    }
    let config = NetworkConfig::parse_canonical(ck.meta("config")?)?;
    let mut base = BaseNetwork::<f32>::build(&config, parse_num(ck, "classes")?, 0)?;
    base.shared_store.load_from(&ck.store("shared/"))?;
    base.home_store.load_from(&ck.store("home/"))?;
    if ck.meta("frozen")? == "1" {
        base.freeze();
    }
    Ok(SavedBase { base, norm: norm_from(ck)? })
}

/// An adapter bundle plus the normalization of its domain's training split.
#[derive(Debug, Clone)]
pub struct SavedBundle {
    pub domain: DomainAdapterSet<f32>,
    pub norm: Normalization,
}

pub fn bundle_checkpoint(domain: &DomainAdapterSet<f32>, norm: &Normalization) -> Checkpoint {
    let mut metadata = vec![
        ("domain".into(), domain.domain.clone()),
        ("classes".into(), domain.num_classes.to_string()),
        ("topology".into(), domain.topology.tag()),
        ("adapt".into(), u8::from(domain.adapt).to_string()),
        ("base_hash".into(), format!("{:016x}", domain.base_hash)),
        ("active_blocks".into(), domain.active_blocks.to_string()),
    ];
    norm_meta(&mut metadata, norm);
    let mut tensors = Vec::new();
    push_store(&mut tensors, "", &domain.store);
    Checkpoint { kind: Kind::Bundle, metadata, tensors }
}

/// Rebuilds a bundle against `base`; a bundle trained on a different base
/// configuration is rejected.
pub fn bundle_from_checkpoint(ck: &Checkpoint, base: &BaseNetwork<f32>) -> AppResult<SavedBundle> {
    if ck.kind != Kind::Bundle {
        return Err(AppError::usage("expected an adapter bundle, found a base checkpoint"));
    }
    let hash = ck.meta("base_hash")?;
    let expected = format!("{:016x}", base.config_hash());
    if hash != expected {
        return Err(amdl_core::Error::ParamMismatch(format!("bundle was trained against base {hash}, this base is {expected}")).into());
    }
    let topology = ExitTopology::parse(ck.meta("topology")?)?;
    let adapt = ck.meta("adapt")? == "1";
    let mut domain = DomainAdapterSet::attach(base, ck.meta("domain")?, parse_num(ck, "classes")?, topology, adapt, 0)?;
    domain.store.load_from(&ck.store(""))?;
    domain.active_blocks = parse_num(ck, "active_blocks")?;
    Ok(SavedBundle { domain, norm: norm_from(ck)? })
}

pub fn read(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|source| AppError::Format { path: path.into(), source })
}

pub fn write(path: &Path, ck: &Checkpoint) -> AppResult<()> {
    fs::write(path, ck.encode()).map_err(|e| AppError::io(path, e))
}

pub fn load_base(path: &Path) -> AppResult<SavedBase> {
    base_from_checkpoint(&read(path)?)
}

pub fn load_bundle(path: &Path, base: &BaseNetwork<f32>) -> AppResult<SavedBundle> {
    bundle_from_checkpoint(&read(path)?, base)
}
