//! Binary checkpoints.
//!
//! ```text
//! "VALN"            magic
//! u32 LE            version (1)
//! payload:
//!   u32 LE          meta length, then that many bytes of UTF-8
//!                   `key=value` lines sorted by key
//!   u32 LE          tensor count, then per tensor
//!                   u32 name length, name bytes, u32 rank,
//!                   rank × u32 extents, f32 LE values (row-major)
//! u32 LE            CRC-32 of the payload
//! ```
//!
//! Loading checks structure before the checksum, then parameter shapes
//! against the shapes the recorded config demands.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{self, ByteReader};
use crate::model::{FuseInit, FusionMode, Model, ModelConfig, ParamStore};
use crate::tensor::Tensor;

use super::stages::Stage;

pub const MAGIC: [u8; 4] = *b"VALN";
pub const VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub world_hash: u64,
    pub train_seed: u64,
    pub step: u64,
    pub stage: Stage,
}

fn meta_text(config: &ModelConfig, meta: &CheckpointMeta) -> String {
    let fuse_init = match config.fuse_init {
        FuseInit::IdentityTop { bottom_std } => format!("identity_top:{bottom_std}"),
        FuseInit::Gaussian { std } => format!("gaussian:{std}"),
    };
    let kv: BTreeMap<&str, String> = BTreeMap::from([
        ("d_t", config.d_t.to_string()),
        ("d_v", config.d_v.to_string()),
        ("layers", config.layers.to_string()),
        ("heads", config.heads.to_string()),
        ("vocab", config.vocab.to_string()),
        ("max_seq", config.max_seq.to_string()),
        ("n_visual", config.n_visual.to_string()),
        ("ff_mult", config.ff_mult.to_string()),
        ("init_std", config.init_std.to_string()),
        ("fusion", config.fusion.to_string()),
        ("fuse_init", fuse_init),
        ("world_hash", format!("{:016x}", meta.world_hash)),
        ("train_seed", meta.train_seed.to_string()),
        ("step", meta.step.to_string()),
        ("stage", meta.stage.number().to_string()),
    ]);
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn bad_meta(msg: String) -> Error {
    Error::Data(format!("checkpoint metadata: {msg}"))
}

fn parse_meta(text: &str) -> Result<(ModelConfig, CheckpointMeta)> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad_meta(format!("line {line:?} is not key=value")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad_meta(format!("missing key {k}")));
    fn num<N: std::str::FromStr>(k: &str, v: &str) -> Result<N> {
        v.parse().map_err(|_| bad_meta(format!("{k}={v} is not a number")))
    }
    let fuse_init = {
        let v = get("fuse_init")?;
        let (kind, std) = v.split_once(':').ok_or_else(|| bad_meta(format!("fuse_init={v}")))?;
        let std: f64 = num("fuse_init", std)?;
        match kind {
            "identity_top" => FuseInit::IdentityTop { bottom_std: std },
            "gaussian" => FuseInit::Gaussian { std },
            _ => return Err(bad_meta(format!("fuse_init={v}"))),
        }
    };
    let config = ModelConfig {
        d_t: num("d_t", get("d_t")?)?,
        d_v: num("d_v", get("d_v")?)?,
        layers: num("layers", get("layers")?)?,
        heads: num("heads", get("heads")?)?,
        vocab: num("vocab", get("vocab")?)?,
        max_seq: num("max_seq", get("max_seq")?)?,
        n_visual: num("n_visual", get("n_visual")?)?,
        ff_mult: num("ff_mult", get("ff_mult")?)?,
        init_std: num("init_std", get("init_std")?)?,
        fusion: get("fusion")?.parse::<FusionMode>()?,
        fuse_init,
    };
    let hash = get("world_hash")?;
    let meta = CheckpointMeta {
        world_hash: u64::from_str_radix(hash, 16).map_err(|_| bad_meta(format!("world_hash={hash}")))?,
        train_seed: num("train_seed", get("train_seed")?)?,
        step: num("step", get("step")?)?,
        stage: get("stage")?.parse()?,
    };
    Ok((config, meta))
}

fn put_u32(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&u32::try_from(x).expect("fits in u32").to_le_bytes());
}

/// Serialized checkpoint bytes.
pub fn encode(model: &Model<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut payload = Vec::new();
    let text = meta_text(&model.config, meta);
    put_u32(&mut payload, text.len());
    payload.extend_from_slice(text.as_bytes());
    put_u32(&mut payload, model.params.len());
    for (name, t) in model.params.iter() {
        put_u32(&mut payload, name.len());
        payload.extend_from_slice(name.as_bytes());
        put_u32(&mut payload, t.shape().len());
        for &e in t.shape() {
            put_u32(&mut payload, e);
        }
        for &x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

/// Parses checkpoint bytes back into a model and its metadata.
pub fn decode(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let payload_start = r.pos();
    let meta_len = r.len("metadata length")?;
    let meta_bytes = r.take(meta_len, "metadata")?;
    let count = r.len("tensor count")?;
    let mut raw = Vec::new();
    for _ in 0..count {
        let name_len = r.len("tensor name length")?;
        let name = r.take(name_len, "tensor name")?;
        let rank = r.len("tensor rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len("tensor extent")?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::Truncated("tensor values"))?;
        let values = r.take(n, "tensor values")?;
        raw.push((name, shape, values));
    }
    let payload = &bytes[payload_start..r.pos()];
    let stored = r.u32("checksum")?;
    if r.remaining() != 0 {
        return Err(Error::Data(format!("{} trailing bytes after checksum", r.remaining())));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let text = std::str::from_utf8(meta_bytes).map_err(|_| bad_meta("not UTF-8".into()))?;
    let (config, meta) = parse_meta(text)?;
    let expected = Model::<f32>::expected_shapes(&config)?;
    let mut params = ParamStore::new();
    for (name, shape, values) in raw {
        let name = std::str::from_utf8(name).map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        let data = values
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.contains(name) {
            return Err(Error::Data(format!("duplicate tensor {name}")));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    for (name, want) in &expected {
        let t = params.get(name).map_err(|_| Error::Data(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != want.as_slice() {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected: want.clone(),
                found: t.shape().to_vec(),
            });
        }
    }
    if params.len() != expected.len() {
        let extra = params
            .names()
            .iter()
            .find(|n| !expected.iter().any(|(e, _)| e == *n))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Data(format!("unexpected tensor {extra}")));
    }
    Ok((Model { config, params }, meta))
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(path: &Path, model: &Model<f32>, meta: &CheckpointMeta) -> Result<()> {
    fsutil::write_atomic(path, &encode(model, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    decode(&fsutil::read(path)?)
}
