//! Attention dump files.
//!
//! ```text
//! "ATTN"
//! u32 LE  version (1), L, H, S, k, N_v
//! f32 LE  weights, row-major [layer][head][query][key]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{self, ByteReader};
use crate::model::{AttentionRecord, SequenceLayout};

pub const MAGIC: [u8; 4] = *b"ATTN";
pub const VERSION: u32 = 1;
/// Row-sum tolerance applied when loading.
pub const ROW_TOLERANCE: f32 = 1e-4;

pub fn encode_dump(record: &AttentionRecord) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let lay = record.layout;
    for x in [VERSION as usize, record.layers, record.heads, record.seq, lay.k, lay.n_visual] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for w in &record.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Parses and validates a dump: masked cells must be exactly zero and every
/// row a probability distribution.
pub fn decode_dump(bytes: &[u8]) -> Result<AttentionRecord> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let layers = r.len("layer count")?;
    let heads = r.len("head count")?;
    let seq = r.len("sequence length")?;
    let k = r.len("split index")?;
    let n_visual = r.len("visual count")?;
    if n_visual > seq {
        return Err(Error::Data(format!("N_v = {n_visual} exceeds S = {seq}")));
    }
    let layout = SequenceLayout::new(k, seq - n_visual, n_visual)?;
    let n = [layers, heads, seq, seq, 4]
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or(Error::Truncated("weights"))?;
    let raw = r.take(n, "weights")?;
    if r.remaining() != 0 {
        return Err(Error::Data(format!("{} trailing bytes in attention dump", r.remaining())));
    }
    let weights: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let record = AttentionRecord::new(layers, heads, seq, layout, weights)?;
    for l in 0..layers {
        for h in 0..heads {
            let m = record.matrix(l, h);
            for q in 0..seq {
                let row = &m[q * seq..(q + 1) * seq];
                if row[q + 1..].iter().any(|&w| w != 0.0) {
                    return Err(Error::Data(format!("layer {l} head {h} query {q}: mass above the diagonal")));
                }
                let sum: f32 = row.iter().sum();
                if row.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::Data(format!(
                        "layer {l} head {h} query {q}: not a distribution (sum {sum})"
                    )));
                }
            }
        }
    }
    Ok(record)
}

pub fn write_dump(path: &Path, record: &AttentionRecord) -> Result<()> {
    fsutil::write_atomic(path, &encode_dump(record))
}

pub fn read_dump(path: &Path) -> Result<AttentionRecord> {
    decode_dump(&fsutil::read(path)?)
}
