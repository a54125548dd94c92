//! Attention heatmaps as binary PPM and SVG.
//!
//! One cell per (query row, key column). Masked cells (key after query) are
//! black. Unmasked weights run blue (0) through white (0.5) to red (1), each
//! channel interpolated linearly and rounded to the nearest integer. A 1-px
//! white column separates adjacent modality spans on the key axis, so an
//! `S × S` record with `g` interior span boundaries yields an image of
//! `(S + g) × S` pixels.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::AttentionRecord;

pub const MASKED: [u8; 3] = [0, 0, 0];
pub const GRID: [u8; 3] = [255, 255, 255];

/// Colour of an attention weight, clamped into `[0, 1]`.
pub fn color(w: f32) -> [u8; 3] {
    let w = f64::from(w).clamp(0.0, 1.0);
    let c = |x: f64| (255.0 * x).round() as u8;
    if w <= 0.5 {
        let t = w / 0.5;
        [c(t), c(t), 255]
    } else {
        let t = (w - 0.5) / 0.5;
        [255, c(1.0 - t), c(1.0 - t)]
    }
}

/// Which matrix of a layer to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelect {
    Head(usize),
    Mean,
}

/// Rendered pixels, row-major RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Heatmap {
    pub fn ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn svg(&self) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" shape-rendering=\"crispEdges\">\n",
            w = self.width,
            h = self.height
        );
        for y in 0..self.height {
            for x in 0..self.width {
                let p = &self.rgb[(y * self.width + x) * 3..][..3];
                s.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill=\"#{:02x}{:02x}{:02x}\"/>\n",
                    p[0], p[1], p[2]
                ));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Key columns before which a gridline column is inserted.
fn boundaries(record: &AttentionRecord) -> Vec<usize> {
    let lay = record.layout;
    let mut b = Vec::new();
    for edge in [lay.k, lay.after_visual()] {
        if edge > 0 && edge < record.seq && lay.n_visual > 0 && !b.contains(&edge) {
            b.push(edge);
        }
    }
    b
}

pub fn heatmap(record: &AttentionRecord, layer: usize, select: HeadSelect) -> Result<Heatmap> {
    if layer >= record.layers {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            bound: record.layers,
        });
    }
    let m = match select {
        HeadSelect::Head(h) if h >= record.heads => {
            return Err(Error::Index {
                what: "head",
                index: h,
                bound: record.heads,
            })
        }
        HeadSelect::Head(h) => record.matrix(layer, h).to_vec(),
        HeadSelect::Mean => record.mean_over_heads(layer),
    };
    let s = record.seq;
    let grid = boundaries(record);
    let width = s + grid.len();
    let mut rgb = Vec::with_capacity(width * s * 3);
    for q in 0..s {
        for k in 0..s {
            if grid.contains(&k) {
                rgb.extend_from_slice(&GRID);
            }
            let px = if k > q { MASKED } else { color(m[q * s + k]) };
            rgb.extend_from_slice(&px);
        }
    }
    Ok(Heatmap { width, height: s, rgb })
}

/// Writes `path` as PPM and a sibling `.svg`; returns both paths.
pub fn render_heatmap(
    record: &AttentionRecord,
    layer: usize,
    select: HeadSelect,
    path: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let map = heatmap(record, layer, select)?;
    let svg = path.with_extension("svg");
    fsutil::write_atomic(path, &map.ppm())?;
    fsutil::write_atomic(&svg, map.svg().as_bytes())?;
    Ok((path.to_path_buf(), svg))
}
