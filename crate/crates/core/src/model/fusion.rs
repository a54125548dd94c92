//! Visual front-ends: projection, pooling, text-side fusion and sequence
//! assembly.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Frozen visual features `N_v × d_v` from the scene encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTokens {
    features: Tensor<f32>,
}

impl VisualTokens {
    /// Wraps encoder output. Rows are visual tokens.
    pub fn from_features(features: Tensor<f32>) -> Result<Self> {
        features.expect_matrix("visual tokens")?;
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn count(&self) -> usize {
        self.features.rows()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }
}

/// Which positions of an assembled sequence are text and which are visual.
/// Text rows `[0, k)` come first, then the visual block, then the remaining
/// text rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub k: usize,
    pub n_text: usize,
    pub n_visual: usize,
}

impl SequenceLayout {
    pub fn new(k: usize, n_text: usize, n_visual: usize) -> Result<Self> {
        if k > n_text {
            return Err(Error::Layout(format!("split index k = {k} exceeds text length {n_text}")));
        }
        Ok(Self { k, n_text, n_visual })
    }

    pub fn len(&self) -> usize {
        self.n_text + self.n_visual
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn visual_span(&self) -> Range<usize> {
        self.k..self.k + self.n_visual
    }

    pub fn text_spans(&self) -> [Range<usize>; 2] {
        [0..self.k, self.k + self.n_visual..self.len()]
    }

    pub fn is_visual(&self, pos: usize) -> bool {
        self.visual_span().contains(&pos)
    }

    /// Sequence position of text token `i`.
    pub fn text_position(&self, i: usize) -> usize {
        if i < self.k {
            i
        } else {
            i + self.n_visual
        }
    }

    /// First position after the visual block.
    pub fn after_visual(&self) -> usize {
        self.k + self.n_visual
    }
}

/// Assembled model input living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FusedInput {
    pub embeddings: Var,
    pub layout: SequenceLayout,
}

/// `V_proj = V · W_p`.
pub fn project_visual<T: Real>(tape: &mut Tape<T>, visual: &VisualTokens, w_p: Var) -> Result<Var> {
    let w = tape.value(w_p);
    if w.rank() != 2 || w.rows() != visual.width() {
        return Err(Error::Config(format!(
            "visual width {} does not match projection {:?}",
            visual.width(),
            w.shape()
        )));
    }
    let v = tape.constant(visual.features().cast());
    tape.matmul(v, w_p)
}

/// Mean over visual tokens: `V̂ = (1/N_v) Σ_m V_proj[m]`.
pub fn pool_visual<T: Real>(tape: &mut Tape<T>, v_proj: Var) -> Result<Var> {
    tape.mean_rows(v_proj)
}

/// `T̂ = [T ‖ V̂ ⊗ 1_{N_t}] · W_d`.
pub fn visalign_fuse<T: Real>(tape: &mut Tape<T>, text: Var, v_hat: Var, w_d: Var) -> Result<Var> {
    let (n_t, d_t) = tape.value(text).expect_matrix("visalign_fuse")?;
    let vh = tape.value(v_hat);
    if vh.shape() != [1, d_t] {
        return Err(Error::Config(format!(
            "pooled visual shape {:?} does not match text width {d_t}",
            vh.shape()
        )));
    }
    let wd = tape.value(w_d);
    if wd.shape() != [2 * d_t, d_t] {
        return Err(Error::Config(format!(
            "fusion projection shape {:?}, expected [{}, {d_t}]",
            wd.shape(),
            2 * d_t
        )));
    }
    let broadcast = tape.repeat_rows(v_hat, n_t)?;
    let fused = tape.concat_features(text, broadcast)?;
    tape.matmul(fused, w_d)
}

/// Orders rows as `text[0..k] ‖ visual ‖ text[k..]`.
pub fn assemble_sequence<T: Real>(tape: &mut Tape<T>, text: Var, v_proj: Var, k: usize) -> Result<FusedInput> {
    let (n_t, d) = tape.value(text).expect_matrix("assemble_sequence")?;
    let (n_v, dv) = tape.value(v_proj).expect_matrix("assemble_sequence")?;
    if d != dv {
        return Err(Error::Config(format!("text width {d} vs visual width {dv}")));
    }
    let layout = SequenceLayout::new(k, n_t, n_v)?;
    let head = tape.slice_rows(text, 0, k)?;
    let tail = tape.slice_rows(text, k, n_t)?;
    let embeddings = tape.concat_rows(&[head, v_proj, tail])?;
    Ok(FusedInput { embeddings, layout })
}
