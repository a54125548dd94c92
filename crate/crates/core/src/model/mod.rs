//! Tiny pre-norm decoder-only transformer with two visual front-ends.

mod config;
mod fusion;
mod params;

pub use config::{FuseInit, FusionMode, ModelConfig};
pub use fusion::{
    assemble_sequence, pool_visual, project_visual, visalign_fuse, FusedInput, SequenceLayout, VisualTokens,
};
pub use params::{Bound, ParamStore};

use crate::error::{Error, Result};
use crate::rng::{normal, stream, streams};
use crate::tensor::{causal_visibility, Real, Tape, Tensor, Var};

pub const TOKEN_EMBED: &str = "embed.tok";
pub const POS_EMBED: &str = "embed.pos";
pub const VISUAL_PROJ: &str = "proj.w_p";
pub const FUSE_PROJ: &str = "fuse.w_d";

/// Post-softmax attention weights of every layer and head for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: usize,
    pub heads: usize,
    pub seq: usize,
    pub layout: SequenceLayout,
    /// Row-major `[layer][head][query][key]`.
    pub weights: Vec<f32>,
}

impl AttentionRecord {
    pub fn new(layers: usize, heads: usize, seq: usize, layout: SequenceLayout, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != layers * heads * seq * seq {
            return Err(Error::Shape(format!(
                "{} attention weights for L={layers} H={heads} S={seq}",
                weights.len()
            )));
        }
        if layout.len() != seq {
            return Err(Error::Layout(format!(
                "layout covers {} positions, record has {seq}",
                layout.len()
            )));
        }
        Ok(Self {
            layers,
            heads,
            seq,
            layout,
            weights,
        })
    }

    pub fn matrix(&self, layer: usize, head: usize) -> &[f32] {
        let s2 = self.seq * self.seq;
        let off = (layer * self.heads + head) * s2;
        &self.weights[off..off + s2]
    }

    pub fn get(&self, layer: usize, head: usize, q: usize, k: usize) -> f32 {
        self.matrix(layer, head)[q * self.seq + k]
    }

    /// Head-averaged matrix for one layer.
    pub fn mean_over_heads(&self, layer: usize) -> Vec<f32> {
        let s2 = self.seq * self.seq;
        let mut out = vec![0.0f32; s2];
        for h in 0..self.heads {
            for (o, &w) in out.iter_mut().zip(self.matrix(layer, h)) {
                *o += w;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.heads as f32);
        out
    }
}

/// Answer read off a yes/no logit comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

/// `yes` iff `logit[yes_id] > logit[no_id]`; an exact tie answers `no`.
pub fn decode_answer<T: Real>(logits: &[T], yes_id: usize, no_id: usize) -> Answer {
    if logits[yes_id] > logits[no_id] {
        Answer::Yes
    } else {
        Answer::No
    }
}

fn layer_name(l: usize, part: &str) -> String {
    format!("layer{l}.{part}")
}

fn head_name(l: usize, h: usize, which: &str) -> String {
    format!("layer{l}.attn.h{h}.{which}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model with seeded Gaussian weights, unit layer-norm gains and
    /// zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, streams::INIT);
        let std = config.init_std;
        let mut gauss = |rows: usize, cols: usize, std: f64| -> Tensor<T> {
            let data = (0..rows * cols).map(|_| T::lit(normal(&mut rng, std))).collect();
            Tensor::matrix(rows, cols, data).expect("shape")
        };
        let ones = |n: usize| Tensor::matrix(1, n, vec![T::one(); n]).expect("shape");
        let zeros = |n: usize| Tensor::<T>::zeros(&[1, n]);

        let (d, dh, ff) = (config.d_t, config.head_dim(), config.ff_width());
        let mut p = ParamStore::new();
        p.insert(TOKEN_EMBED, gauss(config.vocab, d, std));
        p.insert(POS_EMBED, gauss(config.max_seq, d, std));
        p.insert(VISUAL_PROJ, gauss(config.d_v, d, std));
        for l in 0..config.layers {
            p.insert(layer_name(l, "ln1.g"), ones(d));
            p.insert(layer_name(l, "ln1.b"), zeros(d));
            for h in 0..config.heads {
                for which in ["q", "k", "v"] {
                    p.insert(head_name(l, h, which), gauss(d, dh, std));
                }
            }
            p.insert(layer_name(l, "attn.o"), gauss(d, d, std));
            p.insert(layer_name(l, "ln2.g"), ones(d));
            p.insert(layer_name(l, "ln2.b"), zeros(d));
            p.insert(layer_name(l, "ff.w1"), gauss(d, ff, std));
            p.insert(layer_name(l, "ff.b1"), zeros(ff));
            p.insert(layer_name(l, "ff.w2"), gauss(ff, d, std));
            p.insert(layer_name(l, "ff.b2"), zeros(d));
        }
        p.insert("final_ln.g", ones(d));
        p.insert("final_ln.b", zeros(d));
        p.insert("head.w", gauss(d, config.vocab, std));
        // Drawn last so both fusion modes share every other initial weight.
        if config.fusion == FusionMode::VisAlign {
            let wd = match config.fuse_init {
                FuseInit::IdentityTop { bottom_std } => {
                    let bottom = gauss(d, d, bottom_std);
                    let mut data = Tensor::<T>::identity(d).into_data();
                    data.extend_from_slice(bottom.data());
                    Tensor::matrix(2 * d, d, data).expect("shape")
                }
                FuseInit::Gaussian { std } => gauss(2 * d, d, std),
            };
            p.insert(FUSE_PROJ, wd);
        }
        Ok(Self { config, params: p })
    }

    /// Expected parameter shapes for `config`, in store order.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let m = Model::<f32>::init(
            ModelConfig {
                init_std: 0.0,
                ..config.clone()
            },
            0,
        )?;
        Ok(m.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Overwrites `W_d` with an exact identity-top / zero-bottom matrix.
    pub fn set_identity_fuse(&mut self) -> Result<()> {
        let d = self.config.d_t;
        let mut data = Tensor::<T>::identity(d).into_data();
        data.extend(std::iter::repeat_n(T::zero(), d * d));
        *self.params.get_mut(FUSE_PROJ)? = Tensor::matrix(2 * d, d, data)?;
        Ok(())
    }

    /// Embeds `text_ids`, projects `visual`, applies the configured fusion and
    /// splices the visual block in at text index `k`.
    pub fn build_input(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        text_ids: &[usize],
        visual: &VisualTokens,
        k: usize,
    ) -> Result<FusedInput> {
        if visual.count() != self.config.n_visual && visual.count() != 0 {
            return Err(Error::Config(format!(
                "{} visual tokens, model expects {}",
                visual.count(),
                self.config.n_visual
            )));
        }
        let text = tape.embedding_lookup(bound.var(TOKEN_EMBED)?, text_ids)?;
        let v_proj = project_visual(tape, visual, bound.var(VISUAL_PROJ)?)?;
        let text = match self.config.fusion {
            FusionMode::Baseline => text,
            FusionMode::VisAlign => {
                let v_hat = pool_visual(tape, v_proj)?;
                visalign_fuse(tape, text, v_hat, bound.var(FUSE_PROJ)?)?
            }
        };
        assemble_sequence(tape, text, v_proj, k)
    }

    /// Token embeddings only, no visual block and no fusion.
    pub fn build_text_only(&self, tape: &mut Tape<T>, bound: &Bound, text_ids: &[usize]) -> Result<FusedInput> {
        let embeddings = tape.embedding_lookup(bound.var(TOKEN_EMBED)?, text_ids)?;
        Ok(FusedInput {
            embeddings,
            layout: SequenceLayout::new(text_ids.len(), text_ids.len(), 0)?,
        })
    }

    /// Runs the decoder stack and returns final-layer-normed hidden states
    /// (`S × d_t`), optionally capturing attention.
    pub fn hidden(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: &FusedInput,
        capture_attention: bool,
    ) -> Result<(Var, Option<AttentionRecord>)> {
        let cfg = &self.config;
        let s = input.layout.len();
        if s > cfg.max_seq {
            return Err(Error::Capacity {
                len: s,
                max: cfg.max_seq,
            });
        }
        let emb = tape.value(input.embeddings);
        if emb.shape() != [s, cfg.d_t] {
            return Err(Error::Layout(format!(
                "embeddings {:?} disagree with layout length {s}",
                emb.shape()
            )));
        }
        let positions: Vec<usize> = (0..s).collect();
        let pos = tape.embedding_lookup(bound.var(POS_EMBED)?, &positions)?;
        let mut h = tape.add(input.embeddings, pos)?;

        let visible = causal_visibility(s);
        let scale = T::one() / T::from_usize(cfg.head_dim()).unwrap().sqrt();
        let mut captured = capture_attention.then(|| Vec::with_capacity(cfg.layers * cfg.heads * s * s));

        for l in 0..cfg.layers {
            let a = self.norm(tape, bound, h, &layer_name(l, "ln1"))?;
            let mut head_out: Option<Var> = None;
            for hd in 0..cfg.heads {
                let q = tape.matmul(a, bound.var(&head_name(l, hd, "q"))?)?;
                let k = tape.matmul(a, bound.var(&head_name(l, hd, "k"))?)?;
                let v = tape.matmul(a, bound.var(&head_name(l, hd, "v"))?)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale)?;
                let probs = tape.softmax_rows(scores, Some(&visible))?;
                if let Some(buf) = captured.as_mut() {
                    buf.extend(tape.value(probs).data().iter().map(|x| x.to_f32().unwrap_or(f32::NAN)));
                }
                let o = tape.matmul(probs, v)?;
                head_out = Some(match head_out {
                    None => o,
                    Some(prev) => tape.concat_features(prev, o)?,
                });
            }
            let merged = head_out.expect("at least one head");
            let attn = tape.matmul(merged, bound.var(&layer_name(l, "attn.o"))?)?;
            h = tape.add(h, attn)?;

            let f = self.norm(tape, bound, h, &layer_name(l, "ln2"))?;
            let f = tape.matmul(f, bound.var(&layer_name(l, "ff.w1"))?)?;
            let f = tape.add_row(f, bound.var(&layer_name(l, "ff.b1"))?)?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, bound.var(&layer_name(l, "ff.w2"))?)?;
            let f = tape.add_row(f, bound.var(&layer_name(l, "ff.b2"))?)?;
            h = tape.add(h, f)?;
        }
        let out = self.norm(tape, bound, h, "final_ln")?;
        let record = captured
            .map(|w| AttentionRecord::new(cfg.layers, cfg.heads, s, input.layout, w))
            .transpose()?;
        Ok((out, record))
    }

    fn norm(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let n = tape.layer_norm_rows(x)?;
        let n = tape.mul_row(n, bound.var(&format!("{prefix}.g"))?)?;
        tape.add_row(n, bound.var(&format!("{prefix}.b"))?)
    }

    /// Vocabulary logits for the selected sequence positions.
    pub fn head(&self, tape: &mut Tape<T>, bound: &Bound, hidden: Var, rows: &[usize]) -> Result<Var> {
        let picked = tape.gather_rows(hidden, rows)?;
        tape.matmul(picked, bound.var("head.w")?)
    }

    /// Full forward pass: logits at every position (`S × V`).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: &FusedInput,
        capture_attention: bool,
    ) -> Result<(Var, Option<AttentionRecord>)> {
        let (hidden, record) = self.hidden(tape, bound, input, capture_attention)?;
        let logits = tape.matmul(hidden, bound.var("head.w")?)?;
        Ok((logits, record))
    }

    /// Inference convenience: logits at the last position for one example.
    pub fn last_logits(&self, text_ids: &[usize], visual: &VisualTokens, k: usize) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| false);
        let input = self.build_input(&mut tape, &bound, text_ids, visual, k)?;
        let (hidden, _) = self.hidden(&mut tape, &bound, &input, false)?;
        let logits = self.head(&mut tape, &bound, hidden, &[input.layout.len() - 1])?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Attention capture for one example without gradients.
    pub fn attention(&self, text_ids: &[usize], visual: &VisualTokens, k: usize) -> Result<AttentionRecord> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| false);
        let input = self.build_input(&mut tape, &bound, text_ids, visual, k)?;
        let (_, record) = self.hidden(&mut tape, &bound, &input, true)?;
        Ok(record.expect("captured"))
    }

    /// Greedy decoding. Generated tokens join the text segment after the
    /// visual block, so in VisAlign mode they are fused like prompt tokens.
    pub fn generate(
        &self,
        prompt: &[usize],
        visual: &VisualTokens,
        k: usize,
        max_new: usize,
        stop: Option<usize>,
    ) -> Result<Vec<usize>> {
        let mut ids = prompt.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if ids.len() + visual.count() >= self.config.max_seq {
                break;
            }
            let logits = self.last_logits(&ids, visual, k)?;
            let next = argmax(&logits);
            out.push(next);
            ids.push(next);
            if Some(next) == stop {
                break;
            }
        }
        Ok(out)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            d_t: 8,
            d_v: 6,
            layers: 2,
            heads: 2,
            vocab: 11,
            max_seq: 16,
            n_visual: 3,
            ff_mult: 2,
            fusion,
            init_std: 0.3,
            fuse_init: FuseInit::IdentityTop { bottom_std: 0.3 },
        }
    }

    fn visual(n: usize, d: usize, seed: u64) -> VisualTokens {
        let mut rng = crate::rng::seeded(seed);
        let data = (0..n * d).map(|_| normal(&mut rng, 1.0) as f32).collect();
        VisualTokens::from_features(Tensor::matrix(n, d, data).unwrap()).unwrap()
    }

    #[test]
    fn fusion_modes_share_backbone_init() {
        let a = Model::<f32>::init(tiny(FusionMode::Baseline), 9).unwrap();
        let b = Model::<f32>::init(tiny(FusionMode::VisAlign), 9).unwrap();
        for (name, t) in a.params.iter() {
            assert_eq!(t, b.params.get(name).unwrap(), "{name}");
        }
        assert_eq!(b.params.len(), a.params.len() + 1);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(FusionMode::Baseline);
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(tiny(FusionMode::VisAlign).validate().is_ok());
    }

    #[test]
    fn decode_answer_rules() {
        assert_eq!(decode_answer(&[0.0f32, 2.0, 1.0], 1, 2), Answer::Yes);
        assert_eq!(decode_answer(&[0.0f32, 1.0, 1.0], 1, 2), Answer::No);
        assert_eq!(decode_answer(&[0.0f32, 0.5, 1.0], 1, 2), Answer::No);
    }

    #[test]
    fn attention_first_row_is_one_hot() {
        let m = Model::<f32>::init(tiny(FusionMode::VisAlign), 4).unwrap();
        let rec = m.attention(&[1, 2, 3, 4], &visual(3, 6, 1), 2).unwrap();
        for l in 0..rec.layers {
            for h in 0..rec.heads {
                assert_eq!(rec.get(l, h, 0, 0), 1.0);
                assert!((1..rec.seq).all(|k| rec.get(l, h, 0, k) == 0.0));
            }
        }
    }

    #[test]
    fn sequence_too_long_is_capacity_error() {
        let m = Model::<f32>::init(tiny(FusionMode::Baseline), 4).unwrap();
        let ids = vec![1usize; 14];
        let err = m.last_logits(&ids, &visual(3, 6, 1), 2).unwrap_err();
        assert!(matches!(err, Error::Capacity { len: 17, max: 16 }));
    }

    #[test]
    fn wrong_visual_count_is_rejected() {
        let m = Model::<f32>::init(tiny(FusionMode::Baseline), 4).unwrap();
        assert!(m.last_logits(&[1, 2], &visual(5, 6, 1), 1).is_err());
    }

    #[test]
    fn generate_stops_and_is_deterministic() {
        let m = Model::<f32>::init(tiny(FusionMode::VisAlign), 9).unwrap();
        let v = visual(3, 6, 2);
        let a = m.generate(&[1, 2], &v, 1, 5, None).unwrap();
        let b = m.generate(&[1, 2], &v, 1, 5, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let stop = a[0];
        let c = m.generate(&[1, 2], &v, 1, 5, Some(stop)).unwrap();
        assert_eq!(c, vec![stop]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
    }
}
