//! Training stages.
//!
//! * `Lm` (stage 0): text-only next-token training of the backbone on slot
//!   listings followed by captions. No visual input and no fusion; it gives
//!   the backbone its language prior before any vision is attached.
//! * `Align` (stage 1): captioning with the backbone frozen; only `W_p` (and
//!   `W_d` under VisAlign) learn.
//! * `Finetune` (stage 2): existence QA, every parameter trainable, loss on
//!   the answer position only.
//!
//! Data order: epoch `e` visits the examples in the order of a Fisher–Yates
//! shuffle driven by a ChaCha8 stream keyed by `(train seed, e)`; step `s`
//! takes the next `batch` items of the concatenated epoch sequence. The batch
//! loss is the mean cross-entropy over every supervised position in the
//! batch.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{FusionMode, Model, VisualTokens, FUSE_PROJ, VISUAL_PROJ};
use crate::rng::streams;
use crate::synth::{vocab, CaptionRecord, ProbeRecord, World};
use crate::tensor::{Tape, Tensor};

use super::optim::{optimizer_step, Hyper, OptimState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Lm,
    Align,
    Finetune,
}

impl Stage {
    pub fn number(self) -> u32 {
        match self {
            Stage::Lm => 0,
            Stage::Align => 1,
            Stage::Finetune => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Lm => "lm",
            Stage::Align => "align",
            Stage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" | "lm" => Ok(Stage::Lm),
            "1" | "align" => Ok(Stage::Align),
            "2" | "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub hyper: Hyper,
    pub seed: u64,
    /// Linear decay of the learning rate to zero over `steps`.
    pub lr_decay: bool,
}

impl TrainOptions {
    pub fn lm_default() -> Self {
        Self {
            steps: 1000,
            batch: 32,
            hyper: Hyper {
                lr: 1e-3,
                ..Hyper::default()
            },
            seed: 0,
            lr_decay: false,
        }
    }

    pub fn stage1_default() -> Self {
        Self {
            steps: 1000,
            batch: 32,
            hyper: Hyper {
                lr: 3e-4,
                ..Hyper::default()
            },
            seed: 0,
            lr_decay: false,
        }
    }

    pub fn stage2_default() -> Self {
        Self {
            steps: 2000,
            batch: 32,
            hyper: Hyper {
                lr: 1e-4,
                ..Hyper::default()
            },
            seed: 0,
            lr_decay: false,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_decay && self.steps > 0 {
            self.hyper.lr * (1.0 - (step - 1) as f64 / self.steps as f64)
        } else {
            self.hyper.lr
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,stage,loss,grad_norm,lr";

/// CSV with a header line and one row per optimizer step.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:e}\n",
            r.step,
            r.stage.number(),
            r.loss,
            r.grad_norm,
            r.lr
        ));
    }
    s
}

/// A supervised sequence. Loss rows are sequence positions whose logits
/// predict the matching target.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub text: Vec<usize>,
    pub visual: Option<VisualTokens>,
    pub k: usize,
    pub loss_rows: Vec<usize>,
    pub targets: Vec<usize>,
}

/// `[<bos> describe] V [c0 … c_{n-2}]`, predicting `c0 … c_{n-1}` from the
/// last visual position onward. Prompt and visual positions carry no loss.
pub fn caption_example(world: &World, rec: &CaptionRecord) -> Example {
    let visual = world.encode_scene(&rec.scene);
    let k = vocab::CAPTION_PROMPT.len();
    let n_v = visual.count();
    let n = rec.caption.len();
    let mut text = vocab::CAPTION_PROMPT.to_vec();
    text.extend_from_slice(&rec.caption[..n - 1]);
    Example {
        text,
        visual: Some(visual),
        k,
        loss_rows: (0..n).map(|j| k + n_v - 1 + j).collect(),
        targets: rec.caption.clone(),
    }
}

/// Stage-0 text rendering of a caption record:
/// `<bos> describe s_0 … s_{N-1} c_0 … c_{n-2}` where `s_i` is the object
/// word in slot `i` or `<pad>` for an empty slot. The listing occupies the
/// positions the visual block takes later. Every token after the prompt is
/// supervised, so the backbone learns both the scene statistics and how
/// captions follow from a slot listing.
pub fn listing_example(rec: &CaptionRecord) -> Example {
    let mut text = vocab::CAPTION_PROMPT.to_vec();
    text.extend(rec.scene.slots.iter().map(|s| match s {
        Some(p) => vocab::object_token(p.object_type),
        None => vocab::PAD,
    }));
    text.extend_from_slice(&rec.caption);
    let first = vocab::CAPTION_PROMPT.len() - 1;
    let targets = text[first + 1..].to_vec();
    text.pop();
    Example {
        k: text.len(),
        loss_rows: (first..text.len()).collect(),
        targets,
        text,
        visual: None,
    }
}

/// `[<bos> ask] V [is <obj> present ?]` with the answer predicted at the last position.
pub fn qa_example(world: &World, probe: &ProbeRecord) -> Example {
    let visual = world.encode_scene(&probe.scene);
    let text = probe.text_ids();
    let last = text.len() + visual.count() - 1;
    Example {
        k: vocab::QA_PROMPT.len(),
        loss_rows: vec![last],
        targets: vec![match probe.answer {
            crate::model::Answer::Yes => vocab::YES,
            crate::model::Answer::No => vocab::NO,
        }],
        text,
        visual: Some(visual),
    }
}

/// Parameter names that a stage updates.
pub fn trainable_names(model: &Model<f32>, stage: Stage) -> BTreeSet<String> {
    let names = model.params.names().iter().cloned();
    match stage {
        Stage::Lm => names.filter(|n| n != VISUAL_PROJ && n != FUSE_PROJ).collect(),
        Stage::Align => {
            let mut s = BTreeSet::from([VISUAL_PROJ.to_string()]);
            if model.config.fusion == FusionMode::VisAlign {
                s.insert(FUSE_PROJ.to_string());
            }
            s
        }
        Stage::Finetune => names.collect(),
    }
}

/// Visit order of epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(seed ^ epoch.wrapping_mul(0xA24B_AED4_963E_E407), streams::SHUFFLE);
    order.shuffle(&mut rng);
    order
}

/// Example indices of step `step` (1-based).
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let start = (step - 1) * batch;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = (start / n) as u64;
    let mut order = epoch_order(n, seed, epoch);
    for pos in start..start + batch {
        let e = (pos / n) as u64;
        if e != epoch {
            epoch = e;
            order = epoch_order(n, seed, epoch);
        }
        out.push(order[pos % n]);
    }
    out
}

/// Gradients keyed by parameter name.
pub type NamedGrads = Vec<(String, Tensor<f32>)>;

/// Mean cross-entropy over every supervised position of `batch`, with
/// gradients for the parameters accepted by `trainable`.
pub fn batch_loss(
    model: &Model<f32>,
    batch: &[&Example],
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(f64, NamedGrads)> {
    let mut tape = Tape::<f32>::new();
    let bound = model.params.bind(&mut tape, trainable);
    let mut parts = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for ex in batch {
        let input = match &ex.visual {
            Some(v) => model.build_input(&mut tape, &bound, &ex.text, v, ex.k)?,
            None => model.build_text_only(&mut tape, &bound, &ex.text)?,
        };
        let (hidden, _) = model.hidden(&mut tape, &bound, &input, false)?;
        parts.push(model.head(&mut tape, &bound, hidden, &ex.loss_rows)?);
        targets.extend_from_slice(&ex.targets);
    }
    let logits = tape.concat_rows(&parts)?;
    let loss = tape.cross_entropy(logits, &targets)?;
    let loss_value = f64::from(tape.value(loss).item());
    let mut grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for (name, &var) in model.params.names().iter().zip(bound.vars()) {
        if trainable(name) {
            let g = grads
                .take(var)
                .unwrap_or_else(|| Tensor::zeros(model.params.get(name).expect("bound").shape()));
            out.push((name.clone(), g));
        }
    }
    Ok((loss_value, out))
}

/// Runs `opts.steps` optimizer steps over `examples`, updating only the
/// parameters in `trainable`.
pub fn train_examples(
    model: &mut Model<f32>,
    examples: &[Example],
    stage: Stage,
    trainable: &BTreeSet<String>,
    opts: &TrainOptions,
) -> Result<Vec<LogRow>> {
    if examples.is_empty() {
        return Err(Error::Config(format!("no training data for stage {stage}")));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for name in trainable {
        if !model.params.contains(name) {
            return Err(Error::Config(format!("trainable parameter {name} not in model")));
        }
    }
    let is_trainable = |n: &str| trainable.contains(n);
    let mut state = OptimState::default();
    let mut log = Vec::with_capacity(opts.steps);
    for step in 1..=opts.steps {
        let idx = batch_indices(examples.len(), opts.batch, opts.seed, step);
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let (loss, grads) = batch_loss(model, &batch, &is_trainable)?;
        let lr = opts.lr_at(step);
        let hyper = Hyper { lr, ..opts.hyper };
        let stats = optimizer_step(&mut model.params, &grads, &mut state, &hyper)?;
        log.push(LogRow {
            step,
            stage,
            loss,
            grad_norm: stats.grad_norm,
            lr,
        });
    }
    Ok(log)
}

/// Stage 0: text-only language modelling on slot listings and captions.
pub fn lm_pretrain(model: &mut Model<f32>, corpus: &[CaptionRecord], opts: &TrainOptions) -> Result<Vec<LogRow>> {
    let examples: Vec<Example> = corpus.iter().map(listing_example).collect();
    let trainable = trainable_names(model, Stage::Lm);
    train_examples(model, &examples, Stage::Lm, &trainable, opts)
}

/// Stage 1: caption alignment with the backbone frozen.
pub fn stage1_pretrain(
    model: &mut Model<f32>,
    world: &World,
    corpus: &[CaptionRecord],
    opts: &TrainOptions,
) -> Result<Vec<LogRow>> {
    if corpus.is_empty() {
        return Err(Error::Config("empty caption corpus".into()));
    }
    let examples: Vec<Example> = corpus.iter().map(|r| caption_example(world, r)).collect();
    let trainable = trainable_names(model, Stage::Align);
    train_examples(model, &examples, Stage::Align, &trainable, opts)
}

/// Stage 2: end-to-end fine-tuning on existence questions.
pub fn stage2_finetune(
    model: &mut Model<f32>,
    world: &World,
    probes: &[ProbeRecord],
    opts: &TrainOptions,
) -> Result<Vec<LogRow>> {
    if probes.is_empty() {
        return Err(Error::Config("empty fine-tuning split".into()));
    }
    let examples: Vec<Example> = probes.iter().map(|p| qa_example(world, p)).collect();
    let trainable = trainable_names(model, Stage::Finetune);
    train_examples(model, &examples, Stage::Finetune, &trainable, opts)
}
