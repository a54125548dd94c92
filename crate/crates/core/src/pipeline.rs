//! Multi-stage training runs shared by the CLI and the test suites.

use crate::error::{Error, Result};
use crate::model::{FusionMode, Model, ModelConfig};
use crate::synth::{CaptionRecord, ProbeRecord, World};
use crate::train::{lm_pretrain, stage1_pretrain, stage2_finetune, LogRow, Stage, TrainOptions};

/// Model shape plus the options of every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub model: ModelConfig,
    pub lm: TrainOptions,
    pub align: TrainOptions,
    pub finetune: TrainOptions,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lm: TrainOptions::lm_default(),
            align: TrainOptions::stage1_default(),
            finetune: TrainOptions::stage2_default(),
        }
    }
}

impl TrainPlan {
    pub fn with_fusion(mut self, fusion: FusionMode) -> Self {
        self.model.fusion = fusion;
        self
    }

    /// Uses `seed` for initialization and for every stage's data order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for o in [&mut self.lm, &mut self.align, &mut self.finetune] {
            o.seed = seed;
        }
        self
    }

    pub fn options(&self, stage: Stage) -> &TrainOptions {
        match stage {
            Stage::Lm => &self.lm,
            Stage::Align => &self.align,
            Stage::Finetune => &self.finetune,
        }
    }
}

/// Training inputs: captions for stages 0 and 1, questions for stage 2.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub world: &'a World,
    pub captions: &'a [CaptionRecord],
    pub questions: &'a [ProbeRecord],
}

pub fn run_stage(model: &mut Model<f32>, stage: Stage, data: TrainData<'_>, opts: &TrainOptions) -> Result<Vec<LogRow>> {
    match stage {
        Stage::Lm => lm_pretrain(model, data.captions, opts),
        Stage::Align => stage1_pretrain(model, data.world, data.captions, opts),
        Stage::Finetune => stage2_finetune(model, data.world, data.questions, opts),
    }
}

/// Runs `stages` in order on `model`, returning the concatenated log.
pub fn run_stages(
    model: &mut Model<f32>,
    stages: &[Stage],
    data: TrainData<'_>,
    plan: &TrainPlan,
) -> Result<Vec<LogRow>> {
    if stages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("stages {stages:?} are not in increasing order")));
    }
    if model.config.d_v != data.world.spec.d_v || model.config.n_visual != data.world.spec.n_slots {
        return Err(Error::Config(format!(
            "model expects {} visual tokens of width {}, world yields {} of width {}",
            model.config.n_visual, model.config.d_v, data.world.spec.n_slots, data.world.spec.d_v
        )));
    }
    let mut log = Vec::new();
    for &stage in stages {
        log.extend(run_stage(model, stage, data, plan.options(stage))?);
    }
    Ok(log)
}

/// Fresh model trained through `stages` from seed `seed`.
pub fn train_from_scratch(
    plan: &TrainPlan,
    fusion: FusionMode,
    seed: u64,
    stages: &[Stage],
    data: TrainData<'_>,
) -> Result<(Model<f32>, Vec<LogRow>)> {
    let plan = plan.clone().with_fusion(fusion).with_seed(seed);
    let mut model = Model::init(plan.model.clone(), seed)?;
    let log = run_stages(&mut model, stages, data, &plan)?;
    Ok((model, log))
}
