use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::bench::{evaluate, fmt_value, EvalReport};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::lens::{
    aggregate, compare_profiles, comparison_summary, comparison_to_csv, position_mass_csv, profile_to_csv,
    render_heatmap, visual_fraction, write_dump, HeadSelect, ModalityProfile, QueryFilter,
};
use crate::model::{FuseInit, FusionMode, Model};
use crate::pipeline::{run_stages, TrainData, TrainPlan};
use crate::stats::{mean, paired_sign_test};
use crate::synth::io::{read_corpus, read_probes, read_world, write_corpus, write_probes, write_world};
use crate::synth::{fnv1a, gen_pretrain_corpus, gen_probe_set, vocab, Flavor, ProbeSet, World, WorldSpec};
use crate::train::{load_checkpoint, log_to_csv, save_checkpoint, CheckpointMeta, OptimizerKind, Stage, TrainOptions};

use super::config::ConfigFile;
use super::{AttnArgs, CompareArgs, EvalArgs, GenDataArgs, TrainArgs};

pub const WORLD_FILE: &str = "world.txt";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const TRAIN_FILE: &str = "train.txt";

pub fn probes_file(flavor: Flavor) -> String {
    format!("probes_{flavor}.txt")
}

/// Metrics that fell short of their `--fail-below` thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdMiss {
    pub misses: Vec<(String, f64, f64)>,
}

impl fmt::Display for ThresholdMiss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (m, got, want)) in self.misses.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "threshold missed: {m} = {} < {}", fmt_value(*got), fmt_value(*want))?;
        }
        Ok(())
    }
}

type Outcome = Result<Option<ThresholdMiss>>;

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    let spec = WorldSpec::default_with(a.confound_prob, a.world_seed);
    let world = spec.build()?;
    let flavors = a
        .flavor
        .iter()
        .map(|f| f.trim().parse::<Flavor>())
        .collect::<Result<Vec<_>>>()?;
    let corpus = gen_pretrain_corpus(&world, a.n_pretrain, a.world_seed)?;
    let train = gen_probe_set(&world, a.n_train, Flavor::Qa, a.world_seed)?;
    let sets = flavors
        .iter()
        .map(|&f| gen_probe_set(&world, a.n_probes, f, a.world_seed))
        .collect::<Result<Vec<_>>>()?;

    fsutil::create_dir(&a.out)?;
    write_world(&a.out.join(WORLD_FILE), &spec)?;
    write_corpus(&a.out.join(CORPUS_FILE), &spec, &corpus)?;
    write_probes(&a.out.join(TRAIN_FILE), &spec, &train)?;
    for set in &sets {
        write_probes(&a.out.join(probes_file(set.flavor)), &spec, set)?;
    }
    println!("world {:016x}", world.hash());
    println!("{CORPUS_FILE}: {} captions", corpus.records.len());
    for r in &corpus.rates {
        println!(
            "  P({} | {}) = {}/{} = {:.3}",
            vocab::OBJECT_NAMES[r.companion],
            vocab::OBJECT_NAMES[r.anchor],
            r.with_companion,
            r.anchor_scenes,
            r.rate()
        );
    }
    println!("{TRAIN_FILE}: {} questions", train.records.len());
    for set in &sets {
        println!("{}: {} questions", probes_file(set.flavor), set.records.len());
    }
    Ok(None)
}

/// Keys accepted in a `train --config` file.
pub const TRAIN_KEYS: &[&str] = &[
    "d_t",
    "layers",
    "heads",
    "max_seq",
    "ff_mult",
    "init_std",
    "fuse_init",
    "fuse_std",
    "lm.steps",
    "lm.batch",
    "lm.lr",
    "lm.optimizer",
    "lm.clip",
    "lm.lr_decay",
    "stage1.steps",
    "stage1.batch",
    "stage1.lr",
    "stage1.optimizer",
    "stage1.clip",
    "stage1.lr_decay",
    "stage2.steps",
    "stage2.batch",
    "stage2.lr",
    "stage2.optimizer",
    "stage2.clip",
    "stage2.lr_decay",
];

fn config_err(cfg: &ConfigFile, key: &str, msg: String) -> Error {
    Error::Parse {
        path: cfg.path.clone(),
        line: cfg.entries.get(key).map_or(0, |(_, l)| *l),
        msg,
    }
}

fn apply_stage(cfg: &ConfigFile, prefix: &str, o: &mut TrainOptions) -> Result<()> {
    let key = |s: &str| format!("{prefix}.{s}");
    if let Some(v) = cfg.get(&key("steps"))? {
        o.steps = v;
    }
    if let Some(v) = cfg.get(&key("batch"))? {
        o.batch = v;
    }
    if let Some(v) = cfg.get(&key("lr"))? {
        o.hyper.lr = v;
    }
    if let Some(v) = cfg.get(&key("lr_decay"))? {
        o.lr_decay = v;
    }
    if let Some(v) = cfg.get::<String>(&key("optimizer"))? {
        o.hyper.kind = match v.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            _ => return Err(config_err(cfg, &key("optimizer"), format!("unknown optimizer {v:?}"))),
        };
    }
    if let Some(v) = cfg.get::<String>(&key("clip"))? {
        o.hyper.clip = if v == "none" {
            None
        } else {
            Some(cfg.get(&key("clip"))?.expect("present"))
        };
    }
    Ok(())
}

/// Applies a config file on top of `plan`.
pub fn apply_config(cfg: &ConfigFile, plan: &mut TrainPlan) -> Result<()> {
    cfg.reject_unknown(TRAIN_KEYS)?;
    let m = &mut plan.model;
    macro_rules! set {
        ($key:literal, $field:expr) => {
            if let Some(v) = cfg.get($key)? {
                $field = v;
            }
        };
    }
    set!("d_t", m.d_t);
    set!("layers", m.layers);
    set!("heads", m.heads);
    set!("max_seq", m.max_seq);
    set!("ff_mult", m.ff_mult);
    set!("init_std", m.init_std);
    let std: f64 = cfg.get("fuse_std")?.unwrap_or(0.02);
    m.fuse_init = match cfg.get::<String>("fuse_init")?.as_deref() {
        None | Some("identity_top") => FuseInit::IdentityTop { bottom_std: std },
        Some("gaussian") => FuseInit::Gaussian { std },
        Some(v) => return Err(config_err(cfg, "fuse_init", format!("unknown fuse_init {v:?}"))),
    };
    apply_stage(cfg, "lm", &mut plan.lm)?;
    apply_stage(cfg, "stage1", &mut plan.align)?;
    apply_stage(cfg, "stage2", &mut plan.finetune)?;
    plan.model.validate().map_err(|e| Error::Parse {
        path: cfg.path.clone(),
        line: 0,
        msg: e.to_string(),
    })
}

fn stages_for(arg: &str, init: Option<Stage>) -> Result<Vec<Stage>> {
    let all = [Stage::Lm, Stage::Align, Stage::Finetune];
    Ok(match (arg, init) {
        ("all", None) => all.to_vec(),
        ("all", Some(done)) => all.into_iter().filter(|&s| s > done).collect(),
        ("1", None) => vec![Stage::Lm, Stage::Align],
        ("2", None) => {
            return Err(Error::Config(
                "stage 2 fine-tunes an aligned model; pass --init with a stage-1 checkpoint".into(),
            ))
        }
        (s, _) => vec![s.parse::<Stage>()?],
    })
}

fn check_world(meta: &CheckpointMeta, world: &World, ckpt: &Path) -> Result<()> {
    if meta.world_hash != world.hash() {
        return Err(Error::HashMismatch(format!(
            "{} was trained on world {:016x} but the data describe world {:016x}",
            ckpt.display(),
            meta.world_hash,
            world.hash()
        )));
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Outcome {
    let fusion: FusionMode = a.fusion.parse()?;
    let spec = read_world(&a.data.join(WORLD_FILE))?;
    let world = spec.build()?;
    let corpus = read_corpus(&a.data.join(CORPUS_FILE), &spec)?;
    let questions = read_probes(&a.data.join(TRAIN_FILE), &spec)?;

    let mut plan = TrainPlan::default().with_fusion(fusion);
    plan.model.d_v = spec.d_v;
    plan.model.n_visual = spec.n_slots;
    if let Some(path) = &a.config {
        apply_config(&ConfigFile::load(path)?, &mut plan)?;
    }
    let plan = plan.with_seed(a.seed);

    let (mut model, done, step0) = match &a.init {
        Some(path) => {
            let (m, meta) = load_checkpoint(path)?;
            check_world(&meta, &world, path)?;
            if m.config.fusion != fusion {
                return Err(Error::Config(format!(
                    "{} is a {} checkpoint, --fusion says {fusion}",
                    path.display(),
                    m.config.fusion
                )));
            }
            (m, Some(meta.stage), meta.step)
        }
        None => (Model::init(plan.model.clone(), a.seed)?, None, 0),
    };
    let stages = stages_for(&a.stage, done)?;
    if stages.is_empty() {
        return Err(Error::Config("no stages left to run".into()));
    }
    let data = TrainData {
        world: &world,
        captions: &corpus.records,
        questions: &questions.records,
    };
    let log = run_stages(&mut model, &stages, data, &plan)?;
    let meta = CheckpointMeta {
        world_hash: world.hash(),
        train_seed: a.seed,
        step: step0 + log.len() as u64,
        stage: *stages.last().expect("nonempty"),
    };
    save_checkpoint(&a.out, &model, &meta)?;
    let log_path = loss_log_path(&a.out);
    fsutil::write_atomic(&log_path, log_to_csv(&log).as_bytes())?;
    for &s in &stages {
        let rows: Vec<f64> = log.iter().filter(|r| r.stage == s).map(|r| r.loss).collect();
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            println!("stage {} ({s}): {} steps, loss {first:.4} -> {last:.4}", s.number(), rows.len());
        }
    }
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(None)
}

/// `<dir>/<stem>.loss.csv` for a checkpoint path.
pub fn loss_log_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ckpt.with_file_name(format!("{stem}.loss.csv"))
}

struct Loaded {
    model: Model<f32>,
    meta: CheckpointMeta,
    hash: u64,
}

fn load_for_eval(ckpt: &Path, world: &World) -> Result<Loaded> {
    let bytes = fsutil::read(ckpt)?;
    let (model, meta) = crate::train::checkpoint::decode(&bytes)?;
    check_world(&meta, world, ckpt)?;
    Ok(Loaded {
        model,
        meta,
        hash: fnv1a(&bytes),
    })
}

fn load_probes(probes: &Path, world: Option<&Path>) -> Result<(World, ProbeSet)> {
    let world_path = match world {
        Some(p) => p.to_path_buf(),
        None => probes.parent().unwrap_or(Path::new(".")).join(WORLD_FILE),
    };
    let spec = read_world(&world_path)?;
    let set = read_probes(probes, &spec)?;
    Ok((spec.build()?, set))
}

fn parse_threshold(s: &str) -> Result<(String, f64)> {
    let (m, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--fail-below expects METRIC=VALUE, got {s:?}")))?;
    let v: f64 = v
        .parse()
        .map_err(|_| Error::Config(format!("--fail-below value {v:?} is not a number")))?;
    Ok((m.to_string(), v))
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let thresholds = a
        .fail_below
        .iter()
        .map(|s| parse_threshold(s))
        .collect::<Result<Vec<_>>>()?;
    let (world, set) = load_probes(&a.probes, a.world.as_deref())?;
    let ck = load_for_eval(&a.ckpt, &world)?;
    let report = evaluate(&ck.model, &world, &set, ck.hash, ck.meta.train_seed)?;
    for (m, _) in &thresholds {
        if report.get(m).is_none() {
            return Err(Error::Config(format!(
                "unknown metric {m:?}; available: {}",
                report.metrics().keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    fsutil::create_dir(&a.report)?;
    fsutil::write_atomic(&a.report.join("report.csv"), report.to_csv().as_bytes())?;
    fsutil::write_atomic(&a.report.join("report.txt"), report.to_text().as_bytes())?;
    print!("{}", report.to_text());
    let misses: Vec<(String, f64, f64)> = thresholds
        .into_iter()
        .filter_map(|(m, want)| {
            let got = report.get(&m).expect("checked");
            (got < want).then_some((m, got, want))
        })
        .collect();
    Ok((!misses.is_empty()).then_some(ThresholdMiss { misses }))
}

fn profile_over(model: &Model<f32>, world: &World, set: &ProbeSet, filter: QueryFilter) -> Result<ModalityProfile> {
    let mut profiles = Vec::with_capacity(set.records.len());
    for r in &set.records {
        let rec = model.attention(&r.text_ids(), &world.encode_scene(&r.scene), vocab::QA_PROMPT.len())?;
        profiles.push(visual_fraction(&rec, &rec.layout, filter)?);
    }
    aggregate(&profiles)
}

pub fn attn(a: &AttnArgs) -> Outcome {
    let filter: QueryFilter = a.query_filter.parse()?;
    let (world, set) = load_probes(&a.probes, a.world.as_deref())?;
    let ck = load_for_eval(&a.ckpt, &world)?;
    fsutil::create_dir(&a.dump)?;
    for (i, r) in set.records.iter().take(a.limit).enumerate() {
        let rec = ck
            .model
            .attention(&r.text_ids(), &world.encode_scene(&r.scene), vocab::QA_PROMPT.len())?;
        write_dump(&a.dump.join(format!("attn_{i:04}.bin")), &rec)?;
        if a.heatmaps {
            for l in 0..rec.layers {
                render_heatmap(&rec, l, HeadSelect::Mean, &a.dump.join(format!("heat_{i:04}_l{l}.ppm")))?;
            }
        }
    }
    println!("dumped {} records to {}", set.records.len().min(a.limit), a.dump.display());
    if a.profile {
        let name = a.probes.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let p = profile_over(&ck.model, &world, &set, filter)?.with_meta(name, vec![ck.meta.train_seed]);
        fsutil::write_atomic(&a.dump.join("profile.csv"), profile_to_csv(&p).as_bytes())?;
        fsutil::write_atomic(&a.dump.join("positions.csv"), position_mass_csv(&p).as_bytes())?;
        for l in 0..p.layers {
            println!("layer {l}: visual_fraction {:.4}", p.layer_mean(l));
        }
    }
    Ok(None)
}

fn expand(template: &str, seed: u64, n: u64) -> Result<PathBuf> {
    if template.contains("{seed}") {
        Ok(PathBuf::from(template.replace("{seed}", &seed.to_string())))
    } else if n == 1 {
        Ok(PathBuf::from(template))
    } else {
        Err(Error::Config(format!(
            "--seeds {n} needs a {{seed}} placeholder in checkpoint path {template:?}"
        )))
    }
}

/// One seed's paired evaluation.
struct SeedResult {
    base: EvalReport,
    vis: EvalReport,
    base_profile: ModalityProfile,
    vis_profile: ModalityProfile,
}

fn compare_seed(a: &CompareArgs, world: &World, set: &ProbeSet, seed: u64) -> Result<SeedResult> {
    let run = |template: &str, want: FusionMode| -> Result<(EvalReport, ModalityProfile)> {
        let path = expand(template, seed, a.seeds)?;
        let ck = load_for_eval(&path, world)?;
        if ck.model.config.fusion != want {
            eprintln!("warning: {} is a {} checkpoint, not {want}", path.display(), ck.model.config.fusion);
        }
        let report = evaluate(&ck.model, world, set, ck.hash, ck.meta.train_seed)?;
        let profile = profile_over(&ck.model, world, set, QueryFilter::TextAfterVisual)?;
        Ok((report, profile))
    };
    let (base, base_profile) = run(&a.baseline_ckpt, FusionMode::Baseline)?;
    let (vis, vis_profile) = run(&a.visalign_ckpt, FusionMode::VisAlign)?;
    Ok(SeedResult {
        base,
        vis,
        base_profile,
        vis_profile,
    })
}

/// Metrics compared across modes and the sign each is expected to move by.
fn compared_metrics(r: &SeedResult) -> BTreeMap<String, (f64, f64, i8)> {
    let b = r.base.metrics();
    let v = r.vis.metrics();
    let mut out = BTreeMap::new();
    for key in ["acc", "precision", "recall", "f1", "hallucination_rate", "strict_pair_acc"] {
        if let (Some(x), Some(y)) = (b.get(key), v.get(key)) {
            let sign = if key == "hallucination_rate" { -1 } else { 1 };
            out.insert(key.to_string(), (*x, *y, sign));
        }
    }
    for (key, x) in b.iter().filter(|(k, _)| k.starts_with("merlin.")) {
        if let Some(y) = v.get(key) {
            out.insert(key.clone(), (*x, *y, 1));
        }
    }
    out.insert(
        "visual_fraction".into(),
        (r.base_profile.overall(), r.vis_profile.overall(), 1),
    );
    out
}

pub const COMPARE_SEEDS_HEADER: &str = "seed,metric,baseline,visalign,delta";
pub const COMPARE_SUMMARY_HEADER: &str = "metric,baseline_mean,visalign_mean,mean_delta,expected_sign,agree,untied,p_value";

pub fn compare(a: &CompareArgs) -> Outcome {
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let (world, set) = load_probes(&a.probes, a.world.as_deref())?;
    let results: Vec<SeedResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..a.seeds)
            .map(|seed| {
                let (world, set) = (&world, &set);
                scope.spawn(move || compare_seed(a, world, set, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("comparison thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let per_seed: Vec<BTreeMap<String, (f64, f64, i8)>> = results.iter().map(compared_metrics).collect();
    let mut seeds_csv = format!("{COMPARE_SEEDS_HEADER}\n");
    for (seed, m) in per_seed.iter().enumerate() {
        for (k, (b, v, _)) in m {
            seeds_csv.push_str(&format!("{seed},{k},{b:.6},{v:.6},{:.6}\n", v - b));
        }
    }
    let mut summary_csv = format!("{COMPARE_SUMMARY_HEADER}\n");
    let mut summary_txt = BTreeMap::new();
    for (k, (_, _, sign)) in &per_seed[0] {
        let pairs: Vec<(f64, f64)> = per_seed.iter().filter_map(|m| m.get(k)).map(|(b, v, _)| (*b, *v)).collect();
        let deltas: Vec<f64> = pairs.iter().map(|(b, v)| v - b).collect();
        let signed: Vec<f64> = deltas.iter().map(|d| d * f64::from(*sign)).collect();
        let (agree, untied, p) = paired_sign_test(&signed);
        let bm = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let vm = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let dm = mean(&deltas);
        let sign_str = if *sign > 0 { "+" } else { "-" };
        summary_csv.push_str(&format!("{k},{bm:.6},{vm:.6},{dm:.6},{sign_str},{agree},{untied},{p:.6}\n"));
        summary_txt.insert(format!("{k}.mean_delta"), format!("{dm:.6}"));
        summary_txt.insert(format!("{k}.agree"), format!("{agree}/{untied}"));
        summary_txt.insert(format!("{k}.p_value"), format!("{p:.6}"));
    }
    summary_txt.insert("seeds".into(), a.seeds.to_string());

    let base_profiles: Vec<ModalityProfile> = results.iter().map(|r| r.base_profile.clone()).collect();
    let vis_profiles: Vec<ModalityProfile> = results.iter().map(|r| r.vis_profile.clone()).collect();
    let attn = compare_profiles(&base_profiles, &vis_profiles)?;

    fsutil::create_dir(&a.out)?;
    fsutil::write_atomic(&a.out.join("compare_seeds.csv"), seeds_csv.as_bytes())?;
    fsutil::write_atomic(&a.out.join("compare_summary.csv"), summary_csv.as_bytes())?;
    fsutil::write_atomic(&a.out.join("attention_layers.csv"), comparison_to_csv(&attn).as_bytes())?;
    let text: String = summary_txt.iter().map(|(k, v)| format!("{k}={v}\n")).collect::<String>()
        + &comparison_summary(&attn)
            .lines()
            .map(|l| format!("attention.{l}\n"))
            .collect::<String>();
    fsutil::write_atomic(&a.out.join("summary.txt"), text.as_bytes())?;
    print!("{summary_csv}");
    Ok(None)
}
