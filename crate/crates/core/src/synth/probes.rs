//! Caption corpora and hallucination probe sets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Answer;
use crate::rng::{streams, DetRng};

use super::vocab;
use super::world::{record_rng, Scene, World};

/// Retry budget for constrained record generation.
pub const MAX_RETRIES: usize = 1000;
/// Adversarial negatives come from this many most frequent companions.
pub const TOP_K: usize = 3;
/// Scenes in the reference sample used to rank companions.
pub const REFERENCE_SCENES: usize = 4000;

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub scene: Scene,
    pub caption: Vec<usize>,
}

/// Empirical `P(companion | anchor)` measured on a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CompanionRate {
    pub anchor: usize,
    pub companion: usize,
    pub anchor_scenes: usize,
    pub with_companion: usize,
}

impl CompanionRate {
    pub fn rate(&self) -> f64 {
        if self.anchor_scenes == 0 {
            0.0
        } else {
            self.with_companion as f64 / self.anchor_scenes as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub records: Vec<CaptionRecord>,
    pub rates: Vec<CompanionRate>,
}

impl Corpus {
    /// Companion frequency pooled over every planted pair.
    pub fn pooled_rate(&self) -> f64 {
        let (a, c) = self
            .rates
            .iter()
            .fold((0, 0), |(a, c), r| (a + r.anchor_scenes, c + r.with_companion));
        if a == 0 {
            0.0
        } else {
            c as f64 / a as f64
        }
    }
}

pub fn measure_rates<'a>(world: &World, scenes: impl Iterator<Item = &'a Scene> + Clone) -> Vec<CompanionRate> {
    world
        .spec
        .priors
        .iter()
        .map(|p| {
            let mut r = CompanionRate {
                anchor: p.anchor,
                companion: p.companion,
                anchor_scenes: 0,
                with_companion: 0,
            };
            for s in scenes.clone() {
                if s.contains(p.anchor) {
                    r.anchor_scenes += 1;
                    r.with_companion += usize::from(s.contains(p.companion));
                }
            }
            r
        })
        .collect()
}

/// Stage-1 captioning data: `n` scenes with their canonical captions.
pub fn gen_pretrain_corpus(world: &World, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let records: Vec<CaptionRecord> = (0..n)
        .map(|i| {
            let scene = world.scene_at(seed, streams::SCENES, i as u64);
            let caption = world.caption(&scene);
            CaptionRecord { scene, caption }
        })
        .collect();
    let rates = measure_rates(world, records.iter().map(|r| &r.scene));
    Ok(Corpus { seed, records, rates })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeKind {
    Positive,
    AdversarialNegative,
    RandomNegative,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Positive => "positive",
            ProbeKind::AdversarialNegative => "adversarial_negative",
            ProbeKind::RandomNegative => "random_negative",
        }
    }
}

impl FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(ProbeKind::Positive),
            "adversarial_negative" => Ok(ProbeKind::AdversarialNegative),
            "random_negative" => Ok(ProbeKind::RandomNegative),
            _ => Err(Error::Data(format!("unknown probe kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditTag {
    Original,
    Edited,
}

impl EditTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EditTag::Original => "original",
            EditTag::Edited => "edited",
        }
    }
}

/// Probe-set designs. `Qa` is the natural question distribution used as
/// the fine-tuning split: balanced yes/no with uniformly random absent
/// objects as negatives and no adversarial selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    Pope,
    MmvpPairs,
    MerlinEdit,
    Qa,
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Pope => "pope",
            Flavor::MmvpPairs => "mmvp_pairs",
            Flavor::MerlinEdit => "merlin_edit",
            Flavor::Qa => "qa",
        }
    }

    fn purpose(self) -> u64 {
        match self {
            Flavor::Pope => streams::PROBES,
            Flavor::MmvpPairs => streams::PROBES + 0x100,
            Flavor::MerlinEdit => streams::PROBES + 0x200,
            Flavor::Qa => streams::TRAIN_PROBES,
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pope" => Ok(Flavor::Pope),
            "mmvp_pairs" | "mmvp" => Ok(Flavor::MmvpPairs),
            "merlin_edit" | "merlin" => Ok(Flavor::MerlinEdit),
            "qa" => Ok(Flavor::Qa),
            _ => Err(Error::Config(format!("unknown probe flavor {s:?}"))),
        }
    }
}

/// One existence question about one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRecord {
    pub scene: Scene,
    /// `is <object> present ?`
    pub question: Vec<usize>,
    pub answer: Answer,
    pub kind: ProbeKind,
    pub pair_id: Option<u64>,
    pub edit: Option<EditTag>,
}

impl ProbeRecord {
    fn new(scene: Scene, object_type: usize, kind: ProbeKind) -> Self {
        let answer = if scene.contains(object_type) {
            Answer::Yes
        } else {
            Answer::No
        };
        Self {
            scene,
            question: vocab::question(object_type),
            answer,
            kind,
            pair_id: None,
            edit: None,
        }
    }

    /// Object type the question asks about.
    pub fn object(&self) -> Option<usize> {
        self.question.iter().find_map(|&t| vocab::token_object(t))
    }

    /// Model text input: QA prompt followed by the question.
    pub fn text_ids(&self) -> Vec<usize> {
        let mut ids = vocab::QA_PROMPT.to_vec();
        ids.extend_from_slice(&self.question);
        ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub flavor: Flavor,
    pub seed: u64,
    pub records: Vec<ProbeRecord>,
}

fn pick<T: Copy>(rng: &mut DetRng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

fn absent_types(world: &World, scene: &Scene) -> Vec<usize> {
    (0..world.spec.n_types).filter(|&t| !scene.contains(t)).collect()
}

/// Absent types among the top-k companions of present planted anchors,
/// best rank first.
fn adversarial_candidates(world: &World, table: &[Vec<usize>], scene: &Scene) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in world.spec.confounded_pairs() {
        if !scene.contains(p.anchor) {
            continue;
        }
        for (rank, &c) in table[p.anchor].iter().enumerate() {
            if !scene.contains(c) && !out.iter().any(|&(_, t)| t == c) {
                out.push((rank, c));
            }
        }
    }
    out.sort();
    out
}

fn positive(world: &World, rng: &mut DetRng) -> ProbeRecord {
    let scene = world.sample_scene(rng);
    let present: Vec<usize> = scene.present_types().into_iter().collect();
    let t = pick(rng, &present);
    ProbeRecord::new(scene, t, ProbeKind::Positive)
}

fn adversarial(world: &World, table: &[Vec<usize>], rng: &mut DetRng) -> Result<ProbeRecord> {
    // Prefer a scene whose best-ranked companion is missing; fall back to the
    // first scene offering any top-k candidate.
    let mut fallback = None;
    for _ in 0..MAX_RETRIES {
        let scene = world.sample_scene(rng);
        let cands = adversarial_candidates(world, table, &scene);
        if let Some(&(rank, t)) = cands.first() {
            if rank == 0 {
                return Ok(ProbeRecord::new(scene, t, ProbeKind::AdversarialNegative));
            }
            fallback.get_or_insert((scene, t));
        }
    }
    fallback
        .map(|(scene, t)| ProbeRecord::new(scene, t, ProbeKind::AdversarialNegative))
        .ok_or_else(|| {
            Error::Generation(format!(
                "no scene with an absent top-{TOP_K} companion after {MAX_RETRIES} retries"
            ))
        })
}

fn random_negative(world: &World, table: &[Vec<usize>], rng: &mut DetRng) -> Result<ProbeRecord> {
    for _ in 0..MAX_RETRIES {
        let scene = world.sample_scene(rng);
        let adv: BTreeSet<usize> = adversarial_candidates(world, table, &scene)
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let pool: Vec<usize> = absent_types(world, &scene)
            .into_iter()
            .filter(|t| !adv.contains(t))
            .collect();
        if !pool.is_empty() {
            let t = pick(rng, &pool);
            return Ok(ProbeRecord::new(scene, t, ProbeKind::RandomNegative));
        }
    }
    Err(Error::Generation("no random negative found".into()))
}

/// Scene pair differing in exactly one slot's object; both ask about the
/// object that was swapped out.
fn mmvp_pair(world: &World, rng: &mut DetRng, pair: u64) -> Result<[ProbeRecord; 2]> {
    for _ in 0..MAX_RETRIES {
        let scene = world.sample_scene(rng);
        let singles: Vec<usize> = (0..scene.slots.len())
            .filter(|&s| matches!(scene.slots[s], Some(p) if scene.count_of(p.object_type) == 1))
            .collect();
        let absent = absent_types(world, &scene);
        if singles.is_empty() || absent.is_empty() {
            continue;
        }
        let slot = pick(rng, &singles);
        let replacement = pick(rng, &absent);
        let placed = scene.slots[slot].expect("occupied");
        let mut other = scene.clone();
        other.slots[slot] = Some(super::world::Placed {
            object_type: replacement,
            attr: placed.attr,
        });
        let mut a = ProbeRecord::new(scene, placed.object_type, ProbeKind::Positive);
        let mut b = ProbeRecord::new(other, placed.object_type, ProbeKind::RandomNegative);
        a.pair_id = Some(pair);
        b.pair_id = Some(pair);
        return Ok([a, b]);
    }
    Err(Error::Generation(format!(
        "no scene with a single-instance object after {MAX_RETRIES} retries"
    )))
}

/// Original/edited scenes where the edit removes the sole instance of one
/// type. Emits the four (polarity × edit) probes.
fn merlin_group(world: &World, rng: &mut DetRng, pair: u64) -> Result<[ProbeRecord; 4]> {
    for _ in 0..MAX_RETRIES {
        let original = world.sample_scene(rng);
        let singles: Vec<usize> = original
            .present_types()
            .into_iter()
            .filter(|&t| original.count_of(t) == 1)
            .collect();
        if singles.is_empty() || original.object_count() < 2 {
            continue;
        }
        let removed = pick(rng, &singles);
        let mut edited = original.clone();
        edited.remove_type(removed);
        let remaining: Vec<usize> = edited.present_types().into_iter().collect();
        let absent = absent_types(world, &original);
        if remaining.is_empty() || absent.is_empty() {
            continue;
        }
        let kept = pick(rng, &remaining);
        let neg = pick(rng, &absent);
        let tag = |mut r: ProbeRecord, e: EditTag| {
            r.pair_id = Some(pair);
            r.edit = Some(e);
            r
        };
        return Ok([
            tag(ProbeRecord::new(original.clone(), removed, ProbeKind::Positive), EditTag::Original),
            tag(ProbeRecord::new(original, neg, ProbeKind::RandomNegative), EditTag::Original),
            tag(ProbeRecord::new(edited.clone(), kept, ProbeKind::Positive), EditTag::Edited),
            tag(ProbeRecord::new(edited, removed, ProbeKind::RandomNegative), EditTag::Edited),
        ]);
    }
    Err(Error::Generation(format!(
        "no scene with a single-instance object after {MAX_RETRIES} retries"
    )))
}

/// Generates `n` probe records of `flavor`.
///
/// * `Pope`: even indices are positives; odd indices alternate adversarial
///   and random negatives. `n` must be even.
/// * `MmvpPairs`: consecutive records form a pair (`n` must be even).
/// * `MerlinEdit`: groups of four records per edited scene pair; the set is
///   truncated to `n`.
/// * `Qa`: even indices positive, odd indices uniformly random absent objects.
pub fn gen_probe_set(world: &World, n: usize, flavor: Flavor, seed: u64) -> Result<ProbeSet> {
    let purpose = flavor.purpose();
    let rng_for = |i: usize| record_rng(seed, purpose, i as u64);
    let records = match flavor {
        Flavor::Pope => {
            if !n.is_multiple_of(2) {
                return Err(Error::Config("pope probe sets need an even size".into()));
            }
            if world.spec.confounded_pairs().next().is_none() {
                return Err(Error::Generation(
                    "world has no confounded anchor/companion pair; pope adversarial negatives are unsatisfiable"
                        .into(),
                ));
            }
            let table = world.companion_table(TOP_K, REFERENCE_SCENES);
            (0..n)
                .map(|i| {
                    let mut rng = rng_for(i);
                    match i % 4 {
                        0 | 2 => Ok(positive(world, &mut rng)),
                        1 => adversarial(world, &table, &mut rng),
                        _ => random_negative(world, &table, &mut rng),
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
        Flavor::MmvpPairs => {
            if !n.is_multiple_of(2) {
                return Err(Error::Config("mmvp probe sets need an even size".into()));
            }
            let mut out = Vec::with_capacity(n);
            for p in 0..n / 2 {
                out.extend(mmvp_pair(world, &mut rng_for(p), p as u64)?);
            }
            out
        }
        Flavor::MerlinEdit => {
            let mut out = Vec::with_capacity(n + 3);
            let mut g = 0;
            while out.len() < n {
                out.extend(merlin_group(world, &mut rng_for(g), g as u64)?);
                g += 1;
            }
            out.truncate(n);
            out
        }
        Flavor::Qa => (0..n)
            .map(|i| {
                let mut rng = rng_for(i);
                if i % 2 == 0 {
                    Ok(positive(world, &mut rng))
                } else {
                    for _ in 0..MAX_RETRIES {
                        let scene = world.sample_scene(&mut rng);
                        let absent = absent_types(world, &scene);
                        if !absent.is_empty() {
                            let t = pick(&mut rng, &absent);
                            return Ok(ProbeRecord::new(scene, t, ProbeKind::RandomNegative));
                        }
                    }
                    Err(Error::Generation("no absent object found".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ProbeSet { flavor, seed, records })
}
