//! World definition, scene sampling and the frozen scene encoder.
//!
//! Scene `i` under seed `s` is drawn from its own ChaCha8 stream, so any
//! record can be regenerated on its own. Sampling steps:
//!
//! 1. object count `n ~ U{min_objects ..= max_objects}`;
//! 2. each object's type: with probability `anchor_bias` a uniformly chosen
//!    prior anchor, otherwise a uniformly chosen type from all `M` types
//!    (repeats allowed);
//! 3. slots: the first `n` entries of a Fisher–Yates shuffle of all slots;
//!    colors uniform over the palette;
//! 4. for each co-occurrence prior in order, if its anchor is present: with
//!    probability `p` make sure the companion is present (adding one in a
//!    uniformly chosen free slot with a uniform color), otherwise remove
//!    every instance of the companion.
//!
//! The encoder maps each occupied slot to
//! `[object feature ‖ color one-hot ‖ slot one-hot] · E`, with `E` a frozen
//! Gaussian matrix (std `1/sqrt(rows)`); empty slots emit a fixed null
//! vector. Object features, `E` and the null vector are drawn from dedicated
//! streams of the world seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::VisualTokens;
use crate::rng::{normal, seeded, stream, streams, DetRng};
use crate::tensor::Tensor;

use super::vocab;

/// Record-stream purpose for the reference sample behind [`World::companion_table`].
const REFERENCE_PURPOSE: u64 = 0xC0;

/// Bumped whenever sampling or encoding changes output bytes.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CoOccurrence {
    pub anchor: usize,
    pub companion: usize,
    pub prob: f64,
}

/// Generative parameters of a synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub n_types: usize,
    pub d_obj: usize,
    pub palette: usize,
    pub n_slots: usize,
    pub d_v: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub anchor_bias: f64,
    pub priors: Vec<CoOccurrence>,
    pub seed: u64,
}

/// Anchor/companion type pairs used by [`WorldSpec::default_with`].
pub const DEFAULT_PAIRS: [(usize, usize); 5] = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)];

impl Default for WorldSpec {
    fn default() -> Self {
        Self::default_with(0.9, 0)
    }
}

impl WorldSpec {
    /// Default world with every planted prior at `confound_prob`.
    pub fn default_with(confound_prob: f64, seed: u64) -> Self {
        Self {
            n_types: 20,
            d_obj: 16,
            palette: 4,
            n_slots: 16,
            d_v: 32,
            min_objects: 2,
            max_objects: 4,
            anchor_bias: 0.25,
            priors: DEFAULT_PAIRS
                .iter()
                .map(|&(anchor, companion)| CoOccurrence {
                    anchor,
                    companion,
                    prob: confound_prob,
                })
                .collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_types == 0 || self.n_types > vocab::OBJECT_NAMES.len() {
            return Err(Error::Config(format!(
                "n_types must be in 1..={}",
                vocab::OBJECT_NAMES.len()
            )));
        }
        if self.palette == 0 || self.palette > vocab::COLOR_NAMES.len() {
            return Err(Error::Config(format!("palette must be in 1..={}", vocab::COLOR_NAMES.len())));
        }
        if self.d_obj == 0 || self.d_v == 0 || self.n_slots == 0 {
            return Err(Error::Config("d_obj, d_v and n_slots must be positive".into()));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config("need 1 <= min_objects <= max_objects".into()));
        }
        if self.max_objects + self.priors.len() > self.n_slots {
            return Err(Error::Config("max_objects + priors must fit in the slot grid".into()));
        }
        if !(0.0..=1.0).contains(&self.anchor_bias) {
            return Err(Error::Config("anchor_bias must be in [0, 1]".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.priors {
            if !(0.0..=1.0).contains(&p.prob) {
                return Err(Error::Config(format!("prior probability {} outside [0, 1]", p.prob)));
            }
            if p.anchor == p.companion {
                return Err(Error::Config(format!("prior anchor == companion ({})", p.anchor)));
            }
            if p.anchor >= self.n_types || p.companion >= self.n_types {
                return Err(Error::Config("prior names an unknown type".into()));
            }
            if !seen.insert(p.anchor) || !seen.insert(p.companion) {
                return Err(Error::Config("prior pairs must use disjoint types".into()));
            }
        }
        Ok(())
    }

    /// Priors with non-zero probability.
    pub fn confounded_pairs(&self) -> impl Iterator<Item = &CoOccurrence> {
        self.priors.iter().filter(|p| p.prob > 0.0)
    }

    pub fn is_anchor(&self, t: usize) -> bool {
        self.priors.iter().any(|p| p.anchor == t)
    }

    /// Canonical text form; its FNV-1a 64 digest is the world hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "world v{GENERATOR_VERSION}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(
            s,
            "types={} d_obj={} palette={} slots={} d_v={} min_objects={} max_objects={} anchor_bias={}",
            self.n_types,
            self.d_obj,
            self.palette,
            self.n_slots,
            self.d_v,
            self.min_objects,
            self.max_objects,
            self.anchor_bias
        );
        for p in &self.priors {
            let _ = writeln!(s, "prior={}:{}:{}", p.anchor, p.companion, p.prob);
        }
        s
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }

    /// Parses [`WorldSpec::canonical`] output.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Data(format!("world line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == format!("world v{GENERATOR_VERSION}") => {}
            _ => return Err(bad(0, "missing or unsupported world header")),
        }
        let mut spec = WorldSpec {
            priors: Vec::new(),
            ..WorldSpec::default()
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split_whitespace() {
                let (key, value) = field.split_once('=').ok_or_else(|| bad(i, "expected key=value"))?;
                let num = |v: &str| v.parse::<usize>().map_err(|_| bad(i, "bad integer"));
                match key {
                    "seed" => spec.seed = value.parse().map_err(|_| bad(i, "bad seed"))?,
                    "types" => spec.n_types = num(value)?,
                    "d_obj" => spec.d_obj = num(value)?,
                    "palette" => spec.palette = num(value)?,
                    "slots" => spec.n_slots = num(value)?,
                    "d_v" => spec.d_v = num(value)?,
                    "min_objects" => spec.min_objects = num(value)?,
                    "max_objects" => spec.max_objects = num(value)?,
                    "anchor_bias" => spec.anchor_bias = value.parse().map_err(|_| bad(i, "bad anchor_bias"))?,
                    "prior" => {
                        let parts: Vec<&str> = value.split(':').collect();
                        if parts.len() != 3 {
                            return Err(bad(i, "prior must be anchor:companion:prob"));
                        }
                        spec.priors.push(CoOccurrence {
                            anchor: num(parts[0])?,
                            companion: num(parts[1])?,
                            prob: parts[2].parse().map_err(|_| bad(i, "bad prior probability"))?,
                        });
                    }
                    _ => return Err(bad(i, &format!("unknown key {key}"))),
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Derives the frozen feature tables.
    pub fn build(&self) -> Result<World> {
        self.validate()?;
        let mut rng = stream(self.seed, streams::WORLD);
        let features: Vec<Vec<f32>> = (0..self.n_types)
            .map(|_| (0..self.d_obj).map(|_| normal(&mut rng, 1.0) as f32).collect())
            .collect();
        for i in 0..features.len() {
            for j in 0..i {
                if features[i] == features[j] {
                    return Err(Error::Config(format!("object features {i} and {j} coincide")));
                }
            }
        }
        let rows = self.d_obj + self.palette + self.n_slots;
        let mut rng = stream(self.seed, streams::ENCODER);
        let std = 1.0 / (rows as f64).sqrt();
        let encoder: Vec<f32> = (0..rows * self.d_v).map(|_| normal(&mut rng, std) as f32).collect();
        let null: Vec<f32> = (0..self.d_v).map(|_| normal(&mut rng, 1.0) as f32).collect();
        Ok(World {
            spec: self.clone(),
            features,
            encoder: Tensor::matrix(rows, self.d_v, encoder)?,
            null_token: null,
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// A world spec plus its derived frozen tables.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub features: Vec<Vec<f32>>,
    /// `(d_obj + palette + n_slots) × d_v`.
    pub encoder: Tensor<f32>,
    pub null_token: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placed {
    pub object_type: usize,
    pub attr: usize,
}

/// Slot grid; at most one object per slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Scene {
    pub slots: Vec<Option<Placed>>,
}

impl Scene {
    pub fn empty(n_slots: usize) -> Self {
        Self {
            slots: vec![None; n_slots],
        }
    }

    pub fn object_count(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn count_of(&self, t: usize) -> usize {
        self.slots.iter().flatten().filter(|p| p.object_type == t).count()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.count_of(t) > 0
    }

    pub fn present_types(&self) -> BTreeSet<usize> {
        self.slots.iter().flatten().map(|p| p.object_type).collect()
    }

    pub fn free_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&s| self.slots[s].is_none()).collect()
    }

    pub fn remove_type(&mut self, t: usize) {
        for s in self.slots.iter_mut() {
            if matches!(s, Some(p) if p.object_type == t) {
                *s = None;
            }
        }
    }

    /// `slot:type:attr` triples joined by commas, in slot order; `-` when empty.
    pub fn serialize(&self) -> String {
        let parts: Vec<String> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(s, p)| p.map(|p| format!("{s}:{}:{}", p.object_type, p.attr)))
            .collect();
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(",")
        }
    }

    pub fn parse(text: &str, spec: &WorldSpec) -> Result<Self> {
        let mut scene = Scene::empty(spec.n_slots);
        if text == "-" {
            return Ok(scene);
        }
        for triple in text.split(',') {
            let v: Vec<usize> = triple
                .split(':')
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("bad scene triple {triple:?}")))?;
            if v.len() != 3 || v[0] >= spec.n_slots || v[1] >= spec.n_types || v[2] >= spec.palette {
                return Err(Error::Data(format!("scene triple {triple:?} out of range")));
            }
            if scene.slots[v[0]].is_some() {
                return Err(Error::Data(format!("slot {} occupied twice", v[0])));
            }
            scene.slots[v[0]] = Some(Placed {
                object_type: v[1],
                attr: v[2],
            });
        }
        Ok(scene)
    }
}

/// Per-record stream for `purpose` under `seed`.
pub(crate) fn record_rng(seed: u64, purpose: u64, index: u64) -> DetRng {
    let mut rng = seeded(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

impl World {
    pub fn hash(&self) -> u64 {
        self.spec.hash()
    }

    /// Draws one scene from `rng` following the documented procedure.
    pub fn sample_scene(&self, rng: &mut DetRng) -> Scene {
        let spec = &self.spec;
        let n = rng.gen_range(spec.min_objects..=spec.max_objects);
        let anchors: Vec<usize> = spec.priors.iter().map(|p| p.anchor).collect();
        let mut order: Vec<usize> = (0..spec.n_slots).collect();
        order.shuffle(rng);
        let mut scene = Scene::empty(spec.n_slots);
        for &slot in order.iter().take(n) {
            let t = if !anchors.is_empty() && rng.gen::<f64>() < spec.anchor_bias {
                anchors[rng.gen_range(0..anchors.len())]
            } else {
                rng.gen_range(0..spec.n_types)
            };
            let attr = rng.gen_range(0..spec.palette);
            scene.slots[slot] = Some(Placed { object_type: t, attr });
        }
        for p in &spec.priors {
            if !scene.contains(p.anchor) {
                continue;
            }
            if rng.gen::<f64>() < p.prob {
                if !scene.contains(p.companion) {
                    let free = scene.free_slots();
                    let slot = free[rng.gen_range(0..free.len())];
                    let attr = rng.gen_range(0..spec.palette);
                    scene.slots[slot] = Some(Placed {
                        object_type: p.companion,
                        attr,
                    });
                }
            } else {
                scene.remove_type(p.companion);
            }
        }
        scene
    }

    /// Scene `index` of the stream `purpose` under `seed`.
    pub fn scene_at(&self, seed: u64, purpose: u64, index: u64) -> Scene {
        self.sample_scene(&mut record_rng(seed, purpose, index))
    }

    /// Encoder input row for an occupied slot.
    fn encoder_input(&self, slot: usize, p: Placed) -> Vec<f32> {
        let spec = &self.spec;
        let mut u = vec![0.0f32; spec.d_obj + spec.palette + spec.n_slots];
        u[..spec.d_obj].copy_from_slice(&self.features[p.object_type]);
        u[spec.d_obj + p.attr] = 1.0;
        u[spec.d_obj + spec.palette + slot] = 1.0;
        u
    }

    /// Frozen encoder: one `d_v` token per slot.
    pub fn encode_scene(&self, scene: &Scene) -> VisualTokens {
        let d_v = self.spec.d_v;
        let enc = self.encoder.data();
        let mut out = Vec::with_capacity(scene.slots.len() * d_v);
        for (slot, p) in scene.slots.iter().enumerate() {
            match p {
                None => out.extend_from_slice(&self.null_token),
                Some(p) => {
                    let u = self.encoder_input(slot, *p);
                    let mut tok = vec![0.0f32; d_v];
                    for (i, &ui) in u.iter().enumerate() {
                        if ui != 0.0 {
                            for (t, &e) in tok.iter_mut().zip(&enc[i * d_v..(i + 1) * d_v]) {
                                *t += ui * e;
                            }
                        }
                    }
                    out.extend(tok);
                }
            }
        }
        let t = Tensor::matrix(scene.slots.len(), d_v, out).expect("encoder shape");
        VisualTokens::from_features(t).expect("matrix")
    }

    /// Caption in canonical slot order: `<color> <object> , … <eos>`.
    pub fn caption(&self, scene: &Scene) -> Vec<usize> {
        let mut ids = Vec::new();
        for p in scene.slots.iter().flatten() {
            if !ids.is_empty() {
                ids.push(vocab::COMMA);
            }
            ids.push(vocab::color_token(p.attr));
            ids.push(vocab::object_token(p.object_type));
        }
        ids.push(vocab::EOS);
        ids
    }

    /// Top-`k` co-occurring types for every type, estimated from a fixed
    /// reference sample of `samples` scenes. Ties break toward lower ids.
    pub fn companion_table(&self, k: usize, samples: usize) -> Vec<Vec<usize>> {
        let m = self.spec.n_types;
        let mut counts = vec![vec![0usize; m]; m];
        for i in 0..samples {
            let scene = self.scene_at(self.spec.seed, REFERENCE_PURPOSE, i as u64);
            let present = scene.present_types();
            for &a in &present {
                for &b in &present {
                    if a != b {
                        counts[a][b] += 1;
                    }
                }
            }
        }
        (0..m)
            .map(|a| {
                let mut order: Vec<usize> = (0..m).filter(|&b| b != a && counts[a][b] > 0).collect();
                order.sort_by(|&x, &y| counts[a][y].cmp(&counts[a][x]).then(x.cmp(&y)));
                order.truncate(k);
                order
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(p: f64) -> World {
        WorldSpec::default_with(p, 5).build().unwrap()
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let spec = WorldSpec::default_with(0.8, 42);
        let parsed = WorldSpec::parse(&spec.canonical()).unwrap();
        assert_eq!(parsed, spec);
        assert_eq!(parsed.hash(), spec.hash());
        assert_ne!(spec.hash(), WorldSpec::default_with(0.7, 42).hash());
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn invalid_priors_rejected() {
        let mut s = WorldSpec::default();
        s.priors[0].companion = s.priors[0].anchor;
        assert!(s.validate().is_err());
        let mut s = WorldSpec::default();
        s.priors[0].prob = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenes_respect_degenerate_priors() {
        for (p, want) in [(1.0, true), (0.0, false)] {
            let w = world(p);
            for i in 0..500 {
                let s = w.scene_at(3, 9, i);
                for prior in &w.spec.priors {
                    if s.contains(prior.anchor) {
                        assert_eq!(s.contains(prior.companion), want);
                    }
                }
            }
        }
    }

    #[test]
    fn scene_serialization_round_trip() {
        let w = world(0.9);
        for i in 0..50 {
            let s = w.scene_at(1, 2, i);
            assert_eq!(Scene::parse(&s.serialize(), &w.spec).unwrap(), s);
        }
        assert_eq!(Scene::parse("-", &w.spec).unwrap(), Scene::empty(16));
        assert!(Scene::parse("0:1:1,0:2:2", &w.spec).is_err());
    }

    #[test]
    fn encoder_is_local() {
        let w = world(0.9);
        let a = w.scene_at(7, 1, 0);
        let mut b = a.clone();
        let slot = a.free_slots()[0];
        b.slots[slot] = Some(Placed { object_type: 3, attr: 1 });
        let (ta, tb) = (w.encode_scene(&a), w.encode_scene(&b));
        for s in 0..16 {
            let same = ta.features().row(s) == tb.features().row(s);
            assert_eq!(same, s != slot, "slot {s}");
        }
        assert_eq!(w.encode_scene(&a), ta);
    }

    #[test]
    fn captions_follow_slot_order() {
        let w = world(0.9);
        let mut s = Scene::empty(16);
        s.slots[9] = Some(Placed { object_type: 0, attr: 2 });
        s.slots[2] = Some(Placed { object_type: 5, attr: 0 });
        assert_eq!(vocab::decode(&w.caption(&s)), "red leash , blue cup <eos>");
    }

    #[test]
    fn companion_table_ranks_planted_companion_first() {
        let w = world(0.9);
        let table = w.companion_table(3, 2000);
        for p in &w.spec.priors {
            assert_eq!(table[p.anchor][0], p.companion);
            assert!(table[p.anchor].len() <= 3);
        }
    }
}
