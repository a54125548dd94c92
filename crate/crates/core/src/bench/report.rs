use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{decode_answer, Answer, Model};
use crate::synth::{vocab, Flavor, ProbeKind, ProbeRecord, ProbeSet, World};

use super::metrics::{hallucination_rate, merlin_eval, pope_metrics, strict_pair_accuracy, MerlinCells, PopeMetrics};

/// Greedy yes/no answer for every probe.
pub fn predict_answers(model: &Model<f32>, world: &World, records: &[ProbeRecord]) -> Result<Vec<Answer>> {
    records
        .iter()
        .map(|r| {
            let visual = world.encode_scene(&r.scene);
            let logits = model.last_logits(&r.text_ids(), &visual, vocab::QA_PROMPT.len())?;
            Ok(decode_answer(&logits, vocab::YES, vocab::NO))
        })
        .collect()
}

/// Per-kind question count and "yes" count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KindTally {
    pub n: usize,
    pub yes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub flavor: Flavor,
    pub probe_seed: u64,
    pub train_seed: u64,
    pub world_hash: u64,
    pub checkpoint_hash: u64,
    pub pope: PopeMetrics,
    pub per_kind: BTreeMap<ProbeKind, KindTally>,
    /// Adversarial false-positive rate, when the set has adversarial negatives.
    pub hallucination: Option<f64>,
    pub strict_pair: Option<f64>,
    pub merlin: Option<MerlinCells>,
}

pub fn evaluate_predictions(
    set: &ProbeSet,
    predictions: &[Answer],
    world_hash: u64,
    checkpoint_hash: u64,
    train_seed: u64,
) -> Result<EvalReport> {
    let labels: Vec<Answer> = set.records.iter().map(|r| r.answer).collect();
    let pope = pope_metrics(predictions, &labels)?;
    let mut per_kind: BTreeMap<ProbeKind, KindTally> = BTreeMap::new();
    for (p, r) in predictions.iter().zip(&set.records) {
        let t = per_kind.entry(r.kind).or_default();
        t.n += 1;
        t.yes += usize::from(*p == Answer::Yes);
    }
    let hallucination = if per_kind.contains_key(&ProbeKind::AdversarialNegative) {
        Some(hallucination_rate(predictions, &set.records)?)
    } else {
        None
    };
    let strict_pair = if set.flavor == Flavor::MmvpPairs {
        let ids = set
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| r.pair_id.ok_or_else(|| Error::Data(format!("record {i} has no pair id"))))
            .collect::<Result<Vec<_>>>()?;
        Some(strict_pair_accuracy(predictions, &labels, &ids)?)
    } else {
        None
    };
    let merlin = if set.flavor == Flavor::MerlinEdit {
        Some(merlin_eval(predictions, &set.records)?)
    } else {
        None
    };
    Ok(EvalReport {
        flavor: set.flavor,
        probe_seed: set.seed,
        train_seed,
        world_hash,
        checkpoint_hash,
        pope,
        per_kind,
        hallucination,
        strict_pair,
        merlin,
    })
}

pub fn evaluate(
    model: &Model<f32>,
    world: &World,
    set: &ProbeSet,
    checkpoint_hash: u64,
    train_seed: u64,
) -> Result<EvalReport> {
    let predictions = predict_answers(model, world, &set.records)?;
    evaluate_predictions(set, &predictions, world.hash(), checkpoint_hash, train_seed)
}

impl EvalReport {
    /// Every numeric metric by name, sorted.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let p = &self.pope;
        let mut m = BTreeMap::new();
        m.insert("acc".into(), p.accuracy);
        m.insert("precision".into(), p.precision);
        m.insert("recall".into(), p.recall);
        m.insert("f1".into(), p.f1);
        m.insert("tp".into(), p.counts.tp as f64);
        m.insert("fp".into(), p.counts.fp as f64);
        m.insert("fn".into(), p.counts.fn_ as f64);
        m.insert("tn".into(), p.counts.tn as f64);
        m.insert("n".into(), p.counts.total() as f64);
        for (kind, t) in &self.per_kind {
            m.insert(format!("{}.n", kind.as_str()), t.n as f64);
            m.insert(format!("{}.yes", kind.as_str()), t.yes as f64);
        }
        if let Some(h) = self.hallucination {
            m.insert("hallucination_rate".into(), h);
        }
        if let Some(s) = self.strict_pair {
            m.insert("strict_pair_acc".into(), s);
        }
        if let Some(c) = &self.merlin {
            m.insert("merlin.pos_orig".into(), c.pos_orig);
            m.insert("merlin.pos_edited".into(), c.pos_edited);
            m.insert("merlin.neg_orig".into(), c.neg_orig);
            m.insert("merlin.neg_edited".into(), c.neg_edited);
        }
        m
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics().get(metric).copied()
    }

    fn flags(&self) -> [(&'static str, bool); 3] {
        [
            ("precision_undefined", self.pope.precision_undefined),
            ("recall_undefined", self.pope.recall_undefined),
            ("f1_undefined", self.pope.f1_undefined),
        ]
    }

    /// `metric,value` rows in sorted order after the identifying fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.identity() {
            s.push_str(&format!("{k},{v}\n"));
        }
        for (k, v) in self.flags() {
            s.push_str(&format!("{k},{}\n", u8::from(v)));
        }
        for (k, v) in self.metrics() {
            s.push_str(&format!("{k},{}\n", fmt_value(v)));
        }
        s
    }

    /// One `key=value` per line, every key sorted.
    pub fn to_text(&self) -> String {
        let mut all: BTreeMap<String, String> = self.identity().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in self.flags() {
            all.insert(k.into(), v.to_string());
        }
        for (k, v) in self.metrics() {
            all.insert(k, fmt_value(v));
        }
        all.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn identity(&self) -> Vec<(&'static str, String)> {
        vec![
            ("checkpoint_hash", format!("{:016x}", self.checkpoint_hash)),
            ("flavor", self.flavor.to_string()),
            ("probe_seed", self.probe_seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("world_hash", format!("{:016x}", self.world_hash)),
        ]
    }
}

/// Fixed six-decimal rendering; integers print without a fraction.
pub fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}
