use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Answer;
use crate::synth::{EditTag, ProbeKind, ProbeRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: Answer, label: Answer) {
        match (pred, label) {
            (Answer::Yes, Answer::Yes) => self.tp += 1,
            (Answer::Yes, Answer::No) => self.fp += 1,
            (Answer::No, Answer::Yes) => self.fn_ += 1,
            (Answer::No, Answer::No) => self.tn += 1,
        }
    }
}

/// Accuracy, precision, recall and F1 with "yes" as the positive class.
/// An undefined ratio is reported as 0 and flagged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopeMetrics {
    pub counts: Counts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

/// `2PR / (P + R)`, or `None` when `P + R == 0`.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    (precision + recall > 0.0).then(|| 2.0 * precision * recall / (precision + recall))
}

impl PopeMetrics {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (accuracy, _) = ratio(c.tp + c.tn, c.total());
        let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
        let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision_undefined || recall_undefined {
            None
        } else {
            f1_score(precision, recall)
        };
        Self {
            counts: c,
            accuracy,
            precision,
            recall,
            f1: f1.unwrap_or(0.0),
            precision_undefined,
            recall_undefined,
            f1_undefined: f1.is_none(),
        }
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Eval(format!("{a} predictions for {b} {what}")));
    }
    Ok(())
}

pub fn pope_metrics(predictions: &[Answer], labels: &[Answer]) -> Result<PopeMetrics> {
    same_len(predictions.len(), labels.len(), "labels")?;
    let mut c = Counts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.add(p, l);
    }
    Ok(PopeMetrics::from_counts(c))
}

/// Fraction of pairs whose two questions are both answered correctly.
pub fn strict_pair_accuracy(predictions: &[Answer], labels: &[Answer], pair_ids: &[u64]) -> Result<f64> {
    same_len(predictions.len(), labels.len(), "labels")?;
    same_len(predictions.len(), pair_ids.len(), "pair ids")?;
    let mut pairs: BTreeMap<u64, (usize, bool)> = BTreeMap::new();
    for ((&p, &l), &id) in predictions.iter().zip(labels).zip(pair_ids) {
        let e = pairs.entry(id).or_insert((0, true));
        e.0 += 1;
        e.1 &= p == l;
    }
    if let Some((id, (n, _))) = pairs.iter().find(|(_, (n, _))| *n != 2) {
        return Err(Error::Data(format!("pair {id} has {n} members, expected 2")));
    }
    if pairs.is_empty() {
        return Err(Error::Eval("no pairs to score".into()));
    }
    Ok(pairs.values().filter(|(_, ok)| *ok).count() as f64 / pairs.len() as f64)
}

/// Accuracy in each (answer polarity × edit state) cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MerlinCells {
    pub pos_orig: f64,
    pub pos_edited: f64,
    pub neg_orig: f64,
    pub neg_edited: f64,
    /// Records per cell in the order above.
    pub counts: [usize; 4],
}

pub fn merlin_eval(predictions: &[Answer], records: &[ProbeRecord]) -> Result<MerlinCells> {
    same_len(predictions.len(), records.len(), "records")?;
    let mut hit = [0usize; 4];
    let mut n = [0usize; 4];
    for (i, (&p, r)) in predictions.iter().zip(records).enumerate() {
        let edit = r
            .edit
            .ok_or_else(|| Error::Data(format!("record {i} has no edit tag")))?;
        let cell = match (r.answer, edit) {
            (Answer::Yes, EditTag::Original) => 0,
            (Answer::Yes, EditTag::Edited) => 1,
            (Answer::No, EditTag::Original) => 2,
            (Answer::No, EditTag::Edited) => 3,
        };
        n[cell] += 1;
        hit[cell] += usize::from(p == r.answer);
    }
    let acc = |c: usize| if n[c] == 0 { 0.0 } else { hit[c] as f64 / n[c] as f64 };
    Ok(MerlinCells {
        pos_orig: acc(0),
        pos_edited: acc(1),
        neg_orig: acc(2),
        neg_edited: acc(3),
        counts: n,
    })
}

/// Share of adversarial negatives answered "yes".
pub fn hallucination_rate(predictions: &[Answer], records: &[ProbeRecord]) -> Result<f64> {
    same_len(predictions.len(), records.len(), "records")?;
    let (mut yes, mut n) = (0usize, 0usize);
    for (&p, r) in predictions.iter().zip(records) {
        if r.kind == ProbeKind::AdversarialNegative {
            n += 1;
            yes += usize::from(p == Answer::Yes);
        }
    }
    if n == 0 {
        return Err(Error::Eval("no adversarial negatives in the probe set".into()));
    }
    Ok(yes as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Answer::{No, Yes};

    #[test]
    fn all_correct() {
        let l = [Yes, No, Yes, No];
        let m = pope_metrics(&l, &l).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn small_arithmetic_case() {
        // TP=2, FP=1, FN=1, TN=1
        let p = [Yes, Yes, Yes, No, No];
        let l = [Yes, Yes, No, Yes, No];
        let m = pope_metrics(&p, &l).unwrap();
        assert_eq!(m.counts, Counts { tp: 2, fp: 1, fn_: 1, tn: 1 });
        assert!((m.accuracy - 0.6).abs() < 1e-12);
        for x in [m.precision, m.recall, m.f1] {
            assert!((x - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn always_no_flags_precision() {
        let m = pope_metrics(&[No, No], &[Yes, No]).unwrap();
        assert!(m.precision_undefined && m.f1_undefined && !m.recall_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(pope_metrics(&[Yes], &[]).is_err());
    }

    #[test]
    fn strict_pairs() {
        let l = [Yes, No, Yes, No, Yes, No];
        let ids = [0, 0, 1, 1, 2, 2];
        assert_eq!(strict_pair_accuracy(&l, &l, &ids).unwrap(), 1.0);
        let one_each = [Yes, Yes, No, No, Yes, Yes];
        assert_eq!(strict_pair_accuracy(&one_each, &l, &ids).unwrap(), 0.0);
        let tt_tf_tt = [Yes, No, Yes, Yes, Yes, No];
        assert!((strict_pair_accuracy(&tt_tf_tt, &l, &ids).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            strict_pair_accuracy(&l[..3], &l[..3], &ids[..3]),
            Err(Error::Data(_))
        ));
    }
}
