use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{AttentionRecord, SequenceLayout};

/// Which queries contribute to a modality profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryFilter {
    All,
    /// Queries at positions `>= k + N_v`.
    #[default]
    TextAfterVisual,
}

impl QueryFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryFilter::All => "all",
            QueryFilter::TextAfterVisual => "text_after_visual",
        }
    }

    fn queries(self, layout: &SequenceLayout) -> std::ops::Range<usize> {
        match self {
            QueryFilter::All => 0..layout.len(),
            QueryFilter::TextAfterVisual => layout.after_visual()..layout.len(),
        }
    }
}

impl fmt::Display for QueryFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(QueryFilter::All),
            "text_after_visual" => Ok(QueryFilter::TextAfterVisual),
            _ => Err(Error::Config(format!("unknown query filter {s:?}"))),
        }
    }
}

/// Share of attention mass landing on visual keys, per layer and head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityProfile {
    pub layers: usize,
    pub heads: usize,
    /// Row-major `[layer][head]`.
    pub visual: Vec<f64>,
    /// Mean attention received by each key position over the selected
    /// queries, all layers and heads.
    pub position_mass: Vec<f64>,
    pub filter: QueryFilter,
    pub records: usize,
    pub dataset: String,
    pub seeds: Vec<u64>,
}

impl ModalityProfile {
    pub fn visual_fraction(&self, layer: usize, head: usize) -> f64 {
        self.visual[layer * self.heads + head]
    }

    pub fn text_fraction(&self, layer: usize, head: usize) -> f64 {
        1.0 - self.visual_fraction(layer, head)
    }

    /// Equal-weight mean over heads.
    pub fn layer_mean(&self, layer: usize) -> f64 {
        let row = &self.visual[layer * self.heads..(layer + 1) * self.heads];
        row.iter().sum::<f64>() / self.heads as f64
    }

    /// Mean over every layer and head.
    pub fn overall(&self) -> f64 {
        self.visual.iter().sum::<f64>() / self.visual.len() as f64
    }

    pub fn with_meta(mut self, dataset: impl Into<String>, seeds: Vec<u64>) -> Self {
        self.dataset = dataset.into();
        self.seeds = seeds;
        self
    }
}

/// Visual share of the unmasked attention mass of the queries selected by
/// `filter`, for every layer and head of `record`.
pub fn visual_fraction(
    record: &AttentionRecord,
    layout: &SequenceLayout,
    filter: QueryFilter,
) -> Result<ModalityProfile> {
    if record.layout != *layout || layout.len() != record.seq {
        return Err(Error::Analysis(format!(
            "record layout {:?} (S={}) does not match {:?}",
            record.layout, record.seq, layout
        )));
    }
    let queries = filter.queries(layout);
    if queries.is_empty() {
        return Err(Error::Analysis(format!("no queries pass filter {filter}")));
    }
    let s = record.seq;
    let vis = layout.visual_span();
    let mut visual = Vec::with_capacity(record.layers * record.heads);
    let mut position_mass = vec![0.0f64; s];
    for l in 0..record.layers {
        for h in 0..record.heads {
            let m = record.matrix(l, h);
            let (mut v, mut total) = (0.0f64, 0.0f64);
            for q in queries.clone() {
                for k in 0..=q {
                    let w = f64::from(m[q * s + k]);
                    total += w;
                    if vis.contains(&k) {
                        v += w;
                    }
                    position_mass[k] += w;
                }
            }
            if total <= 0.0 {
                return Err(Error::Analysis(format!("layer {l} head {h} carries no attention mass")));
            }
            visual.push(v / total);
        }
    }
    let denom = (record.layers * record.heads * queries.len()) as f64;
    position_mass.iter_mut().for_each(|x| *x /= denom);
    Ok(ModalityProfile {
        layers: record.layers,
        heads: record.heads,
        visual,
        position_mass,
        filter,
        records: 1,
        dataset: String::new(),
        seeds: Vec::new(),
    })
}

/// Record-weighted mean of several profiles of the same shape.
pub fn aggregate(profiles: &[ModalityProfile]) -> Result<ModalityProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::Analysis("no profiles to aggregate".into()))?;
    let mut visual = vec![0.0; first.visual.len()];
    let mut position_mass = vec![0.0; first.position_mass.len()];
    let mut records = 0;
    for p in profiles {
        if (p.layers, p.heads, p.filter) != (first.layers, first.heads, first.filter)
            || p.position_mass.len() != first.position_mass.len()
        {
            return Err(Error::Analysis("profiles disagree in shape or filter".into()));
        }
        let w = p.records as f64;
        visual.iter_mut().zip(&p.visual).for_each(|(a, b)| *a += w * b);
        position_mass.iter_mut().zip(&p.position_mass).for_each(|(a, b)| *a += w * b);
        records += p.records;
    }
    let n = records as f64;
    visual.iter_mut().for_each(|x| *x /= n);
    position_mass.iter_mut().for_each(|x| *x /= n);
    Ok(ModalityProfile {
        layers: first.layers,
        heads: first.heads,
        visual,
        position_mass,
        filter: first.filter,
        records,
        dataset: first.dataset.clone(),
        seeds: first.seeds.clone(),
    })
}

pub const PROFILE_HEADER: &str = "layer,head,visual_fraction,text_fraction";

/// One row per (layer, head), then one `mean` row per layer.
pub fn profile_to_csv(p: &ModalityProfile) -> String {
    let mut s = format!(
        "# dataset={} filter={} records={} seeds={}\n{PROFILE_HEADER}\n",
        p.dataset,
        p.filter,
        p.records,
        p.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
    );
    for l in 0..p.layers {
        for h in 0..p.heads {
            let v = p.visual_fraction(l, h);
            s.push_str(&format!("{l},{h},{v:.6},{:.6}\n", 1.0 - v));
        }
    }
    for l in 0..p.layers {
        let v = p.layer_mean(l);
        s.push_str(&format!("{l},mean,{v:.6},{:.6}\n", 1.0 - v));
    }
    s
}

/// `position,mean_incoming_attention` for every key position.
pub fn position_mass_csv(p: &ModalityProfile) -> String {
    let mut s = String::from("position,mean_incoming_attention\n");
    for (i, m) in p.position_mass.iter().enumerate() {
        s.push_str(&format!("{i},{m:.6}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(layout: SequenceLayout, rows: &[&[f32]]) -> AttentionRecord {
        let s = layout.len();
        let mut w = vec![0.0f32; s * s];
        for (q, row) in rows.iter().enumerate() {
            w[q * s..q * s + row.len()].copy_from_slice(row);
        }
        AttentionRecord::new(1, 1, s, layout, w).unwrap()
    }

    // [t, v, v, t]: k = 1, two visual tokens, two text tokens.
    fn tvvt() -> SequenceLayout {
        SequenceLayout::new(1, 2, 2).unwrap()
    }

    #[test]
    fn uniform_last_query_is_half_visual() {
        let r = record(tvvt(), &[&[1.0], &[0.5, 0.5], &[1. / 3., 1. / 3., 1. / 3.], &[0.25; 4]]);
        let p = visual_fraction(&r, &tvvt(), QueryFilter::TextAfterVisual).unwrap();
        assert_eq!(p.visual_fraction(0, 0), 0.5);
        assert!((p.visual_fraction(0, 0) + p.text_fraction(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_visual_weight_is_zero() {
        let r = record(tvvt(), &[&[1.0], &[1.0, 0.0], &[1.0, 0.0, 0.0], &[0.5, 0.0, 0.0, 0.5]]);
        let p = visual_fraction(&r, &tvvt(), QueryFilter::TextAfterVisual).unwrap();
        assert_eq!(p.visual_fraction(0, 0), 0.0);
    }

    #[test]
    fn softmax_weights_give_two_thirds() {
        let e: Vec<f64> = [0.0f64, 2f64.ln(), 2f64.ln(), 0.0].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let last: Vec<f32> = e.iter().map(|x| (x / z) as f32).collect();
        let r = record(tvvt(), &[&[1.0], &[0.5, 0.5], &[0.2, 0.4, 0.4], &last]);
        let p = visual_fraction(&r, &tvvt(), QueryFilter::TextAfterVisual).unwrap();
        assert!((p.visual_fraction(0, 0) - 4.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let r = record(tvvt(), &[&[1.0], &[0.5, 0.5], &[0.2, 0.4, 0.4], &[0.25; 4]]);
        let other = SequenceLayout::new(2, 3, 1).unwrap();
        assert!(matches!(
            visual_fraction(&r, &other, QueryFilter::All),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn csv_shape() {
        let r = record(tvvt(), &[&[1.0], &[0.5, 0.5], &[0.2, 0.4, 0.4], &[0.25; 4]]);
        let p = visual_fraction(&r, &tvvt(), QueryFilter::All).unwrap();
        let csv = profile_to_csv(&p);
        assert_eq!(csv.lines().nth(1), Some(PROFILE_HEADER));
        assert_eq!(csv.lines().count(), 2 + 1 + 1);
        let agg = aggregate(&[p.clone(), p.clone()]).unwrap();
        assert_eq!(agg.visual, p.visual);
        assert_eq!(agg.records, 2);
    }
}
