use crate::error::{Error, Result};
use crate::stats::{mean, paired_sign_test};

use super::profile::ModalityProfile;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDelta {
    pub layer: usize,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

/// Paired comparison of two sets of per-seed profiles.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileComparison {
    pub per_layer: Vec<LayerDelta>,
    /// Overall `b - a` averaged over seeds.
    pub mean_delta: f64,
    /// Per-seed overall deltas.
    pub seed_deltas: Vec<f64>,
    pub positive: usize,
    pub untied: usize,
    /// One-sided sign test for `b > a` across seeds.
    pub p_value: f64,
}

/// Compares `a[i]` with `b[i]` for each seed `i`. Per-layer values are head
/// means averaged over seeds.
pub fn compare_profiles(a: &[ModalityProfile], b: &[ModalityProfile]) -> Result<ProfileComparison> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Analysis(format!(
            "need equally many profiles per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (layers, heads) = (a[0].layers, a[0].heads);
    if a.iter().chain(b).any(|p| (p.layers, p.heads) != (layers, heads)) {
        return Err(Error::Analysis("profiles differ in layer/head shape".into()));
    }
    let per_layer = (0..layers)
        .map(|l| {
            let av = mean(&a.iter().map(|p| p.layer_mean(l)).collect::<Vec<_>>());
            let bv = mean(&b.iter().map(|p| p.layer_mean(l)).collect::<Vec<_>>());
            LayerDelta {
                layer: l,
                a: av,
                b: bv,
                delta: bv - av,
            }
        })
        .collect();
    let seed_deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| y.overall() - x.overall()).collect();
    let (positive, untied, p_value) = paired_sign_test(&seed_deltas);
    Ok(ProfileComparison {
        per_layer,
        mean_delta: mean(&seed_deltas),
        seed_deltas,
        positive,
        untied,
        p_value,
    })
}

pub const COMPARISON_HEADER: &str = "layer,a,b,delta";

/// One row per layer plus an `all` row.
pub fn comparison_to_csv(c: &ProfileComparison) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for d in &c.per_layer {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", d.layer, d.a, d.b, d.delta));
    }
    let a = mean(&c.per_layer.iter().map(|d| d.a).collect::<Vec<_>>());
    let b = mean(&c.per_layer.iter().map(|d| d.b).collect::<Vec<_>>());
    s.push_str(&format!("all,{a:.6},{b:.6},{:.6}\n", c.mean_delta));
    s
}

pub fn comparison_summary(c: &ProfileComparison) -> String {
    format!(
        "mean_delta={:.6}\npositive_seeds={}\nuntied_seeds={}\np_value={:.6}\n",
        c.mean_delta, c.positive, c.untied, c.p_value
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::QueryFilter;

    fn prof(visual: Vec<f64>) -> ModalityProfile {
        ModalityProfile {
            layers: 2,
            heads: 2,
            visual,
            position_mass: vec![],
            filter: QueryFilter::All,
            records: 1,
            dataset: String::new(),
            seeds: vec![],
        }
    }

    #[test]
    fn identical_profiles_have_zero_deltas() {
        let p = vec![prof(vec![0.1, 0.2, 0.3, 0.4])];
        let c = compare_profiles(&p, &p).unwrap();
        assert!(c.per_layer.iter().all(|d| d.delta == 0.0));
        assert_eq!((c.mean_delta, c.p_value), (0.0, 1.0));
        assert_eq!(comparison_to_csv(&c).lines().count(), 1 + 2 + 1);
    }

    #[test]
    fn deltas_are_subtractions() {
        let a = vec![prof(vec![0.1, 0.3, 0.5, 0.5]), prof(vec![0.3, 0.3, 0.1, 0.3])];
        let b = vec![prof(vec![0.2, 0.4, 0.6, 0.8]), prof(vec![0.1, 0.1, 0.1, 0.1])];
        let c = compare_profiles(&a, &b).unwrap();
        // layer 0: a = mean(0.2, 0.3) = 0.25, b = mean(0.3, 0.1) = 0.2
        assert!((c.per_layer[0].a - 0.25).abs() < 1e-12);
        assert!((c.per_layer[0].b - 0.2).abs() < 1e-12);
        // layer 1: a = mean(0.5, 0.2) = 0.35, b = mean(0.7, 0.1) = 0.4
        assert!((c.per_layer[1].delta - 0.05).abs() < 1e-12);
        // seeds: 0.5 - 0.35 = 0.15, 0.1 - 0.25 = -0.15
        assert!((c.seed_deltas[0] - 0.15).abs() < 1e-12 && (c.seed_deltas[1] + 0.15).abs() < 1e-12);
        assert_eq!((c.positive, c.untied), (1, 2));
        assert_eq!(c.p_value, 0.75);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut odd = prof(vec![0.0; 4]);
        odd.heads = 1;
        odd.layers = 4;
        assert!(compare_profiles(&[prof(vec![0.0; 4])], &[odd]).is_err());
    }
}
