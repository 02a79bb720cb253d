//! Displacement metrics, the rho-tuple convention and run-level statistics.
//!
//! A rho score is `threshold - metric`; a sample is a counterexample iff
//! some score is strictly negative. The miss-rate entry is per sample the
//! signed miss indicator (+1 when the best final point lies within `d`,
//! -1 otherwise); the set-level miss rate is reported separately.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::lang::Feature;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("trajectory length mismatch: predicted {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid metric spec: {0}")]
    InvalidSpec(String),
    #[error("no Range features to compute diversity over")]
    NoEligibleFeatures,
    #[error("feature `{0}` has fewer than 2 observations")]
    TooFewObservations(String),
}

fn check_pair(pred: &[Vec2], truth: &[Vec2]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Average displacement error.
pub fn ade(pred: &[Vec2], truth: &[Vec2]) -> Result<f64, MetricError> {
    check_pair(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| p.dist(*t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Final displacement error.
pub fn fde(pred: &[Vec2], truth: &[Vec2]) -> Result<f64, MetricError> {
    check_pair(pred, truth)?;
    Ok(pred[pred.len() - 1].dist(truth[truth.len() - 1]))
}

fn min_over(
    candidates: &[Vec<Vec2>],
    truth: &[Vec2],
    f: fn(&[Vec2], &[Vec2]) -> Result<f64, MetricError>,
) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut best = f64::INFINITY;
    for c in candidates {
        best = best.min(f(c, truth)?);
    }
    Ok(best)
}

pub fn min_ade(candidates: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64, MetricError> {
    min_over(candidates, truth, ade)
}

pub fn min_fde(candidates: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64, MetricError> {
    min_over(candidates, truth, fde)
}

/// Fraction of samples whose minFDE exceeds `d`.
pub fn miss_rate(min_fdes: &[f64], d: f64) -> Result<f64, MetricError> {
    if min_fdes.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(d > 0.0) {
        return Err(MetricError::InvalidSpec(
            "miss distance must be positive".into(),
        ));
    }
    let misses = min_fdes.iter().filter(|&&f| f > d).count();
    Ok(misses as f64 / min_fdes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "minADE")]
    MinAde,
    #[serde(rename = "minFDE")]
    MinFde,
    #[serde(rename = "MR-miss")]
    MrMiss,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::MinAde => "minADE",
            MetricKind::MinFde => "minFDE",
            MetricKind::MrMiss => "MR-miss",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: MetricKind,
    /// For `MrMiss` this only scales the reward; the score is the +/-1 indicator.
    pub threshold: f64,
    /// Priority level; lower is more important.
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub entries: Vec<MetricEntry>,
    /// Miss distance `d`, metres.
    pub mr_distance: f64,
}

impl Default for MetricSpec {
    /// minADE 0.1 m, minFDE 1.0 m, miss distance 1.0 m, all at level 0.
    fn default() -> Self {
        MetricSpec {
            entries: alloc::vec![
                MetricEntry {
                    metric: MetricKind::MinAde,
                    threshold: 0.1,
                    level: 0
                },
                MetricEntry {
                    metric: MetricKind::MinFde,
                    threshold: 1.0,
                    level: 0
                },
                MetricEntry {
                    metric: MetricKind::MrMiss,
                    threshold: 1.0,
                    level: 0
                },
            ],
            mr_distance: 1.0,
        }
    }
}

impl MetricSpec {
    pub fn new(entries: Vec<MetricEntry>, mr_distance: f64) -> Result<Self, MetricError> {
        let spec = MetricSpec {
            entries,
            mr_distance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.entries.is_empty() {
            return Err(MetricError::InvalidSpec(
                "at least one entry is required".into(),
            ));
        }
        for e in &self.entries {
            if !(e.threshold > 0.0 && e.threshold.is_finite()) {
                return Err(MetricError::InvalidSpec(alloc::format!(
                    "{} threshold must be positive",
                    e.metric
                )));
            }
        }
        if !(self.mr_distance > 0.0 && self.mr_distance.is_finite()) {
            return Err(MetricError::InvalidSpec(
                "miss distance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTuple {
    pub scores: Vec<f64>,
    pub is_counterexample: bool,
}

impl RhoTuple {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let is_counterexample = scores.iter().any(|&s| s < 0.0);
        RhoTuple {
            scores,
            is_counterexample,
        }
    }
}

/// Scores one sample against `spec`.
pub fn rho(
    spec: &MetricSpec,
    min_ade_value: f64,
    min_fde_value: f64,
) -> Result<RhoTuple, MetricError> {
    if !min_ade_value.is_finite() {
        return Err(MetricError::NonFinite("minADE"));
    }
    if !min_fde_value.is_finite() {
        return Err(MetricError::NonFinite("minFDE"));
    }
    let scores = spec
        .entries
        .iter()
        .map(|e| match e.metric {
            MetricKind::MinAde => e.threshold - min_ade_value,
            MetricKind::MinFde => e.threshold - min_fde_value,
            MetricKind::MrMiss => {
                if min_fde_value <= spec.mr_distance {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect();
    Ok(RhoTuple::from_scores(scores))
}

/// Accumulated outcome of a falsification run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_samples: usize,
    pub n_counterexamples: usize,
    /// Observed values per feature, in sample order.
    pub observations: BTreeMap<String, Vec<f64>>,
}

impl RunStats {
    pub fn record(&mut self, assignment: &BTreeMap<String, f64>, is_counterexample: bool) {
        self.n_samples += 1;
        if is_counterexample {
            self.n_counterexamples += 1;
        }
        for (k, v) in assignment {
            self.observations.entry(k.clone()).or_default().push(*v);
        }
    }

    pub fn merge(&mut self, other: &RunStats) {
        self.n_samples += other.n_samples;
        self.n_counterexamples += other.n_counterexamples;
        for (k, v) in &other.observations {
            self.observations
                .entry(k.clone())
                .or_default()
                .extend_from_slice(v);
        }
    }
}

/// Counterexamples per sample run.
pub fn counterexample_rate(stats: &RunStats) -> Result<f64, MetricError> {
    if stats.n_samples == 0 {
        return Err(MetricError::Empty);
    }
    Ok(stats.n_counterexamples as f64 / stats.n_samples as f64)
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    libm::sqrt(var)
}

/// `2 * sum(sigma_i) / sum(L_i)` over features with an interval length.
pub fn scenario_diversity(stats: &RunStats, features: &[Feature]) -> Result<f64, MetricError> {
    let mut sigma = 0.0;
    let mut length = 0.0;
    let mut any = false;
    for f in features {
        let Some(l) = f.interval_length else { continue };
        let obs = stats
            .observations
            .get(&f.name)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if obs.len() < 2 {
            return Err(MetricError::TooFewObservations(f.name.clone()));
        }
        sigma += population_std(obs);
        length += l;
        any = true;
    }
    if !any {
        return Err(MetricError::NoEligibleFeatures);
    }
    Ok(2.0 * sigma / length)
}

#[cfg(test)]
mod tests {
    use alloc::vec;

    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    use super::*;
    use crate::lang::Distribution;

    fn line(n: usize, f: impl Fn(usize) -> (f64, f64)) -> Vec<Vec2> {
        (0..n).map(|i| Vec2::new(f(i).0, f(i).1)).collect()
    }

    // independent reference implementations

    fn brute_ade(p: &[Vec2], t: &[Vec2]) -> f64 {
        let mut s = 0.0;
        for i in 0..p.len() {
            let dx = p[i].x - t[i].x;
            let dy = p[i].y - t[i].y;
            s += (dx * dx + dy * dy).sqrt();
        }
        s / p.len() as f64
    }

    fn brute_min(c: &[Vec<Vec2>], t: &[Vec2], final_only: bool) -> f64 {
        let mut best = f64::MAX;
        for cand in c {
            let e = if final_only {
                let (a, b) = (cand[cand.len() - 1], t[t.len() - 1]);
                ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
            } else {
                brute_ade(cand, t)
            };
            if e < best {
                best = e;
            }
        }
        best
    }

    fn range(name: &str, lo: f64, hi: f64) -> Feature {
        use crate::lang::Literal;
        let dist = Distribution::Range {
            lo: Literal {
                value: lo,
                is_int: false,
            },
            hi: Literal {
                value: hi,
                is_int: false,
            },
        };
        Feature {
            name: name.into(),
            interval_length: dist.interval_length(),
            distribution: dist,
        }
    }

    #[test]
    fn ade_examples() {
        let t = line(10, |i| (i as f64, 0.0));
        assert_eq!(ade(&t, &t).unwrap(), 0.0);
        let p = line(10, |i| (i as f64, 0.3));
        assert!((ade(&p, &t).unwrap() - 0.3).abs() < 1e-12);
        let p = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
        let z = vec![Vec2::ZERO, Vec2::ZERO];
        assert_eq!(ade(&p, &z).unwrap(), 0.5);
        assert_eq!(
            ade(&p, &z[..1]).unwrap_err(),
            MetricError::LengthMismatch { pred: 2, truth: 1 }
        );
        assert_eq!(ade(&[], &[]).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn fde_examples() {
        let t = line(10, |i| (i as f64, 0.0));
        assert_eq!(fde(&t, &t).unwrap(), 0.0);
        let p = line(10, |i| (i as f64, 0.3));
        assert!((fde(&p, &t).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(fde(&[Vec2::new(3.0, 4.0)], &[Vec2::ZERO]).unwrap(), 5.0);
    }

    #[test]
    fn min_examples() {
        let t = line(5, |i| (i as f64, 0.0));
        let far = line(5, |i| (i as f64, 50.0));
        assert_eq!(
            min_ade(&[far.clone(), t.clone(), far.clone()], &t).unwrap(),
            0.0
        );
        assert_eq!(min_fde(&[far, t.clone()], &t).unwrap(), 0.0);
        let a = line(5, |i| (i as f64, 0.7));
        let b = line(5, |i| (i as f64, 0.2));
        assert!((min_ade(&[a, b], &t).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(min_ade(&[], &t).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn miss_rate_examples() {
        assert_eq!(miss_rate(&[0.0; 4], 1.0).unwrap(), 0.0);
        assert_eq!(miss_rate(&[0.5, 1.5, 0.9, 2.0], 1.0).unwrap(), 0.5);
        assert_eq!(miss_rate(&[0.5, 1.5, 0.9, 2.0], 1e12).unwrap(), 0.0);
        assert_eq!(miss_rate(&[1.0], 1.0).unwrap(), 0.0);
        assert_eq!(miss_rate(&[], 1.0).unwrap_err(), MetricError::Empty);
    }

    fn two_entry_spec() -> MetricSpec {
        MetricSpec::new(
            vec![
                MetricEntry {
                    metric: MetricKind::MinAde,
                    threshold: 0.1,
                    level: 0,
                },
                MetricEntry {
                    metric: MetricKind::MinFde,
                    threshold: 1.0,
                    level: 0,
                },
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rho_examples() {
        let spec = two_entry_spec();
        let r = rho(&spec, 0.037, 0.15).unwrap();
        assert!((r.scores[0] - 0.063).abs() < 1e-12 && (r.scores[1] - 0.85).abs() < 1e-12);
        assert!(!r.is_counterexample);
        let r = rho(&spec, 0.15, 0.5).unwrap();
        assert!((r.scores[0] + 0.05).abs() < 1e-12 && (r.scores[1] - 0.5).abs() < 1e-12);
        assert!(r.is_counterexample);
        let r = rho(&spec, 0.1, 1.0).unwrap();
        assert_eq!(r.scores, vec![0.0, 0.0]);
        assert!(!r.is_counterexample);
        assert!(rho(&spec, f64::NAN, 1.0).is_err());
        assert!(rho(&spec, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn rho_miss_indicator() {
        let spec = MetricSpec::default();
        assert_eq!(rho(&spec, 0.0, 1.0).unwrap().scores[2], 1.0);
        let r = rho(&spec, 0.0, 1.0 + 1e-12).unwrap();
        assert_eq!(r.scores[2], -1.0);
        assert!(r.is_counterexample);
    }

    #[test]
    fn spec_validation() {
        assert!(MetricSpec::new(vec![], 1.0).is_err());
        let bad = MetricEntry {
            metric: MetricKind::MinAde,
            threshold: 0.0,
            level: 0,
        };
        assert!(MetricSpec::new(vec![bad], 1.0).is_err());
        let ok = MetricEntry {
            metric: MetricKind::MinAde,
            threshold: 1.0,
            level: 0,
        };
        assert!(MetricSpec::new(vec![ok], -1.0).is_err());
        MetricSpec::default().validate().unwrap();
    }

    #[test]
    fn counterexample_rate_examples() {
        let stats = RunStats {
            n_samples: 120,
            n_counterexamples: 30,
            ..Default::default()
        };
        assert_eq!(counterexample_rate(&stats).unwrap(), 0.25);
        assert!(counterexample_rate(&RunStats::default()).is_err());
    }

    #[test]
    fn diversity_examples() {
        let f = range("a", 0.0, 10.0);
        // values +-1.5 around 5 have population sigma 1.5
        let stats = RunStats {
            n_samples: 2,
            observations: [("a".into(), vec![3.5, 6.5])].into_iter().collect(),
            ..Default::default()
        };
        assert!((scenario_diversity(&stats, &[f.clone()]).unwrap() - 0.3).abs() < 1e-12);
        let same = RunStats {
            observations: [("a".into(), vec![4.0; 9])].into_iter().collect(),
            ..Default::default()
        };
        assert_eq!(scenario_diversity(&same, &[f.clone()]).unwrap(), 0.0);
        assert_eq!(
            scenario_diversity(&same, &[]).unwrap_err(),
            MetricError::NoEligibleFeatures
        );
        let one = RunStats {
            observations: [("a".into(), vec![4.0])].into_iter().collect(),
            ..Default::default()
        };
        assert!(matches!(
            scenario_diversity(&one, &[f]).unwrap_err(),
            MetricError::TooFewObservations(_)
        ));
    }

    #[test]
    fn diversity_of_uniform_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = 37.0;
        let obs: Vec<f64> = (0..10_000)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * l)
            .collect();
        let stats = RunStats {
            observations: [("x".into(), obs)].into_iter().collect(),
            ..Default::default()
        };
        let sd = scenario_diversity(&stats, &[range("x", 0.0, l)]).unwrap();
        assert!((sd - 2.0 / 12f64.sqrt()).abs() < 0.02, "{sd}");
    }

    fn traj(n: usize) -> impl Strategy<Value = Vec<Vec2>> {
        proptest::collection::vec(
            (-50.0f64..50.0, -50.0f64..50.0).prop_map(|(x, y)| Vec2::new(x, y)),
            n,
        )
    }

    fn pset() -> impl Strategy<Value = (Vec<Vec<Vec2>>, Vec<Vec2>)> {
        (1usize..16, 1usize..8)
            .prop_flat_map(|(t, k)| (proptest::collection::vec(traj(t), k), traj(t)))
    }

    proptest! {
        #[test]
        fn matches_brute_force((cands, truth) in pset()) {
            prop_assert!((min_ade(&cands, &truth).unwrap() - brute_min(&cands, &truth, false)).abs() < 1e-9);
            prop_assert!((min_fde(&cands, &truth).unwrap() - brute_min(&cands, &truth, true)).abs() < 1e-9);
        }

        #[test]
        fn minimum_bounds_each_candidate((cands, truth) in pset()) {
            let ma = min_ade(&cands, &truth).unwrap();
            let mf = min_fde(&cands, &truth).unwrap();
            prop_assert!(ma >= 0.0 && mf >= 0.0);
            for c in &cands {
                prop_assert!(ma <= ade(c, &truth).unwrap());
                prop_assert!(mf <= fde(c, &truth).unwrap());
            }
        }

        #[test]
        fn zero_iff_coincident((mut cands, truth) in pset(), j in 0usize..8) {
            prop_assert_eq!(min_ade(&cands, &truth).unwrap() == 0.0, cands.iter().any(|c| c == &truth));
            let j = j % cands.len();
            cands[j] = truth.clone();
            prop_assert_eq!(min_ade(&cands, &truth).unwrap(), 0.0);
            prop_assert_eq!(min_fde(&cands, &truth).unwrap(), 0.0);
        }

        #[test]
        fn translation_invariant((cands, truth) in pset(), dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
            let d = Vec2::new(dx, dy);
            let shift = |v: &[Vec2]| v.iter().map(|p| *p + d).collect::<Vec<_>>();
            let c2: Vec<Vec<Vec2>> = cands.iter().map(|c| shift(c)).collect();
            let t2 = shift(&truth);
            prop_assert!((min_ade(&cands, &truth).unwrap() - min_ade(&c2, &t2).unwrap()).abs() < 1e-9);
            prop_assert!((min_fde(&cands, &truth).unwrap() - min_fde(&c2, &t2).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn miss_rate_monotone(f in proptest::collection::vec(0.0f64..10.0, 1..50), d1 in 0.01f64..10.0, d2 in 0.01f64..10.0) {
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(miss_rate(&f, hi).unwrap() <= miss_rate(&f, lo).unwrap());
            let brute = f.iter().filter(|&&x| x > lo).count() as f64 / f.len() as f64;
            prop_assert!((miss_rate(&f, lo).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn rho_sign_convention(a in 0.0f64..3.0, f in 0.0f64..3.0, ta in 0.01f64..2.0, tf in 0.01f64..2.0, d in 0.1f64..2.0) {
            let spec = MetricSpec::new(vec![
                MetricEntry { metric: MetricKind::MinAde, threshold: ta, level: 0 },
                MetricEntry { metric: MetricKind::MinFde, threshold: tf, level: 1 },
                MetricEntry { metric: MetricKind::MrMiss, threshold: 1.0, level: 1 },
            ], d).unwrap();
            let r = rho(&spec, a, f).unwrap();
            let min = r.scores.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(r.is_counterexample, min < 0.0);
            prop_assert_eq!(r.is_counterexample, a > ta || f > tf || f > d);
        }

        #[test]
        fn diversity_scale_invariant(obs in proptest::collection::vec(0.0f64..1.0, 2..40), scale in 0.01f64..100.0, shift in -100.0f64..100.0) {
            let base = RunStats { observations: [("x".into(), obs.clone())].into_iter().collect(), ..Default::default() };
            let scaled = RunStats {
                observations: [("x".into(), obs.iter().map(|v| v * scale + shift).collect())].into_iter().collect(),
                ..Default::default()
            };
            let a = scenario_diversity(&base, &[range("x", 0.0, 1.0)]).unwrap();
            let b = scenario_diversity(&scaled, &[range("x", shift, scale + shift)]).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
