//! Exact ROC AUC via tie-aware midranks, ROC curves, and the multi-seed
//! evaluation report (mean ± population std).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired index-wise with binary labels (`true` = positive).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels must pair up");
        Self { scores, labels }
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        let p = self.labels.iter().filter(|&&l| l).count();
        let n = self.labels.len() - p;
        if p == 0 || n == 0 {
            return Err(Error::Metric(format!("AUC needs both classes, got {p} positive / {n} negative")));
        }
        Ok((p, n))
    }
}

/// Mann-Whitney AUC: `(#(pos > neg) + 0.5 #(pos == neg)) / (P N)`, computed
/// from midranks in `O(n log n)`.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (p, n) = set.class_counts()?;
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    // rank sums are kept doubled so they stay integral
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank*2 = i + j + 2
        let midrank2 = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| set.labels[k]).count() as u64;
        pos_rank_sum2 += midrank2 * pos_in_group;
        i = j + 1;
    }
    let p64 = p as u64;
    let u2 = pos_rank_sum2 - p64 * (p64 + 1);
    Ok(u2 as f64 * 0.5 / (p as f64 * n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf
    /// (stored as the string `"inf"` in JSON).
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// `fpr,tpr,threshold` rows with a header.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
    }
    s
}

/// Threshold sweep over distinct scores, highest first, starting at (0, 0).
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (p, n) = set.class_counts()?;
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint { fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64, threshold: t });
    }
    Ok(pts)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAuc {
    pub seed: u64,
    pub auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: String,
    pub train_domain: String,
    pub test_domain: String,
    pub histogram_matching: bool,
    /// Always "population": the std divides by the number of seeds.
    pub std_kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedAuc>,
    pub mean: f64,
    pub std: f64,
    /// ROC curve of the first seed.
    pub roc: Vec<RocPoint>,
    pub meta: ReportMeta,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run `score_for_seed` once per seed (each seed re-draws the random patch
/// placements) and summarize the AUCs.
pub fn seeded_eval(
    seeds: &[u64],
    meta: ReportMeta,
    mut score_for_seed: impl FnMut(u64) -> Result<ScoredSet>,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Data("evaluation needs at least one seed".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut roc = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let set = score_for_seed(seed)?;
        if set.scores.is_empty() {
            return Err(Error::Data("empty test set".into()));
        }
        let auc = roc_auc(&set).map_err(|e| Error::Data(format!("test set unusable: {e}")))?;
        if i == 0 {
            roc = roc_curve(&set)?;
        }
        per_seed.push(SeedAuc { seed, auc });
    }
    let aucs: Vec<f64> = per_seed.iter().map(|s| s.auc).collect();
    let (mean, std) = mean_std(&aucs);
    Ok(EvalReport { per_seed, mean, std, roc, meta: ReportMeta { std_kind: "population".into(), ..meta } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise(set: &ScoredSet) -> f64 {
        let (mut wins, mut p, mut n) = (0.0, 0usize, 0usize);
        for (i, &li) in set.labels.iter().enumerate() {
            if !li {
                n += 1;
                continue;
            }
            p += 1;
            for (j, &lj) in set.labels.iter().enumerate() {
                if !lj {
                    if set.scores[i] > set.scores[j] {
                        wins += 1.0;
                    } else if set.scores[i] == set.scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / (p as f64 * n as f64)
    }

    #[test]
    fn separated_and_tied() {
        let s = ScoredSet::new(vec![0.1, 0.2, 0.8, 0.9], vec![false, false, true, true]);
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
        let t = ScoredSet::new(vec![0.5; 6], vec![true, false, true, false, false, true]);
        assert_eq!(roc_auc(&t).unwrap(), 0.5);
        let one = ScoredSet::new(vec![0.1, 0.2], vec![true, true]);
        assert!(matches!(roc_auc(&one), Err(Error::Metric(_))));
    }

    #[test]
    fn random_with_ties_matches_pairwise() {
        let mut rng = seeded(8);
        let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(0..20u8))).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.4)).collect();
        let s = ScoredSet::new(scores, labels);
        assert_eq!(roc_auc(&s).unwrap(), pairwise(&s));
    }

    #[test]
    fn curve_perfect_and_manual_sweep() {
        let s = ScoredSet::new(vec![0.9, 0.8, 0.3, 0.1], vec![true, true, false, false]);
        let c = roc_curve(&s).unwrap();
        assert!(c.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        // hand sweep: thresholds 0.9 (tp1), 0.7 (tp1 fp1), 0.4 (tp2 fp1), 0.1 (tp2 fp2)
        let s = ScoredSet::new(vec![0.1, 0.4, 0.7, 0.9], vec![false, true, false, true]);
        let c = roc_curve(&s).unwrap();
        let got: Vec<(f64, f64, f64)> = c.iter().map(|p| (p.fpr, p.tpr, p.threshold)).collect();
        assert_eq!(
            got,
            vec![(0.0, 0.0, f64::INFINITY), (0.0, 0.5, 0.9), (0.5, 0.5, 0.7), (0.5, 1.0, 0.4), (1.0, 1.0, 0.1)]
        );
        assert_eq!(trapezoid_area(&c), 0.75);
        assert_eq!(roc_auc(&s).unwrap(), 0.75);
    }

    #[test]
    fn random_labels_near_half() {
        let mut rng = seeded(31);
        let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..20_000).map(|_| rng.random_bool(0.5)).collect();
        let c = roc_curve(&ScoredSet::new(scores, labels)).unwrap();
        assert!((trapezoid_area(&c) - 0.5).abs() < 0.05);
    }

    #[test]
    fn seeded_eval_population_std() {
        let r = seeded_eval(&[1, 2, 3], ReportMeta::default(), |seed| {
            // AUCs 1.0, 0.5, 0.5 by construction
            Ok(match seed {
                1 => ScoredSet::new(vec![0.0, 1.0], vec![false, true]),
                _ => ScoredSet::new(vec![0.5, 0.5], vec![false, true]),
            })
        })
        .unwrap();
        assert!((r.mean - 2.0 / 3.0).abs() < 1e-15);
        let want = ((1.0f64 / 3.0).powi(2) / 3.0 + 2.0 * (1.0f64 / 6.0).powi(2) / 3.0).sqrt();
        assert!((r.std - want).abs() < 1e-15);
        assert_eq!(r.meta.std_kind, "population");
        assert!(seeded_eval(&[], ReportMeta::default(), |_| unreachable!()).is_err());
        let one_class = seeded_eval(&[1], ReportMeta::default(), |_| Ok(ScoredSet::new(vec![0.1], vec![true])));
        assert!(matches!(one_class, Err(Error::Data(_))));
    }

    #[test]
    fn roc_json_keeps_infinite_threshold() {
        let set = ScoredSet::new(vec![0.2, 0.7], vec![false, true]);
        let pts = roc_curve(&set).unwrap();
        let json = serde_json::to_string(&pts).unwrap();
        assert!(json.contains("\"inf\""));
        let back: Vec<RocPoint> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pts);
        assert!(roc_csv(&pts).starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    proptest! {
        #[test]
        fn negation_and_monotone_invariance(
            raw in prop::collection::vec((0u8..12, any::<bool>()), 2..120)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s)).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            let s = ScoredSet::new(scores.clone(), labels.clone());
            prop_assume!(s.class_counts().is_ok());
            let a = roc_auc(&s).unwrap();
            let neg = roc_auc(&ScoredSet::new(scores.iter().map(|v| -v).collect(), labels.clone())).unwrap();
            prop_assert!((a - (1.0 - neg)).abs() < 1e-15);
            let warped = roc_auc(&ScoredSet::new(scores.iter().map(|v| (v * 0.3).exp() + 2.0).collect(), labels)).unwrap();
            prop_assert_eq!(a, warped);
            prop_assert!((trapezoid_area(&roc_curve(&s).unwrap()) - a).abs() < 1e-12);
        }
    }
}
