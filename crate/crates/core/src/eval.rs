//! Confusion matrices, weighted P/R/F1, the exact Wilcoxon signed-rank test
//! and the finite-population sample-size estimator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} truth labels vs {1} predictions")]
    Length(usize, usize),
    #[error("label {label} out of range for {m} classes")]
    Label { label: usize, m: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let m = counts.len();
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(EvalError::Argument("confusion matrix must be square and nonempty".into()));
        }
        Ok(Self {
            labels: (0..m).map(|i| i.to_string()).collect(),
            counts,
        })
    }

    pub fn with_labels(mut self, labels: &[String]) -> Result<Self, EvalError> {
        if labels.len() != self.m() {
            return Err(EvalError::Argument(format!(
                "{} label names for {} classes",
                labels.len(),
                self.m()
            )));
        }
        self.labels = labels.to_vec();
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Adds another matrix over the same labels (pooling folds).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if other.m() != self.m() {
            return Err(EvalError::Argument("cannot merge matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], m: usize) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::Length(truth.len(), pred.len()));
    }
    if m == 0 {
        return Err(EvalError::Argument("m must be positive".into()));
    }
    let mut counts = vec![vec![0u64; m]; m];
    for (&t, &p) in truth.iter().zip(pred) {
        for label in [t, p] {
            if label >= m {
                return Err(EvalError::Label { label, m });
            }
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub fold: Option<usize>,
    pub config_fingerprint: String,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and support-weighted precision, recall and F1. Zero
/// denominators give 0.
pub fn weighted_prf(matrix: &ConfusionMatrix) -> MetricsReport {
    let m = matrix.m();
    let col_sum: Vec<u64> = (0..m).map(|j| matrix.counts.iter().map(|r| r[j]).sum()).collect();
    let per_class: Vec<ClassMetrics> = (0..m)
        .map(|i| {
            let tp = matrix.counts[i][i];
            let support: u64 = matrix.counts[i].iter().sum();
            let precision = ratio(tp, col_sum[i]);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: matrix.labels[i].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    MetricsReport {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
        support: total,
        per_class,
        fold: None,
        config_fingerprint: String::new(),
    }
}

impl MetricsReport {
    /// One row per class plus a final `weighted` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fold = self.fold.map(|f| f.to_string()).unwrap_or_default();
        w.write_record(["fold", "label", "precision", "recall", "f1", "support", "config"])
            .expect("in-memory csv");
        let rows = self
            .per_class
            .iter()
            .map(|c| (c.label.as_str(), c.precision, c.recall, c.f1, c.support))
            .chain(std::iter::once((
                "weighted",
                self.precision,
                self.recall,
                self.f1,
                self.support,
            )));
        for (label, p, r, f, s) in rows {
            w.write_record([
                fold.as_str(),
                label,
                &format!("{p:.6}"),
                &format!("{r:.6}"),
                &format!("{f:.6}"),
                &s.to_string(),
                &self.config_fingerprint,
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Label | Precision | Recall | F1 | Support |\n|---|---:|---:|---:|---:|\n");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "| {} | {:.3} | {:.3} | {:.3} | {} |",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            s,
            "| **Weighted** | {:.3} | {:.3} | {:.3} | {} |",
            self.precision, self.recall, self.f1, self.support
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a non-zero difference.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// P(W+ ≥ observed) under the null: small when `a` tends to exceed `b`.
    pub p_greater: f64,
    /// P(W+ ≤ observed).
    pub p_less: f64,
    pub p_value: f64,
}

/// Exact signed-rank test on `a_i − b_i`. Zero differences are dropped and
/// tied magnitudes get average ranks; the null distribution is enumerated
/// over doubled ranks so ties stay integral. All-zero input gives p = 1.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult, EvalError> {
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(EvalError::Argument("non-finite metric in Wilcoxon input".into()));
    }
    let mut d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_greater: 1.0,
            p_less: 1.0,
            p_value: 1.0,
        });
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    // Doubled average ranks: tie group occupying ranks i+1..=j gets i+1+j.
    let mut ranks2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && d[j].abs() == d[i].abs() {
            j += 1;
        }
        for r in &mut ranks2[i..j] {
            *r = i + 1 + j;
        }
        i = j;
    }
    let w2_plus: usize = d.iter().zip(&ranks2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total2: usize = ranks2.iter().sum();
    // dist[s] = P(2·W+ = s) with each sign an independent fair coin.
    let mut dist = vec![0.0f64; total2 + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &ranks2 {
        reach += r;
        for s in (0..=reach).rev() {
            let keep = dist[s] * 0.5;
            let add = if s >= r { dist[s - r] * 0.5 } else { 0.0 };
            dist[s] = keep + add;
        }
    }
    let p_less: f64 = dist[..=w2_plus].iter().sum();
    let p_greater: f64 = dist[w2_plus..].iter().sum();
    Ok(WilcoxonResult {
        n,
        w_plus: w2_plus as f64 / 2.0,
        w_minus: (total2 - w2_plus) as f64 / 2.0,
        p_greater: p_greater.min(1.0),
        p_less: p_less.min(1.0),
        p_value: (2.0 * p_less.min(p_greater)).min(1.0),
    })
}

/// `n0 = z²·0.25/e²`, corrected for a finite population as
/// `n0 / (1 + (n0 − 1)/N)`, rounded up and capped at `N`.
/// `u64::MAX` stands for an unbounded population.
pub fn sample_size(population: u64, z: f64, e: f64) -> Result<u64, EvalError> {
    if population == 0 {
        return Err(EvalError::Argument("population must be at least 1".into()));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(EvalError::Argument(format!("z must be positive, got {z}")));
    }
    if !(e > 0.0 && e < 1.0) {
        return Err(EvalError::Argument(format!("e must lie in (0, 1), got {e}")));
    }
    let n0 = z * z * 0.25 / (e * e);
    let n = if population == u64::MAX {
        n0
    } else {
        n0 / (1.0 + (n0 - 1.0) / population as f64)
    };
    // Guard against 370.0000000001-style float noise before the ceiling.
    let n = (n - 1e-9).ceil().max(1.0);
    Ok((n as u64).min(population))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_fixture() {
        let m = ConfusionMatrix::from_counts(vec![vec![5, 5], vec![0, 10]]).unwrap();
        let r = weighted_prf(&m);
        let c0 = &r.per_class[0];
        let c1 = &r.per_class[1];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((c1.precision - 10.0 / 15.0).abs() < 1e-12);
        assert_eq!(c1.recall, 1.0);
        assert!((c1.f1 - 0.8).abs() < 1e-12);
        assert!((r.f1 - 0.733_333_333_3).abs() < 1e-9);
    }

    #[test]
    fn diagonal_and_single_class() {
        let r = weighted_prf(&confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = weighted_prf(&ConfusionMatrix::from_counts(vec![vec![7]]).unwrap());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn confusion_counts_and_errors() {
        let m = confusion(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 1], vec![1, 0]]);
        let m = confusion(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2], 3).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 2]]);
        assert_eq!(m.total(), 6);
        assert_eq!(confusion(&[0, 3], &[0, 0], 3), Err(EvalError::Label { label: 3, m: 3 }));
        assert_eq!(confusion(&[0], &[], 3), Err(EvalError::Length(1, 0)));
    }

    #[test]
    fn zero_denominators_are_zero() {
        // Class 1 never predicted and never true.
        let r = weighted_prf(&confusion(&[0, 0], &[0, 0], 2).unwrap());
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn csv_and_markdown_layout() {
        let m = ConfusionMatrix::from_counts(vec![vec![5, 5], vec![0, 10]])
            .unwrap()
            .with_labels(&["XSS".into(), "Others".into()])
            .unwrap();
        let mut r = weighted_prf(&m);
        r.fold = Some(3);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,weighted,0.833333,0.750000,0.733333,20"));
        let md = r.to_markdown();
        assert!(md.contains("| XSS | 1.000 | 0.500 | 0.667 | 10 |"));
        assert!(md.contains("| **Weighted** | 0.833 | 0.750 | 0.733 | 20 |"));
    }

    #[test]
    fn wilcoxon_oracles() {
        let six: Vec<(f64, f64)> = (1..=6).map(|i| (0.5 + i as f64 / 100.0, 0.5)).collect();
        let r = wilcoxon_signed_rank(&six).unwrap();
        assert_eq!(r.w_plus, 21.0);
        assert!((r.p_value - 0.03125).abs() < 1e-15);
        let swapped: Vec<(f64, f64)> = six.iter().map(|&(a, b)| (b, a)).collect();
        assert_eq!(wilcoxon_signed_rank(&swapped).unwrap().p_value, r.p_value);
        let same = vec![(0.7, 0.7); 10];
        assert_eq!(wilcoxon_signed_rank(&same).unwrap().p_value, 1.0);
        // d = [1,-2,3,-4,5]: W+ = 9, P(W+ <= 6) = 13/32.
        let d = [1.0, -2.0, 3.0, -4.0, 5.0];
        let pairs: Vec<(f64, f64)> = d.iter().map(|&x| (x, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!((r.w_plus, r.w_minus), (9.0, 6.0));
        assert!((r.p_value - 0.8125).abs() < 1e-15);
        // Ties: |d| = [1,1,2] → ranks 1.5,1.5,3.
        let r = wilcoxon_signed_rank(&[(1.0, 0.0), (0.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_eq!((r.w_plus, r.w_minus), (4.5, 1.5));
        assert!(wilcoxon_signed_rank(&[(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn sample_size_oracles() {
        assert_eq!(sample_size(u64::MAX, 1.96, 0.05).unwrap(), 385);
        assert_eq!(sample_size(10_000, 1.96, 0.05).unwrap(), 370);
        assert_eq!(sample_size(1, 1.96, 0.05).unwrap(), 1);
        assert_eq!(sample_size(41_003, 1.96, 0.05).unwrap(), 381);
        assert!(sample_size(0, 1.96, 0.05).is_err());
        assert!(sample_size(10, 1.96, 1.5).is_err());
        assert!(sample_size(10, -1.0, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn metric_bounds_and_permutation(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
            seed in any::<u64>(),
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = weighted_prf(&confusion(&t, &p, 4).unwrap());
            for c in &r.per_class {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let supported: Vec<f64> = r.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
            let lo = supported.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = supported.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.f1 >= lo - 1e-12 && r.f1 <= hi + 1e-12);
            let mean: f64 = r.per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / r.support as f64;
            prop_assert!((mean - r.f1).abs() < 1e-9);

            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            prop_assert_eq!(weighted_prf(&confusion(&t2, &p2, 4).unwrap()), r);
        }

        #[test]
        fn wilcoxon_bounds_and_monotonicity(
            d in prop::collection::vec(-1.0f64..1.0, 1..14),
            bump in 0.0f64..1.0,
        ) {
            let pairs: Vec<(f64, f64)> = d.iter().map(|&x| (x, 0.0)).collect();
            let r = wilcoxon_signed_rank(&pairs).unwrap();
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
            let bumped: Vec<(f64, f64)> = d.iter().map(|&x| (x + bump, 0.0)).collect();
            let r2 = wilcoxon_signed_rank(&bumped).unwrap();
            if r.n == r2.n {
                prop_assert!(r2.p_greater <= r.p_greater + 1e-12);
            }
        }

        #[test]
        fn sample_size_monotone(n in 1u64..100_000, extra in 0u64..100_000, e in 0.01f64..0.3, de in 0.0f64..0.3) {
            let a = sample_size(n, 1.96, e).unwrap();
            prop_assert!(a <= n);
            prop_assert!(sample_size(n + extra, 1.96, e).unwrap() >= a);
            if e + de < 1.0 {
                prop_assert!(sample_size(n, 1.96, e + de).unwrap() <= a);
            }
        }
    }
}
