//! Confusion matrices and the precision / recall / F1 report.

use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Tally `(truth, prediction)` index pairs into an `n_classes` matrix.
    pub fn from_indices(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch(truth.len(), predicted.len()));
        }
        let mut cm = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::ShapeMismatch(format!(
                    "class index ({t}, {p}) outside {n_classes} classes"
                )));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: how many samples truly belong to class `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Column sum: how many samples were predicted as class `c`.
    pub fn predicted_count(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

/// Build the 11-class matrix from label sequences.
pub fn confusion(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    let p: Vec<usize> = predicted.iter().map(|l| l.index()).collect();
    ConfusionMatrix::from_indices(&t, &p, NUM_CLASSES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub precision_weighted: f64,
    pub recall_macro: f64,
    pub recall_weighted: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
    /// One entry per zero-denominator precision or recall that was scored 0.
    pub warnings: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn class_name(c: usize, n: usize) -> String {
    match ClassLabel::from_index(c) {
        Some(l) if n == NUM_CLASSES => l.symbol().to_string(),
        _ => c.to_string(),
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class and averaged precision, recall and F1.
///
/// Classes with a zero denominator score 0 and add a warning rather than
/// producing NaN.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = cm.n_classes();
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.get(c, c);
        let name = class_name(c, n);
        let precision = ratio(tp, cm.predicted_count(c)).unwrap_or_else(|| {
            warnings.push(format!("class {name}: never predicted, precision set to 0"));
            0.0
        });
        let recall = ratio(tp, cm.support(c)).unwrap_or_else(|| {
            warnings.push(format!("class {name}: no true samples, recall set to 0"));
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            class: name,
            precision,
            recall,
            f1,
            support: cm.support(c),
        });
    }
    let macro_avg = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(MetricsReport {
        accuracy: cm.accuracy(),
        precision_macro: macro_avg(|m| m.precision),
        precision_weighted: weighted(|m| m.precision),
        recall_macro: macro_avg(|m| m.recall),
        recall_weighted: weighted(|m| m.recall),
        f1_macro: macro_avg(|m| m.f1),
        f1_weighted: weighted(|m| m.f1),
        total,
        per_class,
        warnings,
        confusion: cm.counts().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let labels: Vec<ClassLabel> = ClassLabel::all().chain(ClassLabel::all()).collect();
        let cm = confusion(&labels, &labels).unwrap();
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                assert_eq!(cm.get(i, j), if i == j { 2 } else { 0 });
            }
        }
        let r = metrics(&cm).unwrap();
        for v in [r.accuracy, r.precision_macro, r.recall_weighted, r.f1_macro, r.f1_weighted] {
            assert_eq!(v, 1.0);
        }
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn single_off_diagonal_pair() {
        let a = ClassLabel::from_index(5).unwrap();
        let b = ClassLabel::from_index(6).unwrap();
        let cm = confusion(&[a], &[b]).unwrap();
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.get(5, 6), 1);
    }

    #[test]
    fn binary_hand_computed() {
        let cm = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]).unwrap();
        let r = metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 8.0 / 11.0);
        assert_eq!(r.per_class[0].recall, 0.8);
        assert_eq!(r.per_class[1].precision, 7.0 / 9.0);
        assert_eq!(r.per_class[1].recall, 0.7);
    }

    #[test]
    fn length_mismatch_and_empty() {
        let a = ClassLabel::from_index(0).unwrap();
        assert!(matches!(confusion(&[a, a], &[a]), Err(Error::LengthMismatch(2, 1))));
        assert!(matches!(metrics(&ConfusionMatrix::new(3)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn zero_denominators_warn_instead_of_nan() {
        // class 2 has no samples and is never predicted; class 1 is never predicted
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![2, 0, 0], vec![0, 0, 0]]).unwrap();
        let r = metrics(&cm).unwrap();
        assert_eq!(r.warnings.len(), 3);
        assert!(r.per_class.iter().all(|m| m.f1.is_finite()));
        assert_eq!(r.per_class[1].precision, 0.0);
    }

    #[test]
    fn weighted_precision_can_exceed_accuracy() {
        // A conservative majority class: everything it predicts is right.
        let cm = ConfusionMatrix::from_counts(vec![vec![6, 4], vec![0, 10]]).unwrap();
        let r = metrics(&cm).unwrap();
        assert!(r.precision_weighted > r.accuracy, "{} vs {}", r.precision_weighted, r.accuracy);
    }

    #[test]
    fn json_has_documented_keys() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![0, 2]]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&metrics(&cm).unwrap().to_json()).unwrap();
        for key in ["accuracy", "precision_macro", "recall_weighted", "f1_macro", "per_class", "confusion"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
        proptest::collection::vec(proptest::collection::vec(0u64..20, n), n)
            .prop_filter("non-empty", |m| m.iter().flatten().sum::<u64>() > 0)
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(m in matrix(11)) {
            let r = metrics(&ConfusionMatrix::from_counts(m).unwrap()).unwrap();
            prop_assert!((r.recall_weighted - r.accuracy).abs() < 1e-12);
            for v in [r.precision_macro, r.precision_weighted, r.recall_macro, r.f1_macro, r.f1_weighted] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn relabeling_permutes_per_class_metrics(m in matrix(4), shift in 1usize..4) {
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let mut pm = vec![vec![0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    pm[perm[i]][perm[j]] = m[i][j];
                }
            }
            let a = metrics(&ConfusionMatrix::from_counts(m).unwrap()).unwrap();
            let b = metrics(&ConfusionMatrix::from_counts(pm).unwrap()).unwrap();
            for i in 0..4 {
                prop_assert_eq!(a.per_class[i].precision, b.per_class[perm[i]].precision);
                prop_assert_eq!(a.per_class[i].recall, b.per_class[perm[i]].recall);
            }
            prop_assert!((a.f1_macro - b.f1_macro).abs() < 1e-12);
        }

        #[test]
        fn random_pairs_match_naive_tally(pairs in proptest::collection::vec((0usize..11, 0usize..11), 30)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let cm = ConfusionMatrix::from_indices(&t, &p, 11).unwrap();
            for i in 0..11 {
                for j in 0..11 {
                    let naive = pairs.iter().filter(|&&(a, b)| a == i && b == j).count() as u64;
                    prop_assert_eq!(cm.get(i, j), naive);
                }
            }
        }
    }
}
