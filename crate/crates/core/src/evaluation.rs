//! Frame-to-sequence majority voting and the sequence-level metrics.
//!
//! All metrics are computed from a [`ConfusionMatrix`] over sequences (rows
//! are true classes, columns predictions). Zero denominators in per-class
//! precision or recall count as 0 and are flagged in the report.

use serde::{Deserialize, Serialize};

use crate::dataset::SceneDataset;
use crate::error::{Error, Result};
use crate::model::ComposedNetwork;

/// Most frequent class among per-frame top-1 predictions; ties go to the
/// lowest class index.
pub fn majority_vote(frame_predictions: &[usize], n_classes: usize) -> Result<usize> {
    if frame_predictions.is_empty() {
        return Err(Error::Empty("frame predictions"));
    }
    let mut counts = vec![0usize; n_classes];
    for &p in frame_predictions {
        *counts.get_mut(p).ok_or(Error::LabelOutOfRange {
            label: p,
            classes: n_classes,
        })? += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Fraction of sequences whose predicted label equals the true label.
pub fn sequence_level_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape {
            op: "sequence_level_accuracy",
            left: vec![predicted.len()],
            right: vec![truth.len()],
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("sequence labels"));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: &[String]) -> Self {
        Self {
            classes: classes.to_vec(),
            counts: vec![vec![0; classes.len()]; classes.len()],
        }
    }

    pub fn from_counts(classes: &[String], counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(format!("confusion matrix must be {n}x{n}")));
        }
        Ok(Self {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: sequences whose true class is `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Column sum: sequences predicted as `i`.
    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|r| r[i]).sum()
    }

    /// Elementwise sum; class lists must match.
    pub fn pooled(&self, other: &Self) -> Result<Self> {
        if self.classes != other.classes {
            return Err(Error::ClassMismatch {
                expected: self.classes.clone(),
                found: other.classes.clone(),
            });
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            classes: self.classes.clone(),
            counts,
        })
    }
}

pub fn confusion_matrix(
    predicted: &[usize],
    truth: &[usize],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape {
            op: "confusion_matrix",
            left: vec![predicted.len()],
            right: vec![truth.len()],
        });
    }
    let n = classes.len();
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in predicted.iter().zip(truth) {
        if let Some(&bad) = [p, t].iter().find(|&&l| l >= n) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: n,
            });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_zero(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision `TP/(TP+FP)` and recall `TP/(TP+FN)`, with 0 for a
/// zero denominator.
pub fn per_class_precision_recall(cm: &ConfusionMatrix) -> (Vec<f64>, Vec<f64>) {
    (0..cm.n())
        .map(|i| {
            let tp = cm.counts[i][i];
            (
                ratio_or_zero(tp, cm.predicted(i)),
                ratio_or_zero(tp, cm.support(i)),
            )
        })
        .unzip()
}

/// Arithmetic means of per-class precision and recall, and
/// `F1 = 2PR / (P + R)` of those means (0 when `P + R = 0`).
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    if cm.n() == 0 || cm.total() == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let (p, r) = per_class_precision_recall(cm);
    let n = cm.n() as f64;
    let precision = p.iter().sum::<f64>() / n;
    let recall = r.iter().sum::<f64>() / n;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MacroMetrics {
        precision,
        recall,
        f1,
    })
}

/// Per-class sequence accuracy (recall); `None` for classes with no sequences.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Result<Vec<Option<f64>>> {
    if cm.n() == 0 || cm.total() == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    Ok((0..cm.n())
        .map(|i| {
            let support = cm.support(i);
            (support > 0).then(|| cm.counts[i][i] as f64 / support as f64)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassAccuracy {
    pub class: String,
    pub support: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

/// Unweighted means of per-fold metrics, kept next to the pooled values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldMeans {
    pub sla: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub sla: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Per-class metrics whose denominator was zero, e.g. `precision:Vehicle`.
    pub zero_division: Vec<String>,
    pub confusion: ConfusionMatrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_means: Option<FoldMeans>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub folds: Vec<EvaluationReport>,
}

impl EvaluationReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let m = macro_metrics(&cm)?;
        let acc = per_class_accuracy(&cm)?;
        let mut zero_division = Vec::new();
        for i in 0..cm.n() {
            if cm.predicted(i) == 0 {
                zero_division.push(format!("precision:{}", cm.classes[i]));
            }
            if cm.support(i) == 0 {
                zero_division.push(format!("recall:{}", cm.classes[i]));
            }
        }
        Ok(Self {
            sla: cm.trace() as f64 / cm.total() as f64,
            macro_precision: m.precision,
            macro_recall: m.recall,
            macro_f1: m.f1,
            per_class: acc
                .into_iter()
                .enumerate()
                .map(|(i, a)| ClassAccuracy {
                    class: cm.classes[i].clone(),
                    support: cm.support(i),
                    accuracy: a,
                })
                .collect(),
            zero_division,
            confusion: cm,
            fold_means: None,
            folds: Vec::new(),
        })
    }

    pub fn class_accuracy(&self, class: &str) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class == class)
            .and_then(|c| c.accuracy)
    }
}

/// Per-sequence predicted and true labels for every sequence of `dataset`.
pub fn predict_sequences(
    net: &ComposedNetwork,
    dataset: &SceneDataset,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if net.class_names() != dataset.classes() {
        return Err(Error::ClassMismatch {
            expected: net.class_names().to_vec(),
            found: dataset.classes().to_vec(),
        });
    }
    let n = dataset.classes().len();
    let mut predicted = Vec::with_capacity(dataset.sequences().len());
    let mut truth = Vec::with_capacity(dataset.sequences().len());
    for s in dataset.sequences() {
        let frames = net.predict(&dataset.sequence_tensor(s))?;
        predicted.push(majority_vote(&frames, n)?);
        truth.push(s.label());
    }
    Ok((predicted, truth))
}

/// Per-frame top-1, majority vote per sequence, then metrics.
pub fn evaluate_model(
    net: &ComposedNetwork,
    test_sequences: &SceneDataset,
) -> Result<EvaluationReport> {
    let (predicted, truth) = predict_sequences(net, test_sequences)?;
    EvaluationReport::from_confusion(confusion_matrix(
        &predicted,
        &truth,
        test_sequences.classes(),
    )?)
}

/// Pools fold confusion matrices by elementwise sum and recomputes every
/// metric from the pooled matrix. Fold reports and fold means are retained.
pub fn aggregate_folds(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    let (first, rest) = reports.split_first().ok_or(Error::Empty("fold reports"))?;
    let mut pooled = first.confusion.clone();
    for r in rest {
        pooled = pooled.pooled(&r.confusion)?;
    }
    let mut out = EvaluationReport::from_confusion(pooled)?;
    let k = reports.len() as f64;
    let mean = |f: fn(&EvaluationReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    out.fold_means = Some(FoldMeans {
        sla: mean(|r| r.sla),
        macro_precision: mean(|r| r.macro_precision),
        macro_recall: mean(|r| r.macro_recall),
        macro_f1: mean(|r| r.macro_f1),
    });
    out.folds = reports
        .iter()
        .map(|r| EvaluationReport {
            folds: Vec::new(),
            ..r.clone()
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&[0, 0, 1], 2).unwrap(), 0);
        assert_eq!(majority_vote(&[1, 1, 2, 2], 3).unwrap(), 1);
        assert!(majority_vote(&[], 2).is_err());
        assert!(majority_vote(&[3], 2).is_err());
    }

    #[test]
    fn sla_examples() {
        assert_eq!(sequence_level_accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        let truth = vec![0usize; 89];
        let mut pred = truth.clone();
        pred[..3].fill(1);
        let sla = sequence_level_accuracy(&pred, &truth).unwrap();
        assert!((sla * 100.0 - 96.63).abs() < 0.01);
        assert!(sequence_level_accuracy(&[0], &[0, 1]).is_err());
        assert!(sequence_level_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion_matrix(&[0, 1], &[1, 1], &classes(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0], vec![1, 1]]);
        assert_eq!(cm.total(), 2);
        let perfect = confusion_matrix(&[0, 1, 2], &[0, 1, 2], &classes(3)).unwrap();
        assert_eq!(perfect.trace(), perfect.total());
        assert!(confusion_matrix(&[2], &[0], &classes(2)).is_err());
    }

    #[test]
    fn worked_macro_example() {
        let cm = ConfusionMatrix::from_counts(&classes(2), vec![vec![3, 1], vec![2, 4]]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert!((m.precision - 0.7).abs() < 1e-12);
        assert!((m.recall - 0.708_333_333_333).abs() < 1e-9);
        assert!((m.f1 - 0.70415).abs() < 1e-5);
        let exact = 2.0 * 0.7 * (17.0 / 24.0) / (0.7 + 17.0 / 24.0);
        assert!((m.f1 - exact).abs() < 1e-12);
    }

    #[test]
    fn identity_and_absent_classes() {
        let cm = ConfusionMatrix::from_counts(&classes(2), vec![vec![2, 0], vec![0, 5]]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let cm = ConfusionMatrix::from_counts(
            &classes(3),
            vec![vec![2, 0, 0], vec![0, 5, 0], vec![0, 0, 0]],
        )
        .unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        let r = EvaluationReport::from_confusion(cm).unwrap();
        assert_eq!(r.per_class[2].accuracy, None);
        assert_eq!(r.zero_division, vec!["precision:c2", "recall:c2"]);
        assert!(macro_metrics(&ConfusionMatrix::zeros(&classes(2))).is_err());
    }

    #[test]
    fn vehicle_row_half_correct() {
        let cm = ConfusionMatrix::from_counts(
            &classes(4),
            vec![
                vec![1, 1, 0, 0],
                vec![0, 60, 2, 2],
                vec![0, 3, 10, 0],
                vec![0, 1, 0, 9],
            ],
        )
        .unwrap();
        assert_eq!(per_class_accuracy(&cm).unwrap()[0], Some(0.5));
    }

    #[test]
    fn aggregation() {
        let a = ConfusionMatrix::from_counts(&classes(2), vec![vec![3, 1], vec![0, 2]]).unwrap();
        let b = ConfusionMatrix::from_counts(&classes(2), vec![vec![1, 0], vec![2, 4]]).unwrap();
        let ra = EvaluationReport::from_confusion(a.clone()).unwrap();
        let rb = EvaluationReport::from_confusion(b).unwrap();
        let single = aggregate_folds(std::slice::from_ref(&ra)).unwrap();
        assert_eq!(single.confusion, ra.confusion);
        assert_eq!(single.macro_f1, ra.macro_f1);
        let pooled = aggregate_folds(&[ra, rb]).unwrap();
        assert_eq!(pooled.sla, (3 + 2 + 1 + 4) as f64 / 13.0);
        assert_eq!(pooled.folds.len(), 2);
        let other =
            ConfusionMatrix::from_counts(&["x".into(), "y".into()], vec![vec![1, 0], vec![0, 1]])
                .unwrap();
        let ro = EvaluationReport::from_confusion(other).unwrap();
        assert!(aggregate_folds(&[pooled, ro]).is_err());
        assert!(aggregate_folds(&[]).is_err());
    }

    fn brute_vote(v: &[usize], n: usize) -> usize {
        (0..n)
            .max_by_key(|&c| (v.iter().filter(|&&x| x == c).count(), std::cmp::Reverse(c)))
            .unwrap()
    }

    proptest! {
        #[test]
        fn vote_matches_brute_force_and_ignores_order(
            mut v in proptest::collection::vec(0usize..4, 1..200),
        ) {
            let got = majority_vote(&v, 4).unwrap();
            prop_assert_eq!(got, brute_vote(&v, 4));
            v.reverse();
            prop_assert_eq!(majority_vote(&v, 4).unwrap(), got);
        }

        #[test]
        fn f1_between_min_and_mean(counts in proptest::collection::vec(0u64..20, 9)) {
            let rows = counts.chunks(3).map(<[u64]>::to_vec).collect();
            let cm = ConfusionMatrix::from_counts(&classes(3), rows).unwrap();
            prop_assume!(cm.total() > 0);
            let m = macro_metrics(&cm).unwrap();
            if m.precision + m.recall > 0.0 {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= (m.precision + m.recall) / 2.0 + 1e-12);
            }
            let r = EvaluationReport::from_confusion(cm.clone()).unwrap();
            prop_assert_eq!(r.sla, cm.trace() as f64 / cm.total() as f64);
        }

        #[test]
        fn relabeling_permutes_per_class_metrics(
            counts in proptest::collection::vec(1u64..20, 9),
            perm in Just([2usize, 0, 1]),
        ) {
            let rows: Vec<Vec<u64>> = counts.chunks(3).map(<[u64]>::to_vec).collect();
            let cm = ConfusionMatrix::from_counts(&classes(3), rows.clone()).unwrap();
            let mut permuted = vec![vec![0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    permuted[perm[i]][perm[j]] = rows[i][j];
                }
            }
            let pm = ConfusionMatrix::from_counts(&classes(3), permuted).unwrap();
            let a = per_class_accuracy(&cm).unwrap();
            let b = per_class_accuracy(&pm).unwrap();
            for i in 0..3 {
                prop_assert_eq!(a[i], b[perm[i]]);
            }
            let (ma, mb) = (macro_metrics(&cm).unwrap(), macro_metrics(&pm).unwrap());
            prop_assert!((ma.f1 - mb.f1).abs() < 1e-12);
        }
    }
}
