//! Confusion matrices and classification reports.
//!
//! Zero denominators yield 0 rather than NaN; the affected classes are listed
//! in [`ClassificationReport::zero_division`].

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{map_to_sentiment, ClassLabel, Emotion, Label, Taxonomy};
use crate::strategies::SegmentPrediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no ground truth for segment {0}")]
    MissingSegment(String),
    #[error("cannot merge matrices over different labels")]
    LabelMismatch,
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn zeros(labels: &[&str]) -> Self {
        let k = labels.len();
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; k]; k],
            total: 0,
        }
    }

    pub fn for_taxonomy(taxonomy: Taxonomy) -> Self {
        Self::zeros(taxonomy.label_names())
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn add_index(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
        self.total += 1;
    }

    pub fn add(&mut self, truth: Label, predicted: Label) -> Result<(), EvalError> {
        let t = self.position(truth.name())?;
        let p = self.position(predicted.name())?;
        self.add_index(t, p);
        Ok(())
    }

    fn position(&self, name: &str) -> Result<usize, EvalError> {
        self.labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| EvalError::UnknownLabel(name.to_string()))
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Cell-wise sum of two matrices over the same labels.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.labels != other.labels {
            return Err(EvalError::LabelMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.total += other.total;
        Ok(())
    }

    /// Reorders rows and columns together: new position `i` holds old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        ConfusionMatrix {
            labels: perm.iter().map(|&i| self.labels[i].clone()).collect(),
            counts: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
            total: self.total,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Builds a matrix from named `(true, predicted)` pairs.
pub fn confusion_matrix(pairs: &[(&str, &str)], labels: &[&str]) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::zeros(labels);
    for (t, p) in pairs {
        let ti = cm.position(t)?;
        let pi = cm.position(p)?;
        cm.add_index(ti, pi);
    }
    Ok(cm)
}

pub fn confusion_matrix_typed<L: ClassLabel>(pairs: &[(L, L)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::for_taxonomy(L::TAXONOMY);
    for (t, p) in pairs {
        cm.add_index(t.index(), p.index());
    }
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Weighted average recall; equals accuracy.
    pub war: f64,
    /// Unweighted average recall; equals the macro recall.
    pub uar: f64,
    pub total: u64,
    pub excluded_count: u64,
    /// Classes for which a precision or recall denominator was zero.
    pub zero_division: Vec<String>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> ClassificationReport {
    let k = cm.k();
    let mut per_class = Vec::with_capacity(k);
    let mut zero_division = Vec::new();
    for i in 0..k {
        let tp = cm.counts[i][i];
        let (col, row) = (cm.col_sum(i), cm.row_sum(i));
        if col == 0 || row == 0 {
            zero_division.push(cm.labels[i].clone());
        }
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: cm.labels[i].clone(),
            precision,
            recall,
            f1,
            support: row,
        });
    }

    let kf = k.max(1) as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / kf,
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if cm.total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / cm.total as f64
        }
    };
    let weighted_avg = Averages {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    let accuracy = ratio(cm.trace(), cm.total);

    ClassificationReport {
        accuracy,
        war: accuracy,
        uar: macro_avg.recall,
        macro_avg,
        weighted_avg,
        per_class,
        total: cm.total,
        excluded_count: 0,
        zero_division,
    }
}

impl ClassificationReport {
    pub fn with_excluded(mut self, excluded: u64) -> Self {
        self.excluded_count = excluded;
        self
    }

    /// Aligned text table, two decimals, columns in the order
    /// support, precision, recall, f1-score.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14}{:>9}{:>11}{:>9}{:>10}",
            "Label/Feature", "support", "precision", "recall", "f1-score"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<14}{:>9}{:>11.2}{:>9.2}{:>10.2}",
                c.label, c.support, c.precision, c.recall, c.f1
            );
        }
        let _ = writeln!(
            out,
            "{:<14}{:>9}{:>11}{:>9}{:>10.2}",
            "accuracy", self.total, "", "", self.accuracy
        );
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:<14}{:>9}{:>11.2}{:>9.2}{:>10.2}",
                name, self.total, a.precision, a.recall, a.f1
            );
        }
        let _ = writeln!(out, "{:<14}{:>9}{:>11}{:>9.2}", "WAR", "", "", self.war);
        let _ = writeln!(out, "{:<14}{:>9}{:>11}{:>9.2}", "UAR", "", "", self.uar);
        if self.excluded_count > 0 {
            let _ = writeln!(out, "excluded segments: {}", self.excluded_count);
        }
        out
    }
}

/// Ground truth of `segment` in the taxonomy of `label`.
fn truth_for(gt: Emotion, like: Label) -> Label {
    match like {
        Label::Emotion(_) => Label::Emotion(gt),
        Label::Sentiment(_) => Label::Sentiment(map_to_sentiment(gt)),
    }
}

/// One 0/1 entry per predicted label: per-segment strategies give one entry
/// per segment, per-frame strategies five.
pub fn correctness_vector(
    predictions: &[SegmentPrediction],
    ground_truth: &HashMap<String, Emotion>,
) -> Result<Vec<u8>, EvalError> {
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        let gt = *ground_truth
            .get(&p.segment_id)
            .ok_or_else(|| EvalError::MissingSegment(p.segment_id.clone()))?;
        out.extend(p.labels.iter().map(|&l| u8::from(truth_for(gt, l) == l)));
    }
    Ok(out)
}

/// Confusion matrix over every predicted label of `predictions`.
pub fn confusion_from_predictions(
    predictions: &[SegmentPrediction],
    ground_truth: &HashMap<String, Emotion>,
    taxonomy: Taxonomy,
) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::for_taxonomy(taxonomy);
    for p in predictions {
        let gt = *ground_truth
            .get(&p.segment_id)
            .ok_or_else(|| EvalError::MissingSegment(p.segment_id.clone()))?;
        for &l in &p.labels {
            cm.add(truth_for(gt, l), l)?;
        }
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Sentiment;
    use crate::strategies::{Granularity, StrategyId};

    #[test]
    fn small_matrix() {
        let cm = confusion_matrix(
            &[("Happy", "Happy"), ("Sad", "Happy")],
            Taxonomy::SevenClass.label_names(),
        )
        .unwrap();
        assert_eq!(cm.total, 2);
        assert_eq!(cm.counts[3][3], 1);
        assert_eq!(cm.counts[5][3], 1);
        assert_eq!(cm.row_sum(5), 1);
        assert_eq!(cm.col_sum(3), 2);
    }

    #[test]
    fn empty_matrix() {
        let cm = confusion_matrix(&[], &["a", "b"]).unwrap();
        assert_eq!(cm.total, 0);
        assert!(cm.counts.iter().flatten().all(|c| *c == 0));
        let r = classification_report(&cm);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.zero_division, vec!["a", "b"]);
    }

    #[test]
    fn unknown_label() {
        assert_eq!(
            confusion_matrix(&[("Happy", "Bored")], &["Happy"]),
            Err(EvalError::UnknownLabel("Bored".into()))
        );
    }

    #[test]
    fn perfect_predictions() {
        let cm = confusion_matrix_typed(&[
            (Sentiment::Negative, Sentiment::Negative),
            (Sentiment::Neutral, Sentiment::Neutral),
            (Sentiment::Positive, Sentiment::Positive),
            (Sentiment::Positive, Sentiment::Positive),
        ]);
        let r = classification_report(&cm);
        for c in &r.per_class {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(
            r.macro_avg,
            Averages {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(
            r.weighted_avg,
            Averages {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn two_class_hand_arithmetic() {
        let cm = ConfusionMatrix {
            labels: vec!["x".into(), "y".into()],
            counts: vec![vec![8, 2], vec![3, 7]],
            total: 20,
        };
        let r = classification_report(&cm);
        assert!((r.per_class[0].precision - 8.0 / 11.0).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.8).abs() < 1e-12);
        assert!((r.accuracy - 0.75).abs() < 1e-12);
        assert!((r.uar - 0.75).abs() < 1e-12);
        let f1 = 2.0 * (8.0 / 11.0) * 0.8 / (8.0 / 11.0 + 0.8);
        assert!((r.per_class[0].f1 - f1).abs() < 1e-12);
    }

    #[test]
    fn table_rendering() {
        let cm = ConfusionMatrix {
            labels: vec!["Negative".into(), "Neutral".into(), "Positive".into()],
            counts: vec![vec![8, 1, 1], vec![2, 3, 0], vec![0, 1, 4]],
            total: 20,
        };
        let table = classification_report(&cm).with_excluded(2).render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Label/Feature") && lines[0].ends_with("f1-score"));
        let cols: Vec<&str> = lines[1].split_whitespace().collect();
        assert_eq!(cols, vec!["Negative", "10", "0.80", "0.80", "0.80"]);
        assert!(lines[4].starts_with("accuracy") && lines[4].ends_with("0.75"));
        assert!(lines[5].starts_with("macro avg"));
        assert!(lines[6].starts_with("weighted avg"));
        assert!(table.contains("excluded segments: 2"));
    }

    #[test]
    fn merge_and_permute() {
        let mut a = confusion_matrix(&[("a", "b")], &["a", "b"]).unwrap();
        let b = confusion_matrix(&[("b", "b"), ("a", "a")], &["a", "b"]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(a.total, 3);
        let p = a.permuted(&[1, 0]);
        assert_eq!(p.labels, vec!["b", "a"]);
        assert_eq!(p.counts, vec![vec![1, 0], vec![1, 1]]);
        let c = confusion_matrix(&[], &["a", "c"]).unwrap();
        assert_eq!(a.merge(&c), Err(EvalError::LabelMismatch));
    }

    fn pred(id: &str, strategy: StrategyId, labels: Vec<Label>) -> SegmentPrediction {
        SegmentPrediction {
            segment_id: id.into(),
            strategy,
            granularity: strategy.granularity(),
            labels,
        }
    }

    #[test]
    fn correctness_tally() {
        use Emotion::*;
        let gts: HashMap<String, Emotion> = [
            ("a", Happy),
            ("b", Sad),
            ("c", Fear),
            ("d", Neutral),
            ("e", Surprise),
            ("f", Angry),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let preds = vec![
            pred("a", StrategyId::B1, vec![Label::Emotion(Happy)]),
            pred("b", StrategyId::B1, vec![Label::Emotion(Angry)]),
            pred("c", StrategyId::B1, vec![Label::Emotion(Fear)]),
            pred("d", StrategyId::B1, vec![Label::Emotion(Sad)]),
            pred("e", StrategyId::B1, vec![Label::Emotion(Surprise)]),
            pred("f", StrategyId::B1, vec![Label::Emotion(Disgust)]),
        ];
        assert_eq!(correctness_vector(&preds, &gts).unwrap(), vec![1, 0, 1, 0, 1, 0]);

        // three-class scoring maps the ground truth: Angry vs Disgust are both Negative
        let preds3 = vec![
            pred("b", StrategyId::B2, vec![Label::Sentiment(Sentiment::Negative)]),
            pred("f", StrategyId::B2, vec![Label::Sentiment(Sentiment::Negative)]),
            pred("e", StrategyId::B2, vec![Label::Sentiment(Sentiment::Neutral)]),
        ];
        assert_eq!(correctness_vector(&preds3, &gts).unwrap(), vec![1, 1, 0]);

        let missing = vec![pred("zz", StrategyId::B1, vec![Label::Emotion(Happy)])];
        assert_eq!(
            correctness_vector(&missing, &gts),
            Err(EvalError::MissingSegment("zz".into()))
        );

        let frames = vec![pred("a", StrategyId::A1, vec![Label::Emotion(Happy); 5])];
        assert_eq!(frames[0].granularity, Granularity::PerFrame);
        assert_eq!(correctness_vector(&frames, &gts).unwrap(), vec![1; 5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
            (2usize..8).prop_flat_map(|k| {
                prop::collection::vec(prop::collection::vec(0u64..50, k), k).prop_map(move |counts| {
                    let total = counts.iter().flatten().sum();
                    ConfusionMatrix {
                        labels: (0..k).map(|i| format!("c{i}")).collect(),
                        counts,
                        total,
                    }
                })
            })
        }

        proptest! {
            #[test]
            fn identities(cm in matrix()) {
                let r = classification_report(&cm);
                prop_assert!((r.war - r.accuracy).abs() < 1e-12);
                prop_assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
                prop_assert!((r.uar - r.macro_avg.recall).abs() < 1e-15);
                for (avg, get) in [
                    (r.macro_avg.precision, (|c: &ClassMetrics| c.precision) as fn(&ClassMetrics) -> f64),
                    (r.macro_avg.f1, |c| c.f1),
                    (r.weighted_avg.precision, |c| c.precision),
                    (r.weighted_avg.f1, |c| c.f1),
                ] {
                    let lo = r.per_class.iter().map(get).fold(f64::INFINITY, f64::min);
                    let hi = r.per_class.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(avg >= lo - 1e-12 && avg <= hi + 1e-12 || (cm.total == 0 && avg == 0.0));
                }
                for c in &r.per_class {
                    prop_assert!((0.0..=1.0).contains(&c.precision));
                    prop_assert!((0.0..=1.0).contains(&c.recall));
                    prop_assert!((0.0..=1.0).contains(&c.f1));
                }
            }

            #[test]
            fn permutation_invariance(cm in matrix(), seed in any::<u64>()) {
                let k = cm.k();
                let mut perm: Vec<usize> = (0..k).collect();
                let mut s = seed;
                for i in (1..k).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    perm.swap(i, (s >> 33) as usize % (i + 1));
                }
                let a = classification_report(&cm);
                let b = classification_report(&cm.permuted(&perm));
                prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
                prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
                prop_assert!((a.weighted_avg.precision - b.weighted_avg.precision).abs() < 1e-12);
                for (new_pos, &old) in perm.iter().enumerate() {
                    prop_assert_eq!(&a.per_class[old], &b.per_class[new_pos]);
                }
            }
        }
    }
}
