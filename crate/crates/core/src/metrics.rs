//! Classification and regression statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::invalid("counts", "confusion matrix must be square and nonempty"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Support as a fraction of all samples.
    pub support_fraction: f64,
    /// Set when any rate hit a 0/0 and was reported as 0.
    pub undefined: bool,
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
    pub micro_avg: Averages,
    pub total: u64,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let c = cm.classes();
    let counts = cm.counts();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = counts[k][k] as f64;
        let predicted: u64 = (0..c).map(|r| counts[r][k]).sum();
        let support: u64 = counts[k].iter().sum();
        let (precision, p_undef) = ratio(tp, predicted as f64);
        let (recall, r_undef) = ratio(tp, support as f64);
        let f1 = f1_score(precision, recall);
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            support_fraction: support as f64 / total as f64,
            undefined: p_undef || r_undef,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let wmean = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let weighted_avg = Averages {
        precision: wmean(|m| m.precision),
        recall: wmean(|m| m.recall),
        f1: wmean(|m| m.f1),
    };
    // Pooled counts: every false positive of one class is a false negative of
    // another, so micro precision and recall coincide.
    let tp = cm.trace() as f64;
    let micro = tp / total as f64;
    let micro_avg = Averages {
        precision: micro,
        recall: micro,
        f1: micro,
    };
    Ok(ClassificationReport {
        per_class,
        accuracy: cm.accuracy(),
        macro_avg,
        weighted_avg,
        micro_avg,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Pearson correlation; `None` when either series is constant.
    pub r: Option<f64>,
}

pub fn regression_report(pred: &[f64], truth: &[f64]) -> Result<RegressionReport> {
    if pred.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let n = pred.len() as f64;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok(RegressionReport {
        mse,
        rmse: mse.sqrt(),
        mae,
        r: pearson(pred, truth),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_row_f1() {
        let f1 = f1_score(0.83, 1.0);
        assert!((f1 - 0.907_103_825_136_612).abs() < 1e-12);
        assert_eq!(format!("{f1:.2}"), "0.91");
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 2]])
            .unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for m in &r.per_class {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_avg.f1, 1.0);
        assert_eq!(r.weighted_avg.f1, 1.0);
    }

    #[test]
    fn hand_computed_three_class() {
        // rows: truth, cols: predicted
        //  [5 1 0]
        //  [2 3 1]
        //  [0 0 4]
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]])
            .unwrap();
        let r = classification_report(&cm).unwrap();
        let p = [5.0 / 7.0, 3.0 / 4.0, 4.0 / 5.0];
        let rc = [5.0 / 6.0, 3.0 / 6.0, 4.0 / 4.0];
        let f: Vec<f64> = (0..3).map(|i| 2.0 * p[i] * rc[i] / (p[i] + rc[i])).collect();
        for i in 0..3 {
            assert!((r.per_class[i].precision - p[i]).abs() < 1e-12);
            assert!((r.per_class[i].recall - rc[i]).abs() < 1e-12);
            assert!((r.per_class[i].f1 - f[i]).abs() < 1e-12);
        }
        assert_eq!(r.per_class[1].support, 6);
        assert!((r.accuracy - 12.0 / 16.0).abs() < 1e-12);
        assert!((r.macro_avg.precision - (p[0] + p[1] + p[2]) / 3.0).abs() < 1e-12);
        let wf = (f[0] * 6.0 + f[1] * 6.0 + f[2] * 4.0) / 16.0;
        assert!((r.weighted_avg.f1 - wf).abs() < 1e-12);
        assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let cm = ConfusionMatrix::from_counts(vec![vec![4, 0], vec![0, 0]]).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!(r.per_class[1].undefined);
        assert!(!r.per_class[0].undefined);
        assert!(classification_report(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn regression_examples() {
        let t = [1.0, 2.0, 3.0];
        let r = regression_report(&t, &t).unwrap();
        assert_eq!((r.mse, r.rmse, r.mae, r.r), (0.0, 0.0, 0.0, Some(1.0)));

        // errors of ±0.2 everywhere: mse = 0.04
        let pred = [1.25, 1.75, 3.25, 2.75];
        let truth = [1.05, 1.95, 3.05, 2.95];
        let r = regression_report(&pred, &truth).unwrap();
        assert!((r.mse - 0.04).abs() < 1e-15);
        assert_eq!(r.rmse, r.mse.sqrt());

        let pred = [1.0, 2.0, 3.0, 4.0, 5.0];
        let truth = [1.1, 1.9, 3.2, 3.8, 5.0];
        let r = regression_report(&pred, &truth).unwrap();
        // residuals: -0.1, 0.1, -0.2, 0.2, 0
        assert!((r.mse - 0.1 / 5.0).abs() < 1e-12);
        assert!((r.mae - 0.6 / 5.0).abs() < 1e-12);
        // pearson by hand: mean(pred)=3, mean(truth)=3
        // sxy = (-2)(-1.9)+(-1)(-1.1)+0+(1)(0.8)+(2)(2) = 9.7
        // sxx = 10, syy = 3.61+1.21+0.04+0.64+4 = 9.5
        let expect = 9.7 / (10.0f64.sqrt() * 9.5f64.sqrt());
        assert!((r.r.unwrap() - expect).abs() < 1e-12);

        let r = regression_report(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r.r, None);
        assert!(regression_report(&[], &[]).is_err());
        assert!(regression_report(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn micro_f1_equals_accuracy(counts in prop::collection::vec(0u64..50, 9)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let cm = ConfusionMatrix::from_counts(counts.chunks(3).map(|c| c.to_vec()).collect()).unwrap();
            let r = classification_report(&cm).unwrap();
            prop_assert_eq!(r.micro_avg.f1, r.accuracy);
        }

        #[test]
        fn weighted_equals_macro_for_equal_support(
            a in 0u64..20, b in 0u64..20, c in 0u64..20,
        ) {
            // every row sums to 20
            let cm = ConfusionMatrix::from_counts(vec![
                vec![a, 20 - a, 0],
                vec![0, b, 20 - b],
                vec![20 - c, 0, c],
            ]).unwrap();
            let r = classification_report(&cm).unwrap();
            prop_assert!((r.weighted_avg.f1 - r.macro_avg.f1).abs() <= 1e-15);
            prop_assert!((r.weighted_avg.precision - r.macro_avg.precision).abs() <= 1e-15);
        }

        #[test]
        fn pearson_affine_invariant(
            p in prop::collection::vec(-10.0..10.0f64, 5..30),
            a in 0.1..10.0f64,
            b in -5.0..5.0f64,
        ) {
            let t: Vec<f64> = p.iter().enumerate().map(|(i, x)| x * 0.5 + (i as f64).sin()).collect();
            let r1 = regression_report(&p, &t).unwrap();
            let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            let r2 = regression_report(&q, &t).unwrap();
            if let (Some(x), Some(y)) = (r1.r, r2.r) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert_eq!(r1.rmse, r1.mse.sqrt());
        }
    }
}
