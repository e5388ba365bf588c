//! Confusion matrices, the three-to-two class collapse, binary metrics, ROC
//! and AUC.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `K x K` counts, rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<ConfusionMatrix> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    /// CSV with a `truth\pred` header row and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for p in 0..self.k {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for t in 0..self.k {
            let _ = write!(s, "{t}");
            for p in 0..self.k {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self, title: &str) -> String {
        let width = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut s = format!("{title}\n{:>10}", "truth\\pred");
        for p in 0..self.k {
            let _ = write!(s, " {p:>width$}");
        }
        s.push('\n');
        for t in 0..self.k {
            let _ = write!(s, "{t:>10}");
            for p in 0..self.k {
                let _ = write!(s, " {:>width$}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!("class ({t}, {p}) outside 0..{k}")));
        }
        m.counts[t * k + p] += 1;
    }
    Ok(m)
}

/// Merge classes 1 and 2 into a single positive class.
pub fn collapse_3to2(m: &ConfusionMatrix) -> Result<ConfusionMatrix> {
    if m.k != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected a 3x3 matrix, got {0}x{0}",
            m.k
        )));
    }
    let tn = m.get(0, 0);
    let fp = m.get(0, 1) + m.get(0, 2);
    let fn_ = m.get(1, 0) + m.get(2, 0);
    let tp = m.get(1, 1) + m.get(1, 2) + m.get(2, 1) + m.get(2, 2);
    ConfusionMatrix::from_rows(&[&[tn, fp], &[fn_, tp]])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// `None` when there are no positive truths.
    pub sensitivity: Option<f64>,
    /// `None` when there are no negative truths.
    pub specificity: Option<f64>,
}

pub fn binary_metrics(m: &ConfusionMatrix) -> Result<BinaryMetrics> {
    if m.k != 2 {
        return Err(Error::InvalidArgument(format!(
            "expected a 2x2 matrix, got {0}x{0}",
            m.k
        )));
    }
    let total = m.total();
    if total == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let (tn, fp, fn_, tp) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(BinaryMetrics {
        accuracy: (tp + tn) as f64 / total as f64,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

/// Receiver operating characteristic from a threshold sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Decision thresholds (predict positive when `score >= threshold`),
    /// starting at `+inf`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// Two-column `fpr,tpr` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in self.fpr.iter().zip(&self.tpr) {
            let _ = writeln!(s, "{f},{t}");
        }
        s
    }
}

/// Sweeps every distinct score as a threshold; tied scores move the curve
/// diagonally, which gives them half credit under the trapezoid rule.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "roc_auc" });
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs both positive and negative truths".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = RocCurve {
        thresholds: vec![f64::INFINITY],
        fpr: vec![0.0],
        tpr: vec![0.0],
        auc: 0.0,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.thresholds.push(t);
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
    }
    curve.auc = curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    Ok(curve)
}

/// Accuracy of class-0 vs rest decisions.
pub fn binary_accuracy(truth: &[usize], pred: &[usize]) -> Option<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return None;
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| (**t > 0) == (**p > 0)).count();
    Some(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent estimator: wins + half the ties over all pos/neg pairs.
    fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &ti) in truth.iter().enumerate() {
            for (j, &tj) in truth.iter().enumerate() {
                if ti && !tj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 1, 2, 2], &[0, 2, 2, 1], 3).unwrap();
        assert_eq!(m.rows(), vec![vec![1, 0, 0], vec![0, 0, 1], vec![0, 1, 1]]);
        let d = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(d.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0], &[], 3).is_err());
    }

    #[test]
    fn collapse_example() {
        let m = ConfusionMatrix::from_rows(&[&[50, 3, 2], &[4, 30, 6], &[1, 5, 20]]).unwrap();
        let c = collapse_3to2(&m).unwrap();
        assert_eq!(c.rows(), vec![vec![50, 5], vec![5, 61]]);
        assert_eq!(c.total(), m.total());
        let diag = ConfusionMatrix::from_rows(&[&[4, 0, 0], &[0, 5, 0], &[0, 0, 6]]).unwrap();
        assert_eq!(collapse_3to2(&diag).unwrap().rows(), vec![vec![4, 0], vec![0, 11]]);
        assert!(collapse_3to2(&c).is_err());
    }

    #[test]
    fn binary_metric_examples() {
        let m = ConfusionMatrix::from_rows(&[&[50, 5], &[5, 61]]).unwrap();
        let b = binary_metrics(&m).unwrap();
        assert!((b.accuracy - 111.0 / 121.0).abs() < 1e-15);
        assert!((b.accuracy - 0.9174).abs() < 1e-4);
        let perfect = ConfusionMatrix::from_rows(&[&[3, 0], &[0, 4]]).unwrap();
        let p = binary_metrics(&perfect).unwrap();
        assert_eq!((p.accuracy, p.sensitivity, p.specificity), (1.0, Some(1.0), Some(1.0)));
        let no_pos = ConfusionMatrix::from_rows(&[&[3, 1], &[0, 0]]).unwrap();
        assert_eq!(binary_metrics(&no_pos).unwrap().sensitivity, None);
        assert!(binary_metrics(&ConfusionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn roc_examples() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!((r.fpr[0], r.tpr[0]), (0.0, 0.0));
        assert_eq!((*r.fpr.last().unwrap(), *r.tpr.last().unwrap()), (1.0, 1.0));
        let sep = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(sep.auc, 1.0);
        let flat = roc_auc(&[0.3; 6], &[true, false, false, true, false, true]).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    proptest! {
        #[test]
        fn sweep_matches_pairwise(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..60)
        ) {
            let mut truth: Vec<bool> = raw.iter().map(|r| r.1).collect();
            truth[0] = true;
            truth[1] = false;
            // Coarse scores so ties are common.
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 11.0).collect();
            let r = roc_auc(&scores, &truth).unwrap();
            prop_assert!((r.auc - pairwise_auc(&scores, &truth)).abs() < 1e-12);
            for w in r.fpr.windows(2) { prop_assert!(w[1] >= w[0]); }
            for w in r.tpr.windows(2) { prop_assert!(w[1] >= w[0]); }
        }

        #[test]
        fn collapse_matches_direct_binarisation(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..80)
        ) {
            let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let collapsed = collapse_3to2(&confusion(&truth, &pred, 3).unwrap()).unwrap();
            let bt: Vec<usize> = truth.iter().map(|&t| usize::from(t > 0)).collect();
            let bp: Vec<usize> = pred.iter().map(|&p| usize::from(p > 0)).collect();
            let direct = confusion(&bt, &bp, 2).unwrap();
            prop_assert_eq!(&collapsed, &direct);
            prop_assert_eq!(binary_metrics(&collapsed).unwrap(), binary_metrics(&direct).unwrap());
        }
    }
}
