//! Confusion-matrix analytics for the four-class polyp-type classifier.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::phantom::ParisType;

pub const CLASSES: usize = 4;

/// Rows are true classes, columns predicted classes, both in `ParisType::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASSES]; CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..CLASSES {
            for j in 0..CLASSES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion(preds: &[ParisType], labels: &[ParisType]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return domain(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(labels) {
        m.counts[t.code() as usize][p.code() as usize] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Each row divided by its sum: class-wise sensitivity.
    Row,
    /// Each column divided by its sum: class-wise precision.
    Column,
}

/// Normalises counts along an axis; all-zero rows or columns stay zero.
pub fn normalize(m: &ConfusionMatrix, axis: Axis) -> [[f64; CLASSES]; CLASSES] {
    let mut out = [[0.0; CLASSES]; CLASSES];
    for i in 0..CLASSES {
        for j in 0..CLASSES {
            let denom: u64 = match axis {
                Axis::Row => m.counts[i].iter().sum(),
                Axis::Column => (0..CLASSES).map(|r| m.counts[r][j]).sum(),
            };
            if denom > 0 {
                out[i][j] = m.counts[i][j] as f64 / denom as f64;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub e_acc: f64,
    pub e_rec: f64,
    pub e_spec: f64,
    pub e_prec: f64,
    pub per_class_recall: [Option<f64>; CLASSES],
    pub sensitivity_matrix: [[f64; CLASSES]; CLASSES],
    pub precision_matrix: [[f64; CLASSES]; CLASSES],
    pub confusion: ConfusionMatrix,
}

fn macro_mean(vals: impl Iterator<Item = Option<f64>>) -> f64 {
    let (s, n) = vals.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy plus macro-averaged one-vs-rest recall, specificity and
/// precision. Classes whose denominator is zero are left out of the mean.
pub fn aggregate(m: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = m.total();
    if total == 0 {
        return domain("cannot aggregate an empty confusion matrix");
    }
    let mut rec = [None; CLASSES];
    let mut spec = [None; CLASSES];
    let mut prec = [None; CLASSES];
    for k in 0..CLASSES {
        let tp = m.counts[k][k];
        let fn_: u64 = m.counts[k].iter().sum::<u64>() - tp;
        let fp: u64 = (0..CLASSES).map(|r| m.counts[r][k]).sum::<u64>() - tp;
        let tn = total - tp - fn_ - fp;
        rec[k] = ratio(tp, tp + fn_);
        spec[k] = ratio(tn, tn + fp);
        prec[k] = ratio(tp, tp + fp);
    }
    Ok(MetricsReport {
        e_acc: m.trace() as f64 / total as f64,
        e_rec: macro_mean(rec.into_iter()),
        e_spec: macro_mean(spec.into_iter()),
        e_prec: macro_mean(prec.into_iter()),
        per_class_recall: rec,
        sensitivity_matrix: normalize(m, Axis::Row),
        precision_matrix: normalize(m, Axis::Column),
        confusion: *m,
    })
}

/// Aligned text table of a matrix with class names on both axes.
pub fn format_table(title: &str, m: &[[f64; CLASSES]; CLASSES]) -> String {
    let mut s = format!("{title}\n{:>6}", "");
    for t in ParisType::ALL {
        s += &format!("{:>7}", t.name());
    }
    s.push('\n');
    for (i, t) in ParisType::ALL.iter().enumerate() {
        s += &format!("{:>6}", t.name());
        for v in m[i] {
            s += &format!("{v:>7.3}");
        }
        s.push('\n');
    }
    s
}

/// Matrix as CSV with a header row of predicted-class names.
pub fn matrix_csv(m: &[[f64; CLASSES]; CLASSES]) -> String {
    let mut s = String::from("true");
    for t in ParisType::ALL {
        s += &format!(",{}", t.name());
    }
    s.push('\n');
    for (i, t) in ParisType::ALL.iter().enumerate() {
        s += t.name();
        for v in m[i] {
            s += &format!(",{v}");
        }
        s.push('\n');
    }
    s
}
