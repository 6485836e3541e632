//! Confusion matrix, accuracy and per-class precision/recall.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::Serialize;

use crate::error::{Error, Result};

/// Index of the largest value; the lowest index wins ties. NaN never wins.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Rows are true classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Binary counts for one class against the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OneVsRest {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl OneVsRest {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(TP + TN) / (TP + TN + FP + FN) * 100`.
    pub fn accuracy(&self) -> f64 {
        100.0 * (self.tp + self.tn) as f64 / self.total() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
    /// Set when the class was never predicted, so precision is reported as 0.
    pub precision_undefined: bool,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..][..self.classes]
    }

    pub fn update(&mut self, truth: &[usize], predicted: &[usize]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::shape(
                "confusion_update",
                "length",
                format!("{} labels vs {} predictions", truth.len(), predicted.len()),
            ));
        }
        for (index, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            for label in [t, p] {
                if label >= self.classes {
                    return Err(Error::LabelOutOfRange {
                        index,
                        label,
                        classes: self.classes,
                    });
                }
            }
        }
        for (&t, &p) in truth.iter().zip(predicted) {
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|k| self.row(k).iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|p| (0..self.classes).map(|t| self.get(t, p)).sum())
            .collect()
    }

    /// Percentage of samples on the diagonal.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyDataset("confusion matrix has no samples".into()));
        }
        Ok(100.0 * self.trace() as f64 / total as f64)
    }

    pub fn one_vs_rest(&self, k: usize) -> OneVsRest {
        let tp = self.get(k, k);
        let fn_ = self.row(k).iter().sum::<u64>() - tp;
        let fp = (0..self.classes).map(|t| self.get(t, k)).sum::<u64>() - tp;
        OneVsRest {
            tp,
            tn: self.total() - tp - fn_ - fp,
            fp,
            fn_,
        }
    }

    pub fn per_class(&self) -> Vec<ClassStats> {
        let rows = self.row_sums();
        let cols = self.column_sums();
        (0..self.classes)
            .map(|k| {
                let hit = self.get(k, k) as f64;
                ClassStats {
                    class: k,
                    precision: if cols[k] == 0 { 0.0 } else { hit / cols[k] as f64 },
                    recall: if rows[k] == 0 { 0.0 } else { hit / rows[k] as f64 },
                    support: rows[k],
                    precision_undefined: cols[k] == 0,
                }
            })
            .collect()
    }

    /// Row-normalized matrix; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|t| {
                let row = self.row(t);
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "confusion_merge",
                "classes",
                format!("{} vs {}", self.classes, other.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn report(&self, names: &[&str]) -> Result<Report> {
        let accuracy = self.accuracy()?;
        Ok(Report {
            accuracy,
            classes: names.iter().map(|s| s.to_string()).collect(),
            per_class: self.per_class(),
            matrix: (0..self.classes).map(|t| self.row(t).to_vec()).collect(),
            normalized: self.normalized(),
        })
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs).expect("confusion matrices of different sizes");
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub accuracy: f64,
    pub classes: Vec<String>,
    pub per_class: Vec<ClassStats>,
    pub matrix: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned tables: raw counts, row-normalized rates, and per-class stats.
    pub fn to_text(&self) -> String {
        let width = self.classes.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "accuracy {:.2}%", self.accuracy);
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "\n{title:<width$}");
            for name in &self.classes {
                let _ = write!(out, " {name:>width$}");
            }
            out.push('\n');
        };
        header(&mut out, "counts");
        for (name, row) in self.classes.iter().zip(&self.matrix) {
            let _ = write!(out, "{name:<width$}");
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        }
        header(&mut out, "rates");
        for (name, row) in self.classes.iter().zip(&self.normalized) {
            let _ = write!(out, "{name:<width$}");
            for r in row {
                let _ = write!(out, " {r:>width$.4}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "\n{:<width$} {:>9} {:>9} {:>9}",
            "class", "precision", "recall", "support"
        );
        for (name, s) in self.classes.iter().zip(&self.per_class) {
            let flag = if s.precision_undefined { " *" } else { "" };
            let _ = writeln!(
                out,
                "{name:<width$} {:>9.4} {:>9.4} {:>9}{flag}",
                s.precision, s.recall, s.support
            );
        }
        if self.per_class.iter().any(|s| s.precision_undefined) {
            out.push_str("* never predicted; precision reported as 0\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 7]), 0);
        assert_eq!(argmax(&[f64::NAN, 1.0]), 0);
    }

    #[test]
    fn hand_countable_case() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 2, 1], &[0, 1, 2, 2]).unwrap();
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.accuracy().unwrap(), 75.0);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(7);
        let labels: Vec<usize> = (0..10).map(|i| i % 7).collect();
        cm.update(&labels, &labels).unwrap();
        assert_eq!(cm.trace(), 10);
        assert_eq!(cm.accuracy().unwrap(), 100.0);
        for s in cm.per_class() {
            if s.support > 0 {
                assert_eq!((s.precision, s.recall), (1.0, 1.0));
            }
        }
    }

    #[test]
    fn binary_counts_give_eighty() {
        // class 1 is positive: TP=3, TN=5, FP=1, FN=1
        let mut cm = ConfusionMatrix::new(2);
        let truth = [1, 1, 1, 0, 0, 0, 0, 0, 0, 1];
        let pred = [1, 1, 1, 0, 0, 0, 0, 0, 1, 0];
        cm.update(&truth, &pred).unwrap();
        let ovr = cm.one_vs_rest(1);
        assert_eq!(
            ovr,
            OneVsRest {
                tp: 3,
                tn: 5,
                fp: 1,
                fn_: 1
            }
        );
        assert_eq!(ovr.accuracy(), 80.0);
        assert_eq!(cm.accuracy().unwrap(), 80.0);
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let stats = cm.per_class();
        assert!(stats[2].precision_undefined);
        assert_eq!(stats[2].precision, 0.0);
        assert!(cm
            .report(&["a", "b", "c"])
            .unwrap()
            .to_text()
            .contains("never predicted"));
    }

    #[test]
    fn errors() {
        let mut cm = ConfusionMatrix::new(3);
        assert!(cm.accuracy().is_err());
        assert!(matches!(
            cm.update(&[0, 3], &[0, 0]),
            Err(Error::LabelOutOfRange { index: 1, label: 3, .. })
        ));
        assert_eq!(cm.total(), 0);
        assert!(cm.update(&[0], &[]).is_err());
    }

    #[test]
    fn report_json_has_fields() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[0, 1], &[0, 0]).unwrap();
        let json: serde_json::Value = serde_json::from_str(&cm.report(&["x", "y"]).unwrap().to_json()).unwrap();
        assert_eq!(json["accuracy"], 50.0);
        assert_eq!(json["matrix"][1][0], 1);
        assert_eq!(json["normalized"][1][0], 1.0);
    }
}
