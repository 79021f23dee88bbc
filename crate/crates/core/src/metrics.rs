//! Confusion matrix and the classification report: per-class precision,
//! recall, F1, and support, plus accuracy and macro/weighted averages,
//! rendered as an aligned text table or CSV.

use crate::error::{Error, Result};

/// k x k grid of counts; rows are the true class, columns the prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Zero matrix for k classes.
    pub fn zeros(k: usize) -> Result<ConfusionMatrix> {
        if k == 0 {
            return Err(Error::EmptyConfusion);
        }
        Ok(ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        })
    }

    /// Build from explicit rows (row = true class).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::EmptyConfusion);
        }
        let counts = rows.iter().flatten().copied().collect();
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Row sum = support of a true class.
    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    /// Column sum = number of predictions of a class.
    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    /// Aligned text grid with class names on both axes.
    pub fn to_text(&self, class_names: &[String]) -> String {
        let name_w = class_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let cell_w = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(name_w.min(8));
        let mut out = String::new();
        out.push_str(&format!("{:name_w$}  ", "true"));
        for name in class_names {
            out.push_str(&format!("{name:>cell_w$}  "));
        }
        out.push('\n');
        for (t, name) in class_names.iter().enumerate() {
            out.push_str(&format!("{name:>name_w$}  "));
            for p in 0..self.k {
                out.push_str(&format!("{:>cell_w$}  ", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Tally (truth, prediction) pairs into a k-class confusion matrix.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::UnpairedPredictions {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k)?;
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::ClassOutOfRange {
                index: t.max(p),
                classes: k,
            });
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// Per-class report row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The full classification report. Every rate is kept at full f64
/// precision; rendering rounds to 2 decimals.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Unweighted means of (precision, recall, f1).
    pub macro_avg: (f64, f64, f64),
    /// Support-weighted means of (precision, recall, f1).
    pub weighted_avg: (f64, f64, f64),
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compute the report. Zero denominators yield 0 for the affected metric.
pub fn classification_report(cm: &ConfusionMatrix, class_names: &[String]) -> Result<Report> {
    if class_names.len() != cm.k() {
        return Err(Error::LengthMismatch {
            expected: cm.k(),
            got: class_names.len(),
        });
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let mut per_class = Vec::with_capacity(cm.k());
    for c in 0..cm.k() {
        let precision = ratio(cm.get(c, c), cm.col_sum(c));
        let recall = ratio(cm.get(c, c), cm.row_sum(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.row_sum(c),
        });
    }
    let kf = cm.k() as f64;
    let macro_avg = (
        per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
    );
    let tf = total as f64;
    let weighted_avg = (
        per_class.iter().map(|m| m.precision * m.support as f64).sum::<f64>() / tf,
        per_class.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / tf,
        per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / tf,
    );
    Ok(Report {
        classes: class_names.to_vec(),
        per_class,
        accuracy: cm.trace() as f64 / tf,
        macro_avg,
        weighted_avg,
        total,
    })
}

impl Report {
    /// Accuracy at 4 decimals (e.g. 640 correct of 642 prints "0.9969").
    pub fn accuracy_4dp(&self) -> String {
        format!("{:.4}", self.accuracy)
    }

    /// Aligned text in the standard report layout: one row per class, then
    /// accuracy, macro avg, and weighted avg, all at 2 decimals.
    pub fn to_text(&self) -> String {
        let name_w = self
            .classes
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max("weighted avg".len());
        let mut out = String::new();
        out.push_str(&format!(
            "{:>name_w$}  precision  recall  f1-score  support\n\n",
            ""
        ));
        for (name, m) in self.classes.iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{name:>name_w$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:>name_w$}  {:>9}  {:>6}  {:>8.2}  {:>7}\n",
            "accuracy", "", "", self.accuracy, self.total
        ));
        out.push_str(&format!(
            "{:>name_w$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}\n",
            "macro avg", self.macro_avg.0, self.macro_avg.1, self.macro_avg.2, self.total
        ));
        out.push_str(&format!(
            "{:>name_w$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}\n",
            "weighted avg",
            self.weighted_avg.0,
            self.weighted_avg.1,
            self.weighted_avg.2,
            self.total
        ));
        out
    }

    /// CSV with one row per class plus accuracy/macro/weighted rows, at
    /// full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (name, m) in self.classes.iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{name},{},{},{},{}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!("accuracy,,,{},{}\n", self.accuracy, self.total));
        out.push_str(&format!(
            "macro avg,{},{},{},{}\n",
            self.macro_avg.0, self.macro_avg.1, self.macro_avg.2, self.total
        ));
        out.push_str(&format!(
            "weighted avg,{},{},{},{}\n",
            self.weighted_avg.0, self.weighted_avg.1, self.weighted_avg.2, self.total
        ));
        out
    }
}
