//! Classification metrics and their CSV forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MvgtError, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `[C × C]` counts; entry `(t, p)` counts samples of true class `t`
/// predicted as `p`. `logits` is `[labels.len() × C]`.
pub fn confusion(logits: &[f64], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if logits.len() != labels.len() * n_classes {
        return Err(MvgtError::Data(format!(
            "{} logits for {} labels × {n_classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (i, (row, &t)) in logits.chunks(n_classes).zip(labels).enumerate() {
        if t >= n_classes {
            return Err(MvgtError::Data(format!("label {t} at index {i} outside 0..{n_classes}")));
        }
        m[t][argmax(row)] += 1;
    }
    Ok(m)
}

/// Accuracy, per-class recall and the confusion matrix of one evaluation,
/// plus the training loss curve when it came from a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub loss_curve: Vec<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    f64::NAN
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        EvalReport {
            accuracy: if total == 0 { f64::NAN } else { trace as f64 / total as f64 },
            per_class,
            confusion,
            loss_curve: Vec::new(),
        }
    }

    /// `metric,value` rows: accuracy, then one per-class accuracy per class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        w.write_record(["accuracy", &self.accuracy.to_string()])?;
        for (c, a) in self.per_class.iter().enumerate() {
            w.write_record([format!("class_{c}_accuracy"), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Confusion grid with a `true\pred` header row.
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let c = self.confusion.len();
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..c).map(|p| p.to_string()));
        w.write_record(&header)?;
        for (t, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
