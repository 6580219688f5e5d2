//! Classification metrics: accuracy, macro precision/recall/F1, macro
//! one-vs-rest ROC AUC and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_labels(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("no samples"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labels(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `m[true][pred]`.
pub fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    check_labels(pred, truth)?;
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::domain(format!("label {} outside {classes} classes", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged `(precision, recall, f1)`; every `0/0` is taken as 0.
pub fn macro_prf(pred: &[usize], truth: &[usize], classes: usize) -> Result<(f64, f64, f64)> {
    let m = confusion(pred, truth, classes)?;
    Ok(prf_from_confusion(&m))
}

fn prf_from_confusion(m: &[Vec<u64>]) -> (f64, f64, f64) {
    let c = m.len();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = m[k][k];
        let predicted: u64 = (0..c).map(|t| m[t][k]).sum();
        let actual: u64 = m[k].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        sp += p;
        sr += r;
        sf += f;
    }
    let n = c as f64;
    (sp / n, sr / n, sf / n)
}

/// Area under the ROC curve of `scores` against binary `positive` labels,
/// with tied scores contributing one half. `None` without both classes.
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney with midranks
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean one-vs-rest AUC over classes having both positives and negatives.
/// `scores` is `[N, C]`. `None` when no class qualifies.
pub fn roc_auc_macro_ovr(scores: &Tensor, truth: &[usize]) -> Result<Option<f64>> {
    if scores.rank() != 2 || scores.shape()[0] != truth.len() {
        return Err(Error::shape(format!(
            "scores {:?} do not match {} labels",
            scores.shape(),
            truth.len()
        )));
    }
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    if let Some(&bad) = truth.iter().find(|&&t| t >= c) {
        return Err(Error::domain(format!("label {bad} outside {c} classes")));
    }
    let data = scores.data();
    let mut total = 0.0;
    let mut counted = 0;
    for k in 0..c {
        let col: Vec<f64> = (0..n).map(|i| data[i * c + k] as f64).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        if let Some(a) = roc_auc_binary(&col, &pos) {
            total += a;
            counted += 1;
        }
    }
    Ok((counted > 0).then(|| total / counted as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Builds a report from class scores `[N, C]` (softmax probabilities).
    pub fn from_scores(scores: &Tensor, truth: &[usize]) -> Result<Self> {
        if scores.rank() != 2 {
            return Err(Error::shape("scores must be [N, C]"));
        }
        let c = scores.shape()[1];
        let pred: Vec<usize> = scores.data().chunks(c).map(argmax).collect();
        let mut report = Self::from_predictions(&pred, truth, c)?;
        report.auc = roc_auc_macro_ovr(scores, truth)?;
        Ok(report)
    }

    pub fn from_predictions(pred: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        let confusion = confusion(pred, truth, classes)?;
        let (precision, recall, f1) = prf_from_confusion(&confusion);
        Ok(MetricsReport {
            accuracy: accuracy(pred, truth)?,
            auc: None,
            f1,
            precision,
            recall,
            confusion,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header `accuracy,auc,f1,precision,recall` and one row; an absent AUC
    /// is an empty cell. The confusion matrix is JSON-only.
    pub fn to_csv(&self) -> String {
        let auc = self.auc.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "accuracy,auc,f1,precision,recall\n{},{},{},{},{}\n",
            self.accuracy, auc, self.f1, self.precision, self.recall
        )
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
