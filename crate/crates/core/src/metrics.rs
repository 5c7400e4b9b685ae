//! Logloss and AUC over a dataset.

use std::fmt;

use crate::ingest::{Dataset, Label};
use crate::model::FieldWiseModel;
use crate::train::logloss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub logloss: f64,
    /// `None` when the data holds a single class.
    pub auc: Option<f64>,
    pub n: usize,
}

impl EvalReport {
    fn auc_str(&self) -> String {
        self.auc.map_or_else(|| "undefined".to_string(), |a| a.to_string())
    }

    /// `key=value` lines, one per metric.
    pub fn key_values(&self) -> String {
        format!("logloss={}\nauc={}\nn={}\n", self.logloss, self.auc_str(), self.n)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "logloss={} auc={} n={}", self.logloss, self.auc_str(), self.n)
    }
}

pub fn mean_logloss(model: &FieldWiseModel, data: &Dataset) -> f64 {
    let total: f64 = data
        .instances()
        .iter()
        .map(|inst| logloss(model.predict(inst), inst.label.sign()))
        .sum();
    total / data.len() as f64
}

pub fn scores(model: &FieldWiseModel, data: &Dataset) -> Vec<f64> {
    data.instances().iter().map(|inst| model.predict(inst)).collect()
}

pub fn labels(data: &Dataset) -> Vec<Label> {
    data.instances().iter().map(|inst| inst.label).collect()
}

pub fn evaluate(model: &FieldWiseModel, data: &Dataset) -> EvalReport {
    let scores = scores(model, data);
    let labels = labels(data);
    let total: f64 = scores.iter().zip(&labels).map(|(&s, l)| logloss(s, l.sign())).sum();
    EvalReport {
        logloss: total / data.len() as f64,
        auc: auc(&scores, &labels),
        n: data.len(),
    }
}

/// Area under the ROC curve as the normalized Mann–Whitney statistic.
///
/// Ties get average ranks, which counts a tied positive/negative pair as one half.
/// Returns `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l == Label::Positive).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == Label::Positive)
            .count();
        rank_sum += avg_rank * tied_pos as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}
