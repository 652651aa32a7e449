//! Round metrics, held-out evaluation and the CSV / NDJSON writers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::losses::{predict, predict_balanced, LabelDistribution};
use crate::nn::ModelPart;

use super::ProtocolVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Plain argmax.
    pub acc: f64,
    pub bal_acc: f64,
    pub per_class_acc: Vec<f64>,
    /// Argmax of `s_y − log P(y)` with the global training prior.
    pub balanced_rule_acc: f64,
    pub balanced_rule_bal_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    pub variant: ProtocolVariant,
    pub participants: Vec<usize>,
    /// Mean training loss over the round's local iterations; `None` when no
    /// iteration ran.
    pub train_loss: Option<f64>,
    /// Present on evaluation rounds only.
    pub eval: Option<EvalMetrics>,
    pub grad_norm_s: Option<f64>,
    pub grad_norm_c: Option<f64>,
    pub up_bytes: u64,
    pub down_bytes: u64,
}

/// Per-class accuracy of `predictions`; classes absent from `labels` get
/// `None`.
fn per_class(predictions: &[usize], labels: &[usize], num_classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

fn overall(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Mean of the per-class accuracies over classes present in the labels.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    let present: Vec<f64> = per_class(predictions, labels, num_classes)
        .into_iter()
        .flatten()
        .collect();
    present.iter().sum::<f64>() / present.len() as f64
}

pub fn evaluate(model: &ModelPart, test: &Dataset, train_prior: &LabelDistribution) -> Result<EvalMetrics> {
    let (logits, _) = model.forward(test.features())?;
    let m = test.num_classes();
    let labels = test.labels();
    let plain = predict(&logits);
    let balanced = predict_balanced(&logits, train_prior)?;
    Ok(EvalMetrics {
        acc: overall(&plain, labels),
        bal_acc: balanced_accuracy(&plain, labels, m),
        per_class_acc: per_class(&plain, labels, m)
            .into_iter()
            .map(|a| a.unwrap_or(0.0))
            .collect(),
        balanced_rule_acc: overall(&balanced, labels),
        balanced_rule_bal_acc: balanced_accuracy(&balanced, labels, m),
    })
}

/// Column header for [`metrics_csv`].
pub fn csv_header(num_classes: usize) -> String {
    let mut h = String::from("t,variant,loss,acc,bal_acc");
    for y in 0..num_classes {
        let _ = write!(h, ",acc_class_{y}");
    }
    h.push_str(",grad_norm_s,grad_norm_c,up_bytes,down_bytes");
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn csv_row(m: &RoundMetrics, num_classes: usize) -> String {
    let mut row = format!("{},{},{}", m.t, m.variant, opt(m.train_loss));
    match &m.eval {
        Some(e) => {
            let _ = write!(row, ",{:?},{:?}", e.acc, e.bal_acc);
            for a in &e.per_class_acc {
                let _ = write!(row, ",{a:?}");
            }
        }
        None => row.push_str(&",".repeat(2 + num_classes)),
    }
    let _ = write!(
        row,
        ",{},{},{},{}",
        opt(m.grad_norm_s),
        opt(m.grad_norm_c),
        m.up_bytes,
        m.down_bytes
    );
    row
}

/// Full CSV table, one row per round.
pub fn metrics_csv(rows: &[RoundMetrics], num_classes: usize) -> String {
    let mut out = csv_header(num_classes);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(r, num_classes));
        out.push('\n');
    }
    out
}

/// Newline-delimited JSON, one record per round.
pub fn metrics_ndjson(rows: &[RoundMetrics]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| crate::Error::Serde(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(eval: bool) -> RoundMetrics {
        RoundMetrics {
            t: 3,
            variant: ProtocolVariant::Scala,
            participants: vec![0, 2],
            train_loss: Some(0.5),
            eval: eval.then(|| EvalMetrics {
                acc: 0.75,
                bal_acc: 0.7,
                per_class_acc: vec![0.9, 0.5],
                balanced_rule_acc: 0.7,
                balanced_rule_bal_acc: 0.72,
            }),
            grad_norm_s: Some(1.25),
            grad_norm_c: None,
            up_bytes: 100,
            down_bytes: 80,
        }
    }

    #[test]
    fn balanced_accuracy_is_mean_of_per_class() {
        let labels = [0, 0, 0, 1];
        let preds = [0, 0, 0, 0];
        assert_eq!(overall(&preds, &labels), 0.75);
        assert_eq!(balanced_accuracy(&preds, &labels, 2), 0.5);
        // class 2 is absent and does not count
        assert_eq!(balanced_accuracy(&preds, &labels, 3), 0.5);
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            csv_header(2),
            "t,variant,loss,acc,bal_acc,acc_class_0,acc_class_1,grad_norm_s,grad_norm_c,up_bytes,down_bytes"
        );
        assert_eq!(csv_row(&sample(true), 2), "3,scala,0.5,0.75,0.7,0.9,0.5,1.25,,100,80");
        assert_eq!(csv_row(&sample(false), 2), "3,scala,0.5,,,,,1.25,,100,80");
        let cols = csv_header(2).split(',').count();
        assert_eq!(csv_row(&sample(false), 2).split(',').count(), cols);
    }

    #[test]
    fn ndjson_one_record_per_line() {
        let text = metrics_ndjson(&[sample(true), sample(false)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: RoundMetrics = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back, sample(false));
        assert!(lines[1].contains("\"grad_norm_c\":null"));
    }
}
