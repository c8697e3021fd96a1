//! Accuracy, macro precision/recall/F1, confusion matrix and the
//! noise-transition diagnostic.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffcore::Tensor;
use crate::error::{CoudaError, Result};
use crate::model::{CoudaModel, Peer};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerClass {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<PerClass>,
    /// Rows = truth, cols = predicted.
    pub confusion: Vec<Vec<u64>>,
    /// Mean diagonal of the estimated noise transition over evaluation
    /// features; absent when the noise layer is not evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_diag: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(CoudaError::shape(
            "confusion_matrix",
            format!("{} predictions vs {} labels", pred.len(), truth.len()),
        ));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (p, t) in pred.iter().zip(truth) {
        if *p >= k || *t >= k {
            return Err(CoudaError::domain(
                "confusion_matrix",
                format!("index ({}, {}) out of range for k {}", t, p, k),
            ));
        }
        m[*t][*p] += 1;
    }
    Ok(m)
}

/// Per-class precision/recall/F1 and their unweighted means. 0/0 cases are
/// defined as 0.
pub fn macro_metrics(confusion: &[Vec<u64>]) -> (f64, f64, f64, Vec<PerClass>) {
    let k = confusion.len();
    let mut per_class = Vec::with_capacity(k);
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    for c in 0..k {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(PerClass { precision, recall, f1, support });
    }
    let mean = |f: fn(&PerClass) -> f64| {
        per_class.iter().map(f).sum::<f64>() / k as f64
    };
    (
        mean(|c| c.precision),
        mean(|c| c.recall),
        mean(|c| c.f1),
        per_class,
    )
}

fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    probs
        .data
        .chunks(probs.cols)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                // strict: ties go to the lowest index
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Evaluate a model on a dataset carrying clean labels. Predictions come
/// from the ensemble average, or from peer 1 alone for the single-network
/// ablation. `with_noise_diag` adds the mean estimated-transition diagonal
/// over evaluation features.
pub fn evaluate(
    model: &CoudaModel,
    dataset: &Dataset,
    single_network: bool,
    with_noise_diag: bool,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(CoudaError::Data("cannot evaluate on an empty dataset".into()));
    }
    let x = dataset.x_matrix();
    let probs = if single_network {
        model.predict_peer(Peer::One, &x)?
    } else {
        model.ensemble_predict(&x)?
    };
    let pred = argmax_rows(&probs);
    let truth = dataset.clean_labels();
    let confusion = confusion_matrix(&pred, &truth, dataset.k)?;
    let (macro_precision, macro_recall, macro_f1, per_class) = macro_metrics(&confusion);
    let n: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..dataset.k).map(|c| confusion[c][c]).sum();
    let noise_diag = if with_noise_diag {
        let f = model.forward_features(Peer::One, &x)?;
        let k = dataset.k;
        let mut acc = 0.0;
        for i in 0..f.rows {
            let t = model.noise_transition(f.row_slice(i))?;
            let diag: f64 = (0..k).map(|c| t.data[c * k + c]).sum();
            acc += diag / k as f64;
        }
        Some(acc / f.rows as f64)
    } else {
        None
    };
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        macro_precision,
        macro_recall,
        macro_f1,
        per_class,
        confusion,
        noise_diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, LabeledExample};
    use crate::model::ModelConfig;

    #[test]
    fn confusion_perfect_prediction_is_diagonal() {
        let m = confusion_matrix(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn confusion_empty_input_is_zero_matrix() {
        let m = confusion_matrix(&[], &[], 2).unwrap();
        assert_eq!(m, vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn confusion_counts_exactly() {
        let m = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(m, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn confusion_length_mismatch_is_error() {
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn macro_metrics_perfect() {
        let (p, r, f1, per) = macro_metrics(&[vec![3, 0], vec![0, 2]]);
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
        assert!(per.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn macro_metrics_worked_example() {
        // confusion [[2,0],[1,1]]: precision (2/3, 1), recall (1, 0.5),
        // f1 (0.8, 2/3), macro F1 = 11/15.
        let (p, r, f1, per) = macro_metrics(&[vec![2, 0], vec![1, 1]]);
        assert!((per[0].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((per[1].precision - 1.0).abs() < 1e-12);
        assert!((per[0].recall - 1.0).abs() < 1e-12);
        assert!((per[1].recall - 0.5).abs() < 1e-12);
        assert!((per[0].f1 - 0.8).abs() < 1e-12);
        assert!((per[1].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1 - 11.0 / 15.0).abs() < 1e-12);
        assert!((p - 5.0 / 6.0).abs() < 1e-12);
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_counts_as_zero() {
        let (_, _, f1, per) = macro_metrics(&[vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 0]]);
        assert_eq!(per[2].precision, 0.0);
        assert_eq!(per[2].recall, 0.0);
        assert_eq!(per[2].f1, 0.0);
        assert!((f1 - (1.0 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_between_min_and_max_per_class() {
        let (_, _, f1, per) = macro_metrics(&[vec![5, 1, 0], vec![2, 3, 1], vec![0, 2, 4]]);
        let min = per.iter().map(|c| c.f1).fold(f64::INFINITY, f64::min);
        let max = per.iter().map(|c| c.f1).fold(f64::NEG_INFINITY, f64::max);
        assert!(f1 >= min && f1 <= max);
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let conf = confusion_matrix(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 1], 3).unwrap();
        let trace: u64 = (0..3).map(|i| conf[i][i]).sum();
        let total: u64 = conf.iter().flatten().sum();
        assert_eq!(trace, 3);
        assert_eq!(total, 5);
    }

    #[test]
    fn metrics_invariant_under_class_permutation() {
        let pred = [0, 1, 2, 1, 0, 2, 2];
        let truth = [0, 1, 1, 1, 2, 2, 0];
        let (p1, r1, f1a, _) = macro_metrics(&confusion_matrix(&pred, &truth, 3).unwrap());
        let perm = [2, 0, 1];
        let pred_p: Vec<usize> = pred.iter().map(|i| perm[*i]).collect();
        let truth_p: Vec<usize> = truth.iter().map(|i| perm[*i]).collect();
        let (p2, r2, f2, _) = macro_metrics(&confusion_matrix(&pred_p, &truth_p, 3).unwrap());
        assert!((p1 - p2).abs() < 1e-12);
        assert!((r1 - r2).abs() < 1e-12);
        assert!((f1a - f2).abs() < 1e-12);
    }

    fn toy_dataset() -> Dataset {
        let examples = vec![
            (vec![0.1, 0.2], 0),
            (vec![0.4, -0.2], 0),
            (vec![1.0, 0.5], 1),
            (vec![-0.4, 0.8], 2),
        ]
        .into_iter()
        .map(|(x, y)| LabeledExample { x, z: None, y_clean: y, domain: Domain::Target })
        .collect();
        Dataset { d_x: 2, k: 3, examples }
    }

    #[test]
    fn zero_model_predicts_class_zero_everywhere() {
        let cfg = ModelConfig {
            d_x: 2,
            d_f: 4,
            k: 3,
            hidden: vec![4],
            disc_hidden: vec![4],
            beta_noise_init: 0.0,
        };
        let mut model = CoudaModel::init(&cfg, 1);
        for (_, t) in model.named_params_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let ds = toy_dataset();
        let report = evaluate(&model, &ds, false, false).unwrap();
        // uniform probabilities, argmax ties to class 0: accuracy = prior of 0
        assert!((report.accuracy - 0.5).abs() < 1e-12);
        assert_eq!(report.confusion[0][0], 2);
    }

    #[test]
    fn evaluate_is_deterministic_and_counts_sum() {
        let cfg = ModelConfig::default();
        let model = CoudaModel::init(&cfg, 12);
        let ds = toy_dataset();
        let r1 = evaluate(&model, &ds, false, true).unwrap();
        let r2 = evaluate(&model, &ds, false, true).unwrap();
        assert_eq!(r1, r2);
        let total: u64 = r1.confusion.iter().flatten().sum();
        assert_eq!(total, ds.len() as u64);
        assert!(r1.noise_diag.unwrap() > 0.0);
    }

    #[test]
    fn single_network_uses_peer_one_alone() {
        let cfg = ModelConfig::default();
        let model = CoudaModel::init(&cfg, 30);
        let ds = toy_dataset();
        let x = ds.x_matrix();
        let y1 = model.predict_peer(Peer::One, &x).unwrap();
        let report = evaluate(&model, &ds, true, false).unwrap();
        let pred = argmax_rows(&y1);
        let conf = confusion_matrix(&pred, &ds.clean_labels(), 3).unwrap();
        assert_eq!(report.confusion, conf);
    }

    #[test]
    fn report_serializes_snake_case() {
        let cfg = ModelConfig::default();
        let model = CoudaModel::init(&cfg, 2);
        let report = evaluate(&model, &toy_dataset(), false, false).unwrap();
        let json = report.to_json();
        for field in ["accuracy", "macro_precision", "macro_recall", "macro_f1", "per_class", "confusion"] {
            assert!(json.contains(field), "missing {}", field);
        }
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
