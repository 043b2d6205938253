//! Classification metrics: confusion matrix, accuracy, per-class and
//! macro-averaged precision/recall/F1.

use std::fmt::Write as _;

use super::runner::EncodedSample;
use super::TrainError;
use crate::layers::Model;
use crate::scalar::Real;

/// Evaluation summary over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Total number of samples counted.
    pub samples: u64,
}

/// Derives all summary statistics from a square confusion matrix.
///
/// Per-class ratios with a zero denominator (a class never predicted, or
/// absent from the data) are reported as 0 rather than NaN.
pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> EvalMetrics {
    let n = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..n).map(|c| confusion[c][c]).sum();
    let mut precision = vec![0.0; n];
    let mut recall = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    for c in 0..n {
        let col: u64 = (0..n).map(|r| confusion[r][c]).sum();
        let row: u64 = confusion[c].iter().sum();
        let tp = confusion[c][c] as f64;
        if col > 0 {
            precision[c] = tp / col as f64;
        }
        if row > 0 {
            recall[c] = tp / row as f64;
        }
        if precision[c] + recall[c] > 0.0 {
            f1[c] = 2.0 * precision[c] * recall[c] / (precision[c] + recall[c]);
        }
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    EvalMetrics {
        accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        confusion,
        samples: total,
    }
}

/// Runs the model over a split and tallies predictions against labels.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    data: &[EncodedSample<F>],
) -> Result<EvalMetrics, TrainError> {
    let n_class = model.n_class;
    let mut confusion = vec![vec![0u64; n_class]; n_class];
    for sample in data {
        if sample.label >= n_class {
            return Err(TrainError::Config(format!(
                "sample labelled class {} but the model has {} classes",
                sample.label, n_class
            )));
        }
        let out = model.forward(&sample.x)?;
        confusion[sample.label][out.prediction] += 1;
    }
    Ok(metrics_from_confusion(confusion))
}

/// Plain-text rendering of the confusion matrix and summary lines.
pub fn metrics_text(metrics: &EvalMetrics) -> String {
    let n = metrics.confusion.len();
    let mut out = String::new();
    let width = metrics
        .confusion
        .iter()
        .flatten()
        .map(|v| v.to_string().len())
        .max()
        .unwrap_or(1)
        .max(4);
    let _ = write!(out, "{:>8}", "true\\pred");
    for c in 0..n {
        let _ = write!(out, " {c:>width$}");
    }
    out.push('\n');
    for r in 0..n {
        let _ = write!(out, "{r:>8}");
        for c in 0..n {
            let _ = write!(out, " {:>width$}", metrics.confusion[r][c]);
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "accuracy {:.4} over {} samples",
        metrics.accuracy, metrics.samples
    );
    let _ = writeln!(
        out,
        "macro precision {:.4}  recall {:.4}  f1 {:.4}",
        metrics.macro_precision, metrics.macro_recall, metrics.macro_f1
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_two_class_example() {
        let m = metrics_from_confusion(vec![vec![8, 2], vec![4, 6]]);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.precision[0] - 8.0 / 12.0).abs() < 1e-12);
        assert!((m.precision[1] - 6.0 / 8.0).abs() < 1e-12);
        assert!((m.recall[0] - 0.8).abs() < 1e-12);
        assert!((m.recall[1] - 0.6).abs() < 1e-12);
        assert!((m.macro_precision - (8.0 / 12.0 + 0.75) / 2.0).abs() < 1e-12);
        let f1_0 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
        assert!((m.f1[0] - f1_0).abs() < 1e-12);
        assert_eq!(m.samples, 20);
    }

    #[test]
    fn perfect_predictions() {
        let m = metrics_from_confusion(vec![vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 7]]);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn zero_denominators_report_zero() {
        // Class 1 never occurs and is never predicted: all of its ratios are 0.
        let m = metrics_from_confusion(vec![vec![4, 0], vec![0, 0]]);
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.recall[1], 0.0);
        assert_eq!(m.f1[1], 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn text_rendering_contains_rows() {
        let m = metrics_from_confusion(vec![vec![8, 2], vec![4, 6]]);
        let text = metrics_text(&m);
        assert!(text.contains("accuracy 0.7000 over 20 samples"), "{text}");
        assert!(text.contains("macro precision"), "{text}");
    }
}
