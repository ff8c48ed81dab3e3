//! Attribution metrics: confusion matrix, per-class precision/recall/F1,
//! macro F1, and the relative F1 change between watermarked and clean runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

use super::logreg::{ClassifierModel, LabeledDataset};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// confusion[true][predicted].
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<Scalar>,
    pub recall: Vec<Scalar>,
    pub f1: Vec<Scalar>,
    pub macro_f1: Scalar,
    pub class_labels: Vec<String>,
}

/// Metrics from raw predicted/true index pairs.
pub fn evaluate_labels(
    predicted: &[usize],
    actual: &[usize],
    num_classes: usize,
) -> Result<EvalMetrics> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.iter().chain(actual).any(|&l| l >= num_classes) {
        return Err(Error::InvalidInput("label index out of range".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        confusion[a][p] += 1;
    }
    let mut precision = vec![0.0; num_classes];
    let mut recall = vec![0.0; num_classes];
    let mut f1 = vec![0.0; num_classes];
    for k in 0..num_classes {
        let tp = confusion[k][k];
        let fp: usize = (0..num_classes).filter(|&a| a != k).map(|a| confusion[a][k]).sum();
        let fn_: usize = (0..num_classes).filter(|&p| p != k).map(|p| confusion[k][p]).sum();
        precision[k] = if tp + fp > 0 { tp as Scalar / (tp + fp) as Scalar } else { 0.0 };
        recall[k] = if tp + fn_ > 0 { tp as Scalar / (tp + fn_) as Scalar } else { 0.0 };
        f1[k] = if precision[k] + recall[k] > 0.0 {
            2.0 * precision[k] * recall[k] / (precision[k] + recall[k])
        } else {
            0.0
        };
    }
    let macro_f1 = f1.iter().sum::<Scalar>() / num_classes as Scalar;
    Ok(EvalMetrics {
        confusion,
        precision,
        recall,
        f1,
        macro_f1,
        class_labels: (0..num_classes).map(|k| format!("class{k}")).collect(),
    })
}

pub fn evaluate(model: &ClassifierModel, test: &LabeledDataset) -> Result<EvalMetrics> {
    test.validate()?;
    if test.class_labels != model.class_labels {
        return Err(Error::InvalidInput(
            "test labels do not match the classifier's classes".into(),
        ));
    }
    let predicted: Vec<usize> = test.features.iter().map(|x| model.predict(x)).collect();
    let mut m = evaluate_labels(&predicted, &test.labels, model.num_classes())?;
    m.class_labels = model.class_labels.clone();
    Ok(m)
}

/// Relative F1 change of the watermarked run against the clean baseline.
pub fn f1_change(f1_wm: Scalar, f1_nw: Scalar) -> Result<Scalar> {
    if f1_nw <= 0.0 {
        return Err(Error::UndefinedBaseline(format!(
            "relative F1 change needs a positive baseline, got {f1_nw}"
        )));
    }
    Ok((f1_wm - f1_nw) / f1_nw)
}
