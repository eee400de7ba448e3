use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub balanced_acc: f64,
    pub weighted_f1: f64,
    pub top1: f64,
    /// `confusion[truth][pred]`
    pub confusion: Vec<Vec<usize>>,
}

pub fn classification_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<ClassificationMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid("prediction and truth lengths must match and be non-empty"));
    }
    if pred.iter().chain(truth).any(|&c| c >= num_classes) {
        return Err(Error::invalid("class index out of range"));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let n = pred.len() as f64;
    let mut recalls = Vec::new();
    let mut weighted_f1 = 0.0;
    for c in 0..num_classes {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let tp = confusion[c][c] as f64;
        if support == 0 {
            log::warn!("class {c} is absent from the truth labels and is left out of balanced accuracy");
            continue;
        }
        let recall = tp / support as f64;
        recalls.push(recall);
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        weighted_f1 += f1 * support as f64 / n;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(ClassificationMetrics {
        balanced_acc: recalls.iter().sum::<f64>() / recalls.len() as f64,
        weighted_f1,
        top1: correct as f64 / n,
        confusion,
    })
}
