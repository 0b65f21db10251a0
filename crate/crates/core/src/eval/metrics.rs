use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("confusion matrix has no samples")]
    Empty,
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub total: f64,
    /// Recall per class; `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.iter().all(|r| r.len() == counts.len()), "square matrix");
        Self { counts }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), EvalError> {
        let n_classes = self.n_classes();
        for index in [truth, predicted] {
            if index >= n_classes {
                return Err(EvalError::ClassOutOfRange { index, n_classes });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Total accuracy `trace / total` and per-class recall.
    pub fn accuracies(&self) -> Result<Accuracies, EvalError> {
        let total = self.total();
        if total == 0 {
            return Err(EvalError::Empty);
        }
        let per_class = self
            .counts
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Accuracies {
            total: self.trace() as f64 / total as f64,
            per_class,
        })
    }
}
