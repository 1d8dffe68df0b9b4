//! Prediction files, synthetic datasets and splitting.

mod io;
mod split;
mod synth;

pub use io::{
    load_dataset, load_predictions, read_predictions, save_dataset, save_predictions, write_binary_predictions,
    write_dataset, write_predictions, PredictionKind, BINARY_MAGIC,
};
pub use split::{split, SplitRatios, Splits};
pub use synth::{generate_synthetic, Generator, Synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {y} out of range for {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}
