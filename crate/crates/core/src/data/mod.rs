//! Labeled datasets: loaders, a synthetic generator and client partitioning.

mod csv;
mod idx;
mod partition;
mod synth;

use crate::error::{Error, Result};
use crate::nn::OneHot;
use crate::tensor::TensorBuffer;

pub use self::csv::{load_csv, CsvOptions};
pub use idx::{load_idx, parse_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition, Partition, PartitionScheme, PartitionSpec};
pub use synth::{synth_blobs, BlobSpec};

/// A borrowed `(features, class index)` pair.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a TensorBuffer,
    pub label: usize,
}

/// Ordered examples with class-index labels; features share one shape and
/// lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Vec<TensorBuffer>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledSet {
    pub fn new(features: Vec<TensorBuffer>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![features.len()],
                found: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(first) = features.first() {
            for f in &features[1..] {
                f.check_shape(first.shape())?;
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn empty(classes: usize) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[TensorBuffer] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: &self.features[i],
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, &label)| Sample { x, label })
    }

    pub fn target(&self, i: usize) -> OneHot {
        OneHot::new(self.labels[i], self.classes).expect("labels validated on construction")
    }

    /// New set holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Count of examples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

impl LabeledSet {
    /// Same examples under a different class count.
    pub fn with_classes(self, classes: usize) -> Result<Self> {
        Self::new(self.features, self.labels, classes)
    }
}
