//! Datasets, reference features and soft-label sets, plus the synthetic
//! generator and split management.

mod io;
mod split;
mod synth;

pub use io::{load_dataset, load_soft_labels, read_dataset, read_soft_labels, save_dataset, save_soft_labels, write_dataset, write_soft_labels};
pub use split::{parts_from_indices, split, SplitIndices, SplitParts, SplitPlan};
pub use synth::{perturb_synth_ref, synth_purchase, SynthParams};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Continuous,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Binary => "binary",
            FeatureKind::Continuous => "continuous",
        }
    }
}

/// Labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    kind: FeatureKind,
    /// Row positions in the corpus this set was carved from, when known.
    /// Not serialized; used to detect overlapping attack sets.
    origin: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize, kind: FeatureKind) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be positive"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {n_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if kind == FeatureKind::Binary && features.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary dataset holds a value outside {0, 1}"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            kind,
            origin: None,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn origin(&self) -> Option<&[usize]> {
        self.origin.as_deref()
    }

    pub(crate) fn with_origin(mut self, origin: Vec<usize>) -> Self {
        debug_assert_eq!(origin.len(), self.len());
        self.origin = Some(origin);
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i).to_slice().expect("standard layout")
    }

    /// Rows at `idx`, in that order. Origin indices follow the rows.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            kind: self.kind,
            origin: self.origin.as_ref().map(|o| idx.iter().map(|&i| o[i]).collect()),
        }
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits rows into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.len());
        let a: Vec<usize> = (0..at).collect();
        let b: Vec<usize> = (at..self.len()).collect();
        (self.subset(&a), self.subset(&b))
    }

    /// Drops the labels. This is the only way reference data enters the
    /// distillation pipeline.
    pub fn unlabeled(&self) -> FeatureMatrix {
        FeatureMatrix {
            features: self.features.clone(),
            kind: self.kind,
        }
    }
}

/// Unlabeled feature rows (reference data).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    features: Array2<f64>,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(features: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if kind == FeatureKind::Binary && features.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary matrix holds a value outside {0, 1}"));
        }
        Ok(Self { features, kind })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i).to_slice().expect("standard layout")
    }

    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            features: self.features.select(Axis(0), idx),
            kind: self.kind,
        }
    }
}

/// Reference inputs paired with the teacher's temperature-scaled
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    inputs: Array2<f64>,
    soft_labels: Array2<f64>,
    teacher_temperature: f64,
}

impl SoftLabelSet {
    pub fn new(inputs: Array2<f64>, soft_labels: Array2<f64>, teacher_temperature: f64) -> Result<Self> {
        if inputs.nrows() != soft_labels.nrows() {
            return Err(Error::invalid(format!(
                "{} input rows but {} soft-label rows",
                inputs.nrows(),
                soft_labels.nrows()
            )));
        }
        if !(teacher_temperature > 0.0) || !teacher_temperature.is_finite() {
            return Err(Error::invalid("teacher temperature must be positive"));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input value"));
        }
        for (i, row) in soft_labels.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("soft-label row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("soft-label row {i} sums to {s}")));
            }
        }
        Ok(Self {
            inputs,
            soft_labels,
            teacher_temperature,
        })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn soft_labels(&self) -> &Array2<f64> {
        &self.soft_labels
    }

    pub fn teacher_temperature(&self) -> f64 {
        self.teacher_temperature
    }

    pub fn n_classes(&self) -> usize {
        self.soft_labels.ncols()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
