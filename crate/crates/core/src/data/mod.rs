//! Datasets, one-hot targets, stratified splits and file formats.

pub mod format;
pub mod tabular;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};

pub use format::{load_features, load_labels, save_features, save_labels, Dtype};
pub use tabular::{load_csv, save_csv, LabelColumn};

/// Feature columns paired with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d×N`, one sample per column.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::shape(
                "Dataset::new",
                format!(
                    "{} feature columns but {} labels",
                    features.ncols(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} is not below class count {num_classes}"),
            ));
        }
        ensure_finite(&features, "dataset features")?;
        Ok(Dataset {
            features,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn load(
        features: impl AsRef<std::path::Path>,
        labels: impl AsRef<std::path::Path>,
    ) -> Result<Self> {
        let x = load_features(features)?;
        let (y, classes) = load_labels(labels)?;
        Dataset::new(x, y, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn targets(&self) -> Matrix {
        one_hot(&self.labels, self.num_classes)
    }

    /// Columns at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// `c×N` indicator matrix. Panics if a label is out of range.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(classes, labels.len());
    for (j, &l) in labels.iter().enumerate() {
        assert!(l < classes, "label {l} out of range for {classes} classes");
        m[(l, j)] = 1.0;
    }
    m
}

/// Per-class stratified split. Each class contributes
/// `round(fraction·count)` samples to the training side.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::param(
            "train_fraction",
            format!("must be in [0, 1], got {train_fraction}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in per_class {
        members.shuffle(&mut rng);
        let take = (train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Isotropic Gaussian clusters, one per class, sharing unit noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBlobs {
    pub classes: usize,
    pub dim: usize,
    /// Standard deviation of the class centers around the origin.
    pub center_spread: f64,
    pub noise: f64,
}

impl GaussianBlobs {
    /// 10 classes in 64 dimensions.
    pub fn benchmark() -> Self {
        GaussianBlobs {
            classes: 10,
            dim: 64,
            center_spread: 0.35,
            noise: 1.0,
        }
    }

    /// Draws centers once, then balanced train and test sets around them.
    pub fn generate(&self, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::param(
                "GaussianBlobs",
                "classes and dim must be >= 1",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = Matrix::from_fn(self.dim, self.classes, |_, _| {
            self.center_spread * rng.sample::<f64, _>(StandardNormal)
        });
        let train = self.sample(&centers, n_train, &mut rng)?;
        let test = self.sample(&centers, n_test, &mut rng)?;
        Ok((train, test))
    }

    fn sample(&self, centers: &Matrix, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        labels.shuffle(rng);
        let mut x = Matrix::zeros(self.dim, n);
        for (j, &l) in labels.iter().enumerate() {
            for r in 0..self.dim {
                let z: f64 = StandardNormal.sample(rng);
                x[(r, j)] = centers[(r, l)] + self.noise * z;
            }
        }
        Dataset::new(x, labels, self.classes)
    }
}
