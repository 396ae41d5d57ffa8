//! Synthetic gesture scenes, train/test splits by person, and evaluation metrics.

pub mod gesture;
pub mod metrics;
pub mod pgm;

use nalgebra::DMatrix;

pub use gesture::{generate_scene, render_gesture, GestureSpec, GestureStyle, PersonProfile, GESTURE_CLASSES};
pub use metrics::{classification_report, ssim, ConfusionMatrix};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use crate::error::{config_err, ensure_dim, Error, Result};
use crate::physics::SceneGrid;
use crate::rng::derive_seed;

/// An ordered collection of equally sized scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: usize,
    height: usize,
    scenes: Vec<SceneGrid>,
}

impl Dataset {
    pub fn new(width: usize, height: usize, scenes: Vec<SceneGrid>) -> Result<Self> {
        for s in &scenes {
            ensure_dim("dataset scene width", width, s.width())?;
            ensure_dim("dataset scene height", height, s.height())?;
        }
        Ok(Self { width, height, scenes })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scenes(&self) -> &[SceneGrid] {
        &self.scenes
    }

    /// Class labels; unlabeled scenes are a data error.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.scenes
            .iter()
            .enumerate()
            .map(|(k, s)| s.label().ok_or_else(|| Error::Data(format!("scene {k} has no label"))))
            .collect()
    }

    /// Scenes as the columns of an `N × len` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.columns(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn columns(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = self.width * self.height;
        let mut m = DMatrix::zeros(n, indices.len());
        for (c, &k) in indices.iter().enumerate() {
            m.column_mut(c).copy_from_slice(self.scenes[k].values());
        }
        m
    }
}

/// Stratified split sizes and the disjoint person sets of each split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub n_train_per_class: usize,
    pub n_val_per_class: usize,
    pub n_test_per_class: usize,
    pub train_persons: Vec<u64>,
    pub test_persons: Vec<u64>,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_train_per_class: 100,
            n_val_per_class: 100,
            n_test_per_class: 100,
            train_persons: vec![1, 2, 3, 4, 5],
            test_persons: vec![6],
            width: 32,
            height: 32,
            classes: GESTURE_CLASSES,
        }
    }
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;
const SPLIT_VAL: u64 = 2;

fn build_split(params: &DatasetParams, persons: &[u64], per_class: usize, split: u64, seed: u64) -> Result<Dataset> {
    let mut scenes = Vec::with_capacity(per_class * params.classes);
    for i in 0..per_class {
        for class_id in 0..params.classes {
            let person_id = persons[i % persons.len()];
            let s = derive_seed(seed, &[split, class_id as u64, i as u64]);
            scenes.push(generate_scene(
                GestureSpec { class_id, person_id },
                params.width,
                params.height,
                s,
            )?);
        }
    }
    Dataset::new(params.width, params.height, scenes)
}

/// Builds the train split from `train_persons` and the test split from the
/// held-out `test_persons`. Persons are assigned round-robin within each class.
pub fn make_dataset(params: &DatasetParams, seed: u64) -> Result<(Dataset, Dataset)> {
    check_params(params)?;
    let train = build_split(
        params,
        &params.train_persons,
        params.n_train_per_class,
        SPLIT_TRAIN,
        seed,
    )?;
    let test = build_split(params, &params.test_persons, params.n_test_per_class, SPLIT_TEST, seed)?;
    Ok((train, test))
}

/// Train, validation and test splits. Validation scenes come from the
/// training persons under their own seeds; the test person stays unseen.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn make_splits(params: &DatasetParams, seed: u64) -> Result<DataSplits> {
    let (train, test) = make_dataset(params, seed)?;
    let val = build_split(params, &params.train_persons, params.n_val_per_class, SPLIT_VAL, seed)?;
    Ok(DataSplits { train, val, test })
}

fn check_params(params: &DatasetParams) -> Result<()> {
    if params.test_persons.is_empty() {
        return Err(config_err(
            "dataset.test_persons",
            "at least one test person is required",
        ));
    }
    if params.train_persons.is_empty() {
        return Err(config_err(
            "dataset.train_persons",
            "at least one training person is required",
        ));
    }
    if let Some(p) = params.train_persons.iter().find(|p| params.test_persons.contains(p)) {
        return Err(config_err(
            "dataset.test_persons",
            format!("person {p} appears in both splits"),
        ));
    }
    if params.classes == 0 || params.classes > GESTURE_CLASSES {
        return Err(config_err(
            "dataset.classes",
            format!("must be in 1..={GESTURE_CLASSES}, got {}", params.classes),
        ));
    }
    Ok(())
}
