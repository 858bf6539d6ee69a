//! Synthetic labelled point clouds, dataset splits and their on-disk form.

mod manifest;
pub mod pcld;
pub mod shapes;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::Task;
use crate::rng::{substream, Stream};

pub use manifest::{load_dataset, write_dataset, DatasetManifest, MANIFEST_FILE};
pub use pcld::{load_cloud, save_cloud};
pub use shapes::{gen_part_shape, gen_shape, sample_surface, PartKind, ShapeKind, PART_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labelled clouds of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub split: Split,
    /// Shape classes (classification) or object categories (segmentation).
    pub class_names: Vec<String>,
    /// Part labels of each category, indexed like `class_names`. Empty for
    /// classification.
    pub part_sets: Vec<Vec<u16>>,
    /// Names of the global part labels. Empty for classification.
    pub part_names: Vec<String>,
    pub samples: Vec<PointCloud>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of output classes a network needs for this dataset.
    pub fn num_outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.class_names.len(),
            Task::Segmentation => self.part_names.len(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_names.len()];
        for s in &self.samples {
            if let Some(l) = s.cloud_label() {
                if let Some(slot) = h.get_mut(l as usize) {
                    *slot += 1;
                }
            }
        }
        h
    }

    /// Part labels allowed for `sample`'s category.
    pub fn part_set_of(&self, sample: &PointCloud) -> Result<&[u16]> {
        let cat = sample
            .cloud_label()
            .ok_or_else(|| Error::Data("segmentation sample without a category label".into()))?;
        self.part_sets
            .get(cat as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("category {cat} is not in the dataset")))
    }

    /// Checks labels against the class list and part sets.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            let label = s
                .cloud_label()
                .ok_or_else(|| Error::Data(format!("sample {i} has no cloud label")))?;
            if label as usize >= self.class_names.len() {
                return Err(Error::Data(format!("sample {i} has class {label} out of range")));
            }
            if self.task == Task::Segmentation {
                let parts = self.part_set_of(s)?;
                let labels = s
                    .point_labels()
                    .ok_or_else(|| Error::Data(format!("sample {i} has no point labels")))?;
                if let Some(bad) = labels.iter().find(|l| !parts.contains(l)) {
                    return Err(Error::Data(format!(
                        "sample {i}: part label {bad} is outside its category's part set {parts:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Category name to part labels, for manifests and reports.
    pub fn part_map(&self) -> BTreeMap<String, Vec<u16>> {
        self.class_names.iter().cloned().zip(self.part_sets.iter().cloned()).collect()
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    /// Number of shape kinds (up to 4) or part categories (up to 3), taken
    /// in catalogue order.
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub points: usize,
    /// Jitter for classification shapes.
    pub noise: f64,
}

impl DatasetSpec {
    pub fn classification() -> Self {
        DatasetSpec {
            task: Task::Classification,
            classes: 4,
            per_class_train: 50,
            per_class_test: 25,
            points: 256,
            noise: 0.02,
        }
    }

    pub fn segmentation() -> Self {
        DatasetSpec {
            task: Task::Segmentation,
            classes: 3,
            per_class_train: 40,
            per_class_test: 20,
            points: 512,
            noise: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let max = match self.task {
            Task::Classification => ShapeKind::ALL.len(),
            Task::Segmentation => PartKind::ALL.len(),
        };
        if self.classes < 2 || self.classes > max {
            return Err(Error::Config(format!("classes must lie in 2..={max} for this task")));
        }
        if self.per_class_train == 0 {
            return Err(Error::Config("per-class training count must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of sample `j` of class `class` in `split`. Train and test use
/// different index ranges so no cloud can appear in both.
fn sample_index(split: Split, class: usize, j: usize) -> u64 {
    let s = match split {
        Split::Train => 0u64,
        Split::Test => 1,
    };
    s << 48 | (class as u64) << 32 | j as u64
}

fn generate_split(spec: &DatasetSpec, split: Split, seed: u64) -> Result<Dataset> {
    let per = match split {
        Split::Train => spec.per_class_train,
        Split::Test => spec.per_class_test,
    };
    let mut samples = Vec::with_capacity(per * spec.classes);
    for class in 0..spec.classes {
        for j in 0..per {
            let mut rng = substream(seed, Stream::Data, sample_index(split, class, j));
            samples.push(match spec.task {
                Task::Classification => gen_shape(ShapeKind::ALL[class], spec.points, spec.noise, &mut rng)?,
                Task::Segmentation => gen_part_shape(PartKind::ALL[class], spec.points, &mut rng)?,
            });
        }
    }
    let (class_names, part_sets, part_names) = match spec.task {
        Task::Classification => (
            ShapeKind::ALL[..spec.classes].iter().map(|k| k.name().to_string()).collect(),
            Vec::new(),
            Vec::new(),
        ),
        Task::Segmentation => (
            PartKind::ALL[..spec.classes].iter().map(|k| k.name().to_string()).collect(),
            PartKind::ALL[..spec.classes].iter().map(|k| k.part_labels().to_vec()).collect(),
            PART_NAMES.iter().map(|s| s.to_string()).collect(),
        ),
    };
    Ok(Dataset { task: spec.task, split, class_names, part_sets, part_names, samples })
}

/// Generates class-balanced train and test splits. Every sample has its own
/// random stream, so the result is a pure function of `spec` and `seed`.
pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    Ok((generate_split(spec, Split::Train, seed)?, generate_split(spec, Split::Test, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes_and_balance() {
        let mut spec = DatasetSpec::classification();
        spec.points = 32;
        let (train, test) = make_dataset(&spec, 1).unwrap();
        assert_eq!((train.len(), test.len()), (200, 100));
        assert_eq!(train.class_histogram(), vec![50; 4]);
        assert_eq!(test.class_histogram(), vec![25; 4]);
        train.validate().unwrap();
    }

    #[test]
    fn splits_share_no_cloud() {
        let spec = DatasetSpec { per_class_train: 10, per_class_test: 10, points: 32, ..DatasetSpec::classification() };
        let (train, test) = make_dataset(&spec, 4).unwrap();
        for a in &train.samples {
            assert!(test.samples.iter().all(|b| a.coords() != b.coords()));
        }
    }

    #[test]
    fn generation_is_a_function_of_the_seed() {
        let spec = DatasetSpec { per_class_train: 2, per_class_test: 1, points: 64, ..DatasetSpec::segmentation() };
        assert_eq!(make_dataset(&spec, 3).unwrap(), make_dataset(&spec, 3).unwrap());
        assert_ne!(make_dataset(&spec, 3).unwrap().0, make_dataset(&spec, 4).unwrap().0);
    }

    #[test]
    fn segmentation_labels_respect_part_sets() {
        let spec = DatasetSpec { per_class_train: 2, per_class_test: 1, points: 64, ..DatasetSpec::segmentation() };
        let (mut train, _) = make_dataset(&spec, 0).unwrap();
        train.validate().unwrap();
        assert_eq!(train.num_outputs(), 7);
        let bad = train.samples[0].clone();
        let mut labels = bad.point_labels().unwrap().to_vec();
        labels[0] = 6;
        train.samples[0] = bad.with_point_labels(labels).unwrap();
        assert!(matches!(train.validate(), Err(Error::Data(_))));
    }
}
