use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pcld::{load_cloud, save_cloud};
use super::{Dataset, DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::model::Task;

pub const MANIFEST_FILE: &str = "dataset.json";
pub const MANIFEST_VERSION: u32 = 1;

/// JSON index of a dataset directory. Paths are relative to the directory
/// holding the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub task: Task,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub class_names: Vec<String>,
    /// Category name to its part labels (segmentation only).
    #[serde(default)]
    pub part_labels: BTreeMap<String, Vec<u16>>,
    #[serde(default)]
    pub part_names: Vec<String>,
    /// Split name to PCLD files.
    pub splits: BTreeMap<String, Vec<String>>,
}

/// Writes every cloud as `<split>/NNNNNN.pcld` under `dir` plus the manifest.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, seed: u64, splits: &[&Dataset]) -> Result<DatasetManifest> {
    let first = splits.first().ok_or_else(|| Error::contract("no splits to write"))?;
    let mut files = BTreeMap::new();
    for ds in splits {
        let sub = dir.join(ds.split.name());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut names = Vec::with_capacity(ds.len());
        for (i, cloud) in ds.samples.iter().enumerate() {
            let rel = format!("{}/{i:06}.pcld", ds.split.name());
            save_cloud(&dir.join(&rel), cloud)?;
            names.push(rel);
        }
        files.insert(ds.split.name().to_string(), names);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        task: first.task,
        seed,
        spec: spec.clone(),
        class_names: first.class_names.clone(),
        part_labels: if first.task == Task::Segmentation { first.part_map() } else { BTreeMap::new() },
        part_names: first.part_names.clone(),
        splits: files,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

impl DatasetManifest {
    /// Reads a manifest given either its file or its directory.
    pub fn load(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
        let file = manifest_path(path);
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: file.clone(),
            offset: 0,
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: file,
                offset: 0,
                msg: format!("unsupported manifest version {}", m.version),
            });
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, root))
    }
}

/// Loads one split of a dataset directory and validates its labels.
pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let (m, root) = DatasetManifest::load(path)?;
    let files = m
        .splits
        .get(split.name())
        .ok_or_else(|| Error::Data(format!("dataset has no `{}` split", split.name())))?;
    let samples = files.iter().map(|f| load_cloud(&root.join(f))).collect::<Result<Vec<_>>>()?;
    let part_sets = match m.task {
        Task::Classification => Vec::new(),
        Task::Segmentation => m
            .class_names
            .iter()
            .map(|c| {
                m.part_labels
                    .get(c)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no part labels for category `{c}`")))
            })
            .collect::<Result<_>>()?,
    };
    let ds = Dataset {
        task: m.task,
        split,
        class_names: m.class_names,
        part_sets,
        part_names: m.part_names,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}
