//! JSON manifest plus raw little-endian `f32` feature blobs.
//!
//! ```json
//! {
//!   "version": 1,
//!   "num_tasks": 5, "num_actions": 12,
//!   "dims": {"obs": 16, "text": 16},
//!   "samples": [
//!     {"task": 0, "actions": [3, 7, 1], "feature_file": "samples.features.bin",
//!      "offsets": {"obs_start": 0, "obs_goal": 16, "text_start": 32, "text_goal": 48},
//!      "dims": {"obs": 16, "text": 16}}
//!   ]
//! }
//! ```
//!
//! Offsets count `f32` values from the start of the feature file, which is
//! resolved relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, Sample, SampleSet};
use crate::autodiff::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub obs: usize,
    pub text: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offsets {
    pub obs_start: u64,
    pub obs_goal: u64,
    pub text_start: u64,
    pub text_goal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task: usize,
    pub actions: Vec<usize>,
    pub feature_file: String,
    pub offsets: Offsets,
    pub dims: Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub num_tasks: usize,
    pub num_actions: usize,
    pub dims: Dims,
    pub samples: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn feature_path(manifest: &Path) -> (PathBuf, String) {
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("samples")
        .trim_end_matches(".manifest")
        .to_string();
    let name = format!("{stem}.features.bin");
    (manifest.with_file_name(&name), name)
}

/// Writes `set` as `path` plus a sibling `<stem>.features.bin`.
pub fn write_manifest(path: &Path, set: &SampleSet) -> Result<(), DatasetError> {
    let (blob_path, blob_name) = feature_path(path);
    let dims = Dims {
        obs: set.obs_dim,
        text: set.text_dim,
    };
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(set.samples.len());
    let push = |blob: &mut Vec<u8>, v: &[f64]| -> u64 {
        let at = (blob.len() / 4) as u64;
        for x in v {
            blob.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        at
    };
    for s in &set.samples {
        if s.obs_start.len() != set.obs_dim || s.text_start.len() != set.text_dim {
            return Err(DatasetError::DimMismatch(format!(
                "sample has obs {} / text {}, set declares {} / {}",
                s.obs_start.len(),
                s.text_start.len(),
                set.obs_dim,
                set.text_dim
            )));
        }
        let offsets = Offsets {
            obs_start: push(&mut blob, &s.obs_start),
            obs_goal: push(&mut blob, &s.obs_goal),
            text_start: push(&mut blob, &s.text_start),
            text_goal: push(&mut blob, &s.text_goal),
        };
        entries.push(ManifestEntry {
            task: s.task,
            actions: s.actions.clone(),
            feature_file: blob_name.clone(),
            offsets,
            dims,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        num_tasks: set.num_tasks,
        num_actions: set.num_actions,
        dims,
        samples: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&blob_path, &blob).map_err(io_err(&blob_path))?;
    write_atomic(path, &json).map_err(io_err(path))?;
    Ok(())
}

fn read_slice(blob: &[f32], file: &str, offset: u64, len: usize) -> Result<Vec<f64>, DatasetError> {
    let needed = offset + len as u64;
    if needed > blob.len() as u64 {
        return Err(DatasetError::Truncated {
            file: file.to_string(),
            needed,
            available: blob.len() as u64,
        });
    }
    Ok(blob[offset as usize..needed as usize].iter().map(|v| *v as f64).collect())
}

/// Loads a manifest and the feature blobs it references.
pub fn read_manifest(path: &Path) -> Result<SampleSet, DatasetError> {
    let text = fs::read(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DatasetError::Invalid(format!("unsupported manifest version {}", manifest.version)));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut blobs: HashMap<String, Vec<f32>> = HashMap::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for (i, e) in manifest.samples.iter().enumerate() {
        if e.dims != manifest.dims {
            return Err(DatasetError::DimMismatch(format!(
                "entry {i} declares {:?}, header declares {:?}",
                e.dims, manifest.dims
            )));
        }
        if e.task >= manifest.num_tasks || e.actions.iter().any(|a| *a >= manifest.num_actions) {
            return Err(DatasetError::Invalid(format!("entry {i} has a label out of range")));
        }
        if e.actions.len() < 2 {
            return Err(DatasetError::Invalid(format!("entry {i} has fewer than 2 actions")));
        }
        if !blobs.contains_key(&e.feature_file) {
            let blob_path = dir.join(&e.feature_file);
            let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
            if bytes.len() % 4 != 0 {
                return Err(DatasetError::Misaligned {
                    file: e.feature_file.clone(),
                    len: bytes.len() as u64,
                });
            }
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blobs.insert(e.feature_file.clone(), values);
        }
        let blob = &blobs[&e.feature_file];
        let f = e.feature_file.as_str();
        samples.push(Sample {
            task: e.task,
            actions: e.actions.clone(),
            obs_start: read_slice(blob, f, e.offsets.obs_start, e.dims.obs)?,
            obs_goal: read_slice(blob, f, e.offsets.obs_goal, e.dims.obs)?,
            text_start: read_slice(blob, f, e.offsets.text_start, e.dims.text)?,
            text_goal: read_slice(blob, f, e.offsets.text_goal, e.dims.text)?,
        });
    }
    Ok(SampleSet {
        num_tasks: manifest.num_tasks,
        num_actions: manifest.num_actions,
        obs_dim: manifest.dims.obs,
        text_dim: manifest.dims.text,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{curate_corpus, generate_corpus, CorpusConfig, CurationMode};

    fn small_set(n: usize) -> SampleSet {
        let cfg = CorpusConfig {
            videos_per_task: 2,
            ..Default::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let mut set = curate_corpus(&corpus, 3, CurationMode::Pdpp).unwrap();
        set.samples.truncate(n);
        set
    }

    #[test]
    fn roundtrip_within_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.manifest.json");
        let set = small_set(10);
        write_manifest(&path, &set).unwrap();
        assert!(dir.path().join("samples.features.bin").exists());
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!((back.num_tasks, back.num_actions, back.obs_dim), (5, 12, 16));
        for (a, b) in set.samples.iter().zip(&back.samples) {
            assert_eq!(a.actions, b.actions);
            assert_eq!(a.task, b.task);
            let pairs = [
                (&a.obs_start, &b.obs_start),
                (&a.obs_goal, &b.obs_goal),
                (&a.text_start, &b.text_start),
                (&a.text_goal, &b.text_goal),
            ];
            for (x, y) in pairs {
                for (u, v) in x.iter().zip(y) {
                    assert!((u - v).abs() <= 1e-6, "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn truncated_feature_file_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.manifest.json");
        write_manifest(&path, &small_set(3)).unwrap();
        let blob = dir.path().join("samples.features.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_manifest(&path), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn empty_manifest_gives_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        fs::write(
            &path,
            r#"{"version":1,"num_tasks":2,"num_actions":3,"dims":{"obs":4,"text":2},"samples":[]}"#,
        )
        .unwrap();
        let set = read_manifest(&path).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.obs_dim, 4);
    }

    #[test]
    fn malformed_json_and_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{not json").unwrap();
        assert!(matches!(read_manifest(&bad), Err(DatasetError::Json(_))));

        let path = dir.path().join("samples.manifest.json");
        write_manifest(&path, &small_set(2)).unwrap();
        let mut m: Manifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        m.samples[1].dims.obs = 15;
        fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(read_manifest(&path), Err(DatasetError::DimMismatch(_))));
    }
}
