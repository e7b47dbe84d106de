//! On-disk layouts.
//!
//! A dataset directory holds `index.json` plus one `sample_NNNNN.raw` per
//! sample (little-endian `f32`, `2 x D x H x W`). Each index entry records the
//! label, the generating perturbation, the source case and a CRC-32 of the
//! raw bytes.
//!
//! A case directory holds `fixed.json`/`fixed.raw`, `moving.json`/`moving.raw`
//! and `meta.json` with the surface points and ground-truth transform.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PhantomCase;
use crate::error::{Error, Result};
use crate::nn::TrainingSample;
use crate::volgeom::{read_volume, write_volume, Mat4, RigidParams, SurfacePointSet};

pub const DATASET_VERSION: u32 = 1;
const INDEX: &str = "index.json";
const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub label: f64,
    pub params: RigidParams,
    pub case: usize,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    /// Volume dims `[nx, ny, nz]`; every sample has 2 channels.
    pub dims: [usize; 3],
    pub samples: Vec<DatasetEntry>,
}

pub fn write_dataset(dir: impl AsRef<Path>, samples: &[TrainingSample]) -> Result<DatasetIndex> {
    let dir = dir.as_ref();
    let Some(first) = samples.first() else {
        return Err(Error::invalid("refusing to write an empty dataset"));
    };
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.dims != first.dims {
            return Err(Error::invalid("samples have mixed dimensions"));
        }
        let file = format!("sample_{i:05}.raw");
        let bytes: Vec<u8> = s.input.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), &bytes)?;
        entries.push(DatasetEntry {
            file,
            label: s.label,
            params: s.params,
            case: s.case,
            crc32: crc32fast::hash(&bytes),
        });
    }
    let index = DatasetIndex { version: DATASET_VERSION, dims: first.dims, samples: entries };
    fs::write(dir.join(INDEX), serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

pub fn read_index(dir: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = dir.as_ref().join(INDEX);
    let index: DatasetIndex = serde_json::from_slice(&fs::read(&path)?)?;
    if index.version != DATASET_VERSION {
        return Err(Error::format(path, format!("dataset version {} unsupported", index.version)));
    }
    Ok(index)
}

/// Loads one sample, verifying its checksum.
pub fn read_sample(dir: impl AsRef<Path>, index: &DatasetIndex, entry: &DatasetEntry) -> Result<TrainingSample> {
    let path: PathBuf = dir.as_ref().join(&entry.file);
    let bytes = fs::read(&path)?;
    if crc32fast::hash(&bytes) != entry.crc32 {
        return Err(Error::Checksum { path });
    }
    let expected = 2 * index.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    Ok(TrainingSample {
        input: bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        dims: index.dims,
        label: entry.label,
        params: entry.params,
        case: entry.case,
    })
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<TrainingSample>> {
    let dir = dir.as_ref();
    let index = read_index(dir)?;
    index.samples.iter().map(|e| read_sample(dir, &index, e)).collect()
}

#[derive(Serialize, Deserialize)]
struct CaseMeta {
    surface: SurfacePointSet,
    ground_truth: Mat4,
}

pub fn write_case(dir: impl AsRef<Path>, case: &PhantomCase) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_volume(dir.join("fixed.json"), &case.fixed)?;
    write_volume(dir.join("moving.json"), &case.moving)?;
    let meta = CaseMeta { surface: case.surface.clone(), ground_truth: case.ground_truth };
    fs::write(dir.join(META), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_case(dir: impl AsRef<Path>) -> Result<PhantomCase> {
    let dir = dir.as_ref();
    let fixed = read_volume(dir.join("fixed.json"))?;
    let moving = read_volume(dir.join("moving.json"))?;
    if !fixed.same_grid(&moving) {
        return Err(Error::format(dir, "fixed and moving volumes are on different grids"));
    }
    let meta: CaseMeta = serde_json::from_slice(&fs::read(dir.join(META))?)?;
    // Re-validate after deserialisation.
    let surface = SurfacePointSet::new(meta.surface.points().to_vec())?;
    Ok(PhantomCase { fixed, moving, surface, ground_truth: meta.ground_truth })
}

/// Case ids (directory names) under `root` that contain a case, sorted.
pub fn list_cases(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.path().join(META).is_file() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
