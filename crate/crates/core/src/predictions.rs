//! Per-sample inference outputs on disk.
//!
//! For a sample `id` a prediction directory holds `id.json` (landmarks and
//! Euler angles), `id.params.json` (the 62 regressed parameters) and
//! optionally `id.obj` (the posed mesh).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::morphable::{params_to_euler, EulerAngles, MorphParams, PointSet};
use crate::networks::Prediction;

const PARAMS_SUFFIX: &str = ".params.json";

/// `{"id", "coarse", "refined", "euler_deg": {yaw, pitch, roll}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub id: String,
    pub coarse: Vec<[f64; 3]>,
    pub refined: Vec<[f64; 3]>,
    pub euler_deg: EulerAngles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub id: String,
    pub pose: Vec<f64>,
    pub shape: Vec<f64>,
    pub expr: Vec<f64>,
}

/// Everything stored for one predicted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredPrediction {
    pub id: String,
    pub coarse: PointSet,
    pub refined: PointSet,
    pub euler: EulerAngles,
    pub params: MorphParams,
}

impl StoredPrediction {
    /// Derives the Euler angles from the predicted pose block.
    pub fn from_prediction(id: impl Into<String>, p: &Prediction) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            coarse: p.coarse.clone(),
            refined: p.refined.clone(),
            euler: params_to_euler(&p.params)?,
            params: p.params.clone(),
        })
    }
}

pub fn landmarks_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

pub fn params_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{PARAMS_SUFFIX}"))
}

pub fn obj_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.obj"))
}

pub fn write_landmarks(dir: &Path, p: &StoredPrediction) -> Result<PathBuf> {
    let path = landmarks_path(dir, &p.id);
    io::write_json(
        &path,
        &LandmarkFile {
            id: p.id.clone(),
            coarse: p.coarse.points.clone(),
            refined: p.refined.points.clone(),
            euler_deg: p.euler,
        },
    )?;
    Ok(path)
}

pub fn write_params(dir: &Path, p: &StoredPrediction) -> Result<PathBuf> {
    let path = params_path(dir, &p.id);
    io::write_json(
        &path,
        &ParamsFile {
            id: p.id.clone(),
            pose: p.params.pose.clone(),
            shape: p.params.shape.clone(),
            expr: p.params.expr.clone(),
        },
    )?;
    Ok(path)
}

/// Sample ids with a parameter file in `dir`, sorted.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(PARAMS_SUFFIX) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Reads the landmark and parameter files of `id`.
pub fn read_prediction(dir: &Path, id: &str) -> Result<StoredPrediction> {
    let l: LandmarkFile = io::read_json(&landmarks_path(dir, id))?;
    let p: ParamsFile = io::read_json(&params_path(dir, id))?;
    if l.id != id || p.id != id {
        return Err(Error::format(format!(
            "prediction files for '{id}' carry ids '{}' and '{}'",
            l.id, p.id
        )));
    }
    Ok(StoredPrediction {
        id: id.to_string(),
        coarse: PointSet::new(l.coarse)?,
        refined: PointSet::new(l.refined)?,
        euler: l.euler_deg,
        params: MorphParams::new(p.pose, p.shape, p.expr)?,
    })
}

/// Reads every prediction in `dir`, keyed by id.
pub fn read_all(dir: &Path) -> Result<BTreeMap<String, StoredPrediction>> {
    list_ids(dir)?
        .into_iter()
        .map(|id| read_prediction(dir, &id).map(|p| (id, p)))
        .collect()
}
