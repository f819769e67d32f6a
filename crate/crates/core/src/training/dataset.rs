//! Self-consistent synthetic training samples.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::morphable::{
    compose_pose, euler_to_rotation, extract_landmarks, reconstruct_posed, BasisSet, EulerAngles, MorphParams,
    PointSet, Pose, PARAM_DIM,
};
use crate::tensor::Tensor;

/// Side of the square observation grid.
pub const OBSERVATION_SIDE: usize = 32;
/// Half-width of the x-y window the observation covers.
pub const OBSERVATION_EXTENT: f64 = 2.5;
/// Gaussian splat radius in pixels.
pub const SPLAT_SIGMA_PX: f64 = 1.0;

pub const COEFF_STD: f64 = 0.5;
pub const YAW_RANGE: f64 = 90.0;
pub const PITCH_RANGE: f64 = 30.0;
pub const ROLL_RANGE: f64 = 30.0;
pub const TRANSLATION_RANGE: f64 = 0.2;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

/// Tolerance of the landmark self-consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    /// `[side × side]` heatmap of the x-y projected groundtruth landmarks.
    pub observation: Tensor,
    pub gt_params: MorphParams,
    pub gt_landmarks: PointSet,
    /// Angles the pose was generated from.
    pub gt_euler: EulerAngles,
}

/// Gaussian-splat rasterization of the x-y projection of `points` onto a
/// `side × side` grid covering `[−E, E]²` (row 0 at `y = +E`).
pub fn rasterize(points: &PointSet, side: usize) -> Tensor {
    let pixel = 2.0 * OBSERVATION_EXTENT / side as f64;
    let inv = 1.0 / (2.0 * (SPLAT_SIGMA_PX * pixel).powi(2));
    let mut data = vec![0.0; side * side];
    for r in 0..side {
        let y = OBSERVATION_EXTENT - (r as f64 + 0.5) * pixel;
        for c in 0..side {
            let x = -OBSERVATION_EXTENT + (c as f64 + 0.5) * pixel;
            data[r * side + c] = points
                .points
                .iter()
                .map(|p| (-((p[0] - x).powi(2) + (p[1] - y).powi(2)) * inv).exp())
                .sum();
        }
    }
    Tensor::matrix(side, side, data).expect("sized")
}

/// Draws `n` samples: coefficients `N(0, 0.5²)`, yaw `U(±90°)`, pitch and
/// roll `U(±30°)`, translation `U(±0.2)³`, scale `U(0.9, 1.1)`.
pub fn generate_dataset(basis: &BasisSet, seed: u64, n: usize) -> Result<Vec<TrainingSample>> {
    if n == 0 {
        return Err(Error::contract("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeff = Normal::new(0.0, COEFF_STD).expect("valid std");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let shape: Vec<f64> = (0..crate::morphable::SHAPE_DIM).map(|_| coeff.sample(&mut rng)).collect();
        let expr: Vec<f64> = (0..crate::morphable::EXPR_DIM).map(|_| coeff.sample(&mut rng)).collect();
        let euler = EulerAngles::new(
            rng.gen_range(-YAW_RANGE..YAW_RANGE),
            rng.gen_range(-PITCH_RANGE..PITCH_RANGE),
            rng.gen_range(-ROLL_RANGE..ROLL_RANGE),
        );
        let t = Vector3::new(
            rng.gen_range(-TRANSLATION_RANGE..TRANSLATION_RANGE),
            rng.gen_range(-TRANSLATION_RANGE..TRANSLATION_RANGE),
            rng.gen_range(-TRANSLATION_RANGE..TRANSLATION_RANGE),
        );
        let s = rng.gen_range(SCALE_RANGE.0..SCALE_RANGE.1);
        let pose = Pose::new(s, euler_to_rotation(&euler), t)?;
        let params = MorphParams::new(compose_pose(&pose).to_vec(), shape, expr)?;
        let landmarks = extract_landmarks(&reconstruct_posed(basis, &params)?, basis)?;
        out.push(TrainingSample {
            id: sample_id(i),
            observation: rasterize(&landmarks, OBSERVATION_SIDE),
            gt_params: params,
            gt_landmarks: landmarks,
            gt_euler: euler,
        });
    }
    Ok(out)
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

/// Checks that the stored landmarks are exactly what the stored parameters
/// reconstruct, and that the observation is their rasterization.
pub fn verify_sample(basis: &BasisSet, sample: &TrainingSample) -> Result<()> {
    sample.gt_params.validate()?;
    let expect = extract_landmarks(&reconstruct_posed(basis, &sample.gt_params)?, basis)?;
    if expect.len() != sample.gt_landmarks.len() {
        return Err(Error::contract(format!(
            "sample {}: {} landmarks, basis gives {}",
            sample.id,
            sample.gt_landmarks.len(),
            expect.len()
        )));
    }
    let worst = expect
        .to_flat()
        .iter()
        .zip(sample.gt_landmarks.to_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if !(worst <= CONSISTENCY_TOL) {
        return Err(Error::contract(format!(
            "sample {}: landmarks deviate from the reconstruction by {worst:e}",
            sample.id
        )));
    }
    let side = sample.observation.rows();
    let obs = rasterize(&sample.gt_landmarks, side);
    let worst = obs
        .data()
        .iter()
        .zip(sample.observation.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if !(worst <= 1e-9) {
        return Err(Error::contract(format!(
            "sample {}: observation deviates from the landmark rasterization by {worst:e}",
            sample.id
        )));
    }
    Ok(())
}

const DATASET_FORMAT: &str = "facegeom-dataset-v1";

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    offset: usize,
    euler_deg: EulerAngles,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    seed: Option<u64>,
    count: usize,
    n_landmarks: usize,
    observation_side: usize,
    /// Per-sample blob record: observation, 62 parameters, landmarks.
    record_len: usize,
    basis: String,
    blob: String,
    samples: Vec<SampleEntry>,
}

/// Writes samples as a JSON manifest plus an f64 blob; `basis_file` is the
/// file name of the basis manifest stored alongside.
pub fn save_dataset(manifest: &Path, samples: &[TrainingSample], seed: Option<u64>, basis_file: &str) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::contract("empty dataset"))?;
    let side = first.observation.rows();
    let n_l = first.gt_landmarks.len();
    let record_len = side * side + PARAM_DIM + 3 * n_l;
    let blob = io::blob_path(manifest);
    let mut data = Vec::with_capacity(samples.len() * record_len);
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if s.observation.len() != side * side || s.gt_landmarks.len() != n_l {
            return Err(Error::contract(format!("sample {} has inconsistent sizes", s.id)));
        }
        entries.push(SampleEntry {
            id: s.id.clone(),
            offset: data.len(),
            euler_deg: s.gt_euler,
        });
        data.extend_from_slice(s.observation.data());
        data.extend(s.gt_params.to_vec());
        data.extend(s.gt_landmarks.to_flat());
    }
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        seed,
        count: samples.len(),
        n_landmarks: n_l,
        observation_side: side,
        record_len,
        basis: basis_file.into(),
        blob: io::file_name(&blob),
        samples: entries,
    };
    io::write_json(manifest, &header)?;
    io::write_blob(&blob, &data)
}

/// A loaded dataset together with the basis it references.
pub struct DatasetFile {
    pub samples: Vec<TrainingSample>,
    pub basis: BasisSet,
    pub seed: Option<u64>,
}

pub fn load_dataset(manifest: &Path) -> Result<DatasetFile> {
    let header: DatasetHeader = io::read_json(manifest)?;
    if header.format != DATASET_FORMAT {
        return Err(Error::format(format!("unexpected dataset format '{}'", header.format)));
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let basis = BasisSet::load(&dir.join(&header.basis))?;
    let data = io::read_blob(&dir.join(&header.blob))?;
    let side = header.observation_side;
    let n_l = header.n_landmarks;
    if header.record_len != side * side + PARAM_DIM + 3 * n_l || header.samples.len() != header.count {
        return Err(Error::format("dataset header is inconsistent"));
    }
    if data.len() != header.count * header.record_len {
        return Err(Error::format(format!(
            "dataset blob holds {} values, expected {}",
            data.len(),
            header.count * header.record_len
        )));
    }
    let mut samples = Vec::with_capacity(header.count);
    for e in header.samples {
        let rec = data
            .get(e.offset..e.offset + header.record_len)
            .ok_or_else(|| Error::format(format!("sample {} runs past the blob", e.id)))?;
        let obs_len = side * side;
        samples.push(TrainingSample {
            id: e.id,
            observation: Tensor::matrix(side, side, rec[..obs_len].to_vec())?,
            gt_params: MorphParams::from_slice(&rec[obs_len..obs_len + PARAM_DIM])?,
            gt_landmarks: PointSet::from_flat(&rec[obs_len + PARAM_DIM..])?,
            gt_euler: e.euler_deg,
        });
    }
    Ok(DatasetFile {
        samples,
        basis,
        seed: header.seed,
    })
}
