//! Morphable-model basis: mean face, PCA shape/expression bases and the
//! landmark index list, plus a deterministic synthetic generator.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{MorphParams, EXPR_DIM, SHAPE_DIM};
use super::pointset::PointSet;
use super::pose::Pose;
use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_LANDMARKS: usize = 68;
pub const DEFAULT_VERTICES: usize = 2048;
pub const MIN_VERTICES: usize = 128;

/// Semi-axes (x, y, z) of the synthetic mean face.
pub const ELLIPSOID_AXES: [f64; 3] = [1.0, 1.3, 0.8];

/// Root-mean-square per-vertex displacement of a unit coefficient, as a
/// fraction of the mesh diameter.
pub const BASIS_PERTURBATION: f64 = 0.05;

/// Landmark slots of the outer eye corners in the 68-point ordering.
pub const EYE_CORNER_SLOTS: [usize; 2] = [36, 45];

#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    n_vertices: usize,
    mean: Vec<f64>,
    /// Row-major `[3·n_vertices × 40]`.
    shape_basis: Vec<f64>,
    /// Row-major `[3·n_vertices × 10]`.
    expr_basis: Vec<f64>,
    landmark_indices: Vec<usize>,
    faces: Vec<[usize; 3]>,
    seed: Option<u64>,
    /// Factor the orthonormal columns were multiplied by (1 for external data).
    basis_scale: f64,
}

impl BasisSet {
    pub fn new(
        n_vertices: usize,
        mean: Vec<f64>,
        shape_basis: Vec<f64>,
        expr_basis: Vec<f64>,
        landmark_indices: Vec<usize>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let b = Self {
            n_vertices,
            mean,
            shape_basis,
            expr_basis,
            landmark_indices,
            faces,
            seed: None,
            basis_scale: 1.0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = 3 * self.n_vertices;
        let check = |name: &str, len: usize, want: usize| {
            if len != want {
                Err(Error::contract(format!("{name} has {len} values, expected {want}")))
            } else {
                Ok(())
            }
        };
        check("mean", self.mean.len(), rows)?;
        check("shape basis", self.shape_basis.len(), rows * SHAPE_DIM)?;
        check("expression basis", self.expr_basis.len(), rows * EXPR_DIM)?;
        if self.landmark_indices.is_empty() {
            return Err(Error::contract("no landmark indices"));
        }
        if self.landmark_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("landmark indices must be strictly increasing"));
        }
        if let Some(&last) = self.landmark_indices.last() {
            if last >= self.n_vertices {
                return Err(Error::contract(format!(
                    "landmark index {last} out of range for {} vertices",
                    self.n_vertices
                )));
            }
        }
        if self.faces.iter().flatten().any(|&i| i >= self.n_vertices) {
            return Err(Error::contract("face index out of range"));
        }
        let finite = self
            .mean
            .iter()
            .chain(&self.shape_basis)
            .chain(&self.expr_basis)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("basis data".into()));
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmark_indices.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn shape_basis(&self) -> &[f64] {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &[f64] {
        &self.expr_basis
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn basis_scale(&self) -> f64 {
        self.basis_scale
    }

    /// Column `j` of the shape basis (length `3·n_vertices`).
    pub fn shape_column(&self, j: usize) -> Vec<f64> {
        self.shape_basis.iter().skip(j).step_by(SHAPE_DIM).copied().collect()
    }

    pub fn expr_column(&self, j: usize) -> Vec<f64> {
        self.expr_basis.iter().skip(j).step_by(EXPR_DIM).copied().collect()
    }

    /// `max |GᵢⱼG / scale² − δᵢⱼ|` over the Gram matrix of all 50 columns.
    pub fn orthonormality_error(&self) -> f64 {
        let cols: Vec<Vec<f64>> = (0..SHAPE_DIM)
            .map(|j| self.shape_column(j))
            .chain((0..EXPR_DIM).map(|j| self.expr_column(j)))
            .collect();
        let s2 = self.basis_scale * self.basis_scale;
        let mut worst = 0.0f64;
        for i in 0..cols.len() {
            for j in i..cols.len() {
                let g: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>() / s2;
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - want).abs());
            }
        }
        worst
    }

    /// Vertex indices of the two outer eye corners.
    pub fn eye_corner_vertices(&self) -> Result<[usize; 2]> {
        let [a, b] = EYE_CORNER_SLOTS;
        match (self.landmark_indices.get(a), self.landmark_indices.get(b)) {
            (Some(&i), Some(&j)) => Ok([i, j]),
            _ => Err(Error::contract(format!(
                "eye-corner slots {EYE_CORNER_SLOTS:?} need at least 46 landmarks, have {}",
                self.n_landmarks()
            ))),
        }
    }

    /// Front-most vertex of the mean face (largest z).
    pub fn nose_tip_vertex(&self) -> usize {
        (0..self.n_vertices)
            .max_by(|&a, &b| self.mean[3 * a + 2].total_cmp(&self.mean[3 * b + 2]).then(b.cmp(&a)))
            .expect("basis has vertices")
    }

    /// Mean-face coordinates of the landmark vertices, flattened (`3·N_l`).
    pub fn landmark_mean(&self) -> Vec<f64> {
        self.landmark_indices
            .iter()
            .flat_map(|&v| self.mean[3 * v..3 * v + 3].iter().copied())
            .collect()
    }

    /// Landmark rows of `[U_s | U_e]`, transposed: row-major `[50 × 3·N_l]`.
    pub fn landmark_basis_transposed(&self) -> Vec<f64> {
        let cols = 3 * self.n_landmarks();
        let k = SHAPE_DIM + EXPR_DIM;
        let mut out = vec![0.0; k * cols];
        for (l, &v) in self.landmark_indices.iter().enumerate() {
            for c in 0..3 {
                let row = 3 * v + c;
                for j in 0..SHAPE_DIM {
                    out[j * cols + 3 * l + c] = self.shape_basis[row * SHAPE_DIM + j];
                }
                for j in 0..EXPR_DIM {
                    out[(SHAPE_DIM + j) * cols + 3 * l + c] = self.expr_basis[row * EXPR_DIM + j];
                }
            }
        }
        out
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let blob = io::blob_path(manifest);
        let header = BasisHeader {
            format: BASIS_FORMAT.into(),
            n_vertices: self.n_vertices,
            shape_dim: SHAPE_DIM,
            expr_dim: EXPR_DIM,
            seed: self.seed,
            basis_scale: self.basis_scale,
            landmark_indices: self.landmark_indices.clone(),
            faces: self.faces.clone(),
            blob: io::file_name(&blob),
        };
        let mut data = Vec::with_capacity(self.mean.len() * (1 + SHAPE_DIM + EXPR_DIM));
        data.extend_from_slice(&self.mean);
        data.extend_from_slice(&self.shape_basis);
        data.extend_from_slice(&self.expr_basis);
        io::write_json(manifest, &header)?;
        io::write_blob(&blob, &data)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let header: BasisHeader = io::read_json(manifest)?;
        if header.format != BASIS_FORMAT {
            return Err(Error::format(format!("unexpected basis format '{}'", header.format)));
        }
        if header.shape_dim != SHAPE_DIM || header.expr_dim != EXPR_DIM {
            return Err(Error::format(format!(
                "basis has {}+{} columns, expected {SHAPE_DIM}+{EXPR_DIM}",
                header.shape_dim, header.expr_dim
            )));
        }
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let data = io::read_blob(&dir.join(&header.blob))?;
        let rows = 3 * header.n_vertices;
        let want = rows * (1 + SHAPE_DIM + EXPR_DIM);
        if data.len() != want {
            return Err(Error::format(format!(
                "basis blob holds {} values, expected {want}",
                data.len()
            )));
        }
        let mut b = Self::new(
            header.n_vertices,
            data[..rows].to_vec(),
            data[rows..rows * (1 + SHAPE_DIM)].to_vec(),
            data[rows * (1 + SHAPE_DIM)..].to_vec(),
            header.landmark_indices,
            header.faces,
        )?;
        b.seed = header.seed;
        b.basis_scale = header.basis_scale;
        Ok(b)
    }
}

const BASIS_FORMAT: &str = "facegeom-basis-v1";

#[derive(Serialize, Deserialize)]
struct BasisHeader {
    format: String,
    n_vertices: usize,
    shape_dim: usize,
    expr_dim: usize,
    seed: Option<u64>,
    basis_scale: f64,
    landmark_indices: Vec<usize>,
    faces: Vec<[usize; 3]>,
    blob: String,
}

/// `Mat(M + U_s·α_s + U_e·α_e)` as an `N_v × 3` mesh with the basis faces.
pub fn reconstruct_frontal(basis: &BasisSet, params: &MorphParams) -> Result<PointSet> {
    params.validate()?;
    let rows = 3 * basis.n_vertices;
    let mut flat = basis.mean.clone();
    for (r, out) in flat.iter_mut().enumerate().take(rows) {
        let s = &basis.shape_basis[r * SHAPE_DIM..(r + 1) * SHAPE_DIM];
        let e = &basis.expr_basis[r * EXPR_DIM..(r + 1) * EXPR_DIM];
        *out += s.iter().zip(&params.shape).map(|(u, a)| u * a).sum::<f64>()
            + e.iter().zip(&params.expr).map(|(u, a)| u * a).sum::<f64>();
    }
    let mut ps = PointSet::from_flat(&flat)?;
    ps.faces = Some(basis.faces.clone());
    Ok(ps)
}

/// `R_v = s·P·R_f + t`.
pub fn apply_pose(frontal: &PointSet, pose: &Pose) -> PointSet {
    frontal.transformed(pose)
}

/// Gathers the landmark vertices in `landmark_indices` order.
pub fn extract_landmarks(mesh: &PointSet, basis: &BasisSet) -> Result<PointSet> {
    if mesh.len() != basis.n_vertices {
        return Err(Error::contract(format!(
            "mesh has {} vertices, basis expects {}",
            mesh.len(),
            basis.n_vertices
        )));
    }
    gather(mesh, &basis.landmark_indices)
}

/// Ordered gather of `indices` from `mesh`.
pub fn gather(mesh: &PointSet, indices: &[usize]) -> Result<PointSet> {
    let points = indices
        .iter()
        .map(|&i| {
            mesh.points
                .get(i)
                .copied()
                .ok_or_else(|| Error::contract(format!("index {i} out of range for {} points", mesh.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointSet { points, faces: None })
}

/// Deterministic stand-in for a licensed face model.
///
/// The mean face is a triangulated ellipsoid with semi-axes
/// [`ELLIPSOID_AXES`] (poles on the y axis, face looking down +z). The
/// 50 basis columns are the thin-QR orthonormalization of a seeded Gaussian
/// `3N_v × 50` matrix, split 40/10 and multiplied by
/// `BASIS_PERTURBATION · diameter · sqrt(N_v)`, so a unit coefficient moves
/// vertices by about 5% of the diameter (RMS). The 68 landmarks are the
/// vertices nearest to a Fibonacci spiral on the front hemisphere.
pub fn generate_synthetic_basis(seed: u64, n_vertices: usize) -> Result<BasisSet> {
    if n_vertices < MIN_VERTICES {
        return Err(Error::contract(format!(
            "n_vertices must be at least {MIN_VERTICES}, got {n_vertices}"
        )));
    }
    let (points, faces) = ellipsoid_mesh(n_vertices);
    let landmark_indices = front_landmarks(&points, DEFAULT_LANDMARKS)?;
    let mean: Vec<f64> = points.iter().flatten().copied().collect();

    let rows = 3 * n_vertices;
    let k = SHAPE_DIM + EXPR_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss: Vec<f64> = (0..rows * k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let q = DMatrix::from_row_slice(rows, k, &gauss).qr().q();

    let diameter = 2.0 * ELLIPSOID_AXES.iter().cloned().fold(f64::MIN, f64::max);
    let scale = BASIS_PERTURBATION * diameter * (n_vertices as f64).sqrt();
    let mut shape_basis = Vec::with_capacity(rows * SHAPE_DIM);
    let mut expr_basis = Vec::with_capacity(rows * EXPR_DIM);
    for r in 0..rows {
        for j in 0..SHAPE_DIM {
            shape_basis.push(scale * q[(r, j)]);
        }
        for j in 0..EXPR_DIM {
            expr_basis.push(scale * q[(r, SHAPE_DIM + j)]);
        }
    }
    let mut b = BasisSet::new(n_vertices, mean, shape_basis, expr_basis, landmark_indices, faces)?;
    b.seed = Some(seed);
    b.basis_scale = scale;
    Ok(b)
}

/// Latitude-ring triangulation of the ellipsoid with exactly `n` vertices:
/// two poles on the y axis and rings whose sizes follow `sin(latitude)`.
fn ellipsoid_mesh(n: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let [ax, ay, az] = ELLIPSOID_AXES;
    let interior = n - 2;
    let rings = ((PI * interior as f64 / 4.0).sqrt().round() as usize).clamp(3, interior / 3);
    let lat: Vec<f64> = (1..=rings).map(|k| PI * k as f64 / (rings + 1) as f64).collect();

    // Largest-remainder apportionment of the interior vertices, ≥ 3 per ring.
    let spare = interior - 3 * rings;
    let weights: Vec<f64> = lat.iter().map(|t| t.sin()).collect();
    let wsum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| spare as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..rings).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = spare - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts.iter_mut().for_each(|c| *c += 3);

    let mut points = Vec::with_capacity(n);
    let mut angles: Vec<Vec<f64>> = Vec::with_capacity(rings);
    let mut starts = Vec::with_capacity(rings);
    points.push([0.0, ay, 0.0]);
    for (k, (&theta, &count)) in lat.iter().zip(&counts).enumerate() {
        starts.push(points.len());
        let offset = if k % 2 == 0 { 0.0 } else { 0.5 };
        let ring: Vec<f64> = (0..count).map(|j| 2.0 * PI * (j as f64 + offset) / count as f64).collect();
        for &phi in &ring {
            points.push([ax * theta.sin() * phi.cos(), ay * theta.cos(), az * theta.sin() * phi.sin()]);
        }
        angles.push(ring);
    }
    points.push([0.0, -ay, 0.0]);
    let south = points.len() - 1;

    let mut faces = Vec::with_capacity(2 * n);
    for j in 0..counts[0] {
        faces.push([0, starts[0] + j, starts[0] + (j + 1) % counts[0]]);
    }
    for k in 0..rings - 1 {
        zip_rings(
            (starts[k], &angles[k]),
            (starts[k + 1], &angles[k + 1]),
            &mut faces,
        );
    }
    let last = rings - 1;
    for j in 0..counts[last] {
        faces.push([south, starts[last] + (j + 1) % counts[last], starts[last] + j]);
    }
    // Orient every triangle outward (convex, centred at the origin).
    for f in &mut faces {
        let [a, b, c] = f.map(|i| points[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let nrm = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let cen = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        if nrm[0] * cen[0] + nrm[1] * cen[1] + nrm[2] * cen[2] < 0.0 {
            f.swap(1, 2);
        }
    }
    (points, faces)
}

/// Strip-triangulates two closed rings by always advancing the ring whose
/// next vertex comes first in angle.
fn zip_rings(upper: (usize, &[f64]), lower: (usize, &[f64]), faces: &mut Vec<[usize; 3]>) {
    let (ua, ub) = (upper.1.len(), lower.1.len());
    let next = |ring: &[f64], i: usize| {
        if i + 1 < ring.len() {
            ring[i + 1]
        } else {
            ring[0] + 2.0 * PI
        }
    };
    let (mut i, mut j) = (0, 0);
    while i < ua || j < ub {
        let take_upper = j == ub || (i < ua && next(upper.1, i) <= next(lower.1, j));
        if take_upper {
            faces.push([upper.0 + i, upper.0 + (i + 1) % ua, lower.0 + j % ub]);
            i += 1;
        } else {
            faces.push([upper.0 + i % ua, lower.0 + j, lower.0 + (j + 1) % ub]);
            j += 1;
        }
    }
}

/// Candidates are the front-facing (`z > 0`) vertices. Coarse meshes near
/// the minimum size have fewer than `count` of them; the candidate set is
/// then widened to the `count` vertices of largest `z`.
fn front_landmarks(points: &[[f64; 3]], count: usize) -> Result<Vec<usize>> {
    let mut front: Vec<usize> = (0..points.len()).filter(|&i| points[i][2] > 0.0).collect();
    if front.len() < count {
        if points.len() < count {
            return Err(Error::contract(format!(
                "{} vertices cannot hold {count} distinct landmarks",
                points.len()
            )));
        }
        let mut by_depth: Vec<usize> = (0..points.len()).collect();
        by_depth.sort_by(|&a, &b| points[b][2].total_cmp(&points[a][2]).then(a.cmp(&b)));
        by_depth.truncate(count);
        front = by_depth;
    }
    let [ax, ay, az] = ELLIPSOID_AXES;
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut used = vec![false; points.len()];
    let mut picked = Vec::with_capacity(count);
    for i in 0..count {
        let z = 1.0 - (i as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        let target = [ax * r * phi.cos(), ay * r * phi.sin(), az * z];
        let best = front
            .iter()
            .copied()
            .filter(|&v| !used[v])
            .min_by(|&a, &b| {
                super::pointset::dist(&points[a], &target)
                    .total_cmp(&super::pointset::dist(&points[b], &target))
                    .then(a.cmp(&b))
            })
            .expect("enough front vertices");
        used[best] = true;
        picked.push(best);
    }
    picked.sort_unstable();
    Ok(picked)
}
