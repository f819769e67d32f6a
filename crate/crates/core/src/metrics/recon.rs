//! Dense reconstruction metrics on meshes sharing the basis topology.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::icp::{icp_register_from, kabsch, paired_rmse, IcpOptions, RigidTransform};
use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::morphable::{dist, BasisSet, PointSet};

/// Crop radius around the nose tip, in basis units. The synthetic face is
/// about 2 units wide, so this keeps a similar fraction of the face as a
/// 95 mm crop does on a real one.
pub const FLORENCE_CROP_RADIUS: f64 = 1.25;

/// Per-vertex details of a protocol evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Registered {
    pub transform: RigidTransform,
    /// Prediction after registration.
    pub aligned: Vec<[f64; 3]>,
    pub value: f64,
}

fn check_topology(pred: &PointSet, gt: &PointSet) -> Result<()> {
    if pred.len() != gt.len() || gt.len() < 3 {
        return Err(Error::contract(format!(
            "meshes must share a topology with at least 3 vertices, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::contract(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn mean_vertex_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| dist(p, q)).sum::<f64>() / a.len() as f64
}

/// Distance between the two outer eye-corner vertices of `mesh`.
pub fn interocular_distance(mesh: &PointSet, basis: &BasisSet) -> Result<f64> {
    let [a, b] = basis.eye_corner_vertices()?;
    if a.max(b) >= mesh.len() {
        return Err(Error::contract("mesh has fewer vertices than the basis"));
    }
    Ok(dist(&mesh.points[a], &mesh.points[b]))
}

/// Kabsch on the shared vertex indices, or the identity if that already
/// fits at least as well.
fn index_alignment(pred: &PointSet, gt: &PointSet) -> Result<RigidTransform> {
    let k = kabsch(&pred.points, &gt.points)?;
    let id = RigidTransform::identity();
    if paired_rmse(&pred.points, &gt.points) <= paired_rmse(&k.apply_all(&pred.points), &gt.points) {
        Ok(id)
    } else {
        Ok(k)
    }
}

/// Rigid alignment of `pred` onto `gt`: index-based initialization, refined
/// by point-to-point ICP.
pub fn register_shared_topology(pred: &PointSet, gt: &PointSet) -> Result<RigidTransform> {
    check_topology(pred, gt)?;
    let init = index_alignment(pred, gt)?;
    Ok(icp_register_from(pred, gt, init, IcpOptions::default())?.transform)
}

/// Registers `pred` to `gt`, then mean per-vertex error over the
/// interocular distance, in percent.
pub fn protocol1_nme(pred: &PointSet, gt: &PointSet, interocular: f64) -> Result<f64> {
    Ok(protocol1_detail(pred, gt, interocular)?.value)
}

pub fn protocol1_detail(pred: &PointSet, gt: &PointSet, interocular: f64) -> Result<Registered> {
    positive("interocular distance", interocular)?;
    let transform = register_shared_topology(pred, gt)?;
    let aligned = transform.apply_all(&pred.points);
    let value = 100.0 * mean_vertex_error(&aligned, &gt.points) / interocular;
    Ok(Registered {
        transform,
        aligned,
        value,
    })
}

/// Mean per-vertex error over `bbox_norm` in percent, without registration.
pub fn protocol2_nme(pred: &PointSet, gt: &PointSet, bbox_norm: f64) -> Result<f64> {
    check_topology(pred, gt)?;
    positive("bounding-box normalizer", bbox_norm)?;
    Ok(100.0 * mean_vertex_error(&pred.points, &gt.points) / bbox_norm)
}

/// Vertices within `radius` of `center` and the faces among them,
/// reindexed. Also returns the original index of every kept vertex.
pub fn crop_by_radius_indexed(mesh: &PointSet, center: [f64; 3], radius: f64) -> Result<(PointSet, Vec<usize>)> {
    positive("crop radius", radius)?;
    let kept: Vec<usize> = (0..mesh.len()).filter(|&i| dist(&mesh.points[i], &center) <= radius).collect();
    if kept.is_empty() {
        return Err(Error::EmptyCrop { radius });
    }
    let mut remap = vec![usize::MAX; mesh.len()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let points = kept.iter().map(|&i| mesh.points[i]).collect();
    let faces = mesh.faces.as_ref().map(|fs| {
        fs.iter()
            .filter(|f| f.iter().all(|&v| remap[v] != usize::MAX))
            .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect()
    });
    Ok((PointSet { points, faces }, kept))
}

pub fn crop_by_radius(mesh: &PointSet, center: [f64; 3], radius: f64) -> Result<PointSet> {
    Ok(crop_by_radius_indexed(mesh, center, radius)?.0)
}

/// Area-weighted unit vertex normals; `None` where the incident faces have
/// no area (or there are none).
pub fn vertex_normals(mesh: &PointSet) -> Result<Vec<Option<[f64; 3]>>> {
    let faces = mesh
        .faces
        .as_ref()
        .ok_or_else(|| Error::contract("vertex normals need a mesh with faces"))?;
    let v = |i: usize| Vector3::from(mesh.points[i]);
    let mut acc = vec![Vector3::zeros(); mesh.len()];
    for f in faces {
        // The unnormalized cross product is twice the area times the unit normal.
        let n = (v(f[1]) - v(f[0])).cross(&(v(f[2]) - v(f[0])));
        for &i in f {
            acc[i] += n;
        }
    }
    Ok(acc
        .into_iter()
        .map(|n| {
            let len = n.norm();
            (len > 1e-300).then(|| [n.x / len, n.y / len, n.z / len])
        })
        .collect())
}

/// RMSE of the residual from each prediction vertex to its nearest
/// groundtruth vertex, projected on that vertex's normal.
///
/// With `register` the prediction is first aligned by ICP from the
/// identity. Vertices matched to a zero-area fan are skipped.
pub fn point_to_plane_rmse(pred: &PointSet, gt_mesh: &PointSet, register: bool) -> Result<f64> {
    let normals = vertex_normals(gt_mesh)?;
    let points = if register {
        let icp = icp_register_from(pred, gt_mesh, RigidTransform::identity(), IcpOptions::default())?;
        icp.transform.apply_all(&pred.points)
    } else {
        pred.points.clone()
    };
    let tree = KdTree::new(&gt_mesh.points);
    let (mut ss, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for p in &points {
        let (i, _) = tree
            .nearest(p)
            .ok_or_else(|| Error::contract("groundtruth mesh has no vertices"))?;
        let Some(n) = normals[i] else {
            skipped += 1;
            continue;
        };
        let q = gt_mesh.points[i];
        let r = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2];
        ss += r * r;
        used += 1;
    }
    if skipped > 0 {
        log::warn!("point-to-plane: skipped {skipped} vertices with degenerate normals");
    }
    if used == 0 {
        return Err(Error::Registration("every matched vertex has a degenerate normal".into()));
    }
    Ok((ss / used as f64).sqrt())
}

/// Aligns `pred` to `gt` on the shared topology, crops both around the
/// groundtruth nose tip and reports the point-to-plane RMSE of the crops
/// after a further ICP refinement.
pub fn florence_rmse(pred: &PointSet, gt: &PointSet, basis: &BasisSet, radius: f64) -> Result<f64> {
    check_topology(pred, gt)?;
    let init = index_alignment(pred, gt)?;
    let aligned = PointSet {
        points: init.apply_all(&pred.points),
        faces: pred.faces.clone(),
    };
    let nose = basis.nose_tip_vertex();
    let center = gt.points[nose];
    let gt_crop = crop_by_radius(gt, center, radius)?;
    let pred_crop = crop_by_radius(&aligned, center, radius)?;
    point_to_plane_rmse(&pred_crop, &gt_crop, true)
}

/// The three dense reconstruction numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub protocol1_nme: Option<f64>,
    pub protocol2_nme: Option<f64>,
    pub p2plane_rmse: Option<f64>,
}
