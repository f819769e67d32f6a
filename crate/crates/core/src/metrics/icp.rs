//! Rigid registration: closed-form Kabsch alignment and point-to-point ICP.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::morphable::PointSet;

/// Relative singular-value floor below which the cross-covariance loses rank.
const RANK_TOL: f64 = 1e-10;

/// `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_all(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpOptions {
    pub max_iterations: usize,
    /// Stop once `(rmse_prev − rmse) / rmse_prev` drops below this.
    pub tolerance: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rmse: f64,
    /// RMSE after the initial transform and after every accepted iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn centroid(points: &[[f64; 3]]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::new(p[0], p[1], p[2]);
    }
    c / points.len() as f64
}

/// Least-squares rigid map taking `src[i]` onto `dst[i]`.
///
/// Fails when the centred cross-covariance has rank below 2 (collinear or
/// coincident points); planar sets are accepted since their rotation is
/// still unique.
pub fn kabsch(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Registration(format!(
            "need at least 3 paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = Vector3::new(s[0], s[1], s[2]) - cs;
        let b = Vector3::new(d[0], d[1], d[2]) - cd;
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOL * sv[0] {
        return Err(Error::Registration(format!(
            "degenerate geometry: cross-covariance singular values {sv:?}"
        )));
    }
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

/// Root mean squared distance between paired points.
pub fn paired_rmse(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
        .sum();
    (ss / a.len() as f64).sqrt()
}

fn matched(tree: &KdTree, target: &[[f64; 3]], moved: &[[f64; 3]]) -> (Vec<[f64; 3]>, f64) {
    let mut ss = 0.0;
    let pts = moved
        .iter()
        .map(|p| {
            let (i, d) = tree.nearest(p).expect("non-empty target");
            ss += d;
            target[i]
        })
        .collect();
    (pts, (ss / moved.len() as f64).sqrt())
}

/// Point-to-point ICP of `source` onto `target` from the identity.
pub fn icp_register(source: &PointSet, target: &PointSet) -> Result<IcpResult> {
    icp_register_from(source, target, RigidTransform::identity(), IcpOptions::default())
}

/// Point-to-point ICP starting from `initial`.
///
/// Each iteration matches every transformed source point to its nearest
/// target point and solves the Kabsch problem on those pairs. An update
/// that would raise the RMSE is rejected and iteration stops, so the
/// returned history is non-increasing.
pub fn icp_register_from(
    source: &PointSet,
    target: &PointSet,
    initial: RigidTransform,
    options: IcpOptions,
) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::Registration(format!(
            "ICP needs at least 3 points per set, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let src = &source.points;
    let tree = KdTree::new(&target.points);
    let mut transform = initial;
    let (mut pairs, mut rmse) = matched(&tree, &target.points, &transform.apply_all(src));
    let mut history = vec![rmse];
    let mut converged = rmse == 0.0;
    for _ in 0..options.max_iterations {
        if converged {
            break;
        }
        let next = kabsch(src, &pairs)?;
        let (next_pairs, next_rmse) = matched(&tree, &target.points, &next.apply_all(src));
        if next_rmse > rmse {
            converged = true;
            break;
        }
        let rel = (rmse - next_rmse) / rmse;
        transform = next;
        pairs = next_pairs;
        rmse = next_rmse;
        history.push(rmse);
        converged = rmse == 0.0 || rel < options.tolerance;
    }
    Ok(IcpResult {
        transform,
        rmse,
        history,
        converged,
    })
}
