//! The morphable face model: linear reconstruction, pose handling and the
//! synthetic basis generator.

mod basis;
mod params;
mod pointset;
mod pose;

pub use basis::{
    apply_pose, extract_landmarks, gather, generate_synthetic_basis, reconstruct_frontal, BasisSet,
    BASIS_PERTURBATION, DEFAULT_LANDMARKS, DEFAULT_VERTICES, ELLIPSOID_AXES, EYE_CORNER_SLOTS, MIN_VERTICES,
};
pub use params::{MorphParams, EXPR_DIM, PARAM_DIM, POSE_DIM, SHAPE_DIM};
pub use pointset::PointSet;
pub use pose::{
    compose_pose, decompose_pose, euler_to_rotation, linear_block, rot_x, rot_y, rot_z, rotation_to_euler,
    wrap_degrees, EulerAngles, Pose, MIN_SINGULAR_VALUE,
};

pub(crate) use pointset::dist;

/// Posed mesh `A·Mat(M + U_s·α_s + U_e·α_e) + t` using the raw 3×4 pose block.
pub fn reconstruct_posed(basis: &BasisSet, params: &MorphParams) -> crate::Result<PointSet> {
    Ok(reconstruct_frontal(basis, params)?.affine(&params.pose))
}

/// Euler angles of the nearest rotation to the pose block of `params`.
pub fn params_to_euler(params: &MorphParams) -> crate::Result<EulerAngles> {
    rotation_to_euler(&decompose_pose(&params.pose)?.rotation)
}
