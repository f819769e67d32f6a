//! Evaluation protocols: landmark NME by yaw bucket, Euler-angle MAE, rigid
//! registration and dense reconstruction errors.
//!
//! The JSON report has three fixed top-level keys, `nme_by_bucket`, `mae`
//! and `recon`; sections a run did not compute are `null`. Inside
//! `nme_by_bucket` the keys are `"[0,30)"`, `"[30,60)"`, `"[60,90]"`, `all`
//! and `counts`, with `null` for an empty bucket.

mod icp;
mod kdtree;
mod landmarks;
mod recon;

pub use icp::{icp_register, icp_register_from, kabsch, paired_rmse, IcpOptions, IcpResult, RigidTransform};
pub use kdtree::KdTree;
pub use landmarks::{
    bbox_norm, mae_euler, nme, nme_report, nme_report_by, nme_with, yaw_bucket, BucketNme, EvalRecord, MaeReport,
    NmeReduction, MAE_YAW_LIMIT, YAW_BUCKETS,
};
pub use recon::{
    crop_by_radius, crop_by_radius_indexed, florence_rmse, interocular_distance, point_to_plane_rmse, protocol1_detail,
    protocol1_nme, protocol2_nme, register_shared_topology, vertex_normals, ReconReport, Registered,
    FLORENCE_CROP_RADIUS,
};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nme_by_bucket: Option<BucketNme>,
    pub mae: Option<MaeReport>,
    pub recon: Option<ReconReport>,
}
