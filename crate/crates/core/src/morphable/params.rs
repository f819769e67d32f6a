use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_DIM: usize = 12;
pub const SHAPE_DIM: usize = 40;
pub const EXPR_DIM: usize = 10;
pub const PARAM_DIM: usize = POSE_DIM + SHAPE_DIM + EXPR_DIM;

/// The 62-dim morphable-model parameter vector, split by semantics.
///
/// `pose` is a row-major 3×4 `[scaled rotation | translation]` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphParams {
    pub pose: Vec<f64>,
    pub shape: Vec<f64>,
    pub expr: Vec<f64>,
}

impl MorphParams {
    pub fn new(pose: Vec<f64>, shape: Vec<f64>, expr: Vec<f64>) -> Result<Self> {
        let p = Self { pose, shape, expr };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros() -> Self {
        Self {
            pose: vec![0.0; POSE_DIM],
            shape: vec![0.0; SHAPE_DIM],
            expr: vec![0.0; EXPR_DIM],
        }
    }

    /// Identity pose with zero shape and expression coefficients.
    pub fn neutral() -> Self {
        let mut p = Self::zeros();
        p.pose = crate::morphable::compose_pose(&crate::morphable::Pose::identity()).to_vec();
        p
    }

    pub fn from_slice(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_DIM {
            return Err(Error::Shape {
                op: "MorphParams::from_slice",
                left: vec![PARAM_DIM],
                right: vec![flat.len()],
            });
        }
        Self::new(
            flat[..POSE_DIM].to_vec(),
            flat[POSE_DIM..POSE_DIM + SHAPE_DIM].to_vec(),
            flat[POSE_DIM + SHAPE_DIM..].to_vec(),
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PARAM_DIM);
        v.extend_from_slice(&self.pose);
        v.extend_from_slice(&self.shape);
        v.extend_from_slice(&self.expr);
        v
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v, n) in [
            ("pose", &self.pose, POSE_DIM),
            ("shape", &self.shape, SHAPE_DIM),
            ("expr", &self.expr, EXPR_DIM),
        ] {
            if v.len() != n {
                return Err(Error::contract(format!(
                    "{name} block has {} values, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} parameters")));
            }
        }
        Ok(())
    }

    /// The shape and expression coefficients back to back (50 values).
    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = self.shape.clone();
        v.extend_from_slice(&self.expr);
        v
    }
}
