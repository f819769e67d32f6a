use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphable::{EXPR_DIM, SHAPE_DIM};

/// Which global modalities are fused into the multi-modal point feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Global point features only.
    Point,
    /// Global point features and the adapted image feature.
    PointImage,
    /// Point, image, shape and expression features.
    All,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Fusion::Point),
            "point_image" => Ok(Fusion::PointImage),
            "all" => Ok(Fusion::All),
            other => Err(Error::format(format!(
                "unknown fusion '{other}' (expected point, point_image or all)"
            ))),
        }
    }
}

/// Every width in the network, in one place.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionLedger {
    /// Side length of the square observation grid.
    pub observation_side: usize,
    pub encoder_hidden: usize,
    pub z_dim: usize,
    pub point_low_dim: usize,
    /// Hidden widths between the low-level and the global point features.
    pub point_hidden: Vec<usize>,
    pub point_global_dim: usize,
    pub shape_adapt_dim: usize,
    pub expr_adapt_dim: usize,
    /// Hidden widths of the per-point refinement decoder (output 3 is implied).
    pub decoder_hidden: Vec<usize>,
    /// Per-point encoder widths of the landmark-to-parameter regressor.
    pub lgs_dims: Vec<usize>,
    pub n_landmarks: usize,
    pub fusion: Fusion,
}

impl Default for DimensionLedger {
    fn default() -> Self {
        Self {
            observation_side: 32,
            encoder_hidden: 1024,
            z_dim: 1280,
            point_low_dim: 64,
            point_hidden: vec![64, 128],
            point_global_dim: 1024,
            shape_adapt_dim: SHAPE_DIM,
            expr_adapt_dim: EXPR_DIM,
            decoder_hidden: vec![512, 256, 128],
            lgs_dims: vec![64, 128, 1024],
            n_landmarks: 68,
            fusion: Fusion::All,
        }
    }
}

impl DimensionLedger {
    pub fn observation_len(&self) -> usize {
        self.observation_side * self.observation_side
    }

    /// Width of the fused global vector that is repeated per landmark.
    pub fn fusion_dim(&self) -> usize {
        let mut d = self.point_global_dim;
        if matches!(self.fusion, Fusion::PointImage | Fusion::All) {
            d += self.z_dim;
        }
        if self.fusion == Fusion::All {
            d += self.shape_adapt_dim + self.expr_adapt_dim;
        }
        d
    }

    /// Per-landmark width of the multi-modal point feature.
    pub fn mmpf_dim(&self) -> usize {
        self.fusion_dim() + self.point_low_dim
    }

    pub fn lgs_global_dim(&self) -> usize {
        *self.lgs_dims.last().expect("validated ledger")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("observation_side", self.observation_side),
            ("encoder_hidden", self.encoder_hidden),
            ("z_dim", self.z_dim),
            ("point_low_dim", self.point_low_dim),
            ("point_global_dim", self.point_global_dim),
            ("n_landmarks", self.n_landmarks),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("ledger: {name} must be positive")));
        }
        // Adapters map each modality onto itself.
        if self.shape_adapt_dim != SHAPE_DIM || self.expr_adapt_dim != EXPR_DIM {
            return Err(Error::contract(format!(
                "ledger: adapters preserve width, need shape_adapt_dim = {SHAPE_DIM} and expr_adapt_dim = {EXPR_DIM}"
            )));
        }
        if self.lgs_dims.is_empty() || self.decoder_hidden.is_empty() {
            return Err(Error::contract("ledger: decoder and regressor need at least one layer"));
        }
        if self
            .point_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.lgs_dims)
            .any(|&d| d == 0)
        {
            return Err(Error::contract("ledger: zero-width layer"));
        }
        Ok(())
    }
}
