//! Parameter regression, landmark alignment, landmark-geometry and
//! self-consistency losses, in plain-value and graph form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphable::{MorphParams, PointSet};
use crate::networks::{ParamVars, Session};
use crate::tensor::{graph::smooth_l1, Var};

/// Weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub params: f64,
    pub landmarks: f64,
    pub landmark_params: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            params: 0.02,
            landmarks: 0.03,
            landmark_params: 0.02,
            consistency: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.params, self.landmarks, self.landmark_params, self.consistency];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract(format!("loss weights must be non-negative, got {all:?}")));
        }
        Ok(())
    }
}

/// Values of the four loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub params: f64,
    pub landmarks: f64,
    pub landmark_params: f64,
    pub consistency: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        loss_total(self, w)
    }
}

/// `Σ_m ‖α_m − α*_m‖²` over pose, shape and expression (unnormalized).
pub fn loss_3dmm(pred: &MorphParams, gt: &MorphParams) -> f64 {
    pred.to_vec().iter().zip(gt.to_vec()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Smooth-L1 over the coordinates of each landmark, summed per landmark and
/// averaged over landmarks.
pub fn loss_landmark(pred: &PointSet, gt: &PointSet) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "landmark loss needs equal non-empty sets, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, q)| (0..3).map(|c| smooth_l1(p[c] - q[c])).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Regression loss of the landmark-derived parameters `α̂` against groundtruth.
pub fn loss_lgs(alpha_hat: &MorphParams, gt: &MorphParams) -> f64 {
    loss_3dmm(alpha_hat, gt)
}

/// `Σ_m ‖α_m − α̂_m‖²`; symmetric in its arguments.
pub fn loss_consistency(alpha: &MorphParams, alpha_hat: &MorphParams) -> f64 {
    loss_3dmm(alpha, alpha_hat)
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    w.params * c.params + w.landmarks * c.landmarks + w.landmark_params * c.landmark_params + w.consistency * c.consistency
}

/// Graph handles of the batch-mean loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub params: Var,
    pub landmarks: Var,
    pub landmark_params: Option<Var>,
    pub consistency: Option<Var>,
    pub total: Var,
}

fn param_sq_error(s: &mut Session, a: ParamVars, b: ParamVars) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    for (x, y) in [(a.pose, b.pose), (a.shape, b.shape), (a.expr, b.expr)] {
        let d = s.graph.sub(x, y)?;
        terms.push(s.graph.sum_squares(d));
    }
    let t = s.graph.add(terms[0], terms[1])?;
    s.graph.add(t, terms[2])
}

/// Builds every loss term as a mean over the batch and the weighted total.
///
/// `gt` holds `[B×12|40|10]` groundtruth blocks and `gt_landmarks` the
/// `[B·N_l × 3]` landmark stack. The landmark-geometry terms are present
/// only when `alpha_hat` is.
pub fn graph_losses(
    s: &mut Session,
    alpha: ParamVars,
    refined: Var,
    alpha_hat: Option<ParamVars>,
    gt: ParamVars,
    gt_landmarks: Var,
    weights: &LossWeights,
) -> Result<LossVars> {
    let batch = s.graph.value(alpha.pose).rows() as f64;
    let n_points = s.graph.value(refined).rows() as f64;

    let l_params = param_sq_error(s, alpha, gt)?;
    let l_params = s.graph.scale(l_params, 1.0 / batch);

    let diff = s.graph.sub(refined, gt_landmarks)?;
    let l_lmk = s.graph.smooth_l1_sum(diff);
    // Per-sample mean over landmarks, then mean over the batch.
    let l_lmk = s.graph.scale(l_lmk, 1.0 / n_points);

    let mut total = s.graph.scale(l_params, weights.params);
    let w_lmk = s.graph.scale(l_lmk, weights.landmarks);
    total = s.graph.add(total, w_lmk)?;

    let (mut l_lgs, mut l_g) = (None, None);
    if let Some(hat) = alpha_hat {
        let a = param_sq_error(s, hat, gt)?;
        let a = s.graph.scale(a, 1.0 / batch);
        let b = param_sq_error(s, alpha, hat)?;
        let b = s.graph.scale(b, 1.0 / batch);
        let wa = s.graph.scale(a, weights.landmark_params);
        let wb = s.graph.scale(b, weights.consistency);
        total = s.graph.add(total, wa)?;
        total = s.graph.add(total, wb)?;
        l_lgs = Some(a);
        l_g = Some(b);
    }
    Ok(LossVars {
        params: l_params,
        landmarks: l_lmk,
        landmark_params: l_lgs,
        consistency: l_g,
        total,
    })
}

impl LossVars {
    pub fn components(&self, s: &Session) -> LossComponents {
        let v = |x: Var| s.graph.value(x).item();
        LossComponents {
            params: v(self.params),
            landmarks: v(self.landmarks),
            landmark_params: self.landmark_params.map(v).unwrap_or(0.0),
            consistency: self.consistency.map(v).unwrap_or(0.0),
        }
    }
}
