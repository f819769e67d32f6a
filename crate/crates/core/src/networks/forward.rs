//! Graph construction for the full pipeline on a batch of samples.
//!
//! Per-point tensors of a batch of `B` samples are stacked sample-major into
//! `[B·N_l × C]` matrices; batch norm of the shared point layers normalizes
//! over all `B·N_l` rows.

use super::params::{Heads, LinearIdx, NetworkParams, PointLayer};
use crate::error::{Error, Result};
use crate::morphable::{BasisSet, EXPR_DIM, POSE_DIM, SHAPE_DIM};
use crate::tensor::{BatchNormMode, BnRunning, Graph, Tensor, Var};

/// Landmark rows of the morphable model, as graph constants.
#[derive(Clone, Debug)]
pub struct LandmarkModel {
    /// `[1 × 3·N_l]` mean-face landmark coordinates.
    pub mean: Tensor,
    /// `[50 × 3·N_l]` landmark rows of `[U_s | U_e]`, transposed.
    pub basis_t: Tensor,
    pub n_landmarks: usize,
}

impl LandmarkModel {
    pub fn from_basis(basis: &BasisSet) -> Self {
        let n = basis.n_landmarks();
        Self {
            mean: Tensor::matrix(1, 3 * n, basis.landmark_mean()).expect("sized"),
            basis_t: Tensor::matrix(SHAPE_DIM + EXPR_DIM, 3 * n, basis.landmark_basis_transposed())
                .expect("sized"),
            n_landmarks: n,
        }
    }
}

/// The three parameter blocks of a batch: `[B×12]`, `[B×40]`, `[B×10]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamVars {
    pub pose: Var,
    pub shape: Var,
    pub expr: Var,
}

/// Handles to every intermediate the losses and evaluation need.
#[derive(Clone, Copy, Debug)]
pub struct PipelineVars {
    pub z: Var,
    pub alpha: ParamVars,
    pub coarse: Var,
    pub refined: Var,
    pub alpha_hat: Option<ParamVars>,
}

/// One forward (and optionally backward) pass over shared parameters.
///
/// Parameters enter the graph lazily as leaves on first use. In
/// [`BatchNormMode::Train`] the session works on a copy of the running
/// statistics, retrievable with [`Session::into_running`].
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p NetworkParams,
    leaves: Vec<Option<Var>>,
    running: Vec<BnRunning>,
    mode: BatchNormMode,
    track_grad: bool,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p NetworkParams, mode: BatchNormMode, track_grad: bool) -> Self {
        Self {
            graph: Graph::new(),
            params,
            leaves: vec![None; params.params.len()],
            running: params.running.iter().map(|(_, r)| r.clone()).collect(),
            mode,
            track_grad,
        }
    }

    pub fn params(&self) -> &NetworkParams {
        self.params
    }

    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.leaves[idx] {
            return v;
        }
        let p = &self.params.params[idx];
        let v = self.graph.named_leaf(&p.name, p.value.clone(), self.track_grad);
        self.leaves[idx] = Some(v);
        v
    }

    /// Gradient of every parameter, `None` for parameters the graph never touched.
    pub fn param_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.leaves
            .iter()
            .map(|l| l.and_then(|v| self.graph.grad(v).map(|g| g.to_vec())))
            .collect()
    }

    pub fn running(&self) -> &[BnRunning] {
        &self.running
    }

    pub fn into_running(self) -> Vec<BnRunning> {
        self.running
    }

    pub fn linear(&mut self, x: Var, l: LinearIdx) -> Result<Var> {
        let w = self.param(l.weight);
        let b = self.param(l.bias);
        let rows = self.graph.value(x).rows();
        let xw = self.graph.matmul(x, w)?;
        let bias = self.graph.repeat_rows(b, rows)?;
        self.graph.add(xw, bias)
    }

    fn bn_relu(&mut self, h: Var, layer: &PointLayer) -> Result<Var> {
        let gamma = self.param(layer.bn.gamma);
        let beta = self.param(layer.bn.beta);
        let mode = self.mode;
        let y = self
            .graph
            .batch_norm(h, gamma, beta, &mut self.running[layer.bn.running], mode)?;
        Ok(self.graph.relu(y))
    }

    fn point_layers(&mut self, mut x: Var, layers: &[PointLayer]) -> Result<Var> {
        for layer in layers {
            let h = self.linear(x, layer.linear)?;
            x = self.bn_relu(h, layer)?;
        }
        Ok(x)
    }

    fn heads(&mut self, x: Var, h: Heads) -> Result<ParamVars> {
        Ok(ParamVars {
            pose: self.linear(x, h.pose)?,
            shape: self.linear(x, h.shape)?,
            expr: self.linear(x, h.expr)?,
        })
    }

    /// `[B × side²]` observations → `[B × z_dim]` latent features.
    pub fn encode_image(&mut self, obs: Var) -> Result<Var> {
        let want = self.params.ledger.observation_len();
        let got = self.graph.value(obs).cols();
        if got != want {
            return Err(Error::contract(format!(
                "observation has {got} values per sample, ledger expects {want}"
            )));
        }
        let [l0, l1] = self.params.layout.encoder;
        let h = self.linear(obs, l0)?;
        let h = self.graph.relu(h);
        let z = self.linear(h, l1)?;
        Ok(self.graph.relu(z))
    }

    /// Three independent linear heads on `z`.
    pub fn decode_params(&mut self, z: Var) -> Result<ParamVars> {
        let heads = self.params.layout.heads;
        self.heads(z, heads)
    }

    /// `A·(mean + U·[α_s | α_e]) + t` restricted to landmark rows: `[B·N_l × 3]`.
    pub fn coarse_landmarks(&mut self, model: &LandmarkModel, alpha: ParamVars) -> Result<Var> {
        let batch = self.graph.value(alpha.pose).rows();
        let coeffs = self.graph.concat_last_dim(&[alpha.shape, alpha.expr])?;
        let basis_t = self.graph.constant(model.basis_t.clone());
        let mean = self.graph.constant(model.mean.clone());
        let offsets = self.graph.matmul(coeffs, basis_t)?;
        let mean = self.graph.repeat_rows(mean, batch)?;
        let frontal = self.graph.add(offsets, mean)?;
        let frontal = self.graph.reshape(frontal, vec![batch * model.n_landmarks, 3])?;
        self.graph.affine_points(frontal, alpha.pose, model.n_landmarks)
    }

    fn n_landmarks(&self) -> usize {
        self.params.ledger.n_landmarks
    }

    fn batch_of(&self, points: Var) -> Result<usize> {
        let (rows, cols) = (self.graph.value(points).rows(), self.graph.value(points).cols());
        let n = self.n_landmarks();
        if cols != 3 || rows % n != 0 {
            return Err(Error::contract(format!(
                "expected a stack of {n}-landmark sets, got {:?}",
                self.graph.value(points).shape()
            )));
        }
        Ok(rows / n)
    }

    /// Low-level point features `[B·N_l × point_low_dim]` and the fused
    /// global vector `[B × fusion_dim]` of the refiner.
    pub fn refiner_features(&mut self, coarse: Var, z: Var, shape: Var, expr: Var) -> Result<(Var, Var)> {
        let n = self.n_landmarks();
        let layout = self.params.layout.refiner.clone();
        let low = self.point_layers(coarse, &layout.low)?;
        let deep = self.point_layers(low, &layout.global)?;
        let global = self.graph.max_pool_groups(deep, n)?;
        let mut parts = vec![global];
        if let Some(a) = layout.image_adapter {
            parts.push(self.linear(z, a)?);
        }
        if let Some(a) = layout.shape_adapter {
            parts.push(self.linear(shape, a)?);
        }
        if let Some(a) = layout.expr_adapter {
            parts.push(self.linear(expr, a)?);
        }
        let fused = self.graph.concat_last_dim(&parts)?;
        Ok((low, fused))
    }

    /// Explicit multi-modal point feature: the fused vector repeated per
    /// landmark, appended to the low-level point features.
    pub fn mmpf(&mut self, low: Var, fused: Var) -> Result<Var> {
        let repeated = self.graph.repeat_rows(fused, self.n_landmarks())?;
        self.graph.concat_last_dim(&[low, repeated])
    }

    /// Refines `[B·N_l × 3]` coarse landmarks; returns the refined stack.
    ///
    /// The first decoder layer is evaluated as `low·W_low + repeat(fused·W_fused)`,
    /// which equals `mmpf·W` without materializing the repeated rows.
    pub fn m2fa_refine(&mut self, coarse: Var, z: Var, shape: Var, expr: Var) -> Result<Var> {
        self.batch_of(coarse)?;
        let n = self.n_landmarks();
        let (low, fused) = self.refiner_features(coarse, z, shape, expr)?;
        let layout = self.params.layout.refiner.clone();
        let first = layout.decoder[0];
        let w = self.param(first.linear.weight);
        let b = self.param(first.linear.bias);
        let low_dim = self.params.ledger.point_low_dim;
        let fusion_dim = self.params.ledger.fusion_dim();
        let w_low = self.graph.slice_rows(w, 0, low_dim)?;
        let w_fused = self.graph.slice_rows(w, low_dim, fusion_dim)?;
        let rows = self.graph.value(coarse).rows();
        let h_low = self.graph.matmul(low, w_low)?;
        let h_fused = self.graph.matmul(fused, w_fused)?;
        let h_fused = self.graph.repeat_rows(h_fused, n)?;
        let bias = self.graph.repeat_rows(b, rows)?;
        let h = self.graph.add(h_low, h_fused)?;
        let h = self.graph.add(h, bias)?;
        let mut x = self.bn_relu(h, &first)?;
        x = self.point_layers(x, &layout.decoder[1..])?;
        let offsets = self.linear(x, layout.offsets)?;
        self.graph.add(coarse, offsets)
    }

    /// Landmark-to-parameter regression: `[B·N_l × 3]` → `α̂`.
    pub fn lgs_regress(&mut self, refined: Var) -> Result<ParamVars> {
        self.batch_of(refined)?;
        let layout = self.params.layout.regressor.clone();
        let feats = self.point_layers(refined, &layout.encoder)?;
        let pooled = self.graph.max_pool_groups(feats, self.n_landmarks())?;
        self.heads(pooled, layout.heads)
    }

    /// Encoder → decoder heads → coarse landmarks → refiner, plus the
    /// regressor when `with_regressor` is set.
    pub fn pipeline(&mut self, obs: Var, model: &LandmarkModel, with_regressor: bool) -> Result<PipelineVars> {
        if model.n_landmarks != self.n_landmarks() {
            return Err(Error::contract(format!(
                "basis has {} landmarks, network expects {}",
                model.n_landmarks,
                self.n_landmarks()
            )));
        }
        let z = self.encode_image(obs)?;
        let alpha = self.decode_params(z)?;
        let coarse = self.coarse_landmarks(model, alpha)?;
        let refined = self.m2fa_refine(coarse, z, alpha.shape, alpha.expr)?;
        let alpha_hat = if with_regressor {
            Some(self.lgs_regress(refined)?)
        } else {
            None
        };
        Ok(PipelineVars {
            z,
            alpha,
            coarse,
            refined,
            alpha_hat,
        })
    }

    /// Row `i` of a `[B × 12|40|10]` triple as flat 62 values.
    pub fn params_row(&self, p: ParamVars, i: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(POSE_DIM + SHAPE_DIM + EXPR_DIM);
        v.extend_from_slice(self.graph.value(p.pose).row(i));
        v.extend_from_slice(self.graph.value(p.shape).row(i));
        v.extend_from_slice(self.graph.value(p.expr).row(i));
        v
    }
}
