//! The learnable pipeline: observation encoder, parameter decoder heads,
//! multi-modal landmark refiner and landmark-to-parameter regressor.

mod forward;
mod ledger;
mod params;

pub use forward::{LandmarkModel, ParamVars, PipelineVars, Session};
pub use ledger::{DimensionLedger, Fusion};
pub use params::{
    BnIdx, CheckpointExtra, Heads, Layout, LinearIdx, NamedTensor, NetworkParams, PointLayer, RefinerLayout,
    RegressorLayout, GROUPS,
};

use crate::error::{Error, Result};
use crate::morphable::{MorphParams, PointSet};
use crate::tensor::{BatchNormMode, Tensor};

/// Inference output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub params: MorphParams,
    pub coarse: PointSet,
    pub refined: PointSet,
    /// Regressed parameters, only when the regressor was run.
    pub alpha_hat: Option<MorphParams>,
}

const INFER_CHUNK: usize = 64;

/// Eval-mode forward pass over `observations` (each `side²` values).
///
/// The landmark-to-parameter regressor is skipped unless `with_regressor`.
pub fn infer(
    params: &NetworkParams,
    model: &LandmarkModel,
    observations: &[&[f64]],
    with_regressor: bool,
) -> Result<Vec<Prediction>> {
    let width = params.ledger.observation_len();
    let n = params.ledger.n_landmarks;
    let mut out = Vec::with_capacity(observations.len());
    for chunk in observations.chunks(INFER_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * width);
        for o in chunk {
            if o.len() != width {
                return Err(Error::contract(format!(
                    "observation has {} values, ledger expects {width}",
                    o.len()
                )));
            }
            data.extend_from_slice(o);
        }
        let mut s = Session::new(params, BatchNormMode::Eval, false);
        let obs = s.graph.constant(Tensor::matrix(chunk.len(), width, data)?);
        let vars = s.pipeline(obs, model, with_regressor)?;
        for i in 0..chunk.len() {
            let rows = |v| -> Result<PointSet> {
                let t: &Tensor = s.graph.value(v);
                PointSet::from_flat(&t.data()[i * n * 3..(i + 1) * n * 3])
            };
            out.push(Prediction {
                params: MorphParams::from_slice(&s.params_row(vars.alpha, i))?,
                coarse: rows(vars.coarse)?,
                refined: rows(vars.refined)?,
                alpha_hat: match vars.alpha_hat {
                    Some(h) => Some(MorphParams::from_slice(&s.params_row(h, i))?),
                    None => None,
                },
            });
        }
    }
    Ok(out)
}
