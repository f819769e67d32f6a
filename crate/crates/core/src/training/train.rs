use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::TrainingSample;
use super::losses::{graph_losses, LossComponents};
use super::sgd::sgd_step;
use crate::error::{Error, Result};
use crate::morphable::{EXPR_DIM, POSE_DIM, SHAPE_DIM};
use crate::networks::{LandmarkModel, NetworkParams, ParamVars, Session};
use crate::tensor::{BatchNormMode, Tensor};

/// Per-epoch means over all samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub components: LossComponents,
    pub total: f64,
}

/// Result of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub components: LossComponents,
    pub total: f64,
}

/// Optimizer state carried across steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    velocity: Vec<Vec<f64>>,
}

fn stack(samples: &[&TrainingSample], f: impl Fn(&TrainingSample) -> Vec<f64>, cols: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * cols);
    for s in samples {
        data.extend(f(s));
    }
    Tensor::matrix(data.len() / cols, cols, data)
}

impl Trainer {
    pub fn new(config: TrainConfig, params: &NetworkParams) -> Result<Self> {
        config.validate()?;
        if config.ledger != params.ledger {
            return Err(Error::contract(
                "training config ledger differs from the network parameters' ledger",
            ));
        }
        let velocity = params.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Ok(Self { config, velocity })
    }

    /// Forward, backward and one SGD update on `batch`.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        model: &LandmarkModel,
        batch: &[&TrainingSample],
        lr: f64,
    ) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        let n_l = params.ledger.n_landmarks;
        let obs_len = params.ledger.observation_len();
        if let Some(bad) = batch.iter().find(|s| s.observation.len() != obs_len || s.gt_landmarks.len() != n_l) {
            return Err(Error::contract(format!(
                "sample {} does not match the network ledger ({} observation values, {} landmarks)",
                bad.id,
                bad.observation.len(),
                bad.gt_landmarks.len()
            )));
        }
        let (grads, running, outcome) = {
            let mut s = Session::new(params, BatchNormMode::Train, true);
            let obs = s.graph.constant(stack(batch, |x| x.observation.data().to_vec(), obs_len)?);
            let gt = ParamVars {
                pose: s.graph.constant(stack(batch, |x| x.gt_params.pose.clone(), POSE_DIM)?),
                shape: s.graph.constant(stack(batch, |x| x.gt_params.shape.clone(), SHAPE_DIM)?),
                expr: s.graph.constant(stack(batch, |x| x.gt_params.expr.clone(), EXPR_DIM)?),
            };
            let gt_lmk = s.graph.constant(stack(batch, |x| x.gt_landmarks.to_flat(), 3)?);
            let vars = s.pipeline(obs, model, self.config.use_regressor)?;
            let losses = graph_losses(
                &mut s,
                vars.alpha,
                vars.refined,
                vars.alpha_hat,
                gt,
                gt_lmk,
                &self.config.weights,
            )?;
            let total = s.graph.value(losses.total).item();
            if !total.is_finite() {
                let culprit = s.graph.first_non_finite().unwrap_or_else(|| "loss".into());
                return Err(Error::NonFinite(format!("training loss is {total}; first non-finite tensor: {culprit}")));
            }
            s.graph.backward(losses.total)?;
            let components = losses.components(&s);
            let grads = s.param_grads();
            (grads, s.into_running(), StepOutcome { components, total })
        };
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} is non-finite at element {j}",
                    params.params[i].name
                )));
            }
            sgd_step(
                params.params[i].value.data_mut(),
                g,
                lr,
                self.config.momentum,
                &mut self.velocity[i],
            )?;
        }
        for (slot, r) in params.running.iter_mut().zip(running) {
            slot.1 = r;
        }
        Ok(outcome)
    }
}

/// Runs `config.epochs` epochs of shuffled mini-batch SGD.
///
/// Returns one [`EpochStats`] per epoch holding sample-weighted means of the
/// batch losses. Shuffling draws from a generator seeded by `config.seed`.
pub fn train(
    config: &TrainConfig,
    samples: &[TrainingSample],
    model: &LandmarkModel,
    params: &mut NetworkParams,
) -> Result<Vec<EpochStats>> {
    if samples.is_empty() {
        return Err(Error::contract("training needs at least one sample"));
    }
    let mut trainer = Trainer::new(config.clone(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let out = trainer.step(params, model, &batch, lr)?;
            let w = batch.len() as f64;
            sum.params += w * out.components.params;
            sum.landmarks += w * out.components.landmarks;
            sum.landmark_params += w * out.components.landmark_params;
            sum.consistency += w * out.components.consistency;
            total += w * out.total;
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            lr,
            components: LossComponents {
                params: sum.params / n,
                landmarks: sum.landmarks / n,
                landmark_params: sum.landmark_params / n,
                consistency: sum.consistency / n,
            },
            total: total / n,
        };
        log::info!("epoch {} lr {:e} total {:.6e}", stats.epoch, lr, stats.total);
        history.push(stats);
    }
    Ok(history)
}

/// Loss history as CSV with a header row.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,L_3DMM,L_lmk,L_3DMM_lmk,L_g,total\n");
    for h in history {
        let c = &h.components;
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            h.epoch, c.params, c.landmarks, c.landmark_params, c.consistency, h.total
        ));
    }
    s
}
