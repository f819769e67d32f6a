//! Scoring of trained networks and of stored predictions against
//! synthetic groundtruth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    bbox_norm, florence_rmse, interocular_distance, mae_euler, nme_report, protocol1_nme, protocol2_nme, BucketNme,
    EvalRecord, MaeReport, MetricsReport, NmeReduction, ReconReport, FLORENCE_CROP_RADIUS,
};
use crate::morphable::{reconstruct_posed, BasisSet, MorphParams, PointSet};
use crate::networks::{infer, LandmarkModel, NetworkParams, Prediction};
use crate::predictions::StoredPrediction;
use crate::training::{loss_consistency, TrainingSample};

/// Landmark, pose and self-consistency scores of one model on one sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// NME of the refined landmarks.
    pub refined: BucketNme,
    /// NME of the coarse landmarks taken straight from the mesh.
    pub coarse: BucketNme,
    pub mae: MaeReport,
    /// Mean over samples of `Σ‖α − α̂‖²`.
    pub consistency: f64,
}

/// Pairs predictions with their samples. The record keeps the refined
/// landmarks; `coarse` holds the coarse ones in the same order.
pub fn records_from_predictions(
    samples: &[TrainingSample],
    predictions: &[Prediction],
) -> Result<(Vec<EvalRecord>, Vec<EvalRecord>)> {
    if samples.len() != predictions.len() {
        return Err(Error::contract(format!(
            "{} samples but {} predictions",
            samples.len(),
            predictions.len()
        )));
    }
    let mut refined = Vec::with_capacity(samples.len());
    let mut coarse = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(predictions) {
        let r = EvalRecord::new(
            s.id.clone(),
            p.refined.clone(),
            s.gt_landmarks.clone(),
            p.params.clone(),
            s.gt_params.clone(),
            s.gt_euler,
        )?;
        let mut c = r.clone();
        c.pred_landmarks = p.coarse.clone();
        refined.push(r);
        coarse.push(c);
    }
    Ok((refined, coarse))
}

/// Runs the network in evaluation mode (with the regressor, so the
/// consistency term is available) and scores it.
pub fn evaluate_model(params: &NetworkParams, basis: &BasisSet, samples: &[TrainingSample]) -> Result<ModelEvaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation("no samples".into()));
    }
    let model = LandmarkModel::from_basis(basis);
    let obs: Vec<&[f64]> = samples.iter().map(|s| s.observation.data()).collect();
    let preds = infer(params, &model, &obs, true)?;
    let (refined, coarse) = records_from_predictions(samples, &preds)?;
    let consistency = preds
        .iter()
        .map(|p| loss_consistency(&p.params, p.alpha_hat.as_ref().expect("regressor was run")))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(ModelEvaluation {
        refined: nme_report(&refined, NmeReduction::PerLandmark)?,
        coarse: nme_report(&coarse, NmeReduction::PerLandmark)?,
        mae: mae_euler(&refined)?,
        consistency,
    })
}

/// Evaluation protocol selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Nme,
    Mae,
    P1,
    P2,
    Florence,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nme" => Self::Nme,
            "mae" => Self::Mae,
            "p1" => Self::P1,
            "p2" => Self::P2,
            "florence" => Self::Florence,
            other => return Err(Error::format(format!("unknown protocol '{other}'"))),
        })
    }
}

/// Which stored landmark set is scored by the NME protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkChoice {
    #[default]
    Refined,
    Coarse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub reduction: NmeReduction,
    pub landmarks: LandmarkChoice,
    pub crop_radius: Option<f64>,
}

/// Pairs stored predictions with samples by id. Every sample needs a
/// prediction and every prediction a sample.
pub fn align_by_id<'a>(
    samples: &'a [TrainingSample],
    predictions: &'a BTreeMap<String, StoredPrediction>,
) -> Result<Vec<(&'a TrainingSample, &'a StoredPrediction)>> {
    let missing: Vec<&str> = samples
        .iter()
        .filter(|s| !predictions.contains_key(&s.id))
        .map(|s| s.id.as_str())
        .collect();
    let known: BTreeSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let extra: Vec<&str> = predictions.keys().map(|k| k.as_str()).filter(|k| !known.contains(k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Mismatch(format!(
            "ids without predictions: [{}]; predictions without groundtruth: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(samples.iter().map(|s| (s, &predictions[&s.id])).collect())
}

fn stored_record(s: &TrainingSample, p: &StoredPrediction, choice: LandmarkChoice) -> Result<EvalRecord> {
    let r = EvalRecord {
        id: s.id.clone(),
        pred_landmarks: match choice {
            LandmarkChoice::Refined => p.refined.clone(),
            LandmarkChoice::Coarse => p.coarse.clone(),
        },
        gt_landmarks: s.gt_landmarks.clone(),
        pred_params: p.params.clone(),
        gt_params: s.gt_params.clone(),
        pred_euler: p.euler,
        gt_euler: s.gt_euler,
    };
    r.validate()?;
    Ok(r)
}

fn mean_over<T>(pairs: &[T], f: impl Fn(&T) -> Result<f64>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation("no samples".into()));
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += f(p)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Scores stored predictions against groundtruth samples under one protocol.
/// Per-sample values are reduced in sample order.
pub fn evaluate_stored(
    basis: &BasisSet,
    samples: &[TrainingSample],
    predictions: &BTreeMap<String, StoredPrediction>,
    protocol: Protocol,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let pairs = align_by_id(samples, predictions)?;
    let mut report = MetricsReport::default();
    let mesh = |params: &MorphParams| -> Result<PointSet> {
        let mut m = reconstruct_posed(basis, params)?;
        m.faces = Some(basis.faces().to_vec());
        Ok(m)
    };
    match protocol {
        Protocol::Nme | Protocol::Mae => {
            let records = pairs
                .iter()
                .map(|(s, p)| stored_record(s, p, options.landmarks))
                .collect::<Result<Vec<_>>>()?;
            if protocol == Protocol::Nme {
                report.nme_by_bucket = Some(nme_report(&records, options.reduction)?);
            } else {
                report.mae = Some(mae_euler(&records)?);
            }
        }
        Protocol::P1 => {
            let v = mean_over(&pairs, |(s, p)| {
                let gt = mesh(&s.gt_params)?;
                protocol1_nme(&mesh(&p.params)?, &gt, interocular_distance(&gt, basis)?)
            })?;
            report.recon = Some(ReconReport {
                protocol1_nme: Some(v),
                ..Default::default()
            });
        }
        Protocol::P2 => {
            let v = mean_over(&pairs, |(s, p)| {
                protocol2_nme(&mesh(&p.params)?, &mesh(&s.gt_params)?, bbox_norm(&s.gt_landmarks)?)
            })?;
            report.recon = Some(ReconReport {
                protocol2_nme: Some(v),
                ..Default::default()
            });
        }
        Protocol::Florence => {
            let radius = options.crop_radius.unwrap_or(FLORENCE_CROP_RADIUS);
            let v = mean_over(&pairs, |(s, p)| {
                florence_rmse(&mesh(&p.params)?, &mesh(&s.gt_params)?, basis, radius)
            })?;
            report.recon = Some(ReconReport {
                p2plane_rmse: Some(v),
                ..Default::default()
            });
        }
    }
    Ok(report)
}
