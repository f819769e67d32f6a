//! Landmark NME with yaw buckets and Euler-angle MAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphable::{dist, params_to_euler, wrap_degrees, EulerAngles, MorphParams, PointSet};

/// Bucket edges on `|yaw|` in degrees: `[0,30)`, `[30,60)`, `[60,90]`.
pub const YAW_BUCKETS: [f64; 3] = [30.0, 60.0, 90.0];
/// Samples whose groundtruth yaw leaves `[−99, 99]` are dropped from the MAE.
pub const MAE_YAW_LIMIT: f64 = 99.0;

/// How the per-sample landmark error is reduced before normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmeReduction {
    /// Mean over landmarks of the Euclidean distance.
    #[default]
    PerLandmark,
    /// Euclidean norm of the whole stacked `3·N` difference vector.
    GlobalNorm,
}

impl std::str::FromStr for NmeReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_landmark" => Ok(Self::PerLandmark),
            "global_norm" => Ok(Self::GlobalNorm),
            other => Err(Error::format(format!(
                "unknown NME reduction '{other}' (expected per_landmark or global_norm)"
            ))),
        }
    }
}

fn check_pair(pred: &PointSet, gt: &PointSet) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::contract(format!(
            "point counts differ or are zero: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean landmark distance divided by `norm`, in percent.
pub fn nme(pred: &PointSet, gt: &PointSet, norm: f64) -> Result<f64> {
    nme_with(pred, gt, norm, NmeReduction::PerLandmark)
}

pub fn nme_with(pred: &PointSet, gt: &PointSet, norm: f64, reduction: NmeReduction) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::contract(format!("normalizer must be positive, got {norm}")));
    }
    let err = match reduction {
        NmeReduction::PerLandmark => {
            pred.points.iter().zip(&gt.points).map(|(p, q)| dist(p, q)).sum::<f64>() / gt.len() as f64
        }
        NmeReduction::GlobalNorm => pred
            .points
            .iter()
            .zip(&gt.points)
            .map(|(p, q)| dist(p, q).powi(2))
            .sum::<f64>()
            .sqrt(),
    };
    Ok(100.0 * err / norm)
}

/// `sqrt(width · height)` of the x-y bounding box.
pub fn bbox_norm(gt: &PointSet) -> Result<f64> {
    if gt.len() < 2 {
        return Err(Error::contract("bounding box needs at least 2 points"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &gt.points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let area = (x1 - x0) * (y1 - y0);
    if !(area > 0.0) {
        return Err(Error::contract(format!("degenerate bounding box of area {area}")));
    }
    Ok(area.sqrt())
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub pred_landmarks: PointSet,
    pub gt_landmarks: PointSet,
    pub pred_params: MorphParams,
    pub gt_params: MorphParams,
    pub pred_euler: EulerAngles,
    pub gt_euler: EulerAngles,
}

impl EvalRecord {
    /// Builds a record, deriving the predicted angles from `pred_params`.
    pub fn new(
        id: impl Into<String>,
        pred_landmarks: PointSet,
        gt_landmarks: PointSet,
        pred_params: MorphParams,
        gt_params: MorphParams,
        gt_euler: EulerAngles,
    ) -> Result<Self> {
        let pred_euler = params_to_euler(&pred_params)?;
        let r = Self {
            id: id.into(),
            pred_landmarks,
            gt_landmarks,
            pred_params,
            gt_params,
            pred_euler,
            gt_euler,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        check_pair(&self.pred_landmarks, &self.gt_landmarks)?;
        let e = [self.gt_euler, self.pred_euler];
        if e.iter().any(|a| !(a.yaw.is_finite() && a.pitch.is_finite() && a.roll.is_finite())) {
            return Err(Error::NonFinite(format!("Euler angles of record {}", self.id)));
        }
        Ok(())
    }

    pub fn gt_yaw(&self) -> f64 {
        self.gt_euler.yaw
    }
}

/// Index of the yaw bucket, `None` beyond 90°.
pub fn yaw_bucket(yaw: f64) -> Option<usize> {
    let a = yaw.abs();
    if a < YAW_BUCKETS[0] {
        Some(0)
    } else if a < YAW_BUCKETS[1] {
        Some(1)
    } else if a <= YAW_BUCKETS[2] {
        Some(2)
    } else {
        None
    }
}

/// Mean NME per yaw bucket and overall. Empty buckets are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketNme {
    #[serde(rename = "[0,30)")]
    pub yaw_0_30: Option<f64>,
    #[serde(rename = "[30,60)")]
    pub yaw_30_60: Option<f64>,
    #[serde(rename = "[60,90]")]
    pub yaw_60_90: Option<f64>,
    pub all: f64,
    pub counts: [usize; 3],
}

/// Per-sample NME, bucketed by `|gt yaw|`; samples beyond 90° are excluded.
pub fn nme_report(records: &[EvalRecord], reduction: NmeReduction) -> Result<BucketNme> {
    nme_report_by(records, reduction, |r| &r.pred_landmarks)
}

/// Like [`nme_report`] with the predicted landmarks picked by `pick`.
pub fn nme_report_by<'a>(
    records: &'a [EvalRecord],
    reduction: NmeReduction,
    pick: impl Fn(&'a EvalRecord) -> &'a PointSet,
) -> Result<BucketNme> {
    if records.is_empty() {
        return Err(Error::EmptyEvaluation("no records".into()));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for r in records {
        r.validate()?;
        let Some(b) = yaw_bucket(r.gt_yaw()) else { continue };
        let v = nme_with(pick(r), &r.gt_landmarks, bbox_norm(&r.gt_landmarks)?, reduction)?;
        sums[b] += v;
        counts[b] += 1;
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyEvaluation("every record has |yaw| > 90".into()));
    }
    let mean = |b: usize| (counts[b] > 0).then(|| sums[b] / counts[b] as f64);
    Ok(BucketNme {
        yaw_0_30: mean(0),
        yaw_30_60: mean(1),
        yaw_60_90: mean(2),
        all: sums.iter().sum::<f64>() / n as f64,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub mean: f64,
    pub count: usize,
}

/// Per-angle mean absolute wrapped error in degrees.
pub fn mae_euler(records: &[EvalRecord]) -> Result<MaeReport> {
    let mut sums = [0.0; 3];
    let mut n = 0usize;
    for r in records {
        r.validate()?;
        if r.gt_yaw().abs() > MAE_YAW_LIMIT {
            continue;
        }
        let (p, g) = (r.pred_euler, r.gt_euler);
        sums[0] += wrap_degrees(p.yaw - g.yaw).abs();
        sums[1] += wrap_degrees(p.pitch - g.pitch).abs();
        sums[2] += wrap_degrees(p.roll - g.roll).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation(format!(
            "no record has groundtruth yaw within ±{MAE_YAW_LIMIT}°"
        )));
    }
    let [yaw, pitch, roll] = sums.map(|s| s / n as f64);
    Ok(MaeReport {
        yaw,
        pitch,
        roll,
        mean: (yaw + pitch + roll) / 3.0,
        count: n,
    })
}
