//! Flat `key = value` training configuration.
//!
//! Recognized keys: `seed`, `epochs`, `batch`, `lr`, `momentum`, `lambdas`
//! (four comma-separated weights), `z_dim`, `n_vertices`, and the optional
//! architecture keys `encoder_hidden`, `point_low_dim`, `point_hidden`,
//! `point_global_dim`, `decoder_hidden`, `lgs_dims` (comma lists for the
//! multi-layer ones), `fusion` (`point` | `point_image` | `all`) and
//! `use_regressor` (`true` | `false`). Blank lines and `#` comments are
//! ignored; unknown keys are an error.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::error::{Error, Result};
use crate::morphable::DEFAULT_VERTICES;
use crate::networks::DimensionLedger;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weights: LossWeights,
    pub ledger: DimensionLedger,
    pub n_vertices: usize,
    /// Run the landmark-to-parameter regressor and its two loss terms.
    pub use_regressor: bool,
}

/// Fractions of the run after which the learning rate drops to 1/10 and 1/100.
pub const DECAY_POINTS: [f64; 2] = [0.6, 0.8];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 200,
            batch: 32,
            lr: 0.01,
            momentum: 0.9,
            weights: LossWeights::default(),
            ledger: DimensionLedger::default(),
            n_vertices: DEFAULT_VERTICES,
            use_regressor: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(format!("config: cannot parse value '{v}' for key '{key}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|t| parse(key, t.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("config line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => c.seed = parse(key, value)?,
                "epochs" => c.epochs = parse(key, value)?,
                "batch" => c.batch = parse(key, value)?,
                "lr" => c.lr = parse(key, value)?,
                "momentum" => c.momentum = parse(key, value)?,
                "lambdas" => {
                    let w: Vec<f64> = value
                        .split(',')
                        .map(|t| parse(key, t.trim()))
                        .collect::<Result<_>>()?;
                    if w.len() != 4 {
                        return Err(Error::format("config: lambdas needs exactly four values"));
                    }
                    c.weights = LossWeights {
                        params: w[0],
                        landmarks: w[1],
                        landmark_params: w[2],
                        consistency: w[3],
                    };
                }
                "z_dim" => c.ledger.z_dim = parse(key, value)?,
                "n_vertices" => c.n_vertices = parse(key, value)?,
                "encoder_hidden" => c.ledger.encoder_hidden = parse(key, value)?,
                "point_low_dim" => c.ledger.point_low_dim = parse(key, value)?,
                "point_hidden" => c.ledger.point_hidden = parse_list(key, value)?,
                "point_global_dim" => c.ledger.point_global_dim = parse(key, value)?,
                "decoder_hidden" => c.ledger.decoder_hidden = parse_list(key, value)?,
                "lgs_dims" => c.ledger.lgs_dims = parse_list(key, value)?,
                "fusion" => c.ledger.fusion = value.parse()?,
                "use_regressor" => c.use_regressor = parse(key, value)?,
                other => return Err(Error::format(format!("config: unknown key '{other}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::contract("config: epochs and batch must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "config: need lr ≥ 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        self.weights.validate()?;
        self.ledger.validate()
    }

    /// Inverse of [`TrainConfig::parse`].
    pub fn to_kv(&self) -> String {
        let w = &self.weights;
        let l = &self.ledger;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(
            s,
            "lambdas = {},{},{},{}",
            w.params, w.landmarks, w.landmark_params, w.consistency
        );
        let _ = writeln!(s, "z_dim = {}", l.z_dim);
        let _ = writeln!(s, "n_vertices = {}", self.n_vertices);
        let _ = writeln!(s, "encoder_hidden = {}", l.encoder_hidden);
        let _ = writeln!(s, "point_low_dim = {}", l.point_low_dim);
        let _ = writeln!(s, "point_hidden = {}", join(&l.point_hidden));
        let _ = writeln!(s, "point_global_dim = {}", l.point_global_dim);
        let _ = writeln!(s, "decoder_hidden = {}", join(&l.decoder_hidden));
        let _ = writeln!(s, "lgs_dims = {}", join(&l.lgs_dims));
        let fusion = match l.fusion {
            crate::networks::Fusion::Point => "point",
            crate::networks::Fusion::PointImage => "point_image",
            crate::networks::Fusion::All => "all",
        };
        let _ = writeln!(s, "fusion = {fusion}");
        let _ = writeln!(s, "use_regressor = {}", self.use_regressor);
        s
    }

    /// Learning rate for a 0-based epoch: full, then 1/10 from 60% of the
    /// run, then 1/100 from 80%.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let e = self.epochs as f64;
        let (first, second) = (
            (DECAY_POINTS[0] * e).floor() as usize,
            (DECAY_POINTS[1] * e).floor() as usize,
        );
        if epoch >= second {
            self.lr / 100.0
        } else if epoch >= first {
            self.lr / 10.0
        } else {
            self.lr
        }
    }
}
