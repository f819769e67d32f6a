//! Loss terms, optimizer, synthetic training data and the training loop.

mod config;
mod dataset;
mod losses;
mod sgd;
mod train;

pub use config::{TrainConfig, DECAY_POINTS};
pub use dataset::{
    generate_dataset, load_dataset, rasterize, sample_id, save_dataset, verify_sample, DatasetFile, TrainingSample,
    CONSISTENCY_TOL, COEFF_STD, OBSERVATION_EXTENT, OBSERVATION_SIDE, PITCH_RANGE, ROLL_RANGE, SCALE_RANGE,
    SPLAT_SIGMA_PX, TRANSLATION_RANGE, YAW_RANGE,
};
pub use losses::{
    graph_losses, loss_3dmm, loss_consistency, loss_landmark, loss_lgs, loss_total, LossComponents, LossVars,
    LossWeights,
};
pub use sgd::sgd_step;
pub use train::{history_csv, train, EpochStats, StepOutcome, Trainer};
