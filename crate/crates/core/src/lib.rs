//! Multi-task 3D facial geometry from a single observation.
//!
//! The pipeline regresses morphable-model parameters from an image-like
//! observation, reconstructs a posed face mesh, refines the extracted
//! landmarks with a multi-modal point network, and regresses the
//! parameters back from the refined landmarks so the two parameter
//! estimates can supervise each other.
//!
//! Modules:
//! - [`tensor`]: f64 tensors and the reverse-mode tape
//! - [`morphable`]: reconstruction, pose, Euler angles, synthetic basis
//! - [`networks`]: encoder, decoder heads, landmark refiner, landmark-to-parameter regressor
//! - [`training`]: losses, SGD, synthetic dataset and the training loop
//! - [`metrics`]: NME, Euler MAE, ICP and reconstruction protocols
//! - [`experiment`]: held-out scoring of a trained network

pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod morphable;
pub mod networks;
pub mod predictions;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
