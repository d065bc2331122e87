//! Perceptual models for a simulated planar arm.
//!
//! The crate learns two complementary mappings between joint space and image
//! space and puts them to work:
//!
//! * a **forward model** that predicts the camera image for a joint
//!   configuration by warping nearest-neighbor reference images with learned
//!   per-pixel flow (plus a direct deconvolutional baseline),
//! * an **inverse model** that regresses joint angles straight from pixels,
//! * an **EKF tracker** that linearizes the forward model per frame and
//!   corrects a Gaussian state belief in a low-rank image subspace,
//! * an **occlusion analyzer** that flags arm pixels whose forward/backward
//!   flows fail to round-trip.
//!
//! Everything runs on a deterministic built-in simulator (`sim`), so ground
//! truth is exact and every experiment is reproducible from a seed. Start
//! with the `examples/` directory — each major capability has a runnable
//! example — or the `armflow` binary, which exposes the same pipeline as
//! subcommands.

pub mod config;
pub mod ekf;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod knn;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod oracle;
pub mod sim;
pub mod warp;

pub use error::{Error, Result};
