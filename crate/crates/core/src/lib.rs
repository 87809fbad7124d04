//! Rolling-shutter dazzle simulation and pulse-train adversarial attacks.
//!
//! A light pulse aimed at a rolling-shutter camera saturates the rows that
//! were exposing while it was on, leaving horizontal stripes in the frame.
//! This crate models those stripes, the duty cycle below which a human
//! observer cannot see the source, and the optimization of pulse trains
//! that make an image classifier fail.

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod classifier;
pub mod error;
pub mod harness;
pub mod image;
pub mod optim;
pub mod photopic;
pub mod rng;
pub mod synthesis;
pub mod timing;

pub use attack::{AttackConfig, AttackResult};
pub use classifier::{Classifier, ConvNet, ExternalClassifier, LinearModel, SyntheticDataset};
pub use error::{Error, Result};
pub use image::Image;
pub use photopic::PhotopicScene;
pub use synthesis::{DazzlePattern, PulseTrain, SaturationModel};
pub use timing::{CameraTimings, PulseEvent};
