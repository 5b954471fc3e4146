//! Gesture recognition for five-finger sensor gloves.
//!
//! The pipeline runs raw recordings through quality control, fixed-length
//! windowing, per-window normalization, stochastic augmentation and MFCC
//! feature extraction, then trains a five-branch 1-D convolutional classifier
//! (one branch per finger) on a small reverse-mode autodiff engine. Classical
//! baselines, metrics and a synthetic signal generator round it out.

pub mod augment;
pub mod baselines;
pub mod container;
pub mod data;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use data::{ClassLabel, Frame, Recording, SplitSpec, NUM_CHANNELS, NUM_CLASSES};
pub use dsp::mfcc::{DctAxis, MfccConfig, MfccTensor};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use nn::NTensor;
pub use preprocess::SequenceWindow;
