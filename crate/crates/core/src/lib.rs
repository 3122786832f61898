//! Semi-supervised image classification on unlabeled pools contaminated by
//! synthetic images.
//!
//! A lightweight detector, trained on samples mined into a class-wise FIFO
//! queue, decides per unlabeled sample whether it is real or synthetic. Real
//! verdicts train the classifier's real head; synthetic verdicts train a
//! dummy head that only shapes the shared encoder. Inference uses the
//! encoder and real head alone.

pub mod augment;
pub mod benchgen;
pub mod config;
pub mod csqueue;
pub mod engine;
pub mod error;
pub mod evalcli;
pub mod exec;
pub mod fileio;
pub mod imaging;
pub mod losses;
pub mod manifest;
pub mod nets;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
