//! Intensity harmonization and small-data adaptation for 16-bit grayscale
//! patch classifiers.
//!
//! The crate covers the whole path from raw images to evaluation reports:
//! [`image`] primitives, corpus-average histogram matching in [`histmatch`],
//! foreground-aware patch extraction in [`patch`], augmentation, a small
//! residual CNN with hand-written backward passes in [`nn`], target-domain
//! adaptation in [`adapt`], and ROC metrics in [`metrics`].

pub mod adapt;
pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod histmatch;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod patch;
pub mod pgm;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
