//! Fully automatic proofreading of cell-level segmentation label maps.
//!
//! A hierarchy of four agents repairs merge and split errors in a label map:
//! a locator picks erroneous 128x128 patches on a coarse grid over a 512x512
//! sub-image, a selector chooses which corrector to run on the patch, and the
//! two correctors edit labels directly — the splitter cuts a segment in two
//! with a seeded watershed, the merger fuses neighboring segments. Rewards
//! derive from the change in the CREMI score (variation of information plus
//! adapted Rand error) against ground truth.
//!
//! The crate ships the raster/grid substrate, metric kernels, synthetic data
//! generators with scripted error injection, the edit operators, the four
//! Markov decision processes with nested episode orchestration, scripted
//! oracle and trainable actor-critic policies, advantage actor-critic
//! training, and the image-level evaluation pipelines, all behind the
//! `proofrl` command-line tool.

pub mod error;
pub mod raster;
pub mod rlc;

pub mod metrics;

pub mod editops;
pub mod synth;

pub mod env;
pub mod policy;

pub mod pipeline;
pub mod train;

pub mod cli;

pub use error::{Error, Result};
pub use raster::{EmImage, GridSpec, LabelMap, PatchRef, PointMap, Raster};
