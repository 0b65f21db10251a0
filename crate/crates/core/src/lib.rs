//! Object-type classification on lists of radar reflections.
//!
//! The main model ([`reflectnet`]) is a permutation- and size-invariant
//! network over per-reflection features with a global context layer. Two
//! baselines ([`forest`], [`gridcnn`]), a synthetic data generator, a
//! trainer and the evaluation tooling live alongside it.

pub mod container;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod forest;
pub mod gridcnn;
pub mod nn;
pub mod preprocess;
pub mod reflectnet;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result, TrainError};
