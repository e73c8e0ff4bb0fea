//! Wasserstein-adversarial unsupervised domain adaptation.

pub mod adaptation;
pub mod checkpoint;
pub mod data;
pub mod divergence;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod source_training;

pub use error::{Error, Result};
