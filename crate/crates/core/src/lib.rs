//! Video segmentation of robots: a memory-based tracker with edge-guided
//! feature association, clustering-based prompt tokens, first-frame
//! supervised training and the standard evaluation protocols.

pub mod associator;
pub mod autoprompt;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod layers;
pub mod model;
pub mod selfcheck;
pub mod synth;
pub mod tracker;
pub mod training;

pub use config::{Config, TargetClass};
pub use error::{Error, Result};
