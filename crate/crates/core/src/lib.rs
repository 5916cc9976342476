//! HEXST: shifted-window transformer over hexagonal spot lattices for
//! predicting gene expression from per-spot morphology tokens.

pub mod config;
pub mod dataset;
pub mod error;
pub mod hexgeom;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod render;
pub mod rope;
pub mod synth;
pub mod trainer;
pub mod windowing;

pub use error::{HexstError, Result};
