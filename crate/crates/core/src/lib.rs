//! Thermal side-channel aware floorplanning for two-die, face-to-back 3D ICs.
//!
//! The numeric kernels ([`grid`], [`leakage`], [`thermal`]) are generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix them to `f64`, which is
//! what the floorplanning flow uses.

pub mod anneal;
pub mod bench;
pub mod config;
pub mod error;
pub mod grid;
pub mod harden;
pub mod io;
pub mod layout;
pub mod leakage;
pub mod model;
pub mod scalar;
pub mod sweep;
pub mod synth;
pub mod thermal;
pub mod timing;
pub mod volumes;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = grid::Grid2D<f64>;
pub type GridF32 = grid::Grid2D<f32>;
pub type Thermal = thermal::ThermalResult<f64>;
pub type Estimator = thermal::BlurEstimator<f64>;
pub type Stability = leakage::StabilityMap<f64>;
pub type Entropy = leakage::EntropyResult<f64>;
