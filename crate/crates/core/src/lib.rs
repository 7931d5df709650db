//! Simulation of ternary-weight neural-network inference on passive MTJ
//! crossbar arrays.
//!
//! The crate models the full experimental pipeline: a 13-6-3 classifier with
//! weights in {-1, 0, +1} is trained in software on the Wine dataset, mapped
//! onto a 15x15 array of magnetic tunnel junctions as differential
//! conductance pairs, programmed through a write-verify pulse sequence, and
//! then evaluated by reading the array back and running inference on the
//! measured conductances. The array is solved as a resistive network (line
//! resistance, contact resistance, sneak paths) by nodal analysis.
//!
//! The central experiment sweeps the normalization conductance `g_norm` used
//! to convert measured conductance differences back into dimensionless
//! weights, and locates two optima: the value minimizing the RMS deviation
//! from the target weights and the value maximizing classification accuracy.
//! Under device variation these optima separate; the study quantifies that
//! separation across device sizes.
//!
//! Everything is deterministic: all randomness flows from explicit seeds
//! through a documented child-seed derivation, so every experiment rerun is
//! byte-identical.

pub mod config;
pub mod crossbar;
pub mod dataset;
pub mod device;
pub mod error;
pub mod inference;
pub mod mapping;
pub mod seed;
pub mod solver;
pub mod stats;
pub mod study;
pub mod ternary;
pub mod trainer;

pub use error::{Error, Result};
