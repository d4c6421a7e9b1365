//! Long-range contact processes on `Z^d`: kernels, space-time geometry,
//! exact simulation, Monte Carlo estimators and finite-size criteria.

pub mod alias;
pub mod geometry;
pub mod kernel;
pub mod rng;
pub mod engine;
pub mod estimators;
pub mod fstc;
