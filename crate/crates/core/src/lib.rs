//! Estimation of the temporal separation between two overlapping Gaussian
//! pulses from Hermite-Gauss mode projections, under variable mutual
//! coherence.

pub mod channels;
pub mod cli;
pub mod estimator;
pub mod information;
pub mod montecarlo;
pub mod pulse_model;
