//! Closed-loop neurofeedback training core: simulated EEG, the mu-suppression
//! attention index, adaptive thresholds, the training game engine, the wire
//! protocol, session logs and analytics.

pub mod analytics;
pub mod calibration;
pub mod config;
pub mod dsp;
pub mod engine;
pub mod protocol;
pub mod runner;
pub mod session;
pub mod sim;
pub mod stats;
