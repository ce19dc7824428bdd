//! Trend-cycle decomposition and tree ensembles for macro-financial forecasting.

pub mod data;
pub mod ecm;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod kalman;
pub mod model;
pub mod resample;
pub mod synthetic;
pub mod testkit;
pub mod tree;

pub use error::{Error, Result};
