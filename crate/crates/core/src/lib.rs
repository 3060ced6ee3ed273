//! Risk-budgeted safe throughput forecasting.
//!
//! A family of lower-quantile predictors is trained with the pinball loss and
//! the operating quantile is chosen on a calibration split so that the
//! overestimation rate stays under a prescribed budget. Safety metrics and an
//! admission-control simulation quantify what the chosen forecast costs
//! downstream.

pub mod admission;
pub mod backbone;
pub mod calibration;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;

pub use error::{Error, Result};
