//! Human evaluation leaderboard core: data model, label aggregation,
//! uncertainty estimates, budget planning, reproducibility simulation,
//! automatic metrics and annotation dispatch.

pub mod aggregation;
pub mod config;
pub mod dispatch;
pub mod error;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod rng;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
