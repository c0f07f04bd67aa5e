//! Leaderboard service for human evaluation of text generation.
//!
//! Submissions are validated and scored with automatic metrics on arrival,
//! then sampled, dispatched to annotators, aggregated and bootstrapped by
//! [`Service::run_pipeline_step`]. All state is a fold over an append-only
//! event log in the data directory.

pub mod catalog;
pub mod config;
pub mod error;
pub mod eventlog;
pub mod fixtures;
pub mod http;
pub mod ratelimit;
pub mod service;
pub mod state;
pub mod synthetic;

pub use catalog::Catalog;
pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
pub use service::{Leaderboard, LeaderboardEntry, Service, StepReport, SubmissionView};
pub use state::{Event, State};
