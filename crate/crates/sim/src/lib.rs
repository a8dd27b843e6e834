//! Deterministic discrete-event simulator for a three-tier wireless mesh:
//! an authentication server behind wired gateways, a self-organizing
//! backbone of mesh routers protected by rotating key lists, and clients
//! that authenticate anonymously through ring signatures.
//!
//! Scenarios are JSON files ([`config::ScenarioConfig`]); a run produces a
//! stream of measurement records plus a final summary, both pure functions
//! of the configuration (see [`run`]).

pub mod cert;
pub mod config;
mod engine;
pub mod metrics;

pub use config::{ConfigError, ConfigIssue, ScenarioConfig};
pub use engine::{run, SimOutput};
