//! Agent transports for the VLA pipeline.
//!
//! Remote agents are reached over HTTP with retries, a per-endpoint
//! concurrency cap and credentials from `VLA_<ROLE>_API_KEY`. Offline runs
//! use file-backed or oracle agents. Either way every call lands in a
//! [`Transcript`] as one [`AgentEnvelope`] per attempt.

pub mod agents;
pub mod config;
pub mod envelope;
pub mod http;
pub mod server;
pub mod validate;
pub mod wire;

pub use agents::{build_agents, AgentConfigs, AgentContext, AgentSet};
pub use config::{AgentEndpointConfig, Transport};
pub use envelope::{AgentEnvelope, AgentRole, ClockMode, Transcript};
pub use server::{MockServer, MockState};
pub use validate::{validate_transcript, ValidationReport, Violation};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid config at {field}: {message}")]
    Config { field: String, message: String },

    #[error("{role} endpoint needs a credential in environment variable {var}")]
    MissingCredential { role: AgentRole, var: String },

    #[error("server error: {0}")]
    Server(String),

    #[error(transparent)]
    Core(#[from] vla_core::Error),
}
