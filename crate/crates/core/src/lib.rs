//! Simulator core for conditional capabilities.
//!
//! [`cap`] holds the 128-bit compressed capability format with its operation
//! bound, [`machine`] the tagged-memory register machine that enforces it and
//! [`runtime`] the guest heap that hands out Write-before-Read capabilities.

pub mod cap;
pub mod config;
pub mod machine;
pub mod runtime;

pub use cap::{CapError, Capability, CpKind, EncodedCapability, Permissions};
pub use config::{EnforcementConfig, Mode};
