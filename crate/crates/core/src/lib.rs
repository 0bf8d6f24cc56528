//! Monte Carlo estimation of a simplicity-weighted universal intelligence
//! score.
//!
//! Environments are programs for a small prefix-free tape machine
//! ([`machine`]) or hand-written processes ([`environments`]). Agents
//! ([`agents`]) interact with them through the strictly alternating protocol
//! in [`interaction`]; [`valuation`] estimates the value of one agent in one
//! environment and [`upsilon`] mixes those values under the `2^-|p|` prior.

pub mod agents;
pub mod config;
pub mod environments;
pub mod external;
pub mod interaction;
pub mod machine;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod study;
pub mod upsilon;
pub mod valuation;

pub use interaction::{Action, History, Percept, ProtocolError, SpaceConfig};
