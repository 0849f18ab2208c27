//! Collaborative edge caching for cell-free massive-MIMO railway networks.
//!
//! A train carries UEs past a line of trackside APs. Each AP caches coded
//! fractions of a service catalog; a relay node on the train downloads the
//! services the UEs request. Three placement policies are provided: a
//! popularity-proportional baseline, a history-driven optimiser and a soft
//! actor-critic agent.

pub mod cache;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod delay;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod sac;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};
