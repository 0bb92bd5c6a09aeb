//! Sock-puppet audit testbed for a simulated short-video recommendation
//! feed: platform simulator, wire protocol, recording proxy, account
//! cloning, behavioral agents, experiment orchestration and statistics.

pub mod classifier;
pub mod clone;
pub mod config;
pub mod http;
pub mod orchestrator;
pub mod platform;
pub mod proxy;
pub mod puppet;
pub mod report;
pub mod stats;
pub mod topics;
pub mod wire;
