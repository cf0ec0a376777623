//! Deterministic benchmark harness.
//!
//! Six scripted benchmarks exercise long-horizon constraint tracking,
//! exception locality, decision stability, context cost, access isolation,
//! and poison resistance across six memory systems under one token budget.
//! Everything is a pure function of (benchmark, seed, horizon), so results
//! are reproducible byte for byte.

pub mod agent;
pub mod baselines;
pub mod metrics;
pub mod scenario;
pub mod suite;
