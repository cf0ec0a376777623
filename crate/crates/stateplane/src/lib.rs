//! StatePlane: a model-agnostic cognitive state plane.
//!
//! The plane externalizes episodic, semantic, and procedural state from the
//! model, governs it under policy, decays it over time, and reconstructs a
//! policy-compliant working context under a hard token budget at every
//! invocation. Integration is a two-call contract: `PrepareContext` before
//! the model runs, `CommitOutcome` after.

pub mod bench;
pub mod encoding;
pub mod governance;
pub mod http;
pub mod model;
pub mod reconstruction;
pub mod retrieval;
pub mod segmentation;
pub mod service;
pub mod store;

pub use model::{ScopePath, StateObject, StatePlaneConfig, Tick};
pub use service::StatePlane;
