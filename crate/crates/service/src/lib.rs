//! HTTP service, event-sourced persistence and the `mspsc` command line.

pub mod cli;
pub mod engine;
pub mod http;
pub mod store;

pub use engine::{Engine, EngineError, SnapshotSource};
pub use http::{router, AppState};
