//! A single-node feature store engine.
//!
//! Subsystems, each behind its own module:
//!
//! - [`registry`]: versioned entities and feature sets with
//!   mutable/immutable property discipline.
//! - [`dsl`]: the rolling-window aggregation and row-expression
//!   language feature transformations are written in.
//! - [`compute`]: feature calculation — derive the source window, run
//!   the transform, keep records inside the feature window.
//! - [`offline`] / [`online`]: the two materialization sinks, an
//!   append-only partitioned store and a latest-per-key store, kept
//!   consistent by shared merge semantics.
//! - [`scheduler`]: backfill and scheduled incremental jobs, data-state
//!   tracking, staged retries toward eventual consistency.
//! - [`retrieval`]: leakage-safe point-in-time joins and online
//!   lookups.
//! - [`consistency`]: cross-store bootstrap and divergence checks.
//! - [`engine`]: all of it wired over one store root directory.

pub mod compute;
pub mod consistency;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod frame;
mod fsio;
pub mod offline;
pub mod online;
pub mod record;
pub mod registry;
pub mod retrieval;
pub mod scheduler;
pub mod testing;
pub mod value;
pub mod window;

pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result};
pub use frame::Frame;
pub use record::FeatureRecord;
pub use registry::{EntityDef, FeatureSetSpec, FsvId};
pub use value::{ScalarType, Value};
pub use window::FeatureWindow;
