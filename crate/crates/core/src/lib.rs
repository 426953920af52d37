//! Reconstruction of complete, fixed-interval location timelines from sparse
//! geo-tagged event streams.
//!
//! The pipeline runs in stages that mirror the module layout:
//!
//! 1. [`ingest`] parses raw events and drops accounts with impossible movement.
//! 2. [`timeline`] slots events onto a fixed grid of time and space, then
//!    interpolates stays and nighttime home locations.
//! 3. [`probability`] builds per-user behaviour tables and community lists.
//! 4. [`ilc`] fills every gap with forward/backward intermediate passes.
//! 5. [`baselines`] provides the comparison models, [`eval`] the split,
//!    tuning and metrics, and [`pipeline`] wires them together.
//!
//! [`synth`] generates cohorts with known ground truth for testing.
//!
//! Per-user work is data parallel. With the default `parallel` feature it runs
//! on rayon; [`par::Exec::Sequential`] (or building without the feature) keeps
//! everything on the calling thread.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ilc;
pub mod ingest;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod probability;
pub mod synth;
pub mod timeline;

pub use error::{Error, Result};
pub use geo::{GeoPoint, GridCell, GridSpec};
pub use probability::ProbList;
pub use timeline::{AssignedTimeline, Provenance, Resolution};
