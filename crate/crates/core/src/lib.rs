//! Diagnostics and simulation for two-stage retrieve-then-rerank recommenders
//! serving cold-start users.
//!
//! The crate is organised around the stages of such a pipeline:
//!
//! * [`catalog`] loads items and users and builds the profile / pair texts a
//!   cross-encoder consumes.
//! * [`retrieval`] generates candidate pools (exact cosine, BM25, popularity,
//!   random and the hybrid union).
//! * [`scoring`] reranks pools and hosts ensemble scoring and calibration.
//! * [`metrics`] and [`stats`] measure quality, coverage, exposure and the
//!   significance of differences between pipelines.
//! * [`synthgen`] builds synthetic worlds with controllable popularity skew,
//!   embedding alignment and scorer bias.
//! * [`harness`] runs multi-seed experiments and ablations, and [`report`]
//!   renders their results as tables and plot data.

pub mod catalog;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod synthgen;

pub use catalog::{Catalog, Item, UserRecord};
pub use error::{Error, Result};
pub use metrics::{ExposureReport, PerUserResult, RankedList};
pub use retrieval::{Bm25Params, CandidatePool, EmbeddingSet};
pub use scoring::{CalibrationParams, EnsembleWeights, ScoreTable};
pub use stats::{RegressionFit, ScoreSeparationReport, StatTestReport};
pub use synthgen::{SyntheticWorld, WorldSpec};
