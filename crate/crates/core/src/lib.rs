//! Source-model selection engine.
//!
//! Ranks candidate models from a model database by how well their predictions
//! separate the target dataset's classes, without retraining. Candidate
//! logits become temperature-softened soft labels, each target class gets a
//! gaussian fit over those soft labels, and the mean pairwise separation
//! degree of the fits scores the candidate. Classical cluster-quality indexes
//! and divergence baselines are included for comparison, together with an
//! evaluation harness (correlation, trendline, top-k curves).

pub mod baselines;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod metric;
pub mod model_db;
pub mod run;
pub mod separation;
pub mod soft_label;

pub use error::{Error, Result};
pub use metric::{MetricKind, Orientation};
