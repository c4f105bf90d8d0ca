//! Proxy-guided hyperparameter selection for hierarchical time-series forecasting.
//!
//! A *student* forecaster is trained on the leaves of a hierarchy and its
//! hyperparameters are chosen either by temporal cross-validation on held-out
//! history or by agreement of its bottom-up aggregated test-window forecasts
//! with a *teacher*'s forecasts at higher levels (H-Pro).
//!
//! Modules:
//! - [`hierarchy`]: the level tree, bottom-up aggregation and coherence checks.
//! - [`data`]: panels, splits, CSV ingestion and synthetic benchmarks.
//! - [`forecasters`]: classical and global forecasters behind one interface.
//! - [`metrics`]: MSE, RMSSE, hierarchical RMSSE and Pearson correlation.
//! - [`hpo`]: objectives, random search, selection, proxies, trial stores.
//! - [`theory`]: numeric checks of the perfect-teacher identity and the
//!   imperfect-teacher bound, plus the variance-reduction demo.
//! - [`experiment`]: config-driven pipelines used by the `hpro` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod forecasters;
pub mod hierarchy;
pub mod hpo;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
pub use hierarchy::{ForecastGrid, HierarchyTree, NodeId};
