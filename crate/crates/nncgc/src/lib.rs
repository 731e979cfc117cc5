//! Estimation of individual and average treatment effects with neural
//! networks whose pre-representation layers are split along causal-graph
//! variable groups, so the learned representation contains only causally
//! valid covariate interactions.
//!
//! The crate covers the full workflow: causal discovery (ICA-based LiNGAM)
//! or expert graphs, group construction, the TARNet / Dragonnet / BCAUSS
//! estimators in constrained and unconstrained form, synthetic and
//! semi-synthetic benchmark data, evaluation metrics, and a seeded,
//! replication-parallel experiment runner.

pub mod bench;
pub mod config;
pub mod discovery;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod rng;
pub mod runner;
