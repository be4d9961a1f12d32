//! Fuzzy recurrent stochastic configuration networks.
//!
//! A model is a bank of Gaussian TSK rules (centers from fuzzy c-means)
//! where each rule owns a recurrent sub-reservoir. Sub-reservoirs are grown
//! one node at a time: random candidate nodes are screened against the
//! current residual and only those passing the supervisory inequality are
//! eligible, the best one is kept and the readout is refit by global least
//! squares. The network output is the fire-strength weighted sum of the
//! sub-reservoir readouts, and the stacked readout can be adapted online.
//!
//! Modules:
//!
//! - [`dataset`] — synthetic plant generator, CSV ingestion, washout, noise, normalization
//! - [`fuzzy`] — fuzzy c-means rule extraction and normalized fire strengths
//! - [`reservoir`] — lower-triangular sub-reservoir, growth, spectral rescaling, rollout
//! - [`trainer`] — the stochastic configuration loop for one sub-reservoir
//! - [`model`] — assembled model, baselines, JSON persistence
//! - [`online`] — recursive projection update of the stacked readout
//! - [`eval`] — NRMSE, seeded trials, grid search, report files

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fuzzy;
pub mod linalg;
pub mod model;
pub mod online;
pub mod reservoir;
pub mod rng;
pub mod trainer;

pub use dataset::{NormalizationStats, PlantMode, TimeSeriesDataset};
pub use error::{FrscnError, Result};
pub use fuzzy::{FcmConfig, FuzzyRuleBank};
pub use model::{EsnConfig, FrscnModel, ModelKind};
pub use online::OnlineState;
pub use reservoir::{Activation, StateMatrix, SubReservoir};
pub use trainer::{ScConfig, StopReason, TrainReport};
