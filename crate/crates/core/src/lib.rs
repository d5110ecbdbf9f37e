//! Physical-layer modelling and data-driven prediction of the secret key
//! rate (SKR) of coherent one-way QKD links.
//!
//! * [`cow_model`]: closed-form SKR and the mean-photon-number inverse.
//! * [`data`]: monitoring CSV ingestion, cleaning, averaging, alignment,
//!   lag features, correlation and min-max scaling.
//! * [`synth`]: synthetic per-link monitoring traces.
//! * [`fit`]: bound-constrained Nelder-Mead fits of model parameters.
//! * [`mlp`]: multi-branch feedforward SKR regressor trained with Adam.
//! * [`metrics`]: ME / MAE / MRE / MSE error reports.
//! * [`cli`]: the `cowqkd` command-line tool.
//!
//! Data-parallel loops go through [`exec::Execution`]; the `parallel`
//! feature (on by default) backs them with rayon.

pub mod cli;
pub mod cow_model;
pub mod data;

pub mod error;
pub mod exec;
pub mod fit;
pub mod metrics;
pub mod mlp;
pub mod synth;





pub use error::{Error, Result};
pub use exec::Execution;
