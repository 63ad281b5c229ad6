//! String-stability analysis for homogeneous vehicle platoons.
//!
//! - [`model`]: parameter tuple, controller taxonomy, validity, error-model coefficients
//! - [`frequency`]: transfer function, frequency response, stability constraint, sweeps
//! - [`sim`]: fixed-step RK4 simulation of the spacing-error chain and the full state space
//! - [`monitor`]: offline checking of controller traces against the stability contract
//!
//! Batch work (sweeps, trace checks, frequency batches) goes through [`par`],
//! which uses rayon when the `parallel` feature is on.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod frequency;
pub mod model;
pub mod monitor;
pub mod par;
pub mod sim;

pub use frequency::{
    critical_frequencies, frequency_response, is_stable_at, stability_constraint, transfer_function, FrequencyError,
    FrequencyResponse, StabilityConstraint, TransferFunction,
};
pub use model::{
    error_model, is_valid_platoon, Configuration, ControllerSpec, ControllerType, ErrorModel, ModelError, ModelKind,
    PlatoonParams, Strategy,
};
pub use par::Execution;
