//! Finite-key security bounds and key-rate simulation for decoy-state BB84
//! with biased basis choice and three intensity classes.
//!
//! The pipeline runs from a channel model through decoy-state parameter
//! estimation to the secure key length:
//!
//! ```
//! use finitekey::{evaluate, expected_counts, ChannelConfig, ProtocolConfig};
//!
//! let ch = ChannelConfig::default().with_length(50.0);
//! let pr = ProtocolConfig::default();
//! let counts = expected_counts(&ch, &pr).unwrap();
//! let report = evaluate(&counts, &pr).unwrap();
//! assert!(report.recomposes());
//! ```
//!
//! Every estimator is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decoy;
pub mod error;
pub mod experiments;
pub mod keyrate;
pub mod lp;
pub mod scalar;
pub mod special;
pub mod statbounds;

pub use channel::{expected_counts, sample_counts, Basis, CellCounts, IntensityClass, ObservedCounts};
pub use decoy::estimate;
pub use error::{AbortReason, Error, Result};
pub use experiments::{blocksize_sweep, bounds_demo, distance_sweep, optimize_parameters};
pub use keyrate::{delta_overhead, evaluate, secure_key_length};
pub use scalar::Real;
pub use statbounds::{cp_interval, worst_case_bounds, BoundSource, HypergeomParams};

pub type ChannelConfig = channel::ChannelConfig<f64>;
pub type ProtocolConfig = channel::ProtocolConfig<f64>;
pub type ConfidenceBound = statbounds::ConfidenceBound<f64>;
pub type YieldBounds = decoy::YieldBounds<f64>;
pub type PhotonYieldBounds = decoy::PhotonYieldBounds<f64>;
pub type EstimationResult = decoy::EstimationResult<f64>;
pub type KeyTerms = keyrate::KeyTerms<f64>;
pub type KeyRateReport = keyrate::KeyRateReport<f64>;
pub type OptimizationSpec = experiments::OptimizationSpec<f64>;
pub type OptimizationResult = experiments::OptimizationResult<f64>;
pub type SweepResult = experiments::SweepResult<f64>;
pub type BoundsTable = experiments::BoundsTable<f64>;
