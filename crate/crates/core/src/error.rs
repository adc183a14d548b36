use thiserror::Error;

use crate::channel::{Basis, IntensityClass};

/// Errors raised for invalid inputs to the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("protocol abort: {0}")]
    Abort(#[from] AbortReason),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// Reasons the protocol refuses to produce a key.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbortReason {
    #[error("no pulses in cell {class}{basis}{basis}")]
    EmptySample { class: IntensityClass, basis: Basis },
    #[error("decoy-state program infeasible in basis {basis}: {detail}")]
    Infeasible { basis: Basis, detail: String },
    #[error("single-photon yield lower bound in basis X is zero")]
    LooseEstimate,
    #[error("single-photon count bound in basis {basis} is zero")]
    NoSinglePhotons { basis: Basis },
    #[error("single-photon count dominance failed: n_Z1_lower={n_z1_lower} < {ratio} * n_X1_upper={n_x1_upper}")]
    Dominance {
        n_z1_lower: u64,
        n_x1_upper: u64,
        ratio: f64,
    },
    #[error("single-photon X error bound {qber1} exceeds tolerated phase error {q_tol}")]
    PhaseErrorAboveThreshold { qber1: f64, q_tol: f64 },
}

impl AbortReason {
    /// Short machine-friendly tag used in CSV output.
    pub fn tag(&self) -> &'static str {
        match self {
            AbortReason::EmptySample { .. } => "empty_sample",
            AbortReason::Infeasible { .. } => "infeasible",
            AbortReason::LooseEstimate => "loose_estimate",
            AbortReason::NoSinglePhotons { .. } => "no_single_photons",
            AbortReason::Dominance { .. } => "z1_dominance",
            AbortReason::PhaseErrorAboveThreshold { .. } => "phase_error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
