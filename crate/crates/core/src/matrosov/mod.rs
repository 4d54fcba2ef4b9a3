//! Auxiliary-function families, the assumption checks on their bounds, the
//! constructive gain search and the empirical stability verifiers.

mod channel_family;
mod checks;
mod family;
mod gains;
mod necessity;
mod skew_family;
mod stability;

pub use channel_family::aux_family_channels;
pub use checks::{
    check_derivative_bounds, check_nonpositivity_chain, check_zero_locus, BoundViolation, ChainLevel,
    ChainReport, ChainVerdict, DerivativeBoundReport, LocusLevel, YSampleOptions, YSamples, ZeroLocusReport,
};
pub use family::{
    AuxiliaryFamily, BallProduct, BoundCheck, CalibrationOptions, CalibrationReport, TimeMap,
    TimeVecMap, YBound, YMap,
};
pub use gains::{find_matrosov_gains, reverify, GainCertificate, GainOptions, Reverification, ZERO_TOL};
pub use necessity::{check_necessity_vector_field, NecessityOptions, NecessityPoint, NecessityReport};
pub use skew_family::{aux_family_chained3, aux_family_skew, FamilyOptions};
pub use stability::{
    verify_uga, verify_ugs, EnvelopeRow, SettlingRow, SimulationGrid, StabilityReport, StabilityWitness,
};

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::excitation::ExcitationError;
use crate::plants::PlantError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrosovError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("no excitation profile for `{label}`: {reason}")]
    ProfileUnavailable { label: String, reason: String },
    #[error("invalid family parameters: {0}")]
    Invalid(String),
    #[error("no positive epsilon: Y_j = {value} >= 0 at {witness:?}")]
    NoEpsilon { value: f64, witness: Vec<f64> },
    #[error("no gain at level {level}: bound {value} at {witness:?}")]
    NoGain { level: usize, value: f64, witness: Vec<f64> },
    #[error("certificate violated on re-verification: Z = {value} at {witness:?}")]
    CertificateViolated { value: f64, witness: Vec<f64> },
}
