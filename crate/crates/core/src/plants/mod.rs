//! Concrete closed-loop plants and the shaping functions they use.

mod chained;
mod channels;
mod gains;
mod heat;
mod skew;

pub use chained::{chained3_closed_loop, chained_n_closed_loop, ChainedGains};
pub use channels::{
    channel_network_plant, Block, ChannelBias, ChannelNetworkConfig, ChannelState, InvariantReport,
    Sector,
};
pub use gains::{gain_identities_check, GainIdentityReport, GainVector};
pub use heat::{
    make_heat, HeatFunction, HeatKind, ModulatedQuadratic, Modulation, DEFAULT_TRUNCATION,
};
pub(crate) use heat::simpson_kernel;
pub use skew::{skew_matrix, skew_symmetric_plant, skew_weights};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("unknown heat-function kind `{0}`")]
    UnknownKind(String),
    #[error("invalid plant parameters: {0}")]
    Invalid(String),
    #[error("gain identities need strictly positive g̃, got {value} at index {index}")]
    NonPositiveGain { index: usize, value: f64 },
}
