//! Reverse-mode differentiation and the dense-network toolkit used by the
//! WGAN trainer: layers, initializers, batch/spectral normalization,
//! dropout, residual blocks, Adam, and JSON checkpoints.

mod adam;
mod matrix;
mod net;
pub mod spectral;
mod tape;

pub use adam::{AdamConfig, AdamState, CyclicLr};
pub use matrix::{dot, norm, Matrix};
pub use net::{
    grad_of_input_gradient, BatchNormState, BatchStats, BoundParams, DenseNet, ForwardPass,
    InitScheme, Layer, Mode, NetConfig, BN_EPS, BN_MOMENTUM,
};
pub use spectral::{spectral_normalize, PowerIterState};
pub use tape::{Activation, Gradients, Tape, Var, CDF_CLAMP, LEAKY_SLOPE};

pub(crate) use tape::{clamped_probit, mix_eval};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::StreamRng;

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Self-describing network checkpoint: shape and flags (inside `net`),
/// parameters, optimizer state and an optional RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub schema_version: u32,
    pub net: DenseNet,
    pub optimizer: Option<AdamState>,
    pub rng: Option<StreamRng>,
}

impl NetCheckpoint {
    pub fn new(net: DenseNet, optimizer: Option<AdamState>, rng: Option<StreamRng>) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA,
            net,
            optimizer,
            rng,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
