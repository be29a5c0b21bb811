//! Outer-level search over surrogate-ensemble weights driven by victim
//! queries, plus the whitebox reference optimizer and the hard-label
//! query-set attack.

mod bases;
mod hardlabel;
mod weights;
mod whitebox;

use thiserror::Error;

pub use bases::{
    bases_attack, default_eta, AttackOutcome, CandidateTag, Choice, CoordinateOrder,
    IterationRecord, QueryRecord, SearchConfig, SelectRule,
};
pub use hardlabel::{hardlabel_attack, hardlabel_queryset, QuerySetEntry};
pub use weights::{
    coordinate_pair, is_on_simplex, normalize_weights, WeightVector, SIMPLEX_TOLERANCE,
};
pub use whitebox::{
    estimate_weight_gradient, whitebox_weight_attack, WhiteboxConfig, WhiteboxOutcome,
};

use crate::loss::LossError;
use crate::nn::ModelError;
use crate::oracle::OracleError;
use crate::pm::PmError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error(transparent)]
    Pm(#[from] PmError),
    #[error(transparent)]
    Loss(#[from] LossError),
    /// The oracle failed mid-attack; `partial` holds everything logged so far.
    #[error("oracle failed after {} queries: {source}", partial.queries)]
    Oracle {
        source: OracleError,
        partial: Box<AttackOutcome>,
    },
}

impl From<ModelError> for AttackError {
    fn from(e: ModelError) -> Self {
        AttackError::Loss(LossError::Model(e))
    }
}
