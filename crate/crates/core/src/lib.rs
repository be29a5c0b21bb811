//! Query-efficient blackbox adversarial attacks by searching over the
//! weights of a surrogate-model ensemble.
//!
//! The inner level ([`pm`]) turns a weight vector into a perturbation by
//! projected signed-gradient descent on the weighted surrogate loss; the
//! outer level ([`search`]) adjusts one weight at a time, two victim queries
//! per coordinate, until the victim is fooled or the query budget runs out.

pub mod harness;
pub mod loss;
pub mod nn;
pub mod oracle;
pub mod pm;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod zoo;

pub use loss::{AttackGoal, FusionKind, GoalMode, LossKind};
pub use nn::{LayerSpec, Model, ModelParams, ModelSpec};
pub use oracle::{LabelMode, Oracle, OracleResponse};
pub use pm::{Budget, Norm, PmConfig};
pub use search::{bases_attack, AttackOutcome, SearchConfig, WeightVector};
pub use tensor::Tensor;
