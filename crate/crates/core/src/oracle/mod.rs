//! Victim oracles: a uniform query interface over in-process models and
//! remote HTTP services, with per-handle query accounting.

mod remote;
mod server;
pub mod wire;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::loss::AttackGoal;
use crate::nn::Model;
use crate::tensor::{argmax, Tensor};

pub use remote::RemoteBackend;
pub use server::{serve, AccessRecord, ServeConfig, ServerHandle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("query budget exhausted")]
    BudgetExhausted,
    #[error("server rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid query image: {0}")]
    Input(String),
    #[error("server startup failed: {0}")]
    Startup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Soft,
    Hard,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "hard" => Ok(LabelMode::Hard),
            other => Err(format!(
                "unknown oracle mode {other:?} (expected soft or hard)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    Soft(Vec<f32>),
    Hard(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse {
    pub kind: ResponseKind,
    pub latency: Duration,
}

impl OracleResponse {
    /// Predicted class; soft responses break argmax ties toward the lowest index.
    pub fn label(&self) -> usize {
        match &self.kind {
            ResponseKind::Soft(z) => argmax(z),
            ResponseKind::Hard(y) => *y,
        }
    }

    pub fn logits(&self) -> Option<&[f32]> {
        match &self.kind {
            ResponseKind::Soft(z) => Some(z),
            ResponseKind::Hard(_) => None,
        }
    }
}

/// Targeted: predicted label equals the target. Untargeted: it differs
/// from the true label.
pub fn is_success(resp: &OracleResponse, goal: &AttackGoal) -> bool {
    goal.is_met_by(resp.label())
}

/// What an oracle serves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMeta {
    pub num_classes: usize,
    pub mode: LabelMode,
    pub input_shape: Vec<usize>,
}

/// A source of victim predictions.
pub trait Backend: Send {
    fn meta(&self) -> &OracleMeta;
    fn predict(&mut self, image: &Tensor) -> Result<ResponseKind, OracleError>;
}

/// Victim model evaluated in-process.
#[derive(Debug, Clone)]
pub struct LocalBackend {
    model: Model,
    meta: OracleMeta,
}

impl LocalBackend {
    pub fn new(model: Model, mode: LabelMode) -> Self {
        let meta = OracleMeta {
            num_classes: model.num_classes(),
            mode,
            input_shape: model.input_shape().to_vec(),
        };
        Self { model, meta }
    }
}

impl Backend for LocalBackend {
    fn meta(&self) -> &OracleMeta {
        &self.meta
    }

    fn predict(&mut self, image: &Tensor) -> Result<ResponseKind, OracleError> {
        let z = self
            .model
            .forward(image)
            .map_err(|e| OracleError::Input(e.to_string()))?
            .into_data();
        Ok(match self.meta.mode {
            LabelMode::Soft => ResponseKind::Soft(z),
            LabelMode::Hard => ResponseKind::Hard(argmax(&z)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEntry {
    /// Hex SHA-256 of the little-endian pixel bytes.
    pub image_digest: String,
    pub response: OracleResponse,
    /// Goal evaluation at query time, when the caller supplied a goal.
    pub success: Option<bool>,
}

/// Append-only record of every query issued through one handle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLog {
    entries: Vec<QueryEntry>,
}

impl QueryLog {
    pub fn entries(&self) -> &[QueryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn image_digest(image: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in image.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Requirements checked against the oracle's metadata at connect time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expectation {
    pub mode: Option<LabelMode>,
    /// Largest label the caller will use; must be below the class count.
    pub max_label: Option<usize>,
    pub input_shape: Option<Vec<usize>>,
}

/// Query handle: a backend plus the log and counter it owns.
pub struct Oracle {
    backend: Box<dyn Backend>,
    log: QueryLog,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("meta", self.backend.meta())
            .field("queries", &self.log.len())
            .finish()
    }
}

impl Oracle {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            log: QueryLog::default(),
        }
    }

    pub fn local(model: Model, mode: LabelMode) -> Self {
        Self::new(Box::new(LocalBackend::new(model, mode)))
    }

    /// Connects to a served model, performing the metadata handshake.
    pub fn connect(url: &str, expect: &Expectation) -> Result<Self, OracleError> {
        let backend = RemoteBackend::connect(url)?;
        let oracle = Self::new(Box::new(backend));
        oracle.check(expect)?;
        Ok(oracle)
    }

    pub fn check(&self, expect: &Expectation) -> Result<(), OracleError> {
        let meta = self.meta();
        if expect.mode == Some(LabelMode::Soft) && meta.mode == LabelMode::Hard {
            return Err(OracleError::Capability(
                "oracle serves hard labels but logits were requested".into(),
            ));
        }
        if let Some(label) = expect.max_label {
            if label >= meta.num_classes {
                return Err(OracleError::Config(format!(
                    "label {label} out of range for a {}-class oracle",
                    meta.num_classes
                )));
            }
        }
        if let Some(shape) = &expect.input_shape {
            if shape != &meta.input_shape {
                return Err(OracleError::Config(format!(
                    "oracle expects input {:?}, caller has {shape:?}",
                    meta.input_shape
                )));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> &OracleMeta {
        self.backend.meta()
    }

    /// Issues one query. Exactly one log entry is appended per successful call.
    pub fn query(
        &mut self,
        image: &Tensor,
        goal: Option<&AttackGoal>,
    ) -> Result<OracleResponse, OracleError> {
        let meta = self.backend.meta();
        if image.shape() != meta.input_shape.as_slice() {
            return Err(OracleError::Input(format!(
                "shape {:?} does not match oracle input {:?}",
                image.shape(),
                meta.input_shape
            )));
        }
        if !image.data().iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(OracleError::Input("pixels outside [0, 1]".into()));
        }
        let start = Instant::now();
        let kind = self.backend.predict(image)?;
        let response = OracleResponse {
            kind,
            latency: start.elapsed(),
        };
        self.log.entries.push(QueryEntry {
            image_digest: image_digest(image),
            response: response.clone(),
            success: goal.map(|g| is_success(&response, g)),
        });
        Ok(response)
    }

    pub fn count(&self) -> usize {
        self.log.len()
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }
}
