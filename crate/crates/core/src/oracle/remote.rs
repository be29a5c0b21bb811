use std::io::Read;
use std::time::Duration;

use super::wire::{ErrorBody, HardResponse, MetaResponse, PredictRequest, SoftResponse};
use super::{Backend, LabelMode, OracleError, OracleMeta, ResponseKind};
use crate::tensor::Tensor;

/// Client for a model served over the `/v1` protocol.
pub struct RemoteBackend {
    agent: ureq::Agent,
    base: String,
    meta: OracleMeta,
    client_id: Option<String>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("base", &self.base)
            .field("meta", &self.meta)
            .finish()
    }
}

fn transport(e: impl std::fmt::Display) -> OracleError {
    OracleError::Transport(e.to_string())
}

fn read_body(resp: ureq::Response) -> Result<String, OracleError> {
    let mut text = String::new();
    resp.into_reader()
        .take(16 << 20)
        .read_to_string(&mut text)
        .map_err(transport)?;
    Ok(text)
}

fn map_error(e: ureq::Error) -> OracleError {
    match e {
        ureq::Error::Status(status, resp) => {
            let message = read_body(resp)
                .ok()
                .and_then(|t| serde_json::from_str::<ErrorBody>(&t).ok())
                .map(|b| b.error)
                .unwrap_or_default();
            if status == 429 && message == "budget_exhausted" {
                OracleError::BudgetExhausted
            } else {
                OracleError::Rejected { status, message }
            }
        }
        ureq::Error::Transport(t) => transport(t),
    }
}

impl RemoteBackend {
    pub fn connect(url: &str) -> Result<Self, OracleError> {
        Self::connect_with(url, Duration::from_secs(10), None)
    }

    /// Connects with a per-request timeout and an optional client id used
    /// by the server for budget accounting.
    pub fn connect_with(
        url: &str,
        timeout: Duration,
        client_id: Option<String>,
    ) -> Result<Self, OracleError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let base = url.trim_end_matches('/').to_string();
        let resp = agent
            .get(&format!("{base}/v1/meta"))
            .call()
            .map_err(map_error)?;
        let text = read_body(resp)?;
        let meta: MetaResponse = serde_json::from_str(&text)
            .map_err(|e| OracleError::Protocol(format!("bad meta response: {e}")))?;
        if meta.num_classes < 2 {
            return Err(OracleError::Protocol(format!(
                "server reports {} classes",
                meta.num_classes
            )));
        }
        Ok(Self {
            agent,
            base,
            meta: OracleMeta {
                num_classes: meta.num_classes,
                mode: meta.mode,
                input_shape: meta.input_shape,
            },
            client_id,
        })
    }
}

impl Backend for RemoteBackend {
    fn meta(&self) -> &OracleMeta {
        &self.meta
    }

    fn predict(&mut self, image: &Tensor) -> Result<ResponseKind, OracleError> {
        let body =
            serde_json::to_string(&PredictRequest::from_image(image)).expect("request serializes");
        let mut req = self
            .agent
            .post(&format!("{}/v1/predict", self.base))
            .set("Content-Type", "application/json");
        if let Some(id) = &self.client_id {
            req = req.set(super::server::CLIENT_ID_HEADER, id);
        }
        let text = read_body(req.send_string(&body).map_err(map_error)?)?;
        let protocol =
            |e: serde_json::Error| OracleError::Protocol(format!("bad predict response: {e}"));
        match self.meta.mode {
            LabelMode::Soft => {
                let r: SoftResponse = serde_json::from_str(&text).map_err(protocol)?;
                if r.logits.len() != self.meta.num_classes
                    || !r.logits.iter().all(|v| v.is_finite())
                {
                    return Err(OracleError::Protocol(format!(
                        "expected {} finite logits, got {:?}",
                        self.meta.num_classes, r.logits
                    )));
                }
                Ok(ResponseKind::Soft(r.logits))
            }
            LabelMode::Hard => {
                let r: HardResponse = serde_json::from_str(&text).map_err(protocol)?;
                if r.label >= self.meta.num_classes {
                    return Err(OracleError::Protocol(format!(
                        "label {} out of range",
                        r.label
                    )));
                }
                Ok(ResponseKind::Hard(r.label))
            }
        }
    }
}
