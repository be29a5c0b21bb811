use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{ErrorBody, HardResponse, MetaResponse, PredictRequest, SoftResponse};
use super::{LabelMode, OracleError};
use crate::nn::Model;
use crate::tensor::argmax;

/// Header a client may send to be budgeted separately from others sharing
/// its IP address.
pub const CLIENT_ID_HEADER: &str = "x-client-id";

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub mode: LabelMode,
    pub bind: String,
    /// Maximum predictions per client; `None` disables the check.
    pub budget: Option<usize>,
    pub threads: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            mode: LabelMode::Soft,
            bind: "127.0.0.1:0".into(),
            budget: None,
            threads: 4,
        }
    }
}

/// One handled `/v1/predict` request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub client: String,
    pub status: u16,
}

struct Shared {
    model: Model,
    mode: LabelMode,
    budget: Option<usize>,
    used: Mutex<HashMap<String, usize>>,
    access: Mutex<Vec<AccessRecord>>,
}

/// A running server. Dropping the handle without calling
/// [`ServerHandle::shutdown`] leaves the workers running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    shared: Arc<Shared>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Every predict request seen so far, in arrival order.
    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.shared.access.lock().expect("access log lock").clone()
    }

    /// Number of predictions actually served (status 200).
    pub fn served(&self) -> usize {
        self.access_log().iter().filter(|r| r.status == 200).count()
    }

    /// Blocks until the workers exit (they only exit after shutdown).
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }
}

/// Serves `model` over HTTP until shut down.
pub fn serve(model: Model, cfg: &ServeConfig) -> Result<ServerHandle, OracleError> {
    let server =
        Server::http(&cfg.bind).map_err(|e| OracleError::Startup(format!("{}: {e}", cfg.bind)))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| OracleError::Startup("server is not bound to an IP socket".into()))?;
    let server = Arc::new(server);
    let shared = Arc::new(Shared {
        model,
        mode: cfg.mode,
        budget: cfg.budget,
        used: Mutex::new(HashMap::new()),
        access: Mutex::new(Vec::new()),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..cfg.threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle(&shared, req),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        addr,
        stop,
        workers,
        shared,
    })
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header =
        Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_body(message: &str) -> String {
    serde_json::to_string(&ErrorBody {
        error: message.to_string(),
    })
    .expect("error body serializes")
}

fn client_key(req: &Request) -> String {
    req.headers()
        .iter()
        .find(|h| h.field.equiv(CLIENT_ID_HEADER))
        .map(|h| h.value.as_str().to_string())
        .or_else(|| req.remote_addr().map(|a| a.ip().to_string()))
        .unwrap_or_else(|| "unknown".into())
}

fn handle(shared: &Shared, mut req: Request) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let (status, body) = match (req.method(), path.as_str()) {
        (Method::Get, "/v1/meta") => {
            let meta = MetaResponse {
                num_classes: shared.model.num_classes(),
                mode: shared.mode,
                input_shape: shared.model.input_shape().to_vec(),
            };
            (200, serde_json::to_string(&meta).expect("meta serializes"))
        }
        (Method::Post, "/v1/predict") => {
            let client = client_key(&req);
            let (status, body) = predict(shared, &client, &mut req);
            shared
                .access
                .lock()
                .expect("access log lock")
                .push(AccessRecord { client, status });
            (status, body)
        }
        (_, "/v1/meta") | (_, "/v1/predict") => (405, error_body("method_not_allowed")),
        _ => (404, error_body("not_found")),
    };
    let _ = req.respond(json_response(status, body));
}

fn predict(shared: &Shared, client: &str, req: &mut Request) -> (u16, String) {
    let mut text = String::new();
    if req.as_reader().read_to_string(&mut text).is_err() {
        return (400, error_body("body is not valid UTF-8"));
    }
    let parsed: PredictRequest = match serde_json::from_str(&text) {
        Ok(p) => p,
        Err(e) => return (400, error_body(&format!("malformed request: {e}"))),
    };
    let image = match parsed.to_image() {
        Ok(x) => x,
        Err(e) => return (400, error_body(&e)),
    };
    if image.shape() != shared.model.input_shape() {
        return (
            400,
            error_body(&format!(
                "shape {:?} does not match model input {:?}",
                image.shape(),
                shared.model.input_shape()
            )),
        );
    }
    if !image.data().iter().all(|p| (0.0..=1.0).contains(p)) {
        return (400, error_body("pixels outside [0, 1]"));
    }
    if let Some(budget) = shared.budget {
        let mut used = shared.used.lock().expect("budget lock");
        let n = used.entry(client.to_string()).or_insert(0);
        if *n >= budget {
            return (429, error_body("budget_exhausted"));
        }
        *n += 1;
    }
    let logits = match shared.model.forward(&image) {
        Ok(z) => z.into_data(),
        Err(e) => return (400, error_body(&e.to_string())),
    };
    let body = match shared.mode {
        LabelMode::Soft => serde_json::to_string(&SoftResponse { logits }),
        LabelMode::Hard => serde_json::to_string(&HardResponse {
            label: argmax(&logits),
        }),
    };
    (200, body.expect("response serializes"))
}
