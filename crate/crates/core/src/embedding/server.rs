//! Reference HTTP server for the remote embedding protocol.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use tiny_http::{Header, Method, Response, Server};

use super::remote::EmbedResponse;
use super::{Embedder, EmbeddingError};

#[derive(Deserialize)]
struct OwnedRequest {
    texts: Vec<String>,
}

/// Serves `POST /embed` from an [`Embedder`] on a background thread.
pub struct EmbedServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl EmbedServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(addr: &str, embedder: Arc<Embedder>) -> Result<Self, EmbeddingError> {
        let server = Server::http(addr)
            .map_err(|e| EmbeddingError::Config(format!("cannot bind {addr}: {e}")))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| EmbeddingError::Config(format!("{addr} is not an IP address")))?;
        let server = Arc::new(server);
        let worker = {
            let server = Arc::clone(&server);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &embedder);
                }
            })
        };
        Ok(Self {
            server,
            addr: local,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for a remote provider's `endpoint`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for EmbedServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn handle(mut request: tiny_http::Request, embedder: &Embedder) {
    let (status, body) = if request.url() != "/embed" {
        (404, error_body("not found"))
    } else if *request.method() != Method::Post {
        (405, error_body("use POST"))
    } else {
        let mut raw = String::new();
        match request.as_reader().read_to_string(&mut raw) {
            Err(e) => (400, error_body(&format!("unreadable body: {e}"))),
            Ok(_) => match serde_json::from_str::<OwnedRequest>(&raw) {
                Err(e) => (400, error_body(&format!("malformed request: {e}"))),
                Ok(req) => match embedder.embed_batch(&req.texts) {
                    Ok(vs) => {
                        let resp = EmbedResponse {
                            dim: embedder.dim(),
                            embeddings: vs.into_iter().map(|v| v.into_inner()).collect(),
                        };
                        (
                            200,
                            serde_json::to_string(&resp).expect("response serialises"),
                        )
                    }
                    Err(e) => (500, error_body(&e.to_string())),
                },
            },
        }
    };
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header());
    let _ = request.respond(response);
}
