use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, EmbeddingError, EmbeddingVector};

#[derive(Serialize)]
pub(crate) struct EmbedRequest<'a> {
    pub texts: &'a [&'a str],
}

#[derive(Serialize, Deserialize)]
pub(crate) struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
}

/// Client for the `POST <endpoint>/embed` protocol. One request per batch.
pub struct RemoteBackend {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteBackend {
    /// Connects and learns the dimension with an empty request.
    pub fn connect(endpoint: &str) -> Result<Self, EmbeddingError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/embed", endpoint.trim_end_matches('/'));
        let mut backend = Self { url, dim: 0, agent };
        let probe = backend.request(&[])?;
        if probe.dim == 0 {
            return Err(EmbeddingError::Config(format!(
                "{} declared dimension 0",
                backend.url
            )));
        }
        backend.dim = probe.dim;
        Ok(backend)
    }

    fn request(&self, texts: &[&str]) -> Result<EmbedResponse, EmbeddingError> {
        let transport = |message: String| EmbeddingError::Transport {
            first: 0,
            end: texts.len(),
            message,
        };
        let body = serde_json::to_string(&EmbedRequest { texts }).expect("request serialises");
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| transport(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| transport(e.to_string()))?;
        if status != 200 {
            return Err(transport(format!(
                "{} returned status {status}: {text}",
                self.url
            )));
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| EmbeddingError::Format {
                index: 0,
                message: format!("response is not valid JSON: {e}"),
            })?;
        if parsed.embeddings.len() != texts.len() {
            return Err(EmbeddingError::Format {
                index: parsed.embeddings.len().min(texts.len().saturating_sub(1)),
                message: format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    parsed.embeddings.len()
                ),
            });
        }
        Ok(parsed)
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let resp = self.request(texts)?;
        if resp.dim != self.dim {
            return Err(EmbeddingError::Format {
                index: 0,
                message: format!(
                    "declared dimension changed from {} to {}",
                    self.dim, resp.dim
                ),
            });
        }
        resp.embeddings
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::Format {
                        index: i,
                        message: format!("expected dimension {}, got {}", self.dim, v.len()),
                    });
                }
                EmbeddingVector::new(v).map_err(|e| EmbeddingError::Format {
                    index: i,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
