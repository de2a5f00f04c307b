use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::{ModelInfo, ModelsResponse, ScoreRequest, ScoringBackend};
use crate::error::{Error, Result};

/// Client for a `/v1` scoring service.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    client: Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn read(&self, response: reqwest::Result<reqwest::blocking::Response>, what: &str) -> Result<String> {
        let response = response.map_err(|e| Error::Transport {
            message: format!("{what}: {e}"),
            transient: true,
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| Error::Transport {
            message: format!("{what}: reading body: {e}"),
            transient: true,
        })?;
        match status {
            s if s.is_success() => Ok(body),
            StatusCode::NOT_FOUND => Err(Error::Config(format!("{what}: unknown model ({body})"))),
            StatusCode::BAD_REQUEST => Err(Error::protocol(format!("{what}: request rejected"), body)),
            s if s == StatusCode::SERVICE_UNAVAILABLE
                || s == StatusCode::TOO_MANY_REQUESTS
                || s.is_server_error() =>
            {
                Err(Error::Transport {
                    message: format!("{what}: HTTP {s}"),
                    transient: true,
                })
            }
            s => Err(Error::protocol(format!("{what}: unexpected HTTP {s}"), body)),
        }
    }
}

impl ScoringBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn models(&self) -> Result<Vec<ModelInfo>> {
        let raw = self.read(self.client.get(self.url("/v1/models")).send(), "GET /v1/models")?;
        let parsed: ModelsResponse = serde_json::from_str(&raw)
            .map_err(|e| Error::protocol(format!("malformed model list: {e}"), raw.clone()))?;
        Ok(parsed.models)
    }

    fn score_raw(&self, request: &ScoreRequest) -> Result<String> {
        let response = self
            .client
            .post(self.url("/v1/score"))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request.wire_body())
            .send();
        self.read(response, "POST /v1/score")
    }
}
