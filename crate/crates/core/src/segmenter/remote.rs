use std::time::Duration;

use ureq::Agent;

use super::wire::{self, Health};
use super::{SegmentError, SegmentRequest, SegmentResponse, Segmenter};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Client for a service speaking the `/segment` + `/health` protocol.
///
/// Transport failures (connection errors, timeouts, 5xx answers) are retried
/// once before surfacing as [`SegmentError::BackendUnavailable`].
pub struct RemoteSegmenter {
    base_url: String,
    agent: Agent,
    id: String,
}

enum Attempt {
    Transport(String),
    Done(Result<String, SegmentError>),
}

impl RemoteSegmenter {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_string();
        Self {
            id: format!("remote:{base_url}"),
            base_url,
            agent,
        }
    }

    pub fn health(&self) -> Result<Health, SegmentError> {
        let body = self.with_retry(|| self.get_once("/health"))?;
        serde_json::from_str(&body).map_err(|e| SegmentError::Protocol(format!("health body: {e}")))
    }

    fn with_retry(&self, mut attempt: impl FnMut() -> Attempt) -> Result<String, SegmentError> {
        let mut last = String::new();
        for _ in 0..2 {
            match attempt() {
                Attempt::Done(result) => return result,
                Attempt::Transport(msg) => last = msg,
            }
        }
        Err(SegmentError::BackendUnavailable(last))
    }

    fn get_once(&self, path: &str) -> Attempt {
        let url = format!("{}{path}", self.base_url);
        classify(&url, self.agent.get(&url).call())
    }

    fn post_once(&self, body: &str) -> Attempt {
        let url = format!("{}/segment", self.base_url);
        let result = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .send(body);
        classify(&url, result)
    }
}

fn classify(url: &str, result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Attempt {
    let mut response = match result {
        Ok(r) => r,
        Err(e) => return Attempt::Transport(format!("{url}: {e}")),
    };
    let status = response.status().as_u16();
    let body = response.body_mut().read_to_string();
    if status >= 500 {
        return Attempt::Transport(format!("{url}: HTTP {status}"));
    }
    let body = match body {
        Ok(b) => b,
        Err(e) => return Attempt::Transport(format!("{url}: reading body: {e}")),
    };
    if status >= 400 {
        return Attempt::Done(Err(SegmentError::Protocol(format!("{url}: HTTP {status}: {body}"))));
    }
    Attempt::Done(Ok(body))
}

impl Segmenter for RemoteSegmenter {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn needs_image(&self) -> bool {
        true
    }

    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse, SegmentError> {
        let body = wire::encode_request(request)?;
        let reply = self.with_retry(|| self.post_once(&body))?;
        wire::decode_response(&reply, &self.id)
    }
}
