//! Top-k token probabilities from a scoring backend.
//!
//! Backends return the raw wire payload (`{"scores":[{"token":..,"p":..}]}`).
//! [`score`] records it verbatim, then parses and validates it here so that
//! nothing from the wire is trusted unchecked.

mod http;
mod mock;
mod probe;

use std::collections::HashSet;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{ModelFamily, PromptId, PromptKind};

pub use http::HttpBackend;
pub use mock::{MockBackend, MockModelSpec};
pub use probe::{
    probe_run, LoggedResponse, ProbeFailure, ProbeOptions, ProbeOutcome, RawResult, RunStatus,
};

/// Mask sentinels recognised in masked-mode request text.
pub const MASK_SENTINELS: [&str; 2] = ["[MASK]", "<mask>"];

/// Slack on the "top-k mass is at most one" check, for float summation noise.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    #[serde(rename = "p")]
    pub probability: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, probability: f64) -> Self {
        TokenScore {
            token: token.into(),
            probability,
        }
    }
}

/// Check rank order, uniqueness, and per-entry range of a score list.
pub fn validate_scores(scores: &[TokenScore]) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    let mut mass = 0.0;
    for (rank, s) in scores.iter().enumerate() {
        let p = s.probability;
        if !p.is_finite() || p <= 0.0 || p > 1.0 {
            return Err(format!("rank {rank}: probability {p} outside (0, 1]"));
        }
        if !seen.insert(s.token.as_str()) {
            return Err(format!("rank {rank}: duplicate token {:?}", s.token));
        }
        if rank > 0 && p > scores[rank - 1].probability {
            return Err(format!("rank {rank}: probability increases ({p})"));
        }
        mass += p;
    }
    if mass > 1.0 + MASS_TOLERANCE {
        return Err(format!("total mass {mass} exceeds 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[serde(rename = "masked")]
    MaskedFill,
    #[serde(rename = "causal")]
    CausalNext,
}

impl ScoreMode {
    pub fn for_family(family: ModelFamily) -> Self {
        if family.is_masked() {
            ScoreMode::MaskedFill
        } else {
            ScoreMode::CausalNext
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::MaskedFill => "masked",
            ScoreMode::CausalNext => "causal",
        }
    }
}

/// Which dataset prompt a request came from. Never sent over the wire;
/// the mock backend keys its tables on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeKey {
    pub prompt_id: PromptId,
    pub occupation: String,
    pub kind: PromptKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRequest {
    pub model_id: String,
    pub mode: ScoreMode,
    pub text: String,
    pub top_k: usize,
    pub probe_key: Option<ProbeKey>,
}

impl ScoreRequest {
    pub fn new(model_id: impl Into<String>, mode: ScoreMode, text: impl Into<String>, top_k: usize) -> Self {
        ScoreRequest {
            model_id: model_id.into(),
            mode,
            text: text.into(),
            top_k,
            probe_key: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Usage("top_k must be at least 1".into()));
        }
        let masks: usize = MASK_SENTINELS
            .iter()
            .map(|m| self.text.matches(m).count())
            .sum();
        match (self.mode, masks) {
            (ScoreMode::MaskedFill, 1) | (ScoreMode::CausalNext, 0) => Ok(()),
            (mode, n) => Err(Error::Usage(format!(
                "{} request must contain {} mask sentinel(s), found {n}",
                mode.as_str(),
                if mode == ScoreMode::MaskedFill { "exactly one" } else { "no" }
            ))),
        }
    }

    pub(crate) fn wire_body(&self) -> String {
        #[derive(Serialize)]
        struct Wire<'a> {
            model: &'a str,
            mode: ScoreMode,
            text: &'a str,
            top_k: usize,
        }
        serde_json::to_string(&Wire {
            model: &self.model_id,
            mode: self.mode,
            text: &self.text,
            top_k: self.top_k,
        })
        .expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_token: Option<String>,
}

impl ModelInfo {
    pub fn family(&self) -> Option<ModelFamily> {
        ModelFamily::from_wire(&self.mode, self.mask_token.as_deref())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ScoreResponse {
    pub scores: Vec<TokenScore>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ModelsResponse {
    pub models: Vec<ModelInfo>,
}

/// A source of top-k scores. Implementations must tolerate concurrent calls.
pub trait ScoringBackend: Send + Sync {
    /// Stable description recorded in run manifests.
    fn identity(&self) -> String;

    fn models(&self) -> Result<Vec<ModelInfo>>;

    /// Raw response body for `request`. Transient failures are reported as
    /// `Error::Transport { transient: true, .. }`.
    fn score_raw(&self, request: &ScoreRequest) -> Result<String>;
}

/// Receives every raw response before it is parsed.
pub trait ResponseSink: Sync {
    fn record(&self, request: &ScoreRequest, raw: &str);
}

impl ResponseSink for () {
    fn record(&self, _: &ScoreRequest, _: &str) {}
}

/// Keeps raw responses in memory, in arrival order.
#[derive(Debug, Default)]
pub struct MemoryLog {
    entries: Mutex<Vec<(ScoreRequest, String)>>,
}

impl MemoryLog {
    pub fn into_entries(self) -> Vec<(ScoreRequest, String)> {
        self.entries.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl ResponseSink for MemoryLog {
    fn record(&self, request: &ScoreRequest, raw: &str) {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.push((request.clone(), raw.to_string()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }

    /// Delay before retry number `retry` (0-based): base * 2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub fn parse_score_response(raw: &str) -> Result<Vec<TokenScore>> {
    let response: ScoreResponse = serde_json::from_str(raw)
        .map_err(|e| Error::protocol(format!("malformed score response: {e}"), raw))?;
    validate_scores(&response.scores).map_err(|msg| Error::protocol(msg, raw))?;
    Ok(response.scores)
}

/// Score one request: retry transient failures, record the raw payload,
/// validate it, and cut it to `top_k`.
pub fn score(
    request: &ScoreRequest,
    backend: &dyn ScoringBackend,
    retry: &RetryPolicy,
    sink: &dyn ResponseSink,
) -> Result<Vec<TokenScore>> {
    request.validate()?;
    let mut attempt = 0;
    let raw = loop {
        match backend.score_raw(request) {
            Ok(raw) => break raw,
            Err(e) if e.is_transient() && attempt < retry.max_retries => {
                std::thread::sleep(retry.delay(attempt));
                attempt += 1;
            }
            Err(Error::Transport { message, .. }) => {
                return Err(Error::Transport {
                    message: format!("{message} (after {} attempt(s))", attempt + 1),
                    transient: false,
                })
            }
            Err(e) => return Err(e),
        }
    };
    sink.record(request, &raw);
    let mut scores = parse_score_response(&raw)?;
    scores.truncate(request.top_k);
    Ok(scores)
}
