use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{score, MemoryLog, ProbeKey, RetryPolicy, ScoreMode, ScoreRequest, ScoringBackend, TokenScore};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::prompt::{render, ModelFamily, ProbePrompt, PromptId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResult {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub top_k: usize,
    pub scores: Vec<TokenScore>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub error: String,
}

/// A response body exactly as the backend returned it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedResponse {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub retry: RetryPolicy,
    /// Abort when more than this fraction of requests fail.
    pub max_failure_fraction: f64,
    pub execution: Execution,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            retry: RetryPolicy::default(),
            max_failure_fraction: 0.10,
            execution: Execution::Parallel { threads: 8 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub results: Vec<RawResult>,
    pub failures: Vec<ProbeFailure>,
    pub responses: Vec<LoggedResponse>,
    pub status: RunStatus,
}

/// Score every prompt against every model.
///
/// Failures are collected per (prompt, model) and the run continues; the
/// outcome is `Aborted` once the failure fraction passes the configured
/// limit. All outputs are sorted by (prompt id, model id), so they do not
/// depend on completion order or concurrency.
pub fn probe_run(
    dataset: &[ProbePrompt],
    families: &BTreeMap<String, ModelFamily>,
    backend: &dyn ScoringBackend,
    top_k: usize,
    options: &ProbeOptions,
) -> Result<ProbeOutcome> {
    if top_k == 0 {
        return Err(Error::Usage("top_k must be at least 1".into()));
    }
    if families.is_empty() {
        return Err(Error::Usage("no models to probe".into()));
    }
    let work: Vec<(&ProbePrompt, &str, ModelFamily)> = dataset
        .iter()
        .flat_map(|p| families.iter().map(move |(m, &f)| (p, m.as_str(), f)))
        .collect();

    let log = MemoryLog::default();
    let outcomes = options.execution.map(&work, |&(prompt, model, family)| {
        let request = ScoreRequest {
            model_id: model.to_string(),
            mode: ScoreMode::for_family(family),
            text: render(prompt, family).text,
            top_k,
            probe_key: Some(ProbeKey {
                prompt_id: prompt.id.clone(),
                occupation: prompt.occupation.name().to_string(),
                kind: prompt.kind,
            }),
        };
        score(&request, backend, &options.retry, &log)
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (&(prompt, model, _), outcome) in work.iter().zip(outcomes) {
        match outcome {
            Ok(scores) => results.push(RawResult {
                prompt_id: prompt.id.clone(),
                model_id: model.to_string(),
                top_k,
                scores,
            }),
            // A misconfigured model fails every request alike; stop early.
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => failures.push(ProbeFailure {
                prompt_id: prompt.id.clone(),
                model_id: model.to_string(),
                error: e.to_string(),
            }),
        }
    }
    let mut responses: Vec<LoggedResponse> = log
        .into_entries()
        .into_iter()
        .map(|(req, raw)| {
            let key = req.probe_key.expect("probe requests carry a key");
            LoggedResponse {
                prompt_id: key.prompt_id,
                model_id: req.model_id,
                raw,
            }
        })
        .collect();

    results.sort_by(|a, b| (&a.prompt_id, &a.model_id).cmp(&(&b.prompt_id, &b.model_id)));
    failures.sort_by(|a, b| (&a.prompt_id, &a.model_id).cmp(&(&b.prompt_id, &b.model_id)));
    responses.sort_by(|a, b| (&a.prompt_id, &a.model_id).cmp(&(&b.prompt_id, &b.model_id)));

    let status = if failures.is_empty() {
        RunStatus::Complete
    } else if failures.len() as f64 > options.max_failure_fraction * work.len() as f64 {
        RunStatus::Aborted
    } else {
        RunStatus::Partial
    };
    Ok(ProbeOutcome {
        results,
        failures,
        responses,
        status,
    })
}
