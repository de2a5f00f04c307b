//! Run configuration, manifests, and the generate → probe → analyze →
//! report stages. Stages exchange data only through files in a run
//! directory:
//!
//! | file                | written by | contents                               |
//! |---------------------|------------|----------------------------------------|
//! | `dataset.jsonl`     | generate   | one prompt per line                    |
//! | `raw_results.jsonl` | probe      | validated top-k scores per prompt/model|
//! | `responses.jsonl`   | probe      | backend payloads, verbatim             |
//! | `failures.jsonl`    | probe      | per-request failures                   |
//! | `manifest.json`     | probe      | seed, hashes, backend, models, ks      |
//! | `results.jsonl`     | analyze    | typed result records                   |
//! | `report/`           | report     | text, CSV, chart data, SVG             |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{analyze, Analysis, AnalysisOptions};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_EPSILON;
use crate::par::Execution;
use crate::prompt::{
    dataset_to_string, generate_dataset_with, read_dataset, DatasetConfig, ModelFamily,
    ProbePrompt, DEFAULT_SAMPLES_M,
};
use crate::registry::{self, Registry};
use crate::report::{build_report, Format, GroupBy, Report, ReportSpec};
use crate::scoring::{
    probe_run, HttpBackend, MockBackend, ProbeOptions, RetryPolicy, RunStatus, ScoringBackend,
};
use crate::verbalizer::{self, Lexicon};

pub const ENV_BACKEND_URL: &str = "STEREOPROBE_BACKEND_URL";
pub const ENV_OUT_DIR: &str = "STEREOPROBE_OUT_DIR";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const RAW_RESULTS_FILE: &str = "raw_results.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_DIR: &str = "report";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const PARTIAL: i32 = 3;
    pub const ABORTED: i32 = 4;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Io { .. } => exit::USAGE,
            Error::Parse { .. } | Error::Validation(_) | Error::Json(_) => exit::VALIDATION,
            Error::Transport { .. } | Error::Protocol { .. } => exit::ABORTED,
        }
    }
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Complete => exit::OK,
            RunStatus::Partial => exit::PARTIAL,
            RunStatus::Aborted => exit::ABORTED,
        }
    }
}

/// Flat run configuration. Every key may appear in the config file or be
/// set by a command-line flag; flags win over the environment, which wins
/// over the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub samples_m: u32,
    /// `mock` or a base URL of a `/v1` scoring service.
    pub backend: String,
    /// JSON table for the mock backend; synthetic mock models when unset.
    pub mock_spec: Option<PathBuf>,
    pub models: Vec<String>,
    pub top_k: Vec<usize>,
    pub out: PathBuf,
    pub epsilon: f64,
    pub concurrency: usize,
    pub max_failure_pct: f64,
    pub retries: u32,
    pub timeout_secs: u64,
    pub registry: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub formats: Vec<String>,
    /// `kind` or `occupation`.
    pub group_by: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            samples_m: DEFAULT_SAMPLES_M,
            backend: "mock".into(),
            mock_spec: None,
            models: vec!["bert-base".into()],
            top_k: vec![3, 5, 10],
            out: PathBuf::from("run"),
            epsilon: DEFAULT_EPSILON,
            concurrency: 8,
            max_failure_pct: 10.0,
            retries: 3,
            timeout_secs: 60,
            registry: None,
            lexicon: None,
            formats: vec!["table-text".into(), "csv".into(), "chart-svg".into(), "chart-data".into()],
            group_by: "kind".into(),
        }
    }
}

const CONFIG_KEYS: [&str; 16] = [
    "seed",
    "samples_m",
    "backend",
    "mock_spec",
    "models",
    "top_k",
    "out",
    "epsilon",
    "concurrency",
    "max_failure_pct",
    "retries",
    "timeout_secs",
    "registry",
    "lexicon",
    "formats",
    "group_by",
];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    table
        .keys()
        .filter(|k| !CONFIG_KEYS.contains(&k.as_str()))
        .cloned()
        .collect()
}

impl Config {
    /// Merge file, environment, and flag values (in rising precedence) over
    /// the defaults, then validate.
    pub fn resolve(
        file: Option<&str>,
        env: &dyn Fn(&str) -> Option<String>,
        flags: toml::Table,
    ) -> Result<Config> {
        let mut merged = match file {
            Some(text) => toml::from_str::<toml::Table>(text)
                .map_err(|e| Error::Usage(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        let mut bad = unknown_keys(&merged);
        bad.extend(unknown_keys(&flags));
        if !bad.is_empty() {
            bad.sort();
            bad.dedup();
            return Err(Error::Usage(format!("unknown configuration keys: {}", bad.join(", "))));
        }
        if let Some(url) = env(ENV_BACKEND_URL) {
            merged.insert("backend".into(), toml::Value::String(url));
        }
        if let Some(out) = env(ENV_OUT_DIR) {
            merged.insert("out".into(), toml::Value::String(out));
        }
        merged.extend(flags);
        let config: Config = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("configuration: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.samples_m == 0 {
            problems.push("samples_m (must be at least 1)".to_string());
        }
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            problems.push(format!("top_k ({:?}: need at least one k, each at least 1)", self.top_k));
        }
        if self.models.is_empty() || self.models.iter().any(|m| m.trim().is_empty()) {
            problems.push("models (need at least one nonempty id)".to_string());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            problems.push(format!("epsilon ({} is not a nonnegative number)", self.epsilon));
        }
        if self.concurrency == 0 {
            problems.push("concurrency (must be at least 1)".to_string());
        }
        if !(0.0..=100.0).contains(&self.max_failure_pct) {
            problems.push(format!("max_failure_pct ({} outside [0, 100])", self.max_failure_pct));
        }
        if self.mock_spec.is_some() && !self.is_mock() {
            problems.push("mock_spec, backend (a mock spec requires backend = \"mock\")".to_string());
        }
        if !self.is_mock() && !self.backend.starts_with("http://") && !self.backend.starts_with("https://") {
            problems.push(format!("backend ({:?} is neither \"mock\" nor an http(s) URL)", self.backend));
        }
        if self.formats.is_empty() || self.formats.iter().any(|f| Format::parse(f).is_none()) {
            problems.push(format!(
                "formats ({:?}: choose from table-text, csv, chart-svg, chart-data)",
                self.formats
            ));
        }
        if self.group_by_mode().is_none() {
            problems.push(format!("group_by ({:?}: kind or occupation)", self.group_by));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Usage(format!("invalid configuration: {}", problems.join("; "))))
        }
    }

    pub fn is_mock(&self) -> bool {
        self.backend == "mock"
    }

    fn group_by_mode(&self) -> Option<GroupBy> {
        match self.group_by.as_str() {
            "kind" | "knowledge_kind" => Some(GroupBy::KnowledgeKind),
            "occupation" => Some(GroupBy::Occupation),
            _ => None,
        }
    }

    pub fn max_k(&self) -> usize {
        self.top_k.iter().copied().max().unwrap_or(1)
    }

    pub fn execution(&self) -> Execution {
        Execution::with_threads(self.concurrency)
    }

    pub fn load_registry(&self) -> Result<Registry> {
        match &self.registry {
            None => Ok(Registry::canonical()),
            Some(path) => {
                let text = read_text(path)?;
                Registry::parse(&text, &path.display().to_string(), registry::Strictness::Custom)
            }
        }
    }

    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            None => Ok(Lexicon::canonical()),
            Some(path) => {
                let text = read_text(path)?;
                Lexicon::parse(&text, &path.display().to_string(), verbalizer::Strictness::Custom)
            }
        }
    }

    pub fn backend(&self, registry: &Registry) -> Result<Box<dyn ScoringBackend>> {
        if self.is_mock() {
            let mock = match &self.mock_spec {
                Some(path) => MockBackend::from_json(&read_text(path)?)?,
                None => MockBackend::synthetic(registry, &self.models)?,
            };
            Ok(Box::new(mock))
        } else {
            Ok(Box::new(HttpBackend::new(
                &self.backend,
                Duration::from_secs(self.timeout_secs),
            )?))
        }
    }

    pub fn report_spec(&self, models: Vec<String>) -> ReportSpec {
        ReportSpec {
            models,
            ks: self.top_k.clone(),
            group_by: self.group_by_mode().unwrap_or(GroupBy::KnowledgeKind),
            formats: self.formats.iter().filter_map(|f| Format::parse(f)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: Option<u64>,
    pub samples_m: Option<u32>,
    pub registry_size: usize,
    pub lexicon_hash: String,
    pub dataset_hash: String,
    pub backend: String,
    pub models: Vec<String>,
    pub ks: Vec<usize>,
    pub requested_top_k: usize,
    pub status: RunStatus,
    pub results: usize,
    pub failures: usize,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Generate the dataset and write it to `path`.
pub fn generate_stage(config: &Config, registry: &Registry, path: &Path) -> Result<Vec<ProbePrompt>> {
    let ds_config = DatasetConfig::new(registry.clone(), config.seed, config.samples_m);
    let prompts = generate_dataset_with(&ds_config, config.execution())?;
    write_text(path, &dataset_to_string(&prompts))?;
    Ok(prompts)
}

/// Model id → family, as reported by the backend.
pub fn resolve_families(
    backend: &dyn ScoringBackend,
    models: &[String],
) -> Result<BTreeMap<String, ModelFamily>> {
    let available = backend.models()?;
    models
        .iter()
        .map(|id| {
            let info = available.iter().find(|m| &m.id == id).ok_or_else(|| {
                Error::Config(format!(
                    "backend {} does not serve model {id:?} (available: {})",
                    backend.identity(),
                    available.iter().map(|m| m.id.as_str()).collect::<Vec<_>>().join(", ")
                ))
            })?;
            let family = info.family().ok_or_else(|| {
                Error::Config(format!(
                    "model {id:?}: unsupported mode {:?} / mask token {:?}",
                    info.mode, info.mask_token
                ))
            })?;
            Ok((id.clone(), family))
        })
        .collect()
}

/// Score `dataset_path` against every configured model and write the probe
/// artifacts and manifest into `dir`.
pub fn probe_stage(
    config: &Config,
    registry: &Registry,
    lexicon: &Lexicon,
    dataset_path: &Path,
    dir: &Path,
    seed: Option<u64>,
) -> Result<RunManifest> {
    let dataset_text = read_text(dataset_path)?;
    let dataset = read_dataset(&dataset_text, registry)?;
    let local_copy = dir.join(DATASET_FILE);
    if !same_file(dataset_path, &local_copy) {
        write_text(&local_copy, &dataset_text)?;
    }
    let backend = config.backend(registry)?;
    let families = resolve_families(backend.as_ref(), &config.models)?;
    let options = ProbeOptions {
        retry: RetryPolicy {
            max_retries: config.retries,
            ..RetryPolicy::default()
        },
        max_failure_fraction: config.max_failure_pct / 100.0,
        execution: config.execution(),
    };
    let outcome = probe_run(&dataset, &families, backend.as_ref(), config.max_k(), &options)?;
    write_text(&dir.join(RAW_RESULTS_FILE), &jsonl(&outcome.results)?)?;
    write_text(&dir.join(RESPONSES_FILE), &jsonl(&outcome.responses)?)?;
    write_text(&dir.join(FAILURES_FILE), &jsonl(&outcome.failures)?)?;

    let samples_m = dataset.iter().map(|p| p.sample_index + 1).max();
    let mut ks = config.top_k.clone();
    ks.sort_unstable();
    ks.dedup();
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed,
        samples_m,
        registry_size: registry.len(),
        lexicon_hash: lexicon.hash(),
        dataset_hash: sha256_hex(dataset_text.as_bytes()),
        backend: backend.identity(),
        models: config.models.clone(),
        ks,
        requested_top_k: config.max_k(),
        status: outcome.status,
        results: outcome.results.len(),
        failures: outcome.failures.len(),
    };
    write_text(&dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Aggregate the probe artifacts in `dir` into `results.jsonl`.
pub fn analyze_stage(config: &Config, registry: &Registry, lexicon: &Lexicon, dir: &Path) -> Result<Analysis> {
    let manifest = RunManifest::load(dir)?;
    if manifest.lexicon_hash != lexicon.hash() {
        return Err(Error::Validation(format!(
            "lexicon hash {} differs from the one recorded at probe time ({}); re-run probe with this lexicon",
            lexicon.hash(),
            manifest.lexicon_hash
        )));
    }
    let dataset_text = read_text(&dir.join(DATASET_FILE))?;
    if sha256_hex(dataset_text.as_bytes()) != manifest.dataset_hash {
        return Err(Error::Validation("dataset.jsonl does not match the manifest dataset hash".into()));
    }
    let dataset = read_dataset(&dataset_text, registry)?;
    let raw = read_jsonl(&dir.join(RAW_RESULTS_FILE))?;
    let ks: Vec<usize> = config
        .top_k
        .iter()
        .copied()
        .filter(|&k| k <= manifest.requested_top_k)
        .collect();
    if ks.is_empty() {
        return Err(Error::Usage(format!(
            "requested ks {:?} all exceed the probed top-{}",
            config.top_k, manifest.requested_top_k
        )));
    }
    let analysis = analyze(
        &dataset,
        &raw,
        lexicon,
        &AnalysisOptions {
            ks,
            epsilon: config.epsilon,
            execution: config.execution(),
        },
    )?;
    write_text(&dir.join(RESULTS_FILE), &analysis.to_jsonl(&lexicon.hash())?)?;
    Ok(analysis)
}

/// Build the report for `models` (manifest models when empty) from
/// `results_dir/results.jsonl` and write its artifacts into `out_dir`.
pub fn report_stage(config: &Config, results_dir: &Path, models: Vec<String>, out_dir: &Path) -> Result<Report> {
    let analysis = Analysis::from_jsonl(&read_text(&results_dir.join(RESULTS_FILE))?)?;
    let models = if models.is_empty() {
        RunManifest::load(results_dir)?.models
    } else {
        models
    };
    let spec = config.report_spec(models);
    let report = build_report(&analysis, &spec)?;
    for artifact in report.artifacts(&spec) {
        write_text(&out_dir.join(&artifact.name), &artifact.contents)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub report: Option<Report>,
    /// Stages skipped because `resume` found their artifacts.
    pub resumed: Vec<&'static str>,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        self.manifest.status.exit_code()
    }
}

/// Run every stage into `config.out`.
///
/// With `resume`, a stage whose outputs already exist is skipped, provided
/// they are consistent with the current configuration (same dataset hash,
/// models, ks, and backend for probing).
pub fn run_pipeline(config: &Config, resume: bool) -> Result<PipelineOutcome> {
    config.validate()?;
    let dir = config.out.as_path();
    let registry = config.load_registry()?;
    let lexicon = config.load_lexicon()?;
    let mut resumed = Vec::new();

    let dataset_path = dir.join(DATASET_FILE);
    let expected_dataset = {
        let cfg = DatasetConfig::new(registry.clone(), config.seed, config.samples_m);
        dataset_to_string(&generate_dataset_with(&cfg, config.execution())?)
    };
    let dataset_hash = sha256_hex(expected_dataset.as_bytes());
    let dataset_ok = resume
        && read_text(&dataset_path).is_ok_and(|t| sha256_hex(t.as_bytes()) == dataset_hash);
    if dataset_ok {
        resumed.push("generate");
    } else {
        write_text(&dataset_path, &expected_dataset)?;
    }

    let mut ks = config.top_k.clone();
    ks.sort_unstable();
    ks.dedup();
    let prior = RunManifest::load(dir).ok();
    let probe_ok = resume
        && dir.join(RAW_RESULTS_FILE).exists()
        && prior.as_ref().is_some_and(|m| {
            m.dataset_hash == dataset_hash
                && m.models == config.models
                && m.ks == ks
                && m.lexicon_hash == lexicon.hash()
                && m.status != RunStatus::Aborted
                && config.backend(&registry).is_ok_and(|b| b.identity() == m.backend)
        });
    let manifest = if probe_ok {
        resumed.push("probe");
        prior.expect("checked above")
    } else {
        // Downstream artifacts of an earlier run are stale now.
        let _ = fs::remove_file(dir.join(RESULTS_FILE));
        probe_stage(config, &registry, &lexicon, &dataset_path, dir, Some(config.seed))?
    };
    if manifest.status == RunStatus::Aborted {
        return Ok(PipelineOutcome {
            manifest,
            report: None,
            resumed,
        });
    }

    if resume && probe_ok && dir.join(RESULTS_FILE).exists() {
        resumed.push("analyze");
    } else {
        analyze_stage(config, &registry, &lexicon, dir)?;
    }
    let report = report_stage(config, dir, config.models.clone(), &dir.join(REPORT_DIR))?;
    Ok(PipelineOutcome {
        manifest,
        report: Some(report),
        resumed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InputCheck {
    pub registry_size: usize,
    pub registry_female: usize,
    pub registry_male: usize,
    pub registry_problems: Vec<String>,
    pub lexicon: verbalizer::ValidationReport,
}

impl InputCheck {
    pub fn is_ok(&self) -> bool {
        self.registry_problems.is_empty() && self.lexicon.is_ok()
    }
}

/// Check registry and lexicon. The shipped files (no override path) are held
/// to their canonical sizes; custom files only to the structural invariants.
pub fn validate_inputs(config: &Config) -> Result<InputCheck> {
    let registry = config.load_registry()?;
    let mut registry_problems = Vec::new();
    if config.registry.is_none() {
        if let Err(e) = Registry::from_occupations(registry.occupations().to_vec(), registry::Strictness::Canonical) {
            registry_problems.push(e.to_string());
        }
    }
    let lexicon = config.load_lexicon()?;
    let female = registry.of_dominance(registry::Dominance::FemaleDominated).count();
    Ok(InputCheck {
        registry_size: registry.len(),
        registry_female: female,
        registry_male: registry.len() - female,
        registry_problems,
        lexicon: lexicon.validate(config.lexicon.is_none()),
    })
}

/// Parse a comma-separated list (`3,5,10`, `a,b`).
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect()
}

/// Models present in an analysis, sorted.
pub fn models_in(analysis: &Analysis) -> Vec<String> {
    analysis
        .conditions()
        .map(|c| c.model_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
