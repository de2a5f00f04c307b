use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stereoprobe::pipeline::{
    self, exit, Config, RunManifest, DATASET_FILE, REPORT_DIR,
};
use stereoprobe::report::Report;
use stereoprobe::Result;
use toml::Value;

#[derive(Parser)]
#[command(name = "stereoprobe", version, about = "Probe language models for gender-occupation stereotypes with counterexample prompts")]
struct Cli {
    /// TOML file with configuration keys (flags and environment win over it).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the probe dataset.
    Generate {
        /// Dataset file to write [default: <out>/dataset.jsonl].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Score a dataset against one or more models.
    Probe {
        /// Dataset to probe [default: <out>/dataset.jsonl].
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Run directory for probe artifacts.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Turn probe artifacts into condition, ratio, and effect records.
    Analyze {
        /// Run directory holding the probe artifacts.
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Render tables, CSV, and charts from analyzed results.
    Report {
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
        /// Output directory [default: <results>/report].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Comma-separated ks to report (same as --top-k).
        #[arg(long, value_name = "K,...")]
        k: Option<String>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Generate, probe, analyze, and report in one go.
    Run {
        /// Run directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Reuse stages whose artifacts match the current configuration.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        opts: Opts,
    },
    /// Check the occupation registry, lexicon, and configuration.
    Validate {
        #[command(flatten)]
        opts: Opts,
    },
}

/// Configuration keys settable from the command line.
#[derive(Args, Default)]
struct Opts {
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per background-counter kind.
    #[arg(long)]
    samples_m: Option<u32>,
    /// `mock` or the base URL of a scoring service.
    #[arg(long, value_name = "URL|mock")]
    backend: Option<String>,
    /// JSON response table for the mock backend.
    #[arg(long, value_name = "FILE")]
    mock_spec: Option<PathBuf>,
    /// Comma-separated model ids.
    #[arg(long, value_name = "ID,...")]
    models: Option<String>,
    /// Comma-separated ks, e.g. 3,5,10.
    #[arg(long, value_name = "K,...")]
    top_k: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Worker threads for probing and analysis.
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long, value_name = "PCT")]
    max_failure_pct: Option<f64>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long, value_name = "SECS")]
    timeout_secs: Option<u64>,
    /// Occupation table (TSV) replacing the shipped one.
    #[arg(long, value_name = "FILE")]
    registry: Option<PathBuf>,
    /// Gender lexicon (TSV) replacing the shipped one.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Comma-separated report formats: table-text, csv, chart-svg, chart-data.
    #[arg(long, value_name = "FMT,...")]
    format: Option<String>,
    /// Bar grouping: kind or occupation.
    #[arg(long)]
    group_by: Option<String>,
}

fn strings(list: &str) -> Value {
    Value::Array(pipeline::split_list(list).into_iter().map(Value::String).collect())
}

fn integers(list: &str) -> std::result::Result<Value, String> {
    pipeline::split_list(list)
        .iter()
        .map(|s| s.parse::<i64>().map(Value::Integer).map_err(|_| format!("not an integer: {s:?}")))
        .collect::<std::result::Result<_, _>>()
        .map(Value::Array)
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

impl Opts {
    fn to_table(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Value| {
            t.insert(k.to_string(), v);
        };
        if let Some(v) = self.seed {
            put("seed", Value::Integer(v as i64));
        }
        if let Some(v) = self.samples_m {
            put("samples_m", Value::Integer(v.into()));
        }
        if let Some(v) = &self.backend {
            put("backend", Value::String(v.clone()));
        }
        if let Some(v) = &self.mock_spec {
            put("mock_spec", path_value(v));
        }
        if let Some(v) = &self.models {
            put("models", strings(v));
        }
        if let Some(v) = &self.top_k {
            put("top_k", integers(v).map_err(|e| stereoprobe::Error::Usage(format!("--top-k: {e}")))?);
        }
        if let Some(v) = self.epsilon {
            put("epsilon", Value::Float(v));
        }
        if let Some(v) = self.concurrency {
            put("concurrency", Value::Integer(v as i64));
        }
        if let Some(v) = self.max_failure_pct {
            put("max_failure_pct", Value::Float(v));
        }
        if let Some(v) = self.retries {
            put("retries", Value::Integer(v.into()));
        }
        if let Some(v) = self.timeout_secs {
            put("timeout_secs", Value::Integer(v as i64));
        }
        if let Some(v) = &self.registry {
            put("registry", path_value(v));
        }
        if let Some(v) = &self.lexicon {
            put("lexicon", path_value(v));
        }
        if let Some(v) = &self.format {
            put("formats", strings(v));
        }
        if let Some(v) = &self.group_by {
            put("group_by", Value::String(v.clone()));
        }
        Ok(t)
    }
}

fn resolve(config_file: Option<&Path>, opts: &Opts, out: Option<&Path>) -> Result<Config> {
    let text = config_file.map(pipeline::read_text).transpose()?;
    let mut flags = opts.to_table()?;
    if let Some(out) = out {
        flags.insert("out".into(), path_value(out));
    }
    Config::resolve(text.as_deref(), &|k| std::env::var(k).ok(), flags)
}

fn print_manifest(m: &RunManifest, dir: &Path) {
    println!(
        "{}: {} results, {} failures, status {:?} ({})",
        dir.display(),
        m.results,
        m.failures,
        m.status,
        m.backend
    );
}

fn print_report(report: &Report, dir: &Path) {
    println!("report written to {}", dir.display());
    if !report.gaps.is_empty() {
        println!(
            "{} of the requested model/k slices have no results ({:.1}%)",
            report.gaps.len(),
            report.gap_fraction * 100.0
        );
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Generate { out, opts } => {
            let config = resolve(file, &opts, None)?;
            let path = out.unwrap_or_else(|| config.out.join(DATASET_FILE));
            let registry = config.load_registry()?;
            let prompts = pipeline::generate_stage(&config, &registry, &path)?;
            println!("{} prompts written to {}", prompts.len(), path.display());
            Ok(exit::OK)
        }
        Command::Probe { dataset, out, opts } => {
            let config = resolve(file, &opts, out.as_deref())?;
            let dataset = dataset.unwrap_or_else(|| config.out.join(DATASET_FILE));
            let registry = config.load_registry()?;
            let lexicon = config.load_lexicon()?;
            let manifest = pipeline::probe_stage(&config, &registry, &lexicon, &dataset, &config.out, None)?;
            print_manifest(&manifest, &config.out);
            Ok(manifest.status.exit_code())
        }
        Command::Analyze { results, opts } => {
            let config = resolve(file, &opts, results.as_deref())?;
            let registry = config.load_registry()?;
            let lexicon = config.load_lexicon()?;
            let analysis = pipeline::analyze_stage(&config, &registry, &lexicon, &config.out)?;
            println!(
                "{} records written to {}",
                analysis.records.len(),
                config.out.join(pipeline::RESULTS_FILE).display()
            );
            Ok(exit::OK)
        }
        Command::Report { results, out, k, mut opts } => {
            if k.is_some() {
                if opts.top_k.is_some() {
                    return Err(stereoprobe::Error::Usage("give --k or --top-k, not both".into()));
                }
                opts.top_k = k;
            }
            let models = opts.models.as_deref().map(pipeline::split_list).unwrap_or_default();
            let config = resolve(file, &opts, results.as_deref())?;
            let out = out.unwrap_or_else(|| config.out.join(REPORT_DIR));
            let report = pipeline::report_stage(&config, &config.out, models, &out)?;
            print_report(&report, &out);
            Ok(exit::OK)
        }
        Command::Run { out, resume, opts } => {
            let config = resolve(file, &opts, out.as_deref())?;
            let outcome = pipeline::run_pipeline(&config, resume)?;
            if !outcome.resumed.is_empty() {
                println!("reused: {}", outcome.resumed.join(", "));
            }
            print_manifest(&outcome.manifest, &config.out);
            if let Some(report) = &outcome.report {
                print_report(report, &config.out.join(REPORT_DIR));
            }
            Ok(outcome.exit_code())
        }
        Command::Validate { opts } => {
            let config = resolve(file, &opts, None)?;
            let check = pipeline::validate_inputs(&config)?;
            println!(
                "registry: {} occupations ({} female-dominated, {} male-dominated)",
                check.registry_size, check.registry_female, check.registry_male
            );
            println!(
                "lexicon: {} tokens ({} female, {} male), hash {}",
                check.lexicon.total, check.lexicon.female, check.lexicon.male, check.lexicon.hash
            );
            for p in check.registry_problems.iter().chain(&check.lexicon.problems) {
                println!("problem: {p}");
            }
            if check.is_ok() {
                println!("ok");
                Ok(exit::OK)
            } else {
                Ok(exit::VALIDATION)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
