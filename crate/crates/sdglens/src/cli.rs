//! Command-line front end.
//!
//! Four subcommands cover the pipeline: `analyze` turns a directory of
//! sidecar logs into artifacts, `diff` compares two saved reports,
//! `scale-plan` reprints scaling priorities from a report, and `gen` writes
//! a synthetic corpus. Exit codes are part of the interface: 0 on success,
//! 1 on fatal input problems, 2 when the malformed-line ratio breaks its
//! limit.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::access_log::{discover_sources, filter_window, scan_file, FileScan};
use crate::antipatterns::{
    check_api_versioning, compile_version_pattern, compute_metrics, detect_cycles,
    detect_shared_persistency, rank_bottlenecks, DatastoreClassifier, DEFAULT_VERSION_PATTERN,
};
use crate::evolution::{diff_graphs, summarize_diff};
use crate::loggen::{generate_logs, TopologySpec};
use crate::report::{
    build_report, emit_cycles_text, emit_diff_json, emit_dot, emit_metrics_csv, emit_plan_json,
    emit_plan_table, emit_report_json, parse_report, AnalysisParameters, RenderOptions,
};
use crate::scaling::build_scaling_plan;
use crate::sdg::{build_graph, BuildOptions, ServiceDependencyGraph, TimeWindow};

/// Everything went through.
pub const EXIT_OK: i32 = 0;
/// Unusable input: missing files, bad flags, malformed manifests or reports.
pub const EXIT_INPUT_ERROR: i32 = 1;
/// Too many malformed log lines; the graph would not be trustworthy.
pub const EXIT_FAILURE_RATIO: i32 = 2;

/// Failure modes the process exposes as exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(
        "malformed line ratio {ratio:.3} exceeds limit {limit:.3} \
         ({failures} of {lines} lines); raise --failure-ratio-limit to proceed"
    )]
    FailureRatio { failures: u64, lines: u64, ratio: f64, limit: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT_ERROR,
            CliError::FailureRatio { .. } => EXIT_FAILURE_RATIO,
        }
    }

    fn input(err: impl std::fmt::Display) -> Self {
        CliError::Input(err.to_string())
    }
}

/// Rebuild dependency graphs from service-mesh access logs and report
/// coupling, cycles, drift, and scaling priorities.
#[derive(Debug, Parser)]
#[command(name = "sdglens", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the dependency graph from a log directory and emit artifacts.
    Analyze(AnalyzeArgs),
    /// Compare two saved analysis reports, old to new.
    Diff(DiffArgs),
    /// Print scaling priorities from a saved report.
    ScalePlan(ScalePlanArgs),
    /// Generate a synthetic log corpus from a topology spec.
    Gen(GenArgs),
}

#[derive(Debug, Default, Args)]
pub struct AnalyzeArgs {
    /// Directory of per-service JSON access-log files.
    #[arg(long, value_name = "DIR")]
    pub logs: Option<PathBuf>,
    /// JSON manifest binding file names to owning services.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Keep entries at or after this RFC 3339 instant.
    #[arg(long, value_name = "WHEN")]
    pub from: Option<String>,
    /// Keep entries strictly before this RFC 3339 instant.
    #[arg(long, value_name = "WHEN")]
    pub to: Option<String>,
    /// Directory the artifacts are written into.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Artifacts to produce: dot, csv, json, text. Repeat or comma-separate.
    #[arg(long = "format", value_name = "FMT", value_delimiter = ',')]
    pub formats: Vec<String>,
    /// Datastore name regex; repeatable, replaces the built-in set.
    #[arg(long = "db-pattern", value_name = "REGEX")]
    pub db_patterns: Vec<String>,
    /// Regex an endpoint must match to count as versioned.
    #[arg(long, value_name = "REGEX")]
    pub version_pattern: Option<String>,
    /// Collapse numeric and UUID path segments into {id}.
    #[arg(long)]
    pub collapse_ids: bool,
    /// Count only 2xx responses as dependency evidence.
    #[arg(long)]
    pub success_only: bool,
    /// Abort with exit code 2 when malformed lines exceed this fraction.
    #[arg(long, value_name = "RATIO")]
    pub failure_ratio_limit: Option<f64>,
    /// Keep only the first K scaling plan entries.
    #[arg(long, value_name = "K")]
    pub top_k: Option<usize>,
    /// Worker threads for parsing; defaults to the available cores.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// JSON config file; command-line flags win over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Report JSON of the older snapshot.
    #[arg(long, value_name = "FILE")]
    pub old: PathBuf,
    /// Report JSON of the newer snapshot.
    #[arg(long, value_name = "FILE")]
    pub new: PathBuf,
    /// Also write the structured diff as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScalePlanArgs {
    /// Report JSON produced by analyze.
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// Keep only the first K entries.
    #[arg(long, value_name = "K")]
    pub top_k: Option<usize>,
    /// Print the plan as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Topology spec JSON.
    #[arg(long, value_name = "FILE")]
    pub topology: PathBuf,
    /// Directory the log files are written into.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Override the seed stored in the spec.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

/// Artifact kinds `analyze` can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputFormat {
    Dot,
    Csv,
    Json,
    Text,
}

impl FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(OutputFormat::Dot),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "text" => Ok(OutputFormat::Text),
            other => Err(CliError::Input(format!(
                "unknown format {other:?}; expected dot, csv, json, or text"
            ))),
        }
    }
}

/// Optional JSON twin of [`AnalyzeArgs`]; flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    logs: Option<PathBuf>,
    manifest: Option<PathBuf>,
    from: Option<String>,
    to: Option<String>,
    out_dir: Option<PathBuf>,
    formats: Option<Vec<String>>,
    db_patterns: Option<Vec<String>>,
    version_pattern: Option<String>,
    collapse_ids: Option<bool>,
    success_only: Option<bool>,
    failure_ratio_limit: Option<f64>,
    top_k: Option<usize>,
    jobs: Option<usize>,
}

/// Fully resolved analyze settings: flags, then config file, then defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeConfig {
    pub logs_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub out_dir: PathBuf,
    pub formats: BTreeSet<OutputFormat>,
    pub db_patterns: Vec<String>,
    pub version_pattern: String,
    pub collapse_ids: bool,
    pub success_only: bool,
    pub failure_ratio_limit: f64,
    pub top_k: Option<usize>,
    pub jobs: usize,
}

/// Fraction of malformed lines tolerated before analyze refuses to answer.
pub const DEFAULT_FAILURE_RATIO_LIMIT: f64 = 0.25;

impl AnalyzeConfig {
    /// Merge flags with the optional config file and validate the result.
    pub fn resolve(args: &AnalyzeArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read config {path:?}: {e}")))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::Input(format!("malformed config {path:?}: {e}")))?
            }
            None => ConfigFile::default(),
        };

        let logs_dir = args
            .logs
            .clone()
            .or(file.logs)
            .ok_or_else(|| CliError::Input("missing --logs directory".to_string()))?;

        let parse_instant = |label: &str, value: &str| {
            DateTime::parse_from_rfc3339(value)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| CliError::Input(format!("invalid --{label} {value:?}: {e}")))
        };
        let from = match args.from.as_deref().or(file.from.as_deref()) {
            Some(value) => Some(parse_instant("from", value)?),
            None => None,
        };
        let to = match args.to.as_deref().or(file.to.as_deref()) {
            Some(value) => Some(parse_instant("to", value)?),
            None => None,
        };
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(CliError::Input(format!("invalid window: {f} is after {t}")));
            }
        }

        let format_names = if !args.formats.is_empty() {
            args.formats.clone()
        } else {
            file.formats.unwrap_or_else(|| {
                ["dot", "csv", "json", "text"].iter().map(|s| s.to_string()).collect()
            })
        };
        let formats = format_names
            .iter()
            .map(|name| name.parse())
            .collect::<Result<BTreeSet<OutputFormat>, CliError>>()?;
        if formats.is_empty() {
            return Err(CliError::Input("no output formats selected".to_string()));
        }

        let db_patterns = if !args.db_patterns.is_empty() {
            args.db_patterns.clone()
        } else {
            file.db_patterns.unwrap_or_else(|| {
                DatastoreClassifier::DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect()
            })
        };

        let failure_ratio_limit = args
            .failure_ratio_limit
            .or(file.failure_ratio_limit)
            .unwrap_or(DEFAULT_FAILURE_RATIO_LIMIT);
        if !(0.0..=1.0).contains(&failure_ratio_limit) {
            return Err(CliError::Input(format!(
                "--failure-ratio-limit {failure_ratio_limit} must be between 0 and 1"
            )));
        }

        let jobs = args
            .jobs
            .or(file.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".to_string()));
        }

        Ok(AnalyzeConfig {
            logs_dir,
            manifest: args.manifest.clone().or(file.manifest),
            from,
            to,
            out_dir: args
                .out_dir
                .clone()
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from("sdg-out")),
            formats,
            db_patterns,
            version_pattern: args
                .version_pattern
                .clone()
                .or(file.version_pattern)
                .unwrap_or_else(|| DEFAULT_VERSION_PATTERN.to_string()),
            collapse_ids: args.collapse_ids || file.collapse_ids.unwrap_or(false),
            success_only: args.success_only || file.success_only.unwrap_or(false),
            failure_ratio_limit,
            top_k: args.top_k.or(file.top_k),
            jobs,
        })
    }
}

/// Dispatch a parsed command line; the return value is the process exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Analyze(args) => {
            AnalyzeConfig::resolve(&args).and_then(|config| run_analyze(&config, stdout))
        }
        Command::Diff(args) => run_diff(&args, stdout),
        Command::ScalePlan(args) => run_scale_plan(&args, stdout),
        Command::Gen(args) => run_gen(&args, stdout, stderr),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(error) => {
            let _ = writeln!(stderr, "error: {error}");
            error.exit_code()
        }
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Input(format!("cannot write output: {e}")))
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Input(format!("cannot write {path:?}: {e}")))
}

/// Run the full pipeline: discover, parse, filter, build, score, emit.
pub fn run_analyze(config: &AnalyzeConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let sources =
        discover_sources(&config.logs_dir, config.manifest.as_deref()).map_err(CliError::input)?;
    if sources.is_empty() {
        say(
            stdout,
            &format!(
                "warning: no log files found in {}; emitting empty artifacts\n",
                config.logs_dir.display()
            ),
        )?;
    }

    let declared: BTreeSet<_> = sources.iter().map(|s| s.service.clone()).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(CliError::input)?;
    let scans: Vec<FileScan> = pool
        .install(|| sources.into_par_iter().map(scan_file).collect::<Result<_, _>>())
        .map_err(|e| CliError::Input(format!("reading logs: {e}")))?;

    let lines: u64 = scans.iter().map(FileScan::lines_seen).sum();
    let failures: u64 = scans.iter().map(|s| s.failures.len() as u64).sum();
    let ratio = if lines == 0 { 0.0 } else { failures as f64 / lines as f64 };
    if ratio > config.failure_ratio_limit {
        return Err(CliError::FailureRatio {
            failures,
            lines,
            ratio,
            limit: config.failure_ratio_limit,
        });
    }

    let mut pairs = Vec::new();
    let mut kept_scans = Vec::with_capacity(scans.len());
    for scan in scans {
        let entries =
            filter_window(scan.entries, config.from, config.to).map_err(CliError::input)?;
        kept_scans.push((scan.source.service, entries));
    }
    for (service, entries) in &kept_scans {
        for entry in entries {
            pairs.push((service, entry));
        }
    }

    let window = (config.from.is_some() || config.to.is_some())
        .then_some(TimeWindow { from: config.from, to: config.to });
    let options = BuildOptions {
        collapse_ids: config.collapse_ids,
        success_only: config.success_only,
        window,
        declared_nodes: declared,
    };
    let output = build_graph(pairs, &options);
    let graph = &output.graph;

    let classifier = DatastoreClassifier::new(&config.db_patterns).map_err(CliError::input)?;
    let version_pattern =
        compile_version_pattern(&config.version_pattern).map_err(CliError::input)?;

    let metrics = compute_metrics(graph);
    let cycles = detect_cycles(graph);
    let persistency = detect_shared_persistency(graph, &classifier);
    let versioning = check_api_versioning(graph, &version_pattern);
    let plan = build_scaling_plan(graph, &metrics, &classifier, config.top_k);

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {:?}: {e}", config.out_dir)))?;
    let mut written = Vec::new();
    if config.formats.contains(&OutputFormat::Dot) {
        let dot = emit_dot(graph, &cycles, &RenderOptions::default()).map_err(CliError::input)?;
        write_artifact(&config.out_dir, "sdg.dot", &dot)?;
        written.push("sdg.dot");
    }
    if config.formats.contains(&OutputFormat::Csv) {
        write_artifact(&config.out_dir, "metrics.csv", &emit_metrics_csv(&metrics))?;
        written.push("metrics.csv");
    }
    if config.formats.contains(&OutputFormat::Json) {
        let report = build_report(
            graph,
            metrics.clone(),
            cycles.clone(),
            persistency.clone(),
            versioning.clone(),
            plan.clone(),
            AnalysisParameters {
                collapse_ids: config.collapse_ids,
                success_only: config.success_only,
                db_patterns: classifier.patterns(),
                version_pattern: config.version_pattern.clone(),
            },
        );
        write_artifact(&config.out_dir, "report.json", &emit_report_json(&report))?;
        written.push("report.json");
    }

    let mut text = String::new();
    text.push_str(&format!(
        "services: {}  dependencies: {}  requests: {}\n",
        graph.node_count(),
        graph.edge_count(),
        graph.total_requests()
    ));
    if config.formats.contains(&OutputFormat::Text) {
        text.push_str(&emit_cycles_text(&cycles));
        if persistency.is_empty() {
            text.push_str("shared persistency: none\n");
        }
        for finding in &persistency {
            let sharers: Vec<&str> = finding.sharers.iter().map(|s| s.as_str()).collect();
            text.push_str(&format!(
                "shared datastore {}: used by {}\n",
                finding.datastore,
                sharers.join(", ")
            ));
        }
        let versioned = versioning.iter().filter(|f| f.versioned).count();
        text.push_str(&format!(
            "api versioning: {versioned}/{} endpoints versioned\n",
            versioning.len()
        ));
        for finding in versioning.iter().filter(|f| !f.versioned) {
            text.push_str(&format!(
                "unversioned endpoint: {} -> {} {}\n",
                finding.source, finding.destination, finding.endpoint
            ));
        }
        for (service, acs) in rank_bottlenecks(&metrics).into_iter().take(5) {
            text.push_str(&format!("criticality: {service} acs={acs}\n"));
        }
        text.push_str("scaling plan:\n");
        text.push_str(&emit_plan_table(&plan));
    }
    text.push_str(&format!(
        "parsed {lines} non-blank lines, skipped {failures} malformed (ratio {ratio:.3})\n"
    ));
    let diagnostics = &output.diagnostics;
    text.push_str(&format!(
        "counted {} outbound calls; skipped {} inbound mirrors, {} unknown-direction, \
         {} unresolved\n",
        diagnostics.calls_recorded,
        diagnostics.inbound_skipped,
        diagnostics.unknown_direction_skipped,
        diagnostics.unresolved_destination
    ));
    if !written.is_empty() {
        text.push_str(&format!("wrote {} to {}\n", written.join(", "), config.out_dir.display()));
    }
    say(stdout, &text)
}

fn load_graph(path: &Path) -> Result<ServiceDependencyGraph, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read report {path:?}: {e}")))?;
    let report =
        parse_report(&text).map_err(|e| CliError::Input(format!("report {path:?}: {e}")))?;
    ServiceDependencyGraph::from_snapshot(report.graph)
        .map_err(|e| CliError::Input(format!("report {path:?}: {e}")))
}

/// Diff two saved reports and print what changed.
pub fn run_diff(args: &DiffArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let old = load_graph(&args.old)?;
    let new = load_graph(&args.new)?;
    let diff = diff_graphs(&old, &new);
    if let Some(out) = &args.out {
        fs::write(out, emit_diff_json(&diff))
            .map_err(|e| CliError::Input(format!("cannot write {out:?}: {e}")))?;
    }
    let mut text = String::new();
    for line in summarize_diff(&diff) {
        text.push_str(&line);
        text.push('\n');
    }
    say(stdout, &text)
}

/// Recompute and print the scaling plan stored in a report's graph.
pub fn run_scale_plan(args: &ScalePlanArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.report)
        .map_err(|e| CliError::Input(format!("cannot read report {:?}: {e}", args.report)))?;
    let report = parse_report(&text)
        .map_err(|e| CliError::Input(format!("report {:?}: {e}", args.report)))?;
    let classifier =
        DatastoreClassifier::new(&report.parameters.db_patterns).map_err(CliError::input)?;
    let graph = ServiceDependencyGraph::from_snapshot(report.graph)
        .map_err(|e| CliError::Input(format!("report {:?}: {e}", args.report)))?;
    let metrics = compute_metrics(&graph);
    let plan = build_scaling_plan(&graph, &metrics, &classifier, args.top_k);
    if args.json {
        say(stdout, &emit_plan_json(&plan))
    } else {
        say(stdout, &emit_plan_table(&plan))
    }
}

/// Generate a synthetic corpus from a topology spec.
pub fn run_gen(
    args: &GenArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.topology)
        .map_err(|e| CliError::Input(format!("cannot read topology {:?}: {e}", args.topology)))?;
    let mut spec = TopologySpec::from_json(&text).map_err(CliError::input)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let warnings = spec.validate().map_err(CliError::input)?;
    for warning in warnings {
        writeln!(stderr, "warning: {warning}")
            .map_err(|e| CliError::Input(format!("cannot write output: {e}")))?;
    }
    let ledger = generate_logs(&spec, &args.out_dir).map_err(CliError::input)?;
    say(
        stdout,
        &format!(
            "wrote {} files ({} requests) to {}\n",
            ledger.files.len(),
            ledger.total_requests,
            args.out_dir.display()
        ),
    )
}
