//! Deterministic artifact emitters.
//!
//! Every emitter in this module promises byte-identical output for equal
//! input: nodes, edges, rows, and JSON object keys are all emitted in sorted
//! order with fixed number formatting, so artifacts can be diffed and cached
//! by content hash.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access_log::ServiceId;
use crate::antipatterns::{CycleReport, MetricsRow, PersistencyFinding, VersioningFinding};
use crate::evolution::SdgDiff;
use crate::scaling::ScalingPlan;
use crate::sdg::{GraphSnapshot, ServiceDependencyGraph};

/// Serialize any value as pretty JSON with all object keys sorted.
fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("report types serialize");
    let mut text = serde_json::to_string_pretty(&value).expect("JSON value prints");
    text.push('\n');
    text
}

/// Visual knobs for DOT output.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Pen width of the lightest edge, in points.
    pub min_penwidth: f64,
    /// Pen width of the heaviest edge, in points.
    pub max_penwidth: f64,
    /// Label edges with their endpoint.
    pub endpoint_labels: bool,
    /// Append the request count to edge labels.
    pub weight_labels: bool,
    /// Color edges inside cycles red.
    pub highlight_cycles: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            min_penwidth: 1.0,
            max_penwidth: 5.0,
            endpoint_labels: true,
            weight_labels: true,
            highlight_cycles: true,
        }
    }
}

/// Rejected [`RenderOptions`].
#[derive(Debug, Clone, PartialEq, Error)]
#[error(
    "invalid render options: min_penwidth {min} and max_penwidth {max} must satisfy 0 < min <= max"
)]
pub struct InvalidRenderOptions {
    pub min: f64,
    pub max: f64,
}

impl RenderOptions {
    fn validate(&self) -> Result<(), InvalidRenderOptions> {
        let ok = self.min_penwidth > 0.0
            && self.min_penwidth.is_finite()
            && self.max_penwidth.is_finite()
            && self.min_penwidth <= self.max_penwidth;
        if ok {
            Ok(())
        } else {
            Err(InvalidRenderOptions { min: self.min_penwidth, max: self.max_penwidth })
        }
    }
}

/// Render the graph as Graphviz DOT.
///
/// Edge pen width scales with `ln(1 + weight)` between the configured
/// bounds, so a 100x traffic spread stays readable; when all weights are
/// equal every edge gets the minimum width. An empty graph renders as
/// exactly `digraph sdg { }`.
pub fn emit_dot(
    graph: &ServiceDependencyGraph,
    cycles: &CycleReport,
    options: &RenderOptions,
) -> Result<String, InvalidRenderOptions> {
    options.validate()?;
    if graph.is_empty() {
        return Ok("digraph sdg { }\n".to_string());
    }

    let weights: Vec<u64> = graph.edges().map(|(_, w)| w).collect();
    let w_min = weights.iter().copied().min().unwrap_or(0);
    let w_max = weights.iter().copied().max().unwrap_or(0);

    let mut tangled: std::collections::BTreeSet<(&ServiceId, &ServiceId)> =
        std::collections::BTreeSet::new();
    for component in &cycles.components {
        for a in component {
            for b in component {
                if a != b {
                    tangled.insert((a, b));
                }
            }
        }
    }

    let mut out = String::from("digraph sdg {\n  rankdir=LR;\n");
    for node in graph.nodes() {
        out.push_str(&format!("  \"{}\";\n", dot_escape(node.as_str())));
    }
    for (key, weight) in graph.edges() {
        let mut attrs: Vec<String> = Vec::new();
        let label = match (options.endpoint_labels, options.weight_labels) {
            (true, true) => Some(format!("{} ({weight})", key.endpoint)),
            (true, false) => Some(key.endpoint.clone()),
            (false, true) => Some(format!("({weight})")),
            (false, false) => None,
        };
        if let Some(label) = label {
            attrs.push(format!("label=\"{}\"", dot_escape(&label)));
        }
        attrs.push(format!("penwidth={:.2}", penwidth(weight, w_min, w_max, options)));
        let on_cycle =
            key.source == key.destination || tangled.contains(&(&key.source, &key.destination));
        if options.highlight_cycles && on_cycle {
            attrs.push("color=\"red\"".to_string());
        }
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [{}];\n",
            dot_escape(key.source.as_str()),
            dot_escape(key.destination.as_str()),
            attrs.join(", ")
        ));
    }
    out.push_str("}\n");
    Ok(out)
}

fn penwidth(weight: u64, w_min: u64, w_max: u64, options: &RenderOptions) -> f64 {
    if w_max == 0 || w_max == w_min {
        return options.min_penwidth;
    }
    let scale = ((1 + weight) as f64).ln() / ((1 + w_max) as f64).ln();
    options.min_penwidth + (options.max_penwidth - options.min_penwidth) * scale
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Header of the metrics CSV, also used to validate parses.
pub const METRICS_CSV_HEADER: &str = "service_name,in_degree,out_degree,ais,ads,acs";

/// Render metrics as CSV with LF line endings, rows sorted by service name.
pub fn emit_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.service.cmp(&b.service));
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.service, row.in_degree, row.out_degree, row.ais, row.ads, row.acs
        ));
    }
    out
}

/// Rejected metrics CSV.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CsvParseError {
    #[error("unexpected header {0:?}")]
    Header(String),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

/// Parse a metrics CSV produced by [`emit_metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, CsvParseError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != METRICS_CSV_HEADER {
        return Err(CsvParseError::Header(header.to_string()));
    }
    let mut rows = Vec::new();
    for (index, line) in lines.enumerate() {
        let line_number = index + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CsvParseError::Row {
                line: line_number,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let service = ServiceId::new(fields[0])
            .map_err(|e| CsvParseError::Row { line: line_number, reason: e.to_string() })?;
        let number = |field: &str| {
            field.parse::<u64>().map_err(|_| CsvParseError::Row {
                line: line_number,
                reason: format!("not a number: {field:?}"),
            })
        };
        rows.push(MetricsRow {
            service,
            in_degree: number(fields[1])?,
            out_degree: number(fields[2])?,
            ais: number(fields[3])?,
            ads: number(fields[4])?,
            acs: number(fields[5])?,
        });
    }
    Ok(rows)
}

/// Version stamp of the report JSON layout.
pub const SCHEMA_VERSION: &str = "1";

/// Analysis inputs echoed into the report so downstream consumers can
/// reproduce or reinterpret it without the original command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisParameters {
    pub collapse_ids: bool,
    pub success_only: bool,
    pub db_patterns: Vec<String>,
    pub version_pattern: String,
}

/// The complete analysis result: graph snapshot plus every derived finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub parameters: AnalysisParameters,
    pub graph: GraphSnapshot,
    pub metrics: Vec<MetricsRow>,
    pub cycles: CycleReport,
    pub shared_persistency: Vec<PersistencyFinding>,
    pub api_versioning: Vec<VersioningFinding>,
    pub scaling_plan: ScalingPlan,
}

/// Assemble a [`Report`] from the analysis pieces.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    graph: &ServiceDependencyGraph,
    metrics: Vec<MetricsRow>,
    cycles: CycleReport,
    shared_persistency: Vec<PersistencyFinding>,
    api_versioning: Vec<VersioningFinding>,
    scaling_plan: ScalingPlan,
    parameters: AnalysisParameters,
) -> Report {
    Report {
        schema_version: SCHEMA_VERSION.to_string(),
        parameters,
        graph: graph.snapshot(),
        metrics,
        cycles,
        shared_persistency,
        api_versioning,
        scaling_plan,
    }
}

/// Render a report as pretty JSON with sorted keys and sorted arrays.
pub fn emit_report_json(report: &Report) -> String {
    canonical_json(report)
}

/// Rejected report JSON.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportParseError {
    #[error("malformed report: {0}")]
    Json(String),
    #[error("unsupported schema_version {found:?}, expected {SCHEMA_VERSION:?}")]
    SchemaVersion { found: String },
}

/// Parse a report produced by [`emit_report_json`], checking its version.
pub fn parse_report(text: &str) -> Result<Report, ReportParseError> {
    let report: Report =
        serde_json::from_str(text).map_err(|e| ReportParseError::Json(e.to_string()))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(ReportParseError::SchemaVersion { found: report.schema_version });
    }
    Ok(report)
}

/// Render a diff as pretty JSON with sorted keys.
pub fn emit_diff_json(diff: &SdgDiff) -> String {
    canonical_json(diff)
}

/// Render a scaling plan as pretty JSON with sorted keys.
pub fn emit_plan_json(plan: &ScalingPlan) -> String {
    canonical_json(plan)
}

/// Render cycle findings as text, one line per component or self-loop.
pub fn emit_cycles_text(cycles: &CycleReport) -> String {
    if cycles.components.is_empty() && cycles.self_loops.is_empty() {
        return "no cycles detected\n".to_string();
    }
    let mut out = String::new();
    for component in &cycles.components {
        let members: Vec<&str> = component.iter().map(|s| s.as_str()).collect();
        out.push_str(&format!("cycle: {}\n", members.join(" <-> ")));
    }
    for service in &cycles.self_loops {
        out.push_str(&format!("self-loop: {service}\n"));
    }
    out
}

/// Render a scaling plan as an aligned text table, one entry per line.
pub fn emit_plan_table(plan: &ScalingPlan) -> String {
    if plan.entries.is_empty() {
        return "no scaling candidates\n".to_string();
    }
    let headers = ["rank", "service", "ais", "ads", "acs", "inbound", "detangle"];
    let rows: Vec<[String; 7]> = plan
        .entries
        .iter()
        .map(|e| {
            [
                e.rank.to_string(),
                e.service.to_string(),
                e.ais.to_string(),
                e.ads.to_string(),
                e.acs.to_string(),
                e.inbound_weight.to_string(),
                if e.detangle_first { "yes".to_string() } else { String::new() },
            ]
        })
        .collect();
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| rows.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap())
        .collect();

    let mut out = String::new();
    let emit_row = |out: &mut String, cells: &[String]| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i >= widths.len() {
                // The trailing rationale is free-form and never padded.
                line.push_str(cell);
            } else if matches!(i, 0 | 2 | 3 | 4 | 5) {
                // Numbers read better right-aligned; names left-aligned.
                line.push_str(&format!("{cell:>width$}", width = widths[i]));
            } else {
                line.push_str(&format!("{cell:<width$}", width = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    emit_row(&mut out, &headers.map(String::from));
    for (row, entry) in rows.iter().zip(&plan.entries) {
        let mut cells = row.to_vec();
        cells.push(entry.rationale.clone());
        emit_row(&mut out, &cells);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antipatterns::{compute_metrics, detect_cycles, DatastoreClassifier};
    use crate::scaling::build_scaling_plan;
    use crate::sdg::EdgeKey;

    fn sid(s: &str) -> ServiceId {
        ServiceId::new(s).unwrap()
    }

    fn graph(edges: &[(&str, &str, &str, u64)]) -> ServiceDependencyGraph {
        ServiceDependencyGraph::from_edges(
            edges
                .iter()
                .map(|(s, d, e, w)| (EdgeKey::new(sid(s), sid(d), e.to_string(), "GET"), *w)),
            [],
            None,
        )
        .unwrap()
    }

    #[test]
    fn empty_graph_renders_as_empty_digraph() {
        let g = ServiceDependencyGraph::new();
        let dot = emit_dot(&g, &detect_cycles(&g), &RenderOptions::default()).unwrap();
        assert_eq!(dot, "digraph sdg { }\n");
    }

    #[test]
    fn dot_is_sorted_and_weight_scaled() {
        let g = graph(&[("b.ns", "c.ns", "/x", 100), ("a.ns", "b.ns", "/x", 1)]);
        let dot = emit_dot(&g, &detect_cycles(&g), &RenderOptions::default()).unwrap();
        let a = dot.find("\"a.ns\";").unwrap();
        let b = dot.find("\"b.ns\";").unwrap();
        assert!(a < b, "nodes sorted:\n{dot}");
        // Log scaling: weight 1 maps to 1 + 4 * ln(2)/ln(101) = 1.60 points.
        assert!(dot.contains("penwidth=1.60"), "light edge scaled logarithmically:\n{dot}");
        assert!(dot.contains("penwidth=5.00"), "heaviest edge at maximum:\n{dot}");
        assert!(dot.contains("label=\"/x (100)\""));
    }

    #[test]
    fn equal_weights_all_render_at_minimum_width() {
        let g = graph(&[("a.ns", "b.ns", "/x", 7), ("b.ns", "c.ns", "/y", 7)]);
        let dot = emit_dot(&g, &detect_cycles(&g), &RenderOptions::default()).unwrap();
        assert_eq!(dot.matches("penwidth=1.00").count(), 2);
        assert!(!dot.contains("penwidth=5.00"));
    }

    #[test]
    fn cycle_edges_are_red() {
        let g = graph(&[
            ("a.ns", "b.ns", "/x", 1),
            ("b.ns", "a.ns", "/y", 1),
            ("b.ns", "c.ns", "/z", 1),
        ]);
        let dot = emit_dot(&g, &detect_cycles(&g), &RenderOptions::default()).unwrap();
        for line in dot.lines().filter(|l| l.contains("->")) {
            if line.contains("\"c.ns\"") {
                assert!(!line.contains("color"), "{line}");
            } else {
                assert!(line.contains("color=\"red\""), "{line}");
            }
        }
        let plain = RenderOptions { highlight_cycles: false, ..Default::default() };
        let dot = emit_dot(&g, &detect_cycles(&g), &plain).unwrap();
        assert!(!dot.contains("color"));
    }

    #[test]
    fn bad_render_options_are_rejected() {
        let g = graph(&[("a.ns", "b.ns", "/x", 1)]);
        let options = RenderOptions { min_penwidth: 3.0, max_penwidth: 1.0, ..Default::default() };
        assert!(emit_dot(&g, &detect_cycles(&g), &options).is_err());
        let options = RenderOptions { min_penwidth: 0.0, ..Default::default() };
        assert!(emit_dot(&g, &detect_cycles(&g), &options).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let g = graph(&[("a.ns", "b.ns", "/x", 2), ("b.ns", "c.ns", "/y", 1)]);
        let rows = compute_metrics(&g);
        let csv = emit_metrics_csv(&rows);
        assert!(csv.starts_with("service_name,in_degree,out_degree,ais,ads,acs\n"));
        assert!(!csv.contains('\r'), "LF endings only");
        assert_eq!(parse_metrics_csv(&csv).unwrap(), rows);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(matches!(parse_metrics_csv("bogus\n"), Err(CsvParseError::Header(_))));
        let text = format!("{METRICS_CSV_HEADER}\na.ns,1,2\n");
        assert!(matches!(parse_metrics_csv(&text), Err(CsvParseError::Row { line: 2, .. })));
        let text = format!("{METRICS_CSV_HEADER}\na.ns,1,2,3,4,x\n");
        assert!(parse_metrics_csv(&text).is_err());
    }

    fn sample_report() -> Report {
        let g = graph(&[
            ("a.ns", "b.ns", "/api/v1/x", 3),
            ("b.ns", "a.ns", "/api/v1/y", 1),
            ("b.ns", "c-mongo.ns", "/api/v1/db", 2),
        ]);
        let rows = compute_metrics(&g);
        let cycles = detect_cycles(&g);
        let classifier = DatastoreClassifier::default();
        let plan = build_scaling_plan(&g, &rows, &classifier, None);
        let pattern = crate::antipatterns::compile_version_pattern(
            crate::antipatterns::DEFAULT_VERSION_PATTERN,
        )
        .unwrap();
        let versioning = crate::antipatterns::check_api_versioning(&g, &pattern);
        let persistency = crate::antipatterns::detect_shared_persistency(&g, &classifier);
        build_report(
            &g,
            rows,
            cycles,
            persistency,
            versioning,
            plan,
            AnalysisParameters {
                collapse_ids: false,
                success_only: false,
                db_patterns: classifier.patterns(),
                version_pattern: crate::antipatterns::DEFAULT_VERSION_PATTERN.to_string(),
            },
        )
    }

    #[test]
    fn report_json_round_trips_with_sorted_keys() {
        let report = sample_report();
        let json = emit_report_json(&report);
        assert_eq!(parse_report(&json).unwrap(), report);

        // Keys of every object are sorted; spot-check the top level.
        let top_keys: Vec<String> = serde_json::from_str::<serde_json::Value>(&json)
            .unwrap()
            .as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut sorted = top_keys.clone();
        sorted.sort();
        assert_eq!(top_keys, sorted);
        assert!(json.contains("\"schema_version\": \"1\""));
    }

    #[test]
    fn report_with_wrong_schema_version_is_rejected() {
        let json = emit_report_json(&sample_report())
            .replace("\"schema_version\": \"1\"", "\"schema_version\": \"99\"");
        assert!(matches!(parse_report(&json), Err(ReportParseError::SchemaVersion { .. })));
        assert!(matches!(parse_report("not json"), Err(ReportParseError::Json(_))));
    }

    #[test]
    fn cycles_text_lists_components_and_self_loops() {
        let g = graph(&[
            ("a.ns", "b.ns", "/x", 1),
            ("b.ns", "a.ns", "/y", 1),
            ("c.ns", "c.ns", "/self", 1),
        ]);
        let text = emit_cycles_text(&detect_cycles(&g));
        assert_eq!(text, "cycle: a.ns <-> b.ns\nself-loop: c.ns\n");

        let quiet = graph(&[("a.ns", "b.ns", "/x", 1)]);
        assert_eq!(emit_cycles_text(&detect_cycles(&quiet)), "no cycles detected\n");
    }

    #[test]
    fn plan_table_is_aligned_and_complete() {
        let g = graph(&[
            ("u1.ns", "hub.ns", "/x", 30),
            ("u2.ns", "hub.ns", "/x", 20),
            ("hub.ns", "x.ns", "/y", 5),
        ]);
        let rows = compute_metrics(&g);
        let plan = build_scaling_plan(&g, &rows, &DatastoreClassifier::default(), None);
        let table = emit_plan_table(&plan);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("rank"));
        assert_eq!(lines.len(), 1 + plan.entries.len());
        assert!(table.contains("hub.ns"));
        assert!(emit_plan_table(&ScalingPlan::default()).contains("no scaling candidates"));
    }
}
