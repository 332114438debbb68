//! Property suite for the invariants not covered by the acceptance gate:
//! serialization round-trips, parser totality, path normalization, window
//! filtering, merge algebra, and render monotonicity.

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;

use sdglens::access_log::{
    classify_direction, destination_service, filter_window, normalize_path, parse_line,
    AccessLogEntry, Direction, ServiceId,
};
use sdglens::antipatterns::{compute_metrics, detect_cycles, DatastoreClassifier, MetricsRow};
use sdglens::report::{
    build_report, emit_dot, emit_metrics_csv, emit_report_json, parse_metrics_csv, parse_report,
    AnalysisParameters, RenderOptions,
};
use sdglens::sdg::{merge, EdgeKey, ServiceDependencyGraph, TimeWindow};

prop_compose! {
    /// Lowercase DNS-label-ish service id, `name.ns`.
    fn service_id()(name in "[a-z][a-z0-9-]{0,12}", ns in "[a-z]{1,8}") -> ServiceId {
        ServiceId::new(format!("{name}.{ns}")).unwrap()
    }
}

prop_compose! {
    fn log_entry()(
        secs in 0i64..10_000,
        method in prop::sample::select(vec!["GET", "POST", "PUT", "DELETE"]),
        path in "/[a-z]{1,8}(/[a-z0-9]{1,8}){0,3}",
        code in 100u16..=599,
        duration in 0u64..60_000,
        sent in 0u64..1_000_000,
        received in 0u64..1_000_000,
        dst in "[a-z][a-z0-9-]{0,12}",
        has_agent in any::<bool>(),
        direction in prop::sample::select(vec!["outbound", "inbound"]),
        port in 1u16..=65535,
    ) -> AccessLogEntry {
        AccessLogEntry {
            start_time: Utc.timestamp_opt(1_653_545_000 + secs, 0).unwrap(),
            method: method.to_string(),
            path,
            protocol: "HTTP/1.1".to_string(),
            response_code: code,
            duration_ms: duration,
            bytes_sent: sent,
            bytes_received: received,
            request_id: "11111111-2222-3333-4444-555555555555".to_string(),
            authority: format!("{dst}:{port}"),
            upstream_cluster: format!(
                "{direction}|{port}||{dst}.default.svc.cluster.local"
            ),
            upstream_host: None,
            upstream_local_address: None,
            downstream_local_address: None,
            downstream_remote_address: None,
            response_flags: "-".to_string(),
            user_agent: has_agent.then(|| "client/1.0".to_string()),
        }
    }
}

proptest! {
    /// Serializing a record and parsing it back loses nothing.
    #[test]
    fn log_entries_round_trip_through_json(entry in log_entry()) {
        let line = serde_json::to_string(&entry).unwrap();
        let parsed = parse_line(&line).unwrap();
        prop_assert_eq!(parsed, entry);
    }

    /// Arbitrary garbage never panics the parser; it errors or parses.
    #[test]
    fn parser_is_total(line in ".{0,200}") {
        let _ = parse_line(&line);
    }

    /// Direction comes from the cluster prefix and nothing else.
    #[test]
    fn direction_tracks_the_cluster_prefix(entry in log_entry()) {
        let expected = if entry.upstream_cluster.starts_with("outbound|") {
            Direction::Outbound
        } else {
            Direction::Inbound
        };
        prop_assert_eq!(classify_direction(&entry), expected);
    }

    /// The destination resolved from the cluster is a valid id in the
    /// cluster's own namespace.
    #[test]
    fn destination_comes_from_the_cluster_dns(entry in log_entry(), src in service_id()) {
        let dst = destination_service(&entry, &src).unwrap();
        prop_assert_eq!(dst.namespace(), "default");
        prop_assert!(entry.upstream_cluster.contains(dst.service()));
    }

    /// Normalization is idempotent and keeps the leading slash.
    #[test]
    fn normalize_path_is_idempotent(
        path in "/[a-zA-Z0-9._{}-]{0,12}(/[a-zA-Z0-9._{}-]{0,12}){0,4}(\\?[a-z=&]{0,10})?",
        collapse in any::<bool>(),
    ) {
        let once = normalize_path(&path, collapse);
        let twice = normalize_path(&once, collapse);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.starts_with('/'));
        prop_assert!(!once.contains('?'));
    }

    /// Digit-only segments collapse to `{id}`; others survive untouched.
    #[test]
    fn collapse_rewrites_exactly_the_id_segments(id in 0u64..1_000_000) {
        let path = format!("/api/v1/orders/{id}/items");
        prop_assert_eq!(normalize_path(&path, true), "/api/v1/orders/{id}/items");
        prop_assert_eq!(normalize_path(&path, false), path);
    }

    /// Every entry the window filter keeps is inside [from, to).
    #[test]
    fn window_filter_keeps_only_in_range_entries(
        entries in prop::collection::vec(log_entry(), 0..30),
        from_secs in 0i64..10_000,
        span in 1i64..10_000,
    ) {
        let from = Utc.timestamp_opt(1_653_545_000 + from_secs, 0).unwrap();
        let to = from + chrono::Duration::seconds(span);
        let total = entries.len();
        let kept = filter_window(entries.clone(), Some(from), Some(to)).unwrap();
        prop_assert!(kept.len() <= total);
        for entry in &kept {
            prop_assert!(entry.start_time >= from && entry.start_time < to);
        }
        let expected = entries
            .iter()
            .filter(|e| e.start_time >= from && e.start_time < to)
            .count();
        prop_assert_eq!(kept.len(), expected);
    }
}

fn arbitrary_graph() -> impl Strategy<Value = ServiceDependencyGraph> {
    let edge = (0..6u8, 0..6u8, 0..3u8, 1..30u64).prop_map(|(s, d, e, w)| {
        (
            EdgeKey::new(
                ServiceId::new(format!("svc{s}.ns")).unwrap(),
                ServiceId::new(format!("svc{d}.ns")).unwrap(),
                format!("/api/v1/e{e}"),
                "GET",
            ),
            w,
        )
    });
    prop::collection::vec(edge, 0..25)
        .prop_map(|edges| ServiceDependencyGraph::from_edges(edges, [], None).unwrap())
}

proptest! {
    /// Metrics tables survive the CSV encode/decode round trip.
    #[test]
    fn metrics_csv_round_trips(graph in arbitrary_graph()) {
        let rows = compute_metrics(&graph);
        let parsed = parse_metrics_csv(&emit_metrics_csv(&rows)).unwrap();
        prop_assert_eq!(parsed, rows);
    }

    /// Full reports survive the JSON encode/decode round trip.
    #[test]
    fn report_json_round_trips(graph in arbitrary_graph()) {
        let metrics = compute_metrics(&graph);
        let cycles = detect_cycles(&graph);
        let classifier = DatastoreClassifier::default();
        let persistency =
            sdglens::antipatterns::detect_shared_persistency(&graph, &classifier);
        let pattern = sdglens::antipatterns::compile_version_pattern(
            sdglens::antipatterns::DEFAULT_VERSION_PATTERN,
        ).unwrap();
        let versioning = sdglens::antipatterns::check_api_versioning(&graph, &pattern);
        let plan =
            sdglens::scaling::build_scaling_plan(&graph, &metrics, &classifier, None);
        let report = build_report(
            &graph,
            metrics,
            cycles,
            persistency,
            versioning,
            plan,
            AnalysisParameters {
                collapse_ids: false,
                success_only: false,
                db_patterns: classifier.patterns(),
                version_pattern:
                    sdglens::antipatterns::DEFAULT_VERSION_PATTERN.to_string(),
            },
        );
        let text = emit_report_json(&report);
        let parsed = parse_report(&text).unwrap();
        prop_assert_eq!(emit_report_json(&parsed), text);
        let graph_again = ServiceDependencyGraph::from_snapshot(parsed.graph).unwrap();
        prop_assert_eq!(graph_again, graph);
    }

    /// Rendering the same graph twice yields the same bytes, and a heavier
    /// edge never draws thinner than a lighter one.
    #[test]
    fn dot_is_deterministic_and_weight_monotone(graph in arbitrary_graph()) {
        let cycles = detect_cycles(&graph);
        let options = RenderOptions::default();
        let first = emit_dot(&graph, &cycles, &options).unwrap();
        let second = emit_dot(&graph, &cycles, &options).unwrap();
        prop_assert_eq!(&first, &second);

        let mut drawn: Vec<(u64, f64)> = Vec::new();
        for line in first.lines() {
            if let Some(idx) = line.find("penwidth=") {
                let rest = &line[idx + "penwidth=".len()..];
                let width: f64 =
                    rest.split([',', ']']).next().unwrap().parse().unwrap();
                let weight: u64 = line
                    .split('(').nth(1).unwrap()
                    .split(')').next().unwrap()
                    .parse().unwrap();
                drawn.push((weight, width));
            }
        }
        drawn.sort_by_key(|(w, _)| *w);
        for pair in drawn.windows(2) {
            prop_assert!(pair[0].1 <= pair[1].1 + 1e-9);
        }
    }

    /// Merge is commutative and associative on windowless graphs.
    #[test]
    fn merge_is_commutative_and_associative(
        a in arbitrary_graph(),
        b in arbitrary_graph(),
        c in arbitrary_graph(),
    ) {
        prop_assert_eq!(merge(&a, &b), merge(&b, &a));
        prop_assert_eq!(merge(&merge(&a, &b), &c), merge(&a, &merge(&b, &c)));
        let empty = ServiceDependencyGraph::new();
        prop_assert_eq!(merge(&a, &empty), a);
    }

    /// A merged window is the envelope of its inputs.
    #[test]
    fn merged_windows_cover_both_inputs(
        a_from in 0i64..1_000, a_len in 1i64..1_000,
        b_from in 0i64..1_000, b_len in 1i64..1_000,
    ) {
        let at = |s: i64| -> DateTime<Utc> {
            Utc.timestamp_opt(1_653_545_000 + s, 0).unwrap()
        };
        let window = |from: i64, len: i64| TimeWindow {
            from: Some(at(from)),
            to: Some(at(from + len)),
        };
        let mut a = ServiceDependencyGraph::new();
        a.set_window(Some(window(a_from, a_len)));
        let mut b = ServiceDependencyGraph::new();
        b.set_window(Some(window(b_from, b_len)));

        let merged = merge(&a, &b).window().expect("both inputs had windows");
        prop_assert_eq!(merged.from, Some(at(a_from.min(b_from))));
        prop_assert_eq!(merged.to, Some(at((a_from + a_len).max(b_from + b_len))));
    }

    /// Service ids survive Display / FromStr.
    #[test]
    fn service_ids_round_trip(id in service_id()) {
        let text = id.to_string();
        let back: ServiceId = text.parse().unwrap();
        prop_assert_eq!(back, id);
    }
}

/// The CSV header is fixed; compute_metrics of an empty graph is empty.
#[test]
fn empty_graph_artifacts_are_well_formed() {
    let graph = ServiceDependencyGraph::new();
    let rows: Vec<MetricsRow> = compute_metrics(&graph);
    assert!(rows.is_empty());
    let csv = emit_metrics_csv(&rows);
    assert_eq!(csv, "service_name,in_degree,out_degree,ais,ads,acs\n");
    let dot = emit_dot(&graph, &detect_cycles(&graph), &RenderOptions::default()).unwrap();
    assert_eq!(dot, "digraph sdg { }\n");
}
