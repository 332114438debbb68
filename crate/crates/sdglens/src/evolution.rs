//! Structural drift between two graph snapshots.
//!
//! Comparing the graph of release N against N+1 shows dependency growth
//! before it shows up as incidents: new edges, retired services, and
//! services whose coupling metrics moved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::access_log::ServiceId;
use crate::antipatterns::{compute_metrics, MetricsRow};
use crate::sdg::{EdgeKey, ServiceDependencyGraph};

/// An integer that moved between snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueChange {
    pub old: u64,
    pub new: u64,
}

impl ValueChange {
    pub fn changed(&self) -> bool {
        self.old != self.new
    }

    /// Signed difference, new minus old.
    pub fn delta(&self) -> i64 {
        self.new as i64 - self.old as i64
    }
}

/// Coupling metric movement for one service present in both snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricChange {
    pub ais: ValueChange,
    pub ads: ValueChange,
    pub acs: ValueChange,
}

impl MetricChange {
    pub fn changed(&self) -> bool {
        self.ais.changed() || self.ads.changed() || self.acs.changed()
    }
}

/// Weight movement on an edge key present in both snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightChange {
    pub source: ServiceId,
    pub destination: ServiceId,
    pub endpoint: String,
    pub method: String,
    pub old: u64,
    pub new: u64,
}

impl WeightChange {
    fn swing(&self) -> u64 {
        self.old.abs_diff(self.new)
    }
}

/// Everything that differs between an old and a new graph.
///
/// All vectors are sorted; maps are sorted by key. Metric changes are kept
/// only for services present in both snapshots, and only when at least one
/// of ais, ads, acs moved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdgDiff {
    pub added_nodes: Vec<ServiceId>,
    pub removed_nodes: Vec<ServiceId>,
    pub added_edges: Vec<EdgeKey>,
    pub removed_edges: Vec<EdgeKey>,
    pub weight_changes: Vec<WeightChange>,
    pub metric_changes: BTreeMap<ServiceId, MetricChange>,
}

impl SdgDiff {
    /// True when the snapshots are structurally identical, weights included.
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
            && self.weight_changes.is_empty()
            && self.metric_changes.is_empty()
    }
}

/// Compare two graphs, old to new.
pub fn diff_graphs(old: &ServiceDependencyGraph, new: &ServiceDependencyGraph) -> SdgDiff {
    let added_nodes = new.nodes().filter(|n| !old.contains(n)).cloned().collect();
    let removed_nodes = old.nodes().filter(|n| !new.contains(n)).cloned().collect();

    let mut added_edges = Vec::new();
    let mut weight_changes = Vec::new();
    for (key, new_weight) in new.edges() {
        match old.edge_weight(key) {
            None => added_edges.push(key.clone()),
            Some(old_weight) if old_weight != new_weight => weight_changes.push(WeightChange {
                source: key.source.clone(),
                destination: key.destination.clone(),
                endpoint: key.endpoint.clone(),
                method: key.method.clone(),
                old: old_weight,
                new: new_weight,
            }),
            Some(_) => {}
        }
    }
    let removed_edges = old
        .edges()
        .filter(|(key, _)| new.edge_weight(key).is_none())
        .map(|(key, _)| key.clone())
        .collect();

    let old_metrics: BTreeMap<ServiceId, MetricsRow> =
        compute_metrics(old).into_iter().map(|r| (r.service.clone(), r)).collect();
    let metric_changes = compute_metrics(new)
        .into_iter()
        .filter_map(|new_row| {
            let old_row = old_metrics.get(&new_row.service)?;
            let change = MetricChange {
                ais: ValueChange { old: old_row.ais, new: new_row.ais },
                ads: ValueChange { old: old_row.ads, new: new_row.ads },
                acs: ValueChange { old: old_row.acs, new: new_row.acs },
            };
            change.changed().then_some((new_row.service, change))
        })
        .collect();

    SdgDiff {
        added_nodes,
        removed_nodes,
        added_edges,
        removed_edges,
        weight_changes,
        metric_changes,
    }
}

/// How many of the largest weight swings [`summarize_diff`] spells out.
const SUMMARY_WEIGHT_SWINGS: usize = 5;

/// Render a diff as stable, human-readable lines.
///
/// Sections appear in a fixed order: nodes, edges, weight swings (largest
/// first, capped), then metric movements. An empty diff is a single
/// `no changes` line.
pub fn summarize_diff(diff: &SdgDiff) -> Vec<String> {
    if diff.is_empty() {
        return vec!["no changes".to_string()];
    }
    let mut lines = Vec::new();
    for node in &diff.added_nodes {
        lines.push(format!("+ node {node}"));
    }
    for node in &diff.removed_nodes {
        lines.push(format!("- node {node}"));
    }
    for edge in &diff.added_edges {
        lines.push(format!(
            "+ edge {} -> {} {} [{}]",
            edge.source, edge.destination, edge.endpoint, edge.method
        ));
    }
    for edge in &diff.removed_edges {
        lines.push(format!(
            "- edge {} -> {} {} [{}]",
            edge.source, edge.destination, edge.endpoint, edge.method
        ));
    }
    let mut swings: Vec<&WeightChange> = diff.weight_changes.iter().collect();
    swings.sort_by(|a, b| {
        b.swing().cmp(&a.swing()).then_with(|| {
            (&a.source, &a.destination, &a.endpoint, &a.method).cmp(&(
                &b.source,
                &b.destination,
                &b.endpoint,
                &b.method,
            ))
        })
    });
    for change in swings.into_iter().take(SUMMARY_WEIGHT_SWINGS) {
        lines.push(format!(
            "~ weight {} -> {} {} [{}]: {} -> {}",
            change.source,
            change.destination,
            change.endpoint,
            change.method,
            change.old,
            change.new
        ));
    }
    for (service, change) in &diff.metric_changes {
        lines.push(format!(
            "~ metrics {service}: ais {} -> {}, ads {} -> {}, acs {} -> {}",
            change.ais.old,
            change.ais.new,
            change.ads.old,
            change.ads.new,
            change.acs.old,
            change.acs.new
        ));
    }
    lines
}
