//! Scaling priority: which services to replicate first when load grows.
//!
//! Fan-in is the signal. A service many others call absorbs multiplied
//! traffic, so candidates are ordered by distinct callers, then by observed
//! inbound request volume. Datastores are excluded because they scale by
//! replication strategies of their own, not by adding stateless instances.

use serde::{Deserialize, Serialize};

use crate::access_log::ServiceId;
use crate::antipatterns::{DatastoreClassifier, MetricsRow};
use crate::sdg::ServiceDependencyGraph;

/// One prioritized scaling recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub service: ServiceId,
    /// 1-based position in the plan.
    pub rank: u32,
    pub ais: u64,
    pub ads: u64,
    pub acs: u64,
    /// Total observed requests into the service, self-calls included.
    pub inbound_weight: u64,
    /// Set on the most critical service: replicating it multiplies the load
    /// it places on everything it calls, so reduce its coupling first.
    pub detangle_first: bool,
    /// One-line justification for the entry's position.
    pub rationale: String,
}

/// Ordered scaling recommendations, most urgent first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub entries: Vec<ScalingEntry>,
}

impl ScalingPlan {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Build the plan from a graph and its metrics.
///
/// Candidates are non-datastore services with at least one caller, ordered
/// by ais, then inbound weight, then ads, all descending, with name as the
/// final tie break. `top_k` truncates the plan after ranking; ranks stay
/// `1..=len`. `detangle_first` marks candidates whose acs equals the
/// maximum among candidates, provided that maximum is positive.
pub fn build_scaling_plan(
    graph: &ServiceDependencyGraph,
    rows: &[MetricsRow],
    classifier: &DatastoreClassifier,
    top_k: Option<usize>,
) -> ScalingPlan {
    let mut candidates: Vec<&MetricsRow> =
        rows.iter().filter(|row| row.ais > 0 && !classifier.is_datastore(&row.service)).collect();

    let inbound = |row: &MetricsRow| graph.inbound_weight(&row.service).unwrap_or(0);
    candidates.sort_by(|a, b| {
        b.ais
            .cmp(&a.ais)
            .then_with(|| inbound(b).cmp(&inbound(a)))
            .then_with(|| b.ads.cmp(&a.ads))
            .then_with(|| a.service.cmp(&b.service))
    });

    let max_acs = candidates.iter().map(|row| row.acs).max().unwrap_or(0);

    let mut entries: Vec<ScalingEntry> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let inbound_weight = inbound(row);
            let detangle_first = max_acs > 0 && row.acs == max_acs;
            let rationale = if detangle_first {
                format!(
                    "acs {} is the highest in the system; reduce coupling before replicating",
                    row.acs
                )
            } else {
                format!("{} callers sending {} requests", row.ais, inbound_weight)
            };
            ScalingEntry {
                service: row.service.clone(),
                rank: (i + 1) as u32,
                ais: row.ais,
                ads: row.ads,
                acs: row.acs,
                inbound_weight,
                detangle_first,
                rationale,
            }
        })
        .collect();

    if let Some(k) = top_k {
        entries.truncate(k);
    }
    ScalingPlan { entries }
}
