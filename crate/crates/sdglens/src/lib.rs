//! Reconstructs weighted service dependency graphs from service-mesh sidecar
//! access logs and scores them for coupling hot spots, dependency cycles,
//! shared datastores, API versioning gaps, structural drift between
//! snapshots, and scaling priority.

pub mod access_log;
pub mod antipatterns;
pub mod cli;
pub mod evolution;
pub mod loggen;
pub mod report;
pub mod scaling;
pub mod sdg;

/// Compiles and runs every code block in the guide, so the book cannot
/// drift from the API it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/access-logs.md")]
    mod access_logs {}
    #[doc = include_str!("../../../book/src/dependency-graph.md")]
    mod dependency_graph {}
    #[doc = include_str!("../../../book/src/metrics-and-findings.md")]
    mod metrics_and_findings {}
    #[doc = include_str!("../../../book/src/comparing-snapshots.md")]
    mod comparing_snapshots {}
    #[doc = include_str!("../../../book/src/scaling-priorities.md")]
    mod scaling_priorities {}
    #[doc = include_str!("../../../book/src/artifacts.md")]
    mod artifacts {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
    #[doc = include_str!("../../../book/src/synthetic-corpora.md")]
    mod synthetic_corpora {}
}

/// Same treatment for the README's example.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
