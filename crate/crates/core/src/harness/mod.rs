//! Reproducible experiment runs: JSON configs with dot-path overrides, the
//! algorithm registry keyed by quadrant, the enumeration oracle, and the
//! on-disk outputs.

mod config;
mod oracle;
mod registry;
mod run;

pub use config::{apply_override, ExperimentConfig};
pub use oracle::{oracle, OracleReport};
pub use registry::{lookup, quadrant_report, quadrant_table, registry_keys, AlgorithmEntry, Quadrant, QuadrantRow, REGISTRY};
pub use run::{
    metrics_csv, run, AlgorithmParams, ContinuationKind, FeatureKind, IterPolicyParams, LearnerParams, MetricRow,
    PlanHeadParams, PlannerParams, ProposalKind, RunResult, SmcParams, SoftDpParams, WarmStartParams, CSV_HEADER,
    VERSION,
};
