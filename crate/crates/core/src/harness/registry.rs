use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;

/// Cell of the inference × target classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    IterativePlan,
    IterativePolicy,
    AmortisedPlan,
    AmortisedPolicy,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] =
        [Quadrant::IterativePlan, Quadrant::IterativePolicy, Quadrant::AmortisedPlan, Quadrant::AmortisedPolicy];

    pub fn label(&self) -> &'static str {
        match self {
            Quadrant::IterativePlan => "iterative-plan",
            Quadrant::IterativePolicy => "iterative-policy",
            Quadrant::AmortisedPlan => "amortised-plan",
            Quadrant::AmortisedPolicy => "amortised-policy",
        }
    }

    pub fn parse(s: &str) -> Option<Quadrant> {
        Quadrant::ALL.into_iter().find(|q| q.label() == s)
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlgorithmEntry {
    pub key: &'static str,
    pub quadrant: Quadrant,
    pub module: &'static str,
    pub description: &'static str,
    /// Whether the algorithm also accepts continuous environments.
    pub continuous: bool,
    pub example_env: &'static str,
}

pub const REGISTRY: &[AlgorithmEntry] = &[
    AlgorithmEntry {
        key: "soft-dp",
        quadrant: Quadrant::IterativePolicy,
        module: "soft_dp",
        description: "exact soft value backup and per-state posterior policy",
        continuous: false,
        example_env: "two-arm-bandit",
    },
    AlgorithmEntry {
        key: "pg",
        quadrant: Quadrant::AmortisedPolicy,
        module: "amortised",
        description: "entropy-regularized policy gradient on a softmax policy",
        continuous: false,
        example_env: "two-arm-bandit",
    },
    AlgorithmEntry {
        key: "soft-q",
        quadrant: Quadrant::AmortisedPolicy,
        module: "amortised",
        description: "bootstrapped soft Q-learning with linear features",
        continuous: false,
        example_env: "chain-5",
    },
    AlgorithmEntry {
        key: "sac",
        quadrant: Quadrant::AmortisedPolicy,
        module: "amortised",
        description: "discrete soft actor-critic",
        continuous: false,
        example_env: "two-arm-bandit",
    },
    AlgorithmEntry {
        key: "cem",
        quadrant: Quadrant::IterativePlan,
        module: "planners",
        description: "cross-entropy method MPC (indicator likelihood)",
        continuous: true,
        example_env: "double-integrator-1d",
    },
    AlgorithmEntry {
        key: "mppi",
        quadrant: Quadrant::IterativePlan,
        module: "planners",
        description: "path-integral MPC (exponential likelihood)",
        continuous: true,
        example_env: "double-integrator-1d",
    },
    AlgorithmEntry {
        key: "mirror",
        quadrant: Quadrant::IterativePlan,
        module: "planners",
        description: "mirror-descent MPC with a configurable likelihood",
        continuous: true,
        example_env: "gridworld-4x4",
    },
    AlgorithmEntry {
        key: "smc",
        quadrant: Quadrant::IterativePlan,
        module: "planners",
        description: "sequential Monte Carlo planning with soft-value twisting",
        continuous: false,
        example_env: "gridworld-4x4",
    },
    AlgorithmEntry {
        key: "iter-policy",
        quadrant: Quadrant::IterativePolicy,
        module: "hybrid",
        description: "amortised policy refined per state when its entropy is high",
        continuous: false,
        example_env: "gridworld-4x4",
    },
    AlgorithmEntry {
        key: "amortised-plan",
        quadrant: Quadrant::AmortisedPlan,
        module: "hybrid",
        description: "state-conditional open-loop plan head trained by policy gradient",
        continuous: false,
        example_env: "chain-3",
    },
    AlgorithmEntry {
        key: "warm-start",
        quadrant: Quadrant::AmortisedPlan,
        module: "hybrid",
        description: "mirror descent initialized from a trained plan head",
        continuous: false,
        example_env: "chain-4",
    },
];

pub fn lookup(key: &str) -> Option<&'static AlgorithmEntry> {
    REGISTRY.iter().find(|e| e.key == key)
}

pub fn registry_keys() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.key).collect()
}

/// One row of the quadrant report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrantRow {
    pub key: String,
    pub quadrant: Quadrant,
    pub module: String,
    pub description: String,
    pub example_config: ExperimentConfig,
}

/// Registered algorithms with their quadrant, optionally filtered.
pub fn quadrant_report(filter: Option<Quadrant>) -> Vec<QuadrantRow> {
    let mut rows: Vec<QuadrantRow> = REGISTRY
        .iter()
        .filter(|e| filter.is_none_or(|q| q == e.quadrant))
        .map(|e| QuadrantRow {
            key: e.key.to_string(),
            quadrant: e.quadrant,
            module: e.module.to_string(),
            description: e.description.to_string(),
            example_config: ExperimentConfig::example(e),
        })
        .collect();
    rows.sort_by_key(|r| r.quadrant);
    rows
}

/// Aligned plain-text version of [`quadrant_report`].
pub fn quadrant_table(rows: &[QuadrantRow]) -> String {
    let mut out = format!("{:<18} {:<16} {:<10} {}\n", "quadrant", "algorithm", "module", "description");
    for r in rows {
        out.push_str(&format!("{:<18} {:<16} {:<10} {}\n", r.quadrant.label(), r.key, r.module, r.description));
    }
    out
}
