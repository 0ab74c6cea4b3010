use serde::{Deserialize, Serialize};

use crate::error::{CaiError, Result};

/// Fixed state features `φ(t, s)`. Action dependence enters through one
/// weight column per action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// Stationary tabular features `e_s`.
    OneHotState { n_states: usize },
    /// Time-varying tabular features `e_{(t, s)}`; steps beyond the horizon
    /// reuse the last step.
    OneHotTimeState { horizon: usize, n_states: usize },
    /// User-supplied stationary features, `matrix[s]` is `φ(s)`.
    Linear { matrix: Vec<Vec<f64>> },
}

impl FeatureMap {
    pub fn linear(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let k = matrix.first().map_or(0, Vec::len);
        if k == 0 || matrix.iter().any(|r| r.len() != k || r.iter().any(|x| !x.is_finite())) {
            return Err(CaiError::invalid("linear features must be a non-empty finite rectangular matrix"));
        }
        Ok(FeatureMap::Linear { matrix })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHotState { n_states } => *n_states,
            FeatureMap::OneHotTimeState { horizon, n_states } => horizon * n_states,
            FeatureMap::Linear { matrix } => matrix[0].len(),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHotState { n_states } | FeatureMap::OneHotTimeState { n_states, .. } => *n_states,
            FeatureMap::Linear { matrix } => matrix.len(),
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self, FeatureMap::OneHotTimeState { .. })
    }

    pub fn is_one_hot(&self) -> bool {
        !matches!(self, FeatureMap::Linear { .. })
    }

    /// Stable identifier written into checkpoints.
    pub fn id(&self) -> String {
        match self {
            FeatureMap::OneHotState { n_states } => format!("one-hot-state/{n_states}"),
            FeatureMap::OneHotTimeState { horizon, n_states } => format!("one-hot-time-state/{horizon}x{n_states}"),
            FeatureMap::Linear { matrix } => format!("linear/{}x{}", matrix.len(), matrix[0].len()),
        }
    }

    /// Index of the single active feature for one-hot maps.
    pub fn active(&self, t: usize, s: usize) -> Option<usize> {
        match self {
            FeatureMap::OneHotState { .. } => Some(s),
            FeatureMap::OneHotTimeState { horizon, n_states } => Some(t.min(horizon - 1) * n_states + s),
            FeatureMap::Linear { .. } => None,
        }
    }

    /// Sparse `(index, value)` view of `φ(t, s)`.
    pub fn sparse(&self, t: usize, s: usize) -> Vec<(usize, f64)> {
        match self {
            FeatureMap::Linear { matrix } => {
                matrix[s].iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(k, x)| (k, *x)).collect()
            }
            _ => vec![(self.active(t, s).expect("one-hot"), 1.0)],
        }
    }
}
