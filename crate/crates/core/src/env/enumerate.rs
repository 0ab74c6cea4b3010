use serde::{Deserialize, Serialize};

use crate::dist::PolicyTable;
use crate::env::{TabularMDP, Trajectory};
use crate::error::{CaiError, Result};

pub const DEFAULT_ENUM_CAP: u128 = 10_000_000;

/// The enumeration cap, overridable through `CAI_MAX_ENUM`.
pub fn enumeration_cap() -> u128 {
    std::env::var("CAI_MAX_ENUM")
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v >= 1.0)
        .map(|v| v as u128)
        .unwrap_or(DEFAULT_ENUM_CAP)
}

/// Checks `|S|^T · |A|^T` against the cap and returns the count.
pub fn check_enumeration(mdp: &TabularMDP) -> Result<u128> {
    check_count(mdp.n_states(), mdp.n_actions(), mdp.horizon(), enumeration_cap())
}

pub(crate) fn check_count(n_states: usize, n_actions: usize, horizon: usize, cap: u128) -> Result<u128> {
    let per_step = (n_states as u128).saturating_mul(n_actions as u128);
    let mut required: u128 = 1;
    for _ in 0..horizon {
        required = required.saturating_mul(per_step);
        if required > cap {
            return Err(CaiError::ResourceLimit { required: full_count(per_step, horizon), cap });
        }
    }
    Ok(required)
}

fn full_count(per_step: u128, horizon: usize) -> u128 {
    (0..horizon).fold(1u128, |acc, _| acc.saturating_mul(per_step))
}

/// A state-action path visited during enumeration.
pub struct PathKernel<'a> {
    /// Time index of `states[0]`.
    pub start: usize,
    pub states: &'a [usize],
    pub actions: &'a [usize],
    /// Log-probability of the state sequence given the actions: initial
    /// state (for full paths) plus every transition along the path.
    pub log_dynamics: f64,
}

/// Time-indexed state dynamics `q(s_1)` and `q_t(s'|s,a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTable {
    pub initial: Vec<f64>,
    /// Indexed `[t][s][a][s']` for `t = 0..T-1`.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
}

impl DynamicsTable {
    /// The environment's own dynamics, unrolled over the horizon.
    pub fn from_mdp(mdp: &TabularMDP) -> Self {
        let step: Vec<Vec<Vec<f64>>> = (0..mdp.n_states())
            .map(|s| (0..mdp.n_actions()).map(|a| mdp.transition_row(s, a).to_vec()).collect())
            .collect();
        Self { initial: mdp.initial_dist().to_vec(), transition: vec![step; mdp.horizon().saturating_sub(1)] }
    }

    pub fn row(&self, t: usize, s: usize, a: usize) -> &[f64] {
        &self.transition[t][s][a]
    }

    /// Checks shape and normalization against an MDP.
    pub fn validate(&self, mdp: &TabularMDP) -> Result<()> {
        let ns = mdp.n_states();
        let ok_dist = |p: &[f64]| {
            p.len() == ns && p.iter().all(|x| x.is_finite() && *x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-10
        };
        if !ok_dist(&self.initial) {
            return Err(CaiError::invalid("explicit initial distribution is not a distribution over states"));
        }
        if self.transition.len() + 1 < mdp.horizon() {
            return Err(CaiError::invalid("explicit dynamics table is shorter than the horizon"));
        }
        for step in &self.transition {
            if step.len() != ns || step.iter().any(|rows| rows.len() != mdp.n_actions() || !rows.iter().all(|r| ok_dist(r))) {
                return Err(CaiError::invalid("explicit dynamics table has a malformed row"));
            }
        }
        Ok(())
    }
}

/// Visits every state-action path of length `T` with nonzero probability
/// under the environment dynamics, in lexicographic order of
/// `(s_1, a_1, s_2, a_2, ...)`.
pub fn for_each_path<F>(mdp: &TabularMDP, mut visit: F) -> Result<()>
where
    F: FnMut(PathKernel<'_>),
{
    check_enumeration(mdp)?;
    let rows = |_t: usize, s: usize, a: usize| mdp.transition_row(s, a);
    walk_from_initial(mdp, mdp.initial_dist(), &rows, &mut visit);
    Ok(())
}

/// Like [`for_each_path`] with `log_dynamics` taken from an explicit
/// dynamics table.
pub fn for_each_path_under<F>(mdp: &TabularMDP, dynamics: &DynamicsTable, mut visit: F) -> Result<()>
where
    F: FnMut(PathKernel<'_>),
{
    check_enumeration(mdp)?;
    dynamics.validate(mdp)?;
    let rows = |t: usize, s: usize, a: usize| dynamics.row(t, s, a);
    walk_from_initial(mdp, &dynamics.initial, &rows, &mut visit);
    Ok(())
}

/// Visits every path suffix from state `s` at time `t` to the horizon under
/// the environment dynamics. `log_dynamics` excludes the initial state.
pub fn for_each_suffix<F>(mdp: &TabularMDP, t: usize, s: usize, mut visit: F) -> Result<()>
where
    F: FnMut(PathKernel<'_>),
{
    check_enumeration(mdp)?;
    if t >= mdp.horizon() || s >= mdp.n_states() {
        return Err(CaiError::invalid(format!("suffix start ({t}, {s}) out of range")));
    }
    let rows = |_t: usize, s: usize, a: usize| mdp.transition_row(s, a);
    let mut states = vec![s];
    let mut actions = Vec::new();
    descend(mdp.n_actions(), mdp.horizon(), t, &mut states, &mut actions, 0.0, &rows, &mut visit);
    Ok(())
}

fn walk_from_initial<'r, R, F>(mdp: &TabularMDP, initial: &[f64], rows: &R, visit: &mut F)
where
    R: Fn(usize, usize, usize) -> &'r [f64],
    F: FnMut(PathKernel<'_>),
{
    let mut states = Vec::with_capacity(mdp.horizon());
    let mut actions = Vec::with_capacity(mdp.horizon());
    for (s0, &p0) in initial.iter().enumerate() {
        if p0 > 0.0 {
            states.push(s0);
            descend(mdp.n_actions(), mdp.horizon(), 0, &mut states, &mut actions, p0.ln(), rows, visit);
            states.pop();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn descend<'r, R, F>(
    n_actions: usize,
    horizon: usize,
    start: usize,
    states: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    logp: f64,
    rows: &R,
    visit: &mut F,
) where
    R: Fn(usize, usize, usize) -> &'r [f64],
    F: FnMut(PathKernel<'_>),
{
    let s = *states.last().expect("nonempty");
    let t = start + states.len() - 1;
    for a in 0..n_actions {
        actions.push(a);
        if t + 1 == horizon {
            visit(PathKernel { start, states, actions, log_dynamics: logp });
        } else {
            for (next, &p) in rows(t, s, a).iter().enumerate() {
                if p > 0.0 {
                    states.push(next);
                    descend(n_actions, horizon, start, states, actions, logp + p.ln(), rows, visit);
                    states.pop();
                }
            }
        }
        actions.pop();
    }
}

/// Every support trajectory of a policy, with exact probabilities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub trajectories: Vec<Trajectory<usize, usize>>,
    pub probs: Option<Vec<f64>>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Exact marginal `p(s_t = s)` for every step.
    pub fn state_marginals(&self, n_states: usize) -> Vec<Vec<f64>> {
        let horizon = self.trajectories.first().map_or(0, |t| t.states.len());
        let mut out = vec![vec![0.0; n_states]; horizon];
        let probs = self.probs.as_deref().unwrap_or(&[]);
        for (traj, &p) in self.trajectories.iter().zip(probs) {
            for (t, &s) in traj.states.iter().enumerate() {
                out[t][s] += p;
            }
        }
        out
    }
}

/// Enumerates all trajectories with nonzero probability
/// `p(s_1) Π p(s'|s,a) π(a|s)` under the given policy.
///
/// `log_prob_actions` of each trajectory holds `Σ ln π(a_t|s_t)`; states
/// do not include the terminal successor.
pub fn enumerate_trajectories(mdp: &TabularMDP, policy: &PolicyTable) -> Result<TrajectorySet> {
    policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    let logpi: Vec<Vec<Vec<f64>>> = (0..mdp.horizon())
        .map(|t| (0..mdp.n_states()).map(|s| policy.dist(t, s).log_probs()).collect())
        .collect();
    let mut trajectories = Vec::new();
    let mut probs = Vec::new();
    for_each_path(mdp, |path| {
        let lpa: f64 = path
            .states
            .iter()
            .zip(path.actions)
            .enumerate()
            .map(|(t, (&s, &a))| logpi[t][s][a])
            .sum();
        if lpa == f64::NEG_INFINITY {
            return;
        }
        let rewards = path
            .states
            .iter()
            .zip(path.actions)
            .map(|(&s, &a)| mdp.reward(s, a))
            .collect();
        trajectories.push(Trajectory {
            states: path.states.to_vec(),
            actions: path.actions.to_vec(),
            rewards,
            log_prob_actions: lpa,
            clamp_events: 0,
        });
        probs.push((path.log_dynamics + lpa).exp());
    })?;
    Ok(TrajectorySet { trajectories, probs: Some(probs) })
}
