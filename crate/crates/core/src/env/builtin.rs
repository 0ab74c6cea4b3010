//! Built-in environment registry addressed by string id.

use std::sync::Arc;

use rand::Rng as _;

use crate::env::{ContinuousEnv, TabularMDP};
use crate::error::{CaiError, Result};
use crate::rng::SeedStream;

/// Ids and one-line descriptions of the registry; `N` and `{seed}` are
/// placeholders.
pub const REGISTRY: &[(&str, &str)] = &[
    ("chain-N", "N-state deterministic chain, reward 1 for reaching the last state, T = N - 1"),
    ("gridworld-4x4", "deterministic 4x4 grid, reward -1 per step, absorbing goal in the far corner, T = 8"),
    ("two-arm-bandit", "single state, two actions with rewards [1, 0], T = 1"),
    ("random-mdp-{seed}", "random dense tabular MDP with 2-5 states, 2-3 actions, T in 2-4"),
    ("double-integrator-1d", "continuous point mass s = (x, v), a in [-1, 1], r = -x^2 - 0.1 a^2, T = 50"),
];

pub const DOUBLE_INTEGRATOR_DT: f64 = 0.1;
pub const DOUBLE_INTEGRATOR_HORIZON: usize = 50;

/// A resolved registry entry.
#[derive(Clone, Debug)]
pub enum BuiltinEnv {
    Tabular(TabularMDP),
    Continuous(ContinuousEnv),
}

/// Looks up an environment by id.
pub fn load(id: &str) -> Result<BuiltinEnv> {
    if id == "double-integrator-1d" {
        return double_integrator().map(BuiltinEnv::Continuous);
    }
    tabular(id).map(BuiltinEnv::Tabular)
}

/// Looks up a tabular environment by id.
pub fn tabular(id: &str) -> Result<TabularMDP> {
    if id == "gridworld-4x4" {
        return gridworld_4x4();
    }
    if id == "two-arm-bandit" {
        return Ok(two_arm_bandit());
    }
    if let Some(n) = id.strip_prefix("chain-") {
        if let Ok(n) = n.parse::<usize>() {
            return chain(n);
        }
    }
    if let Some(seed) = id.strip_prefix("random-mdp-") {
        if let Ok(seed) = seed.parse::<u64>() {
            return random_mdp(seed);
        }
    }
    Err(unknown(id))
}

fn unknown(id: &str) -> CaiError {
    let keys: Vec<&str> = REGISTRY.iter().map(|(k, _)| *k).collect();
    CaiError::Validation(format!("unknown environment '{id}'; valid ids: {}", keys.join(", ")))
}

/// `N` states, two actions, `s -> min(s + 1, N - 1)` regardless of action.
/// Action 0 taken in state `N - 2` pays 1, so the best trajectory collects
/// reward exactly once on its final step.
pub fn chain(n: usize) -> Result<TabularMDP> {
    if n < 2 {
        return Err(CaiError::Validation(format!("chain needs at least 2 states, got {n}")));
    }
    let transition = (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            row[(s + 1).min(n - 1)] = 1.0;
            vec![row.clone(), row]
        })
        .collect();
    let mut reward = vec![vec![0.0; 2]; n];
    reward[n - 2][0] = 1.0;
    let mut init = vec![0.0; n];
    init[0] = 1.0;
    TabularMDP::new(n, 2, transition, reward, init, n - 1, 1.0)
}

/// Actions are 0 up, 1 right, 2 down, 3 left; moving into a wall stays put.
pub fn gridworld_4x4() -> Result<TabularMDP> {
    let side = 4usize;
    let n = side * side;
    let goal = n - 1;
    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![-1.0; 4]; n];
    for s in 0..n {
        let (row, col) = (s / side, s % side);
        for a in 0..4 {
            let next = if s == goal {
                goal
            } else {
                match a {
                    0 if row > 0 => s - side,
                    1 if col + 1 < side => s + 1,
                    2 if row + 1 < side => s + side,
                    3 if col > 0 => s - 1,
                    _ => s,
                }
            };
            transition[s][a][next] = 1.0;
        }
    }
    reward[goal] = vec![0.0; 4];
    let mut init = vec![0.0; n];
    init[0] = 1.0;
    TabularMDP::new(n, 4, transition, reward, init, 8, 1.0)
}

pub fn two_arm_bandit() -> TabularMDP {
    TabularMDP::new(1, 2, vec![vec![vec![1.0]; 2]], vec![vec![1.0, 0.0]], vec![1.0], 1, 1.0)
        .expect("valid bandit")
}

/// A dense random MDP: transition rows and the initial distribution are
/// flat-Dirichlet draws and rewards are uniform on `[-1, 1]`.
pub fn random_mdp(seed: u64) -> Result<TabularMDP> {
    let mut rng = SeedStream::new(seed).rng(0);
    let n_states = rng.random_range(2..=5usize);
    let n_actions = rng.random_range(2..=3usize);
    let horizon = rng.random_range(2..=4usize);
    let mut dirichlet = |k: usize| {
        let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = draws.iter().sum();
        let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
        let head: f64 = row[..k - 1].iter().sum();
        row[k - 1] = (1.0 - head).max(0.0);
        row
    };
    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| dirichlet(n_states)).collect())
        .collect();
    let init = dirichlet(n_states);
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    TabularMDP::new(n_states, n_actions, transition, reward, init, horizon, 1.0)
}

/// Point mass with `x' = x + v dt`, `v' = v + a dt`, starting at rest at
/// `x = 1`.
pub fn double_integrator() -> Result<ContinuousEnv> {
    let dt = DOUBLE_INTEGRATOR_DT;
    ContinuousEnv::new(
        2,
        1,
        vec![(-1.0, 1.0)],
        Arc::new(move |s: &[f64], a: &[f64]| vec![s[0] + s[1] * dt, s[1] + a[0] * dt]),
        Arc::new(|s: &[f64], a: &[f64]| -s[0] * s[0] - 0.1 * a[0] * a[0]),
        None,
        vec![1.0, 0.0],
        DOUBLE_INTEGRATOR_HORIZON,
    )
}

/// Ids for `envs` listing, with placeholders filled by small examples.
pub fn list() -> Vec<(String, String)> {
    REGISTRY.iter().map(|(k, d)| (k.to_string(), d.to_string())).collect()
}
