use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{CaiError, Result};
use crate::rng::Rng;
use rand::Rng as _;

const SUM_TOL: f64 = 1e-12;

/// A finite MDP with fully known dynamics, rewards and initial distribution.
///
/// Terminal states are absorbing states with zero reward; there is no
/// separate termination flag. Serializes with exactly the field names below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    /// `transition[s][a][s']`
    transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    reward: Vec<Vec<f64>>,
    initial_dist: Vec<f64>,
    horizon: usize,
    discount: f64,
}

#[derive(Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    initial_dist: Vec<f64>,
    horizon: usize,
    discount: f64,
}

impl TryFrom<RawMdp> for TabularMDP {
    type Error = CaiError;
    fn try_from(r: RawMdp) -> Result<Self> {
        TabularMDP::new(r.n_states, r.n_actions, r.transition, r.reward, r.initial_dist, r.horizon, r.discount)
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CaiError::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(CaiError::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        initial_dist: Vec<f64>,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CaiError::invalid("MDP needs at least one state and one action"));
        }
        if horizon == 0 {
            return Err(CaiError::invalid("horizon must be positive"));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(CaiError::invalid("discount must lie in (0, 1]"));
        }
        if transition.len() != n_states
            || transition.iter().any(|r| r.len() != n_actions || r.iter().any(|p| p.len() != n_states))
        {
            return Err(CaiError::invalid("transition must be indexed [s][a][s']"));
        }
        if reward.len() != n_states || reward.iter().any(|r| r.len() != n_actions) {
            return Err(CaiError::invalid("reward must be indexed [s][a]"));
        }
        if reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(CaiError::invalid("rewards must be finite"));
        }
        if initial_dist.len() != n_states {
            return Err(CaiError::invalid("initial_dist must have one entry per state"));
        }
        for (s, rows) in transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                check_distribution(row, &format!("transition[{s}][{a}]"))?;
            }
        }
        check_distribution(&initial_dist, "initial_dist")?;
        Ok(Self { n_states, n_actions, transition, reward, initial_dist, horizon, discount })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[s][a][next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn reward_table(&self) -> &[Vec<f64>] {
        &self.reward
    }

    /// Reward at step `t`, discounted by `γ^t`.
    pub fn step_reward(&self, t: usize, s: usize, a: usize) -> f64 {
        if self.discount == 1.0 {
            self.reward[s][a]
        } else {
            self.discount.powi(t as i32) * self.reward[s][a]
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.transition
            .iter()
            .flatten()
            .all(|row| row.iter().filter(|p| **p > 0.0).count() == 1)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut m = self.clone();
        if horizon == 0 {
            return Err(CaiError::invalid("horizon must be positive"));
        }
        m.horizon = horizon;
        Ok(m)
    }

    /// Same MDP started deterministically from `s`.
    pub fn with_start(&self, s: usize) -> Result<Self> {
        if s >= self.n_states {
            return Err(CaiError::invalid("start state out of range"));
        }
        let mut m = self.clone();
        m.initial_dist = vec![0.0; self.n_states];
        m.initial_dist[s] = 1.0;
        Ok(m)
    }

    /// Adds `c` to every reward.
    pub fn shift_rewards(&self, c: f64) -> Self {
        let mut m = self.clone();
        for r in m.reward.iter_mut().flatten() {
            *r += c;
        }
        m
    }

    /// Same dynamics with a replaced reward table.
    pub fn with_rewards(&self, reward: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.initial_dist.clone(),
            self.horizon,
            self.discount,
        )
    }

    fn sample_from(p: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, x) in p.iter().enumerate() {
            acc += x;
            if u < acc {
                return i;
            }
        }
        p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
    }
}

impl Environment for TabularMDP {
    type State = usize;
    type Action = usize;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn initial_state(&self, rng: &mut Rng) -> usize {
        Self::sample_from(&self.initial_dist, rng)
    }

    fn reward(&self, s: &usize, a: &usize) -> f64 {
        self.reward[*s][*a]
    }

    fn next_state(&self, s: &usize, a: &usize, rng: &mut Rng) -> usize {
        Self::sample_from(&self.transition[*s][*a], rng)
    }

    fn check_action(&self, a: &usize) -> Result<()> {
        if *a >= self.n_actions {
            return Err(CaiError::invalid(format!("action {a} out of range")));
        }
        Ok(())
    }
}
