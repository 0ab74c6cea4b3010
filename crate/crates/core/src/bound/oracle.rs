//! Brute-force ground truth: the exact posterior by summing over all
//! trajectories, and the best bound available when the state dynamics of
//! `q` are pinned to the environment's, by search over the history tree.

use serde::{Deserialize, Serialize};

use crate::dist::{ActionPrior, Categorical, PolicyTable};
use crate::env::{for_each_suffix, OptimalityModel, TabularMDP};
use crate::error::{CaiError, Result};
use crate::numeric::LogSumExp;

/// The exact posterior `p(a_t | s_t, O_{t:T})` together with the backward
/// messages `ln p(O_{t:T} | s_t)` and `ln p(O_{1:T})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorOracle {
    pub policy: PolicyTable,
    pub log_messages: Vec<Vec<f64>>,
    pub log_evidence: f64,
}

/// Sums `p(τ_{t:T} | s_t) exp(R(τ_{t:T}) / β)` over every suffix from every
/// `(t, s)`, split by the first action.
pub fn brute_force_posterior(
    mdp: &TabularMDP,
    optimality: &OptimalityModel,
    prior: &ActionPrior,
) -> Result<PosteriorOracle> {
    let beta = optimality.beta();
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut steps = Vec::with_capacity(h);
    let mut log_messages = vec![vec![0.0; ns]; h];
    for t in 0..h {
        let mut rows = Vec::with_capacity(ns);
        for s in 0..ns {
            let mut by_action = vec![LogSumExp::default(); na];
            for_each_suffix(mdp, t, s, |p| {
                let mut x = p.log_dynamics;
                for (k, (&st, &at)) in p.states.iter().zip(p.actions).enumerate() {
                    x += prior.log_prob(t + k, st, at, na) + mdp.step_reward(t + k, st, at) / beta;
                }
                by_action[p.actions[0]].push(x);
            })?;
            let logits: Vec<f64> = by_action.iter().map(LogSumExp::value).collect();
            let mut all = LogSumExp::default();
            by_action.iter().for_each(|b| all.merge(*b));
            log_messages[t][s] = all.value();
            rows.push(Categorical::new(logits)?);
        }
        steps.push(rows);
    }
    let mut z = LogSumExp::default();
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        if p > 0.0 {
            z.push(p.ln() + log_messages[0][s]);
        }
    }
    Ok(PosteriorOracle { policy: PolicyTable::time_varying(steps), log_messages, log_evidence: z.value() })
}

/// The maximum ELBO over all history-dependent policies when `q` shares the
/// environment's state dynamics, and the maximizing per-step policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedOracle {
    pub log_evidence: f64,
    pub policy: PolicyTable,
    /// Largest deviation, over all histories reaching the same `(t, s)`, of
    /// the optimal action probabilities from those at the subtree root.
    /// Zero up to rounding because the optimum is Markov.
    pub history_spread: f64,
}

struct Tree<'a> {
    mdp: &'a TabularMDP,
    prior: &'a ActionPrior,
    beta: f64,
    roots: Vec<Vec<Option<Vec<f64>>>>,
    spread: f64,
}

impl Tree<'_> {
    /// Optimal value of the subtree rooted at a history ending in `s` at
    /// step `t`, in log-likelihood units.
    fn value(&mut self, t: usize, s: usize) -> f64 {
        let na = self.mdp.n_actions();
        let mut q = vec![0.0; na];
        for (a, qa) in q.iter_mut().enumerate() {
            *qa = self.mdp.step_reward(t, s, a) / self.beta;
            if t + 1 < self.mdp.horizon() {
                let row = self.mdp.transition_row(s, a).to_vec();
                for (next, p) in row.into_iter().enumerate() {
                    if p > 0.0 {
                        *qa += p * self.value(t + 1, next);
                    }
                }
            }
        }
        let mut acc = LogSumExp::default();
        let logits: Vec<f64> = (0..na).map(|a| self.prior.log_prob(t, s, a, na) + q[a]).collect();
        logits.iter().for_each(|l| acc.push(*l));
        let v = acc.value();
        let probs: Vec<f64> = logits.iter().map(|l| (l - v).exp()).collect();
        match &self.roots[t][s] {
            Some(root) => {
                let d = root.iter().zip(&probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                self.spread = self.spread.max(d);
            }
            None => self.roots[t][s] = Some(probs),
        }
        v
    }
}

pub fn constrained_optimum(
    mdp: &TabularMDP,
    optimality: &OptimalityModel,
    prior: &ActionPrior,
) -> Result<ConstrainedOracle> {
    crate::env::check_enumeration(mdp)?;
    let (h, ns) = (mdp.horizon(), mdp.n_states());
    let mut tree = Tree { mdp, prior, beta: optimality.beta(), roots: vec![vec![None; ns]; h], spread: 0.0 };
    let mut start_values = vec![0.0; ns];
    for t in (0..h).rev() {
        for s in 0..ns {
            if tree.roots[t][s].is_none() {
                let v = tree.value(t, s);
                if t == 0 {
                    start_values[s] = v;
                }
            } else if t == 0 {
                start_values[s] = tree.value(0, s);
            }
        }
    }
    let log_evidence = mdp
        .initial_dist()
        .iter()
        .zip(&start_values)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p * v)
        .sum();
    let steps = tree
        .roots
        .iter()
        .map(|rows| {
            rows.iter()
                .map(|r| {
                    let probs = r.as_ref().ok_or_else(|| CaiError::Numeric("unvisited oracle node".into()))?;
                    Categorical::from_probs(probs)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConstrainedOracle { log_evidence, policy: PolicyTable::time_varying(steps), history_spread: tree.spread })
}
