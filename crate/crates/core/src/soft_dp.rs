//! Exact backward message passing on tabular MDPs: soft Q and V tables,
//! the optimal per-step posterior, and the hard-max limit.

use serde::{Deserialize, Serialize};

use crate::dist::{ActionPrior, Categorical, PolicyTable};
use crate::env::{DynamicsTable, OptimalityModel, TabularMDP};
use crate::error::{CaiError, Result};
use crate::numeric::logsumexp;

/// How the successor value enters the soft Q backup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackupVariant {
    /// `Q = r + E_{s'}[V(s')]`.
    #[default]
    Expected,
    /// `Q = r + β ln E_{s'}[exp(V(s') / β)]`.
    Optimistic,
}

/// Soft value tables indexed `[t][s][a]` and `[t][s]` for `t = 0..T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftValues {
    pub q_table: Vec<Vec<Vec<f64>>>,
    pub v_table: Vec<Vec<f64>>,
    pub beta: f64,
    pub backup_variant: BackupVariant,
}

impl SoftValues {
    pub fn horizon(&self) -> usize {
        self.v_table.len()
    }

    pub fn n_states(&self) -> usize {
        self.v_table[0].len()
    }

    pub fn n_actions(&self) -> usize {
        self.q_table[0][0].len()
    }

    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q_table[t][s][a]
    }

    /// `V_t(s)`, with `V_T = 0`.
    pub fn v(&self, t: usize, s: usize) -> f64 {
        self.v_table.get(t).map_or(0.0, |row| row[s])
    }

    /// `ln Σ_s p(s) exp(V_0(s) / β)`.
    pub fn log_partition(&self, initial_dist: &[f64]) -> f64 {
        let terms: Vec<f64> = initial_dist
            .iter()
            .zip(&self.v_table[0])
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, v)| p.ln() + v / self.beta)
            .collect();
        logsumexp(&terms)
    }

    /// `Σ_s p(s) V_0(s) / β`.
    pub fn expected_start_value(&self, initial_dist: &[f64]) -> f64 {
        initial_dist
            .iter()
            .zip(&self.v_table[0])
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, v)| p * v / self.beta)
            .sum()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(CaiError::invalid(format!("temperature must be positive and finite, got {beta}")));
    }
    Ok(())
}

fn check_prior(mdp: &TabularMDP, prior: &ActionPrior) -> Result<()> {
    if let ActionPrior::Amortised { policy } = prior {
        policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    }
    Ok(())
}

/// Successor backup of `values` at `(s, a)` given the next-step value row.
fn backup(mdp: &TabularMDP, s: usize, a: usize, next_v: &[f64], beta: f64, variant: BackupVariant) -> f64 {
    let row = mdp.transition_row(s, a);
    match variant {
        BackupVariant::Expected => row.iter().zip(next_v).filter(|(p, _)| **p > 0.0).map(|(p, v)| p * v).sum(),
        BackupVariant::Optimistic => {
            let terms: Vec<f64> =
                row.iter().zip(next_v).filter(|(p, _)| **p > 0.0).map(|(p, v)| p.ln() + v / beta).collect();
            beta * logsumexp(&terms)
        }
    }
}

/// Soft backward pass with a uniform action prior.
pub fn soft_backward_pass(mdp: &TabularMDP, optimality: &OptimalityModel, variant: BackupVariant) -> Result<SoftValues> {
    soft_backward_pass_with_prior(mdp, optimality, variant, &ActionPrior::Uniform)
}

/// `Q_{T-1} = r`, `Q_t = r + backup(V_{t+1})`, and
/// `V_t(s) = β ln Σ_a p(a|s) exp(Q_t(s,a) / β)`.
pub fn soft_backward_pass_with_prior(
    mdp: &TabularMDP,
    optimality: &OptimalityModel,
    variant: BackupVariant,
    prior: &ActionPrior,
) -> Result<SoftValues> {
    let beta = optimality.beta();
    check_beta(beta)?;
    check_prior(mdp, prior)?;
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut q_table = vec![vec![vec![0.0; na]; ns]; h];
    let mut v_table = vec![vec![0.0; ns]; h];
    for t in (0..h).rev() {
        for s in 0..ns {
            for a in 0..na {
                let mut q = mdp.step_reward(t, s, a);
                if t + 1 < h {
                    q += backup(mdp, s, a, &v_table[t + 1], beta, variant);
                }
                if !q.is_finite() {
                    return Err(CaiError::NumericOverflow { t, state: s, what: "soft Q".into() });
                }
                q_table[t][s][a] = q;
            }
            let logp = prior.log_probs(t, s, na);
            let terms: Vec<f64> = logp.iter().zip(&q_table[t][s]).map(|(lp, q)| lp + q / beta).collect();
            let v = beta * logsumexp(&terms);
            if !v.is_finite() {
                return Err(CaiError::NumericOverflow { t, state: s, what: "soft V".into() });
            }
            v_table[t][s] = v;
        }
    }
    Ok(SoftValues { q_table, v_table, beta, backup_variant: variant })
}

/// `π_t(a|s) = p(a|s) exp((Q_t(s,a) - V_t(s)) / β)` as a time-varying table.
pub fn optimal_posterior(values: &SoftValues, prior: &ActionPrior) -> PolicyTable {
    let na = values.n_actions();
    let steps = (0..values.horizon())
        .map(|t| {
            (0..values.n_states())
                .map(|s| {
                    let logp = prior.log_probs(t, s, na);
                    let v = values.v(t, s);
                    let logits = (0..na).map(|a| logp[a] + (values.q(t, s, a) - v) / values.beta).collect();
                    Categorical::new(logits).expect("finite soft values give valid logits")
                })
                .collect()
        })
        .collect();
    PolicyTable::time_varying(steps)
}

/// Finite-horizon Bellman optimality tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardValues {
    pub q_table: Vec<Vec<Vec<f64>>>,
    pub v_table: Vec<Vec<f64>>,
}

impl HardValues {
    /// First maximizing action at `(t, s)`.
    pub fn argmax(&self, t: usize, s: usize) -> usize {
        argmax(&self.q_table[t][s])
    }

    /// Gap between the best and second-best action values at `(t, s)`.
    pub fn gap(&self, t: usize, s: usize) -> f64 {
        let row = &self.q_table[t][s];
        let best = row[self.argmax(t, s)];
        let second = row
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != self.argmax(t, s))
            .map(|(_, q)| *q)
            .fold(f64::NEG_INFINITY, f64::max);
        best - second
    }

    /// Greedy deterministic policy as a time-varying table whose logits are
    /// `0` for the argmax and `-inf` elsewhere.
    pub fn greedy_policy(&self) -> PolicyTable {
        let steps = self
            .q_table
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|q| {
                        let best = argmax(q);
                        let logits =
                            (0..q.len()).map(|a| if a == best { 0.0 } else { f64::NEG_INFINITY }).collect();
                        Categorical::new(logits).expect("one finite logit")
                    })
                    .collect()
            })
            .collect();
        PolicyTable::time_varying(steps)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Backward induction with a hard max over actions and an expectation
/// over successors.
pub fn hard_value_iteration(mdp: &TabularMDP) -> HardValues {
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut q_table = vec![vec![vec![0.0; na]; ns]; h];
    let mut v_table = vec![vec![0.0; ns]; h];
    for t in (0..h).rev() {
        for s in 0..ns {
            for a in 0..na {
                let mut q = mdp.step_reward(t, s, a);
                if t + 1 < h {
                    q += mdp.transition_row(s, a).iter().zip(&v_table[t + 1]).map(|(p, v)| p * v).sum::<f64>();
                }
                q_table[t][s][a] = q;
            }
            v_table[t][s] = q_table[t][s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    HardValues { q_table, v_table }
}

/// Soft evaluation of a fixed policy against a prior:
/// `Q^π_t = r + E_{s'} V^π_{t+1}` and
/// `V^π_t(s) = Σ_a π(a|s) (Q^π_t(s,a) - β ln(π(a|s) / p(a|s)))`.
pub fn soft_policy_evaluation(
    mdp: &TabularMDP,
    beta: f64,
    policy: &PolicyTable,
    prior: &ActionPrior,
) -> Result<SoftValues> {
    check_beta(beta)?;
    check_prior(mdp, prior)?;
    policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut q_table = vec![vec![vec![0.0; na]; ns]; h];
    let mut v_table = vec![vec![0.0; ns]; h];
    for t in (0..h).rev() {
        for s in 0..ns {
            for a in 0..na {
                let mut q = mdp.step_reward(t, s, a);
                if t + 1 < h {
                    q += backup(mdp, s, a, &v_table[t + 1], beta, BackupVariant::Expected);
                }
                q_table[t][s][a] = q;
            }
            let d = policy.dist(t, s);
            let (probs, logq) = (d.probs(), d.log_probs());
            let logp = prior.log_probs(t, s, na);
            v_table[t][s] = (0..na)
                .filter(|&a| probs[a] > 0.0)
                .map(|a| probs[a] * (q_table[t][s][a] - beta * (logq[a] - logp[a])))
                .sum();
            if !v_table[t][s].is_finite() {
                return Err(CaiError::NumericOverflow { t, state: s, what: "policy soft V".into() });
            }
        }
    }
    Ok(SoftValues { q_table, v_table, beta, backup_variant: BackupVariant::Expected })
}

/// State dynamics of the trajectory posterior implied by a set of soft
/// values: `q(s_1) ∝ p(s_1) exp(V_0(s_1)/β)` and
/// `q_t(s'|s,a) ∝ p(s'|s,a) exp(V_{t+1}(s')/β)`.
///
/// With optimistic values this is the exact conditional of the state
/// process given optimality.
pub fn posterior_dynamics(mdp: &TabularMDP, values: &SoftValues) -> DynamicsTable {
    let beta = values.beta;
    let tilt = |p: &[f64], v: &[f64]| -> Vec<f64> {
        let logs: Vec<f64> = p
            .iter()
            .zip(v)
            .map(|(p, v)| if *p > 0.0 { p.ln() + v / beta } else { f64::NEG_INFINITY })
            .collect();
        let z = logsumexp(&logs);
        logs.iter().map(|l| (l - z).exp()).collect()
    };
    let initial = tilt(mdp.initial_dist(), &values.v_table[0]);
    let h = values.horizon();
    let transition = (0..h.saturating_sub(1))
        .map(|t| {
            (0..mdp.n_states())
                .map(|s| {
                    (0..mdp.n_actions()).map(|a| tilt(mdp.transition_row(s, a), &values.v_table[t + 1])).collect()
                })
                .collect()
        })
        .collect();
    DynamicsTable { initial, transition }
}
