//! The variational bound: exact (by enumeration) and Monte Carlo ELBO with
//! its three-term decomposition, and the log-evidence it bounds.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::dist::{ActionPrior, CategoricalSeq, PolicyTable};
use crate::env::{
    for_each_path, for_each_path_under, rollout, DynamicsTable, OptimalityModel, PolicyActor, TabularMDP,
};
use crate::error::{CaiError, Result};
use crate::numeric::LogSumExp;
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Exact,
    MonteCarlo { n: usize, stderr: f64, reward_stderr: f64 },
}

/// ELBO and its parts, all in log-likelihood units (rewards divided by β).
///
/// `elbo = expected_reward - state_complexity - action_complexity` is the
/// KL-form bound, maximized at the posterior. `entropy_form_elbo` replaces
/// the action KL by the action entropy; with a uniform prior the two differ
/// by exactly `uniform_prior_constant = T ln|A|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub elbo: f64,
    /// `E_q[Σ_t γ^t r_t / β]`.
    pub expected_reward: f64,
    pub state_complexity: f64,
    pub action_complexity: f64,
    /// `Σ_t E_q[H(q(·|s_t))]`.
    pub action_entropy: f64,
    pub entropy_form_elbo: f64,
    pub uniform_prior_constant: f64,
    /// `ln p(O_{1:T})` under the prior and the environment dynamics.
    pub log_evidence: Option<f64>,
    /// Best bound attainable when the state dynamics of `q` are pinned to
    /// the environment's.
    pub family_log_evidence: Option<f64>,
    /// `KL(q(τ) || p(τ | O))`, the gap `log_evidence - elbo`.
    pub kl_to_joint: Option<f64>,
    pub estimator: Estimator,
}

/// What `q(a|s)` is built from.
#[derive(Clone, Copy, Debug)]
pub enum Behaviour<'a> {
    Policy(&'a PolicyTable),
    /// Open-loop plan over the full horizon: the same action distribution
    /// in every state at a given step.
    Plan(&'a CategoricalSeq),
}

impl Behaviour<'_> {
    pub fn to_policy(&self, mdp: &TabularMDP) -> Result<PolicyTable> {
        let policy = match self {
            Behaviour::Policy(p) => (*p).clone(),
            Behaviour::Plan(plan) => {
                if plan.horizon() != mdp.horizon() {
                    return Err(CaiError::invalid(format!(
                        "plan horizon {} differs from environment horizon {}",
                        plan.horizon(),
                        mdp.horizon()
                    )));
                }
                plan_as_policy(plan, mdp.n_states())
            }
        };
        policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
        Ok(policy)
    }
}

/// The time-varying policy that ignores the state and follows `plan`.
pub fn plan_as_policy(plan: &CategoricalSeq, n_states: usize) -> PolicyTable {
    PolicyTable::time_varying(plan.steps.iter().map(|c| vec![c.clone(); n_states]).collect())
}

/// State dynamics of the variational distribution.
#[derive(Clone, Copy, Debug, Default)]
pub enum QDynamics<'a> {
    #[default]
    SameAsEnv,
    Explicit(&'a DynamicsTable),
}

fn check_prior(mdp: &TabularMDP, prior: &ActionPrior) -> Result<()> {
    if let ActionPrior::Amortised { policy } = prior {
        policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    }
    Ok(())
}

fn log_ratio_kl(p: &[f64], q_log: &[f64], p_log: &[f64]) -> f64 {
    p.iter()
        .zip(q_log.iter().zip(p_log))
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, (lq, lp))| p * (lq - lp))
        .sum()
}

fn dist_kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, p)| if *p > 0.0 { q * (q.ln() - p.ln()) } else { f64::INFINITY })
        .sum()
}

/// Exact ELBO by enumerating every trajectory of `q`.
///
/// `elbo` is the enumerated `E_q[ln p(O|τ) + ln p(τ) - ln q(τ)]`; the
/// decomposition terms come from a separate forward pass over state
/// occupancies.
pub fn elbo_exact(
    mdp: &TabularMDP,
    behaviour: Behaviour<'_>,
    optimality: &OptimalityModel,
    prior: &ActionPrior,
    q_dynamics: QDynamics<'_>,
) -> Result<ElboReport> {
    check_prior(mdp, prior)?;
    let policy = behaviour.to_policy(mdp)?;
    let beta = optimality.beta();
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let logpi: Vec<Vec<Vec<f64>>> =
        (0..h).map(|t| (0..ns).map(|s| policy.dist(t, s).log_probs()).collect()).collect();
    let logprior: Vec<Vec<Vec<f64>>> = (0..h).map(|t| (0..ns).map(|s| prior.log_probs(t, s, na)).collect()).collect();

    let mut direct = 0.0;
    let mut visit = |states: &[usize], actions: &[usize], log_q_dyn: f64, log_p_dyn: f64| {
        let mut lq = log_q_dyn;
        let mut lp = log_p_dyn;
        let mut ret = 0.0;
        for (t, (&s, &a)) in states.iter().zip(actions).enumerate() {
            lq += logpi[t][s][a];
            lp += logprior[t][s][a];
            ret += mdp.step_reward(t, s, a) / beta;
        }
        let q = lq.exp();
        if q > 0.0 {
            direct += q * (ret + lp - lq);
        }
    };
    match q_dynamics {
        QDynamics::SameAsEnv => {
            for_each_path(mdp, |p| visit(p.states, p.actions, p.log_dynamics, p.log_dynamics))?;
        }
        QDynamics::Explicit(table) => {
            for_each_path_under(mdp, table, |p| {
                let mut lp = mdp.initial_dist()[p.states[0]].ln();
                for t in 0..p.states.len() - 1 {
                    lp += mdp.transition(p.states[t], p.actions[t], p.states[t + 1]).ln();
                }
                visit(p.states, p.actions, p.log_dynamics, lp)
            })?;
        }
    }

    let env_table;
    let table = match q_dynamics {
        QDynamics::SameAsEnv => {
            env_table = DynamicsTable::from_mdp(mdp);
            &env_table
        }
        QDynamics::Explicit(t) => t,
    };
    let mut occupancy = table.initial.clone();
    let mut expected_reward = 0.0;
    let mut action_complexity = 0.0;
    let mut action_entropy = 0.0;
    let mut state_complexity = match q_dynamics {
        QDynamics::SameAsEnv => 0.0,
        QDynamics::Explicit(_) => dist_kl(&table.initial, mdp.initial_dist()),
    };
    for t in 0..h {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let d = occupancy[s];
            if d == 0.0 {
                continue;
            }
            let pi = policy.dist(t, s).probs();
            action_complexity += d * log_ratio_kl(&pi, &logpi[t][s], &logprior[t][s]);
            action_entropy -= d * log_ratio_kl(&pi, &logpi[t][s], &vec![0.0; na]);
            for a in 0..na {
                let w = d * pi[a];
                if w == 0.0 {
                    continue;
                }
                expected_reward += w * mdp.step_reward(t, s, a) / beta;
                if t + 1 < h {
                    let row = table.row(t, s, a);
                    if let QDynamics::Explicit(_) = q_dynamics {
                        state_complexity += w * dist_kl(row, mdp.transition_row(s, a));
                    }
                    for (n, p) in next.iter_mut().zip(row) {
                        *n += w * p;
                    }
                }
            }
        }
        occupancy = next;
    }

    let uniform_prior_constant = h as f64 * (na as f64).ln();
    let log_evidence = log_evidence(mdp, optimality, prior)?;
    let family = match q_dynamics {
        QDynamics::SameAsEnv => Some(oracle::constrained_optimum(mdp, optimality, prior)?.log_evidence),
        QDynamics::Explicit(_) => None,
    };
    Ok(ElboReport {
        elbo: direct,
        expected_reward,
        state_complexity,
        action_complexity,
        action_entropy,
        entropy_form_elbo: expected_reward - state_complexity + action_entropy,
        uniform_prior_constant,
        log_evidence: Some(log_evidence),
        family_log_evidence: family,
        kl_to_joint: Some(log_evidence - direct),
        estimator: Estimator::Exact,
    })
}

/// Monte Carlo ELBO from `n` seeded rollouts: sampled `Σ r / β` plus the
/// exact action KL and entropy at every visited state.
pub fn elbo_mc(
    mdp: &TabularMDP,
    behaviour: Behaviour<'_>,
    optimality: &OptimalityModel,
    prior: &ActionPrior,
    n: usize,
    seed: u64,
) -> Result<ElboReport> {
    if n < 2 {
        return Err(CaiError::invalid("Monte Carlo ELBO needs n >= 2"));
    }
    check_prior(mdp, prior)?;
    let policy = behaviour.to_policy(mdp)?;
    let beta = optimality.beta();
    let na = mdp.n_actions();
    let streams = SeedStream::new(seed);
    let (mut rewards, mut elbos) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut kl_total, mut ent_total) = (0.0, 0.0);
    for i in 0..n {
        let traj = rollout(mdp, &mut PolicyActor(&policy), streams.derive(i as u64).seed())?;
        let mut ret = 0.0;
        let (mut kl, mut ent) = (0.0, 0.0);
        for (t, (&s, &a)) in traj.states.iter().zip(&traj.actions).enumerate() {
            ret += mdp.step_reward(t, s, a) / beta;
            let d = policy.dist(t, s);
            kl += d.kl(&prior.dist(t, s, na))?;
            ent += d.entropy();
        }
        kl_total += kl;
        ent_total += ent;
        rewards.push(ret);
        elbos.push(ret - kl);
    }
    let (reward_mean, reward_stderr) = mean_stderr(&rewards);
    let (elbo, stderr) = mean_stderr(&elbos);
    let nf = n as f64;
    Ok(ElboReport {
        elbo,
        expected_reward: reward_mean,
        state_complexity: 0.0,
        action_complexity: kl_total / nf,
        action_entropy: ent_total / nf,
        entropy_form_elbo: reward_mean + ent_total / nf,
        uniform_prior_constant: mdp.horizon() as f64 * (na as f64).ln(),
        log_evidence: None,
        family_log_evidence: None,
        kl_to_joint: None,
        estimator: Estimator::MonteCarlo { n, stderr, reward_stderr },
    })
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `ln Σ_τ p(τ) exp(Σ_t γ^t r_t / β)` where `p(τ)` combines the action
/// prior with the environment dynamics.
///
/// Partial sums are accumulated per initial state and merged in log space.
pub fn log_evidence(mdp: &TabularMDP, optimality: &OptimalityModel, prior: &ActionPrior) -> Result<f64> {
    let parts = log_evidence_parts(mdp, optimality, prior)?;
    let mut total = LogSumExp::default();
    for part in parts {
        total.merge(part);
    }
    Ok(total.value())
}

fn log_evidence_parts(mdp: &TabularMDP, optimality: &OptimalityModel, prior: &ActionPrior) -> Result<Vec<LogSumExp>> {
    check_prior(mdp, prior)?;
    let beta = optimality.beta();
    let na = mdp.n_actions();
    let logprior: Vec<Vec<Vec<f64>>> =
        (0..mdp.horizon()).map(|t| (0..mdp.n_states()).map(|s| prior.log_probs(t, s, na)).collect()).collect();
    let mut parts = vec![LogSumExp::default(); mdp.n_states()];
    for_each_path(mdp, |p| {
        let mut x = p.log_dynamics;
        for (t, (&s, &a)) in p.states.iter().zip(p.actions).enumerate() {
            x += logprior[t][s][a] + mdp.step_reward(t, s, a) / beta;
        }
        parts[p.states[0]].push(x);
    })?;
    Ok(parts)
}
