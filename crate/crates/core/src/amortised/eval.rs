use serde::{Deserialize, Serialize};

use crate::bound::mean_stderr;
use crate::dist::{ActionPrior, PolicyTable};
use crate::env::{rollout, PolicyActor, TabularMDP};
use crate::error::{CaiError, Result};
use crate::rng::SeedStream;
use crate::soft_dp::soft_policy_evaluation;

/// Exact expectations of a policy on a tabular MDP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMetrics {
    /// KL-form ELBO `E[Σ γ^t r_t/β] − Σ_t E[KL(π_t(·|s_t) ‖ p)]`.
    pub elbo: f64,
    pub expected_return: f64,
    /// `Σ_t E[H(π_t(·|s_t))]`.
    pub entropy: f64,
}

pub fn exact_policy_metrics(
    mdp: &TabularMDP,
    policy: &PolicyTable,
    beta: f64,
    prior: &ActionPrior,
) -> Result<ExactMetrics> {
    let values = soft_policy_evaluation(mdp, beta, policy, prior)?;
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let elbo = values.expected_start_value(mdp.initial_dist());
    let mut occupancy = mdp.initial_dist().to_vec();
    let (mut ret, mut entropy) = (0.0, 0.0);
    for t in 0..h {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let d = occupancy[s];
            if d == 0.0 {
                continue;
            }
            let dist = policy.dist(t, s);
            let probs = dist.probs();
            entropy += d * dist.entropy();
            for a in 0..na {
                ret += d * probs[a] * mdp.step_reward(t, s, a);
                if t + 1 < h {
                    for (n, p) in next.iter_mut().zip(mdp.transition_row(s, a)) {
                        *n += d * probs[a] * p;
                    }
                }
            }
        }
        occupancy = next;
    }
    Ok(ExactMetrics { elbo, expected_return: ret, entropy })
}

/// Seeded Monte Carlo metrics. Entropies are exact at each visited state;
/// standard errors are 0 for a single episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub n_episodes: usize,
    pub mean_return: f64,
    pub return_stderr: f64,
    pub mean_entropy: f64,
    pub entropy_stderr: f64,
    pub elbo: f64,
    pub elbo_stderr: f64,
}

pub fn evaluate_policy(
    mdp: &TabularMDP,
    policy: &PolicyTable,
    beta: f64,
    n_episodes: usize,
    seed: u64,
) -> Result<PolicyMetrics> {
    if n_episodes == 0 {
        return Err(CaiError::invalid("evaluation needs at least one episode"));
    }
    policy.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    let streams = SeedStream::new(seed);
    let na = mdp.n_actions();
    let uniform = crate::dist::Categorical::uniform(na);
    let (mut rets, mut ents, mut elbos) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n_episodes {
        let traj = rollout(mdp, &mut PolicyActor(policy), streams.derive(i as u64).seed())?;
        let (mut r, mut h, mut kl) = (0.0, 0.0, 0.0);
        for (t, (&s, &a)) in traj.states.iter().zip(&traj.actions).enumerate() {
            r += mdp.step_reward(t, s, a);
            let d = policy.dist(t, s);
            h += d.entropy();
            kl += d.kl(&uniform)?;
        }
        rets.push(r);
        ents.push(h);
        elbos.push(r / beta - kl);
    }
    let (mean_return, return_stderr) = mean_stderr(&rets);
    let (mean_entropy, entropy_stderr) = mean_stderr(&ents);
    let (elbo, elbo_stderr) = mean_stderr(&elbos);
    Ok(PolicyMetrics { n_episodes, mean_return, return_stderr, mean_entropy, entropy_stderr, elbo, elbo_stderr })
}
