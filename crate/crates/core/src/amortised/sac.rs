use serde::{Deserialize, Serialize};

use crate::amortised::{
    record, soft_q_step, Batches, Clock, FeatureMap, QFunctionApprox, SoftmaxPolicy, TargetSource, TrainConfig,
    TrainRecord,
};
use crate::env::TabularMDP;
use crate::error::{CaiError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacOutcome {
    pub actor: SoftmaxPolicy,
    pub critic: QFunctionApprox,
    pub log: Vec<TrainRecord>,
}

/// Alternates a critic step towards `Q = r + E_{s'} V^π(s')` with an actor
/// update minimizing `KL(q_φ(·|s) ‖ p(·|s) exp((Q(s,·) − V(s))/β))` over
/// the batch states.
///
/// With one-hot features the actor update is the exact projection
/// `logits = ln p + Q/β`; otherwise it takes `config.actor_steps` gradient
/// steps. A non-finite ELBO aborts with the last finite iterate as the
/// checkpoint.
pub fn soft_actor_critic_loop(mdp: &TabularMDP, features: FeatureMap, config: &TrainConfig) -> Result<SacOutcome> {
    config.validate()?;
    if features.n_states() != mdp.n_states() {
        return Err(CaiError::invalid("feature map does not cover the environment's states"));
    }
    let clock = Clock::start(config.record_wall_time);
    let na = mdp.n_actions();
    let mut actor = SoftmaxPolicy::zeros(features.clone(), na);
    let mut critic = QFunctionApprox::zeros(features, na, config.beta)?;
    let mut snapshot = critic.clone();
    let mut data = Batches::new(mdp, config)?;
    let mut log: Vec<TrainRecord> = Vec::with_capacity(config.n_iterations);
    for iter in 0..config.n_iterations {
        let batch = data.next(mdp, config, iter)?;
        let (next_critic, report) =
            soft_q_step(&critic, &batch, mdp, &config.soft_q, &TargetSource { snapshot: &snapshot, actor: Some(&actor) })?;
        let mut states: Vec<(usize, usize)> = batch.iter().map(|tr| (tr.t, tr.s)).collect();
        states.sort_unstable();
        states.dedup();
        let next_actor = improve_actor(&actor, &next_critic, &states, config)?;
        let table = next_actor.to_table(mdp.horizon());
        let rec = table.and_then(|t| record(mdp, &t, config, iter, report.grad_norm, &clock));
        match rec {
            Ok(r) if r.elbo.is_finite() && next_actor.params().iter().all(|w| w.is_finite()) => {
                actor = next_actor;
                critic = next_critic;
                log.push(r);
            }
            _ => {
                let checkpoint = serde_json::json!({ "iteration": iter, "actor": actor, "critic": critic });
                return Err(CaiError::Diverged { iteration: iter, checkpoint: Box::new(checkpoint) });
            }
        }
        if (iter + 1) % config.target_refresh == 0 {
            snapshot = critic.clone();
        }
    }
    Ok(SacOutcome { actor, critic, log })
}

fn improve_actor(
    actor: &SoftmaxPolicy,
    critic: &QFunctionApprox,
    states: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<SoftmaxPolicy> {
    let na = actor.n_actions();
    let target_logits = |t: usize, s: usize| -> Vec<f64> {
        let logp = critic.prior.log_probs(t, s, na);
        critic.q_row(t, s).iter().zip(&logp).map(|(q, lp)| lp + q / critic.beta).collect()
    };
    let mut next = actor.clone();
    if actor.features.is_one_hot() {
        for &(t, s) in states {
            let k = actor.features.active(t, s).expect("one-hot");
            let z = target_logits(t, s);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            next.weights[k] = z.iter().map(|x| x - m).collect();
        }
        return Ok(next);
    }
    let n = states.len() as f64;
    for _ in 0..config.actor_steps {
        let mut grad = vec![vec![0.0; na]; next.weights.len()];
        for &(t, s) in states {
            let dist = next.dist(t, s)?;
            let (probs, logq) = (dist.probs(), dist.log_probs());
            let z = target_logits(t, s);
            let lz = crate::numeric::logsumexp(&z);
            let diff: Vec<f64> = (0..na).map(|a| logq[a] - (z[a] - lz)).collect();
            let mean: f64 = probs.iter().zip(&diff).map(|(p, d)| p * d).sum();
            for (k, x) in next.features.sparse(t, s) {
                for a in 0..na {
                    grad[k][a] += x * probs[a] * (diff[a] - mean) / n;
                }
            }
        }
        for (w, g) in next.weights.iter_mut().flatten().zip(grad.iter().flatten()) {
            *w -= config.learning_rate * g;
        }
    }
    Ok(next)
}
