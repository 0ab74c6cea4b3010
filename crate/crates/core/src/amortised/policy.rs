use serde::{Deserialize, Serialize};

use crate::amortised::{Baseline, FeatureMap, ScoreForm, TrainConfig};
use crate::dist::{ActionPrior, Categorical, PolicyTable};
use crate::env::{TabularMDP, Trajectory};
use crate::error::{CaiError, Result};
use crate::soft_dp::soft_policy_evaluation;

/// Linear-softmax policy `q_φ(a|s) ∝ exp(Σ_k φ_k(t,s) W[k][a])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub features: FeatureMap,
    /// `weights[k][a]`
    pub weights: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    /// All-zero weights, which is the uniform policy.
    pub fn zeros(features: FeatureMap, n_actions: usize) -> Self {
        let weights = vec![vec![0.0; n_actions]; features.dim()];
        Self { features, weights }
    }

    pub fn n_actions(&self) -> usize {
        self.weights[0].len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() * self.n_actions()
    }

    pub fn logits(&self, t: usize, s: usize) -> Vec<f64> {
        let mut z = vec![0.0; self.n_actions()];
        for (k, x) in self.features.sparse(t, s) {
            for (za, w) in z.iter_mut().zip(&self.weights[k]) {
                *za += x * w;
            }
        }
        z
    }

    pub fn dist(&self, t: usize, s: usize) -> Result<Categorical> {
        Categorical::new(self.logits(t, s))
    }

    /// The policy as a table over `horizon` steps.
    pub fn to_table(&self, horizon: usize) -> Result<PolicyTable> {
        let ns = self.features.n_states();
        if self.features.is_time_varying() {
            let steps = (0..horizon)
                .map(|t| (0..ns).map(|s| self.dist(t, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            Ok(PolicyTable::time_varying(steps))
        } else {
            Ok(PolicyTable::stationary((0..ns).map(|s| self.dist(0, s)).collect::<Result<Vec<_>>>()?))
        }
    }

    /// Flattened parameters in `[k][a]` order.
    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let na = self.n_actions();
        for (k, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&flat[k * na..(k + 1) * na]);
        }
    }

    /// Accumulates `scale · ∂ z(t,s) / ∂W · dz` into `grad`.
    fn push_logit_grad(&self, grad: &mut [Vec<f64>], t: usize, s: usize, dz: &[f64], scale: f64) {
        for (k, x) in self.features.sparse(t, s) {
            for (g, d) in grad[k].iter_mut().zip(dz) {
                *g += scale * x * d;
            }
        }
    }
}

/// Where the policy gradient comes from.
#[derive(Clone, Copy, Debug)]
pub enum GradientSource<'a> {
    /// Exact expectation computed from the known model.
    Exact,
    /// On-policy trajectories rolled out under the current policy.
    Sampled(&'a [Trajectory<usize, usize>]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `gradient[k][a]`, the ascent direction of the amortised objective.
    pub gradient: Vec<Vec<f64>>,
    pub grad_norm: f64,
}

fn dz_softmax(probs: &[f64], adv: &[f64]) -> Vec<f64> {
    let mean: f64 = probs.iter().zip(adv).filter(|(p, _)| **p > 0.0).map(|(p, a)| p * a).sum();
    probs.iter().zip(adv).map(|(p, a)| if *p > 0.0 { p * (a - mean) } else { 0.0 }).collect()
}

/// Exact gradient of `J(φ) = E_q[Σ_t γ^t r_t/β − ln q_φ(a_t|s_t) + ln p(a_t|s_t)]`.
///
/// Combines forward state occupancies with the soft action values of the
/// current policy: `∂J/∂z_b(t,s) = d_t(s) π(b) (A(b) − Σ_a π(a) A(a))` with
/// `A(a) = Q^π_t(s,a)/β − ln π(a|s) + ln p(a|s)`.
pub fn exact_gradient(
    policy: &SoftmaxPolicy,
    mdp: &TabularMDP,
    beta: f64,
    prior: &ActionPrior,
) -> Result<Vec<Vec<f64>>> {
    let table = policy.to_table(mdp.horizon())?;
    let values = soft_policy_evaluation(mdp, beta, &table, prior)?;
    let (h, ns, na) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut grad = vec![vec![0.0; na]; policy.weights.len()];
    let mut occupancy = mdp.initial_dist().to_vec();
    for t in 0..h {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let d = occupancy[s];
            if d == 0.0 {
                continue;
            }
            let dist = table.dist(t, s);
            let (probs, logq) = (dist.probs(), dist.log_probs());
            let logp = prior.log_probs(t, s, na);
            let adv: Vec<f64> = (0..na).map(|a| values.q(t, s, a) / beta - logq[a] + logp[a]).collect();
            policy.push_logit_grad(&mut grad, t, s, &dz_softmax(&probs, &adv), d);
            if t + 1 < h {
                for a in 0..na {
                    for (n, p) in next.iter_mut().zip(mdp.transition_row(s, a)) {
                        *n += d * probs[a] * p;
                    }
                }
            }
        }
        occupancy = next;
    }
    Ok(grad)
}

/// Score-function estimate from on-policy trajectories.
///
/// [`ScoreForm::Corrected`] weights each score by the reward-to-go minus
/// the exact action KL of later visited states, and adds the exact KL
/// gradient at every visited state. [`ScoreForm::WholeTrajectory`] weights
/// every score by the whole-trajectory `Σ r/β − Σ ln(q/p)`.
pub fn sampled_gradient(
    policy: &SoftmaxPolicy,
    batch: &[Trajectory<usize, usize>],
    discount: f64,
    config: &TrainConfig,
    prior: &ActionPrior,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(CaiError::invalid("policy gradient needs a non-empty batch"));
    }
    let beta = config.beta;
    let na = policy.n_actions();
    let n = batch.len() as f64;
    let mut per_traj = Vec::with_capacity(batch.len());
    for traj in batch {
        let steps = traj.actions.len();
        let mut rewards = Vec::with_capacity(steps);
        let mut kls = Vec::with_capacity(steps);
        let mut log_ratio = Vec::with_capacity(steps);
        let mut g = 1.0;
        for t in 0..steps {
            let (s, a) = (traj.states[t], traj.actions[t]);
            let dist = policy.dist(t, s)?;
            let pd = prior.dist(t, s, na);
            rewards.push(g * traj.rewards[t] / beta);
            kls.push(dist.kl(&pd)?);
            log_ratio.push(dist.log_prob(a)? - pd.log_prob(a)?);
            g *= discount;
        }
        per_traj.push((rewards, kls, log_ratio));
    }
    let total_return = |(r, k, l): &(Vec<f64>, Vec<f64>, Vec<f64>)| match config.score_form {
        ScoreForm::Corrected => r.iter().sum::<f64>() - k.iter().skip(1).sum::<f64>(),
        ScoreForm::WholeTrajectory => r.iter().sum::<f64>() - l.iter().sum::<f64>(),
    };
    let baseline = match config.baseline {
        Baseline::None => 0.0,
        Baseline::MeanReturn => per_traj.iter().map(total_return).sum::<f64>() / n,
    };
    let mut grad = vec![vec![0.0; na]; policy.weights.len()];
    for (i, (traj, (rewards, kls, log_ratio))) in batch.iter().zip(&per_traj).enumerate() {
        let steps = traj.actions.len();
        let mut local = vec![vec![0.0; na]; policy.weights.len()];
        let literal = rewards.iter().sum::<f64>() - log_ratio.iter().sum::<f64>();
        for t in 0..steps {
            let (s, a) = (traj.states[t], traj.actions[t]);
            let dist = policy.dist(t, s)?;
            let probs = dist.probs();
            let factor = match config.score_form {
                ScoreForm::Corrected => {
                    rewards[t..].iter().sum::<f64>() - kls[t + 1..].iter().sum::<f64>() - baseline
                }
                ScoreForm::WholeTrajectory => literal - baseline,
            };
            let score: Vec<f64> = (0..na).map(|b| f64::from(u8::from(b == a)) - probs[b]).collect();
            policy.push_logit_grad(&mut local, t, s, &score, factor / n);
            if config.score_form == ScoreForm::Corrected {
                let logq = dist.log_probs();
                let logp = prior.log_probs(t, s, na);
                let neg_kl_grad: Vec<f64> = (0..na).map(|b| logp[b] - logq[b]).collect();
                policy.push_logit_grad(&mut local, t, s, &dz_softmax(&probs, &neg_kl_grad), 1.0 / n);
            }
        }
        if local.iter().flatten().any(|g| !g.is_finite()) {
            return Err(CaiError::Numeric(format!("non-finite policy gradient from trajectory {i}")));
        }
        for (g, l) in grad.iter_mut().flatten().zip(local.iter().flatten()) {
            *g += l;
        }
    }
    Ok(grad)
}

/// One ascent step `φ ← φ + lr ∇J`.
pub fn policy_gradient_step(
    policy: &SoftmaxPolicy,
    source: GradientSource<'_>,
    mdp: &TabularMDP,
    config: &TrainConfig,
    prior: &ActionPrior,
) -> Result<(SoftmaxPolicy, GradientReport)> {
    let gradient = match source {
        GradientSource::Exact => exact_gradient(policy, mdp, config.beta, prior)?,
        GradientSource::Sampled(batch) => sampled_gradient(policy, batch, mdp.discount(), config, prior)?,
    };
    let grad_norm = gradient.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(CaiError::Numeric("non-finite policy gradient".into()));
    }
    let mut next = policy.clone();
    for (w, g) in next.weights.iter_mut().flatten().zip(gradient.iter().flatten()) {
        *w += config.learning_rate * g;
    }
    Ok((next, GradientReport { gradient, grad_norm }))
}
