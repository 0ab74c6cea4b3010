use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::amortised::{FeatureMap, SoftmaxPolicy};
use crate::dist::{ActionPrior, Categorical, PolicyTable};
use crate::env::TabularMDP;
use crate::error::{CaiError, Result};
use crate::numeric::logsumexp;
use crate::rng::Rng;
use crate::soft_dp::{argmax, SoftValues};

/// Linear soft Q-function `Q_φ(t,s,a) = Σ_k φ_k(t,s) W[k][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFunctionApprox {
    pub features: FeatureMap,
    /// `weights[k][a]`
    pub weights: Vec<Vec<f64>>,
    pub beta: f64,
    #[serde(default)]
    pub prior: ActionPrior,
}

impl QFunctionApprox {
    pub fn zeros(features: FeatureMap, n_actions: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CaiError::invalid(format!("temperature must be positive and finite, got {beta}")));
        }
        let weights = vec![vec![0.0; n_actions]; features.dim()];
        Ok(Self { features, weights, beta, prior: ActionPrior::Uniform })
    }

    /// Tabular time-indexed Q-function holding an exact soft Q table.
    pub fn from_soft_values(values: &SoftValues) -> Result<Self> {
        let features = FeatureMap::OneHotTimeState { horizon: values.horizon(), n_states: values.n_states() };
        let mut q = Self::zeros(features, values.n_actions(), values.beta)?;
        for t in 0..values.horizon() {
            for s in 0..values.n_states() {
                let k = q.features.active(t, s).expect("one-hot");
                q.weights[k].copy_from_slice(&values.q_table[t][s]);
            }
        }
        Ok(q)
    }

    pub fn n_actions(&self) -> usize {
        self.weights[0].len()
    }

    pub fn q_row(&self, t: usize, s: usize) -> Vec<f64> {
        let mut z = vec![0.0; self.n_actions()];
        for (k, x) in self.features.sparse(t, s) {
            for (za, w) in z.iter_mut().zip(&self.weights[k]) {
                *za += x * w;
            }
        }
        z
    }

    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q_row(t, s)[a]
    }

    /// `V_φ(t,s) = β ln Σ_a p(a|s) exp(Q_φ(t,s,a)/β)`.
    pub fn soft_v(&self, t: usize, s: usize) -> f64 {
        let na = self.n_actions();
        let logp = self.prior.log_probs(t, s, na);
        let terms: Vec<f64> = self.q_row(t, s).iter().zip(&logp).map(|(q, lp)| lp + q / self.beta).collect();
        self.beta * logsumexp(&terms)
    }

    /// `V^π(t,s) = Σ_a π(a|s) (Q_φ(t,s,a) − β ln(π(a|s)/p(a|s)))`.
    pub fn policy_v(&self, actor: &SoftmaxPolicy, t: usize, s: usize) -> Result<f64> {
        let dist = actor.dist(t, s)?;
        let (probs, logq) = (dist.probs(), dist.log_probs());
        let logp = self.prior.log_probs(t, s, self.n_actions());
        let q = self.q_row(t, s);
        Ok((0..q.len()).filter(|&a| probs[a] > 0.0).map(|a| probs[a] * (q[a] - self.beta * (logq[a] - logp[a]))).sum())
    }

    /// The Boltzmann policy `p(a|s) exp((Q_φ − V_φ)/β)` over `horizon` steps.
    pub fn soft_policy(&self, horizon: usize, n_states: usize) -> PolicyTable {
        let na = self.n_actions();
        PolicyTable::time_varying(
            (0..horizon)
                .map(|t| {
                    (0..n_states)
                        .map(|s| {
                            let logp = self.prior.log_probs(t, s, na);
                            let logits = self.q_row(t, s).iter().zip(&logp).map(|(q, lp)| lp + q / self.beta).collect();
                            Categorical::new(logits).expect("finite Q values")
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// First argmax action per `(t, s)`.
    pub fn greedy_actions(&self, horizon: usize, n_states: usize) -> Vec<Vec<usize>> {
        (0..horizon).map(|t| (0..n_states).map(|s| argmax(&self.q_row(t, s))).collect()).collect()
    }
}

/// A stored transition `(s, a, r, s')` taken at step `t`; `r` is the raw
/// environment reward before discounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub next: usize,
}

/// FIFO replay buffer.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReplayDataset {
    capacity: usize,
    transitions: VecDeque<Transition>,
}

impl ReplayDataset {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CaiError::invalid("replay capacity must be positive"));
        }
        Ok(Self { capacity, transitions: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(tr);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
        if self.is_empty() {
            return Err(CaiError::invalid("cannot sample from an empty replay dataset"));
        }
        Ok((0..n).map(|_| self.transitions[rng.random_range(0..self.transitions.len())]).collect())
    }
}

/// Every `(t, s, a)` of a tabular MDP once; `next` is the most likely
/// successor and only matters when the kernel is not used.
pub fn full_support_batch(mdp: &TabularMDP) -> Vec<Transition> {
    let mut out = Vec::with_capacity(mdp.horizon() * mdp.n_states() * mdp.n_actions());
    for t in 0..mdp.horizon() {
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                out.push(Transition { t, s, a, r: mdp.reward(s, a), next: argmax(mdp.transition_row(s, a)) });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetVariant {
    /// `y = r + E_{s'}[V(s')]`.
    #[default]
    ExpectedV,
    /// `y = r + β ln E_{s'}[exp(V(s')/β)]`.
    Optimistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftQConfig {
    pub learning_rate: f64,
    pub target_variant: TargetVariant,
    /// Average over the known transition kernel instead of using the single
    /// stored successor.
    pub use_kernel: bool,
}

impl Default for SoftQConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, target_variant: TargetVariant::ExpectedV, use_kernel: true }
    }
}

/// Parameters the bootstrap target is computed from.
#[derive(Clone, Copy, Debug)]
pub struct TargetSource<'a> {
    pub snapshot: &'a QFunctionApprox,
    /// When present, successor values are `V^π` of this actor instead of
    /// the soft maximum over the snapshot.
    pub actor: Option<&'a SoftmaxPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdReport {
    pub max_abs_td: f64,
    pub mean_sq_td: f64,
    pub grad_norm: f64,
}

/// Bootstrap target for one transition.
pub fn td_target(tr: &Transition, mdp: &TabularMDP, config: &SoftQConfig, target: &TargetSource<'_>) -> Result<f64> {
    let q = target.snapshot;
    let beta = q.beta;
    let mut y = mdp.step_reward(tr.t, tr.s, tr.a);
    if tr.t + 1 < mdp.horizon() {
        let value = |s: usize| -> Result<f64> {
            match target.actor {
                Some(actor) => q.policy_v(actor, tr.t + 1, s),
                None => Ok(q.soft_v(tr.t + 1, s)),
            }
        };
        let succ: Vec<(f64, f64)> = if config.use_kernel {
            mdp.transition_row(tr.s, tr.a)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(s, p)| value(s).map(|v| (*p, v)))
                .collect::<Result<_>>()?
        } else {
            vec![(1.0, value(tr.next)?)]
        };
        y += match config.target_variant {
            TargetVariant::ExpectedV => succ.iter().map(|(p, v)| p * v).sum::<f64>(),
            TargetVariant::Optimistic => {
                let terms: Vec<f64> = succ.iter().map(|(p, v)| p.ln() + v / beta).collect();
                beta * logsumexp(&terms)
            }
        };
    }
    if !y.is_finite() {
        return Err(CaiError::Numeric(format!("non-finite soft TD target at step {} state {}", tr.t, tr.s)));
    }
    Ok(y)
}

/// One semi-gradient step on `½ Σ_i (Q_φ(x_i) − y_i)²` over the batch.
pub fn soft_q_step(
    qfunc: &QFunctionApprox,
    batch: &[Transition],
    mdp: &TabularMDP,
    config: &SoftQConfig,
    target: &TargetSource<'_>,
) -> Result<(QFunctionApprox, TdReport)> {
    if batch.is_empty() {
        return Err(CaiError::invalid("soft Q step needs a non-empty batch"));
    }
    let mut grad = vec![vec![0.0; qfunc.n_actions()]; qfunc.weights.len()];
    let (mut max_abs, mut sq) = (0.0f64, 0.0);
    for tr in batch {
        let y = td_target(tr, mdp, config, target)?;
        let delta = qfunc.q(tr.t, tr.s, tr.a) - y;
        max_abs = max_abs.max(delta.abs());
        sq += delta * delta;
        for (k, x) in qfunc.features.sparse(tr.t, tr.s) {
            grad[k][tr.a] += delta * x;
        }
    }
    let mut next = qfunc.clone();
    for (w, g) in next.weights.iter_mut().flatten().zip(grad.iter().flatten()) {
        *w -= config.learning_rate * g;
    }
    let grad_norm = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    Ok((next, TdReport { max_abs_td: max_abs, mean_sq_td: sq / batch.len() as f64, grad_norm }))
}
