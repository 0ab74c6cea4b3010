//! Amortised inference over a dataset: entropy-regularized policy
//! gradients, bootstrapped soft Q-learning with linear function
//! approximation, and soft actor-critic.

mod eval;
mod features;
mod policy;
mod qfunc;
mod sac;

pub use eval::{evaluate_policy, exact_policy_metrics, ExactMetrics, PolicyMetrics};
pub use features::FeatureMap;
pub use policy::{exact_gradient, policy_gradient_step, sampled_gradient, GradientReport, GradientSource, SoftmaxPolicy};
pub use qfunc::{
    full_support_batch, soft_q_step, td_target, QFunctionApprox, ReplayDataset, SoftQConfig, TargetSource,
    TargetVariant, TdReport, Transition,
};
pub use sac::{soft_actor_critic_loop, SacOutcome};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dist::{ActionPrior, PolicyTable};
use crate::env::{rollout, PolicyActor, TabularMDP, Trajectory};
use crate::error::{CaiError, Result};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    #[default]
    MeanReturn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientEstimator {
    #[default]
    ExactExpectation,
    Sampled,
}

/// Which return factor multiplies the score in the sampled estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreForm {
    #[default]
    Corrected,
    WholeTrajectory,
}

/// Where soft Q-learning batches come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Every `(t, s, a)` once per iteration.
    #[default]
    FullSupport,
    /// Uniform-behaviour rollouts appended to a FIFO buffer, sampled with
    /// replacement.
    Replay { capacity: usize, episodes_per_iter: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub beta: f64,
    pub baseline: Baseline,
    pub gradient_estimator: GradientEstimator,
    pub score_form: ScoreForm,
    pub seed: u64,
    /// Refresh the bootstrap snapshot every `target_refresh` critic steps.
    pub target_refresh: usize,
    /// Stop once the gradient norm falls below this (0 disables).
    pub grad_tol: f64,
    pub data: DataSource,
    pub soft_q: SoftQConfig,
    /// Inner gradient steps per actor update for non-tabular features.
    pub actor_steps: usize,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 64,
            n_iterations: 500,
            beta: 1.0,
            baseline: Baseline::MeanReturn,
            gradient_estimator: GradientEstimator::ExactExpectation,
            score_form: ScoreForm::Corrected,
            seed: 0,
            target_refresh: 1,
            grad_tol: 0.0,
            data: DataSource::FullSupport,
            soft_q: SoftQConfig::default(),
            actor_steps: 50,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CaiError::Validation(format!("{what} must be positive")));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.target_refresh == 0 {
            return bad("target_refresh");
        }
        if !(self.soft_q.learning_rate > 0.0) {
            return bad("soft_q.learning_rate");
        }
        if let DataSource::Replay { capacity, episodes_per_iter } = self.data {
            if capacity == 0 || episodes_per_iter == 0 {
                return bad("replay capacity and episodes_per_iter");
            }
        }
        Ok(())
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub elbo: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub wall_ms: Option<f64>,
}

pub(crate) struct Clock(Option<Instant>);

impl Clock {
    pub(crate) fn start(enabled: bool) -> Self {
        Clock(enabled.then(Instant::now))
    }

    pub(crate) fn ms(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64() * 1e3)
    }
}

pub(crate) fn record(
    mdp: &TabularMDP,
    table: &PolicyTable,
    config: &TrainConfig,
    iter: usize,
    grad_norm: f64,
    clock: &Clock,
) -> Result<TrainRecord> {
    let m = exact_policy_metrics(mdp, table, config.beta, &ActionPrior::Uniform)?;
    Ok(TrainRecord { iter, elbo: m.elbo, ret: m.expected_return, entropy: m.entropy, grad_norm, wall_ms: clock.ms() })
}

/// Seeded on-policy batch for iteration `iter`.
pub fn sample_batch(
    mdp: &TabularMDP,
    table: &PolicyTable,
    n: usize,
    seed: u64,
    iter: usize,
) -> Result<Vec<Trajectory<usize, usize>>> {
    let streams = SeedStream::new(seed).derive(iter as u64);
    (0..n).map(|j| rollout(mdp, &mut PolicyActor(table), streams.derive(j as u64).seed())).collect()
}

/// Gradient ascent on the amortised objective from a given start.
pub fn train_policy_gradient(
    mdp: &TabularMDP,
    init: SoftmaxPolicy,
    config: &TrainConfig,
) -> Result<(SoftmaxPolicy, Vec<TrainRecord>)> {
    config.validate()?;
    let clock = Clock::start(config.record_wall_time);
    let prior = ActionPrior::Uniform;
    let mut policy = init;
    let mut log = Vec::with_capacity(config.n_iterations);
    for iter in 0..config.n_iterations {
        let table = policy.to_table(mdp.horizon())?;
        let (next, report) = match config.gradient_estimator {
            GradientEstimator::ExactExpectation => {
                policy_gradient_step(&policy, GradientSource::Exact, mdp, config, &prior)?
            }
            GradientEstimator::Sampled => {
                let batch = sample_batch(mdp, &table, config.batch_size, config.seed, iter)?;
                policy_gradient_step(&policy, GradientSource::Sampled(&batch), mdp, config, &prior)?
            }
        };
        log.push(record(mdp, &table, config, iter, report.grad_norm, &clock)?);
        if report.grad_norm < config.grad_tol {
            break;
        }
        policy = next;
    }
    Ok((policy, log))
}

/// Soft Q-learning with a snapshot target refreshed every
/// `config.target_refresh` steps.
pub fn train_soft_q(
    mdp: &TabularMDP,
    init: QFunctionApprox,
    config: &TrainConfig,
) -> Result<(QFunctionApprox, Vec<TrainRecord>)> {
    config.validate()?;
    let clock = Clock::start(config.record_wall_time);
    let mut q = init;
    let mut snapshot = q.clone();
    let mut data = Batches::new(mdp, config)?;
    let mut log = Vec::with_capacity(config.n_iterations);
    for iter in 0..config.n_iterations {
        let batch = data.next(mdp, config, iter)?;
        let (next, report) =
            soft_q_step(&q, &batch, mdp, &config.soft_q, &TargetSource { snapshot: &snapshot, actor: None })?;
        q = next;
        if (iter + 1) % config.target_refresh == 0 {
            snapshot = q.clone();
        }
        let table = q.soft_policy(mdp.horizon(), mdp.n_states());
        log.push(record(mdp, &table, config, iter, report.grad_norm, &clock)?);
        if report.grad_norm < config.grad_tol {
            break;
        }
    }
    Ok((q, log))
}

pub(crate) struct Batches {
    replay: Option<ReplayDataset>,
    uniform: PolicyTable,
}

impl Batches {
    pub(crate) fn new(mdp: &TabularMDP, config: &TrainConfig) -> Result<Self> {
        let replay = match config.data {
            DataSource::FullSupport => None,
            DataSource::Replay { capacity, .. } => Some(ReplayDataset::new(capacity)?),
        };
        Ok(Self { replay, uniform: PolicyTable::uniform(mdp.n_states(), mdp.n_actions()) })
    }

    pub(crate) fn next(&mut self, mdp: &TabularMDP, config: &TrainConfig, iter: usize) -> Result<Vec<Transition>> {
        let Some(replay) = self.replay.as_mut() else {
            return Ok(full_support_batch(mdp));
        };
        let DataSource::Replay { episodes_per_iter, .. } = config.data else { unreachable!() };
        for traj in sample_batch(mdp, &self.uniform, episodes_per_iter, config.seed, iter)? {
            for t in 0..traj.len() {
                replay.push(Transition {
                    t,
                    s: traj.states[t],
                    a: traj.actions[t],
                    r: traj.rewards[t],
                    next: traj.states[t + 1],
                });
            }
        }
        let mut rng = SeedStream::new(config.seed).derive(iter as u64).rng(2);
        replay.sample(config.batch_size, &mut rng)
    }
}
