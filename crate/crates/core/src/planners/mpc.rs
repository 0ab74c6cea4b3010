//! Receding-horizon control: re-run the planner from every visited state
//! and execute the first action.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{mirror_descent_update, smc_plan, OptimalityLikelihood, PlanFamily, SmcConfig, UpdateConfig, ValueSource};
use crate::dist::{ActionPrior, Categorical, PolicyTable, DEFAULT_SMOOTHING};
use crate::env::{Environment, TabularMDP, Trajectory};
use crate::error::{CaiError, Result};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// Left-shift the previous plan; the freed slots come from the prior.
    #[default]
    Shift,
    /// Restart from the prior at every replanning step.
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub n_samples: usize,
    pub n_iterations: usize,
    pub horizon: usize,
    pub replan_every: usize,
    pub warm_start: WarmStart,
    pub seed: u64,
    pub inner_rollouts: usize,
    pub smoothing: f64,
    pub record_wall_time: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            n_iterations: 5,
            horizon: 10,
            replan_every: 1,
            warm_start: WarmStart::Shift,
            seed: 0,
            inner_rollouts: 1,
            smoothing: DEFAULT_SMOOTHING,
            record_wall_time: false,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_iterations == 0 || self.horizon == 0 || self.inner_rollouts == 0 {
            return Err(CaiError::invalid("MPC counts must all be at least 1"));
        }
        if self.replan_every == 0 || self.replan_every > self.horizon {
            return Err(CaiError::invalid("replan_every must lie in 1..=horizon"));
        }
        Ok(())
    }

    fn update(&self) -> UpdateConfig {
        UpdateConfig { n_samples: self.n_samples, inner_rollouts: self.inner_rollouts, smoothing: self.smoothing }
    }
}

/// One planner iteration at one environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub iter: usize,
    /// Weighted mean return plus plan entropy.
    pub elbo_proxy: f64,
    pub ess: f64,
    pub best_return: f64,
    pub mean_return: f64,
    pub entropy: f64,
    pub clamps: usize,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcOutcome<S, A, P> {
    pub trajectory: Trajectory<S, A>,
    pub logs: Vec<StepLog>,
    /// The plan in force after the last replanning step.
    pub final_plan: P,
}

/// Iterates `(t, i)` planning seeds; environment noise uses stream 1.
fn iteration_seed(seed: u64, t: usize, i: usize) -> u64 {
    SeedStream::new(seed).derive(t as u64).derive(i as u64).seed()
}

/// Mirror-descent MPC: at each replanning step run `n_iterations` updates
/// from the current state, then execute the plan's action slots.
pub fn plan_mpc<E, P>(
    env: &E,
    prior: &P,
    likelihood: &OptimalityLikelihood,
    config: &MpcConfig,
) -> Result<MpcOutcome<E::State, E::Action, P>>
where
    E: Environment,
    P: PlanFamily<Action = E::Action>,
{
    config.validate()?;
    likelihood.validate()?;
    if prior.horizon() < config.horizon {
        return Err(CaiError::invalid(format!(
            "prior covers {} steps but the planning horizon is {}",
            prior.horizon(),
            config.horizon
        )));
    }
    let horizon = env.horizon();
    let mut env_rng = SeedStream::new(config.seed).rng(1);
    let mut s = env.initial_state(&mut env_rng);
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        log_prob_actions: 0.0,
        clamp_events: 0,
    };
    let base = prior.truncated(config.horizon)?;
    let mut plan = base.clone();
    let mut planned_at = 0;
    let mut logs = Vec::new();
    let update = config.update();
    for t in 0..horizon {
        if t % config.replan_every == 0 {
            let h_eff = config.horizon.min(horizon - t);
            let mut start = if t == 0 || config.warm_start == WarmStart::Reset {
                base.clone()
            } else {
                let mut shifted = plan.clone();
                for _ in 0..(t - planned_at) {
                    shifted = shifted.shifted(&base);
                }
                shifted
            };
            if start.horizon() > h_eff {
                start = start.truncated(h_eff)?;
            }
            plan = start;
            for i in 0..config.n_iterations {
                let clock = config.record_wall_time.then(Instant::now);
                let (next, report) =
                    mirror_descent_update(&plan, env, t, &s, likelihood, &update, iteration_seed(config.seed, t, i), i)?;
                plan = next;
                logs.push(StepLog {
                    step: t,
                    iter: i + 1,
                    elbo_proxy: report.mean_return + report.entropy,
                    ess: report.ess,
                    best_return: report.best_return,
                    mean_return: report.mean_return,
                    entropy: report.entropy,
                    clamps: report.clamps,
                    wall_ms: clock.map(|c| c.elapsed().as_secs_f64() * 1e3),
                });
            }
            planned_at = t;
        }
        let mut a = plan.action_at(t - planned_at);
        traj.clamp_events += env.clamp_action(&mut a);
        env.check_action(&a)?;
        let r = env.reward(&s, &a);
        let next = env.next_state(&s, &a, &mut env_rng);
        traj.states.push(s);
        traj.actions.push(a);
        traj.rewards.push(r);
        s = next;
    }
    traj.states.push(s);
    Ok(MpcOutcome { trajectory: traj, logs, final_plan: plan })
}

/// SMC-MPC on a tabular MDP: replan with [`smc_plan`] at every step and
/// execute its selected action.
pub fn smc_mpc(
    mdp: &TabularMDP,
    value: ValueSource<'_>,
    proposal: &PolicyTable,
    prior: &ActionPrior,
    config: &SmcConfig,
    seed: u64,
    record_wall_time: bool,
) -> Result<MpcOutcome<usize, usize, Vec<f64>>> {
    let horizon = mdp.horizon();
    let mut env_rng = SeedStream::new(seed).rng(1);
    let mut s = mdp.initial_state(&mut env_rng);
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        log_prob_actions: 0.0,
        clamp_events: 0,
    };
    let mut logs = Vec::with_capacity(horizon);
    let mut marginal = Vec::new();
    for t in 0..horizon {
        let clock = record_wall_time.then(Instant::now);
        let res = smc_plan(mdp, t, s, value, proposal, prior, config, iteration_seed(seed, t, 0))?;
        let w = &res.particles.weights;
        let mut returns = Vec::with_capacity(w.len());
        for (acts, states) in res.particles.actions.iter().zip(&res.particles.states) {
            returns.push(acts.iter().zip(states).enumerate().map(|(h, (&a, &st))| mdp.step_reward(t + h, st, a)).sum::<f64>());
        }
        let mean_return = w.iter().zip(&returns).map(|(w, r)| w * r).sum();
        let best_return = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let entropy = Categorical::from_probs(&res.first_action_marginal)?.entropy();
        logs.push(StepLog {
            step: t,
            iter: 1,
            elbo_proxy: mean_return + entropy,
            ess: *res.ess_history.last().expect("h >= 1"),
            best_return,
            mean_return,
            entropy,
            clamps: 0,
            wall_ms: clock.map(|c| c.elapsed().as_secs_f64() * 1e3),
        });
        let a = res.action;
        let r = mdp.reward(s, a);
        let next = mdp.next_state(&s, &a, &mut env_rng);
        traj.states.push(s);
        traj.actions.push(a);
        traj.rewards.push(r);
        s = next;
        marginal = res.first_action_marginal;
    }
    traj.states.push(s);
    Ok(MpcOutcome { trajectory: traj, logs, final_plan: marginal })
}
