//! Environments with fully known dynamics, the optimality likelihood, seeded
//! rollouts, and exhaustive trajectory enumeration.

pub mod builtin;
mod continuous;
mod enumerate;
mod tabular;

pub use continuous::{ContinuousEnv, RewardFn, StepFn};
pub use enumerate::{
    check_enumeration, enumerate_trajectories, enumeration_cap, for_each_path, for_each_path_under,
    for_each_suffix, DynamicsTable, PathKernel, TrajectorySet, DEFAULT_ENUM_CAP,
};
pub use tabular::TabularMDP;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::dist::{CategoricalSeq, PolicyTable};
use crate::error::{CaiError, Result};
use crate::rng::{Rng, SeedStream};

/// A known environment model that can be simulated step by step.
pub trait Environment {
    type State: Clone + Debug + PartialEq;
    type Action: Clone + Debug + PartialEq;

    fn horizon(&self) -> usize;
    fn discount(&self) -> f64;
    fn initial_state(&self, rng: &mut Rng) -> Self::State;
    fn reward(&self, s: &Self::State, a: &Self::Action) -> f64;
    fn next_state(&self, s: &Self::State, a: &Self::Action, rng: &mut Rng) -> Self::State;

    /// Projects an action onto the feasible set, returning how many
    /// coordinates were clamped.
    fn clamp_action(&self, _a: &mut Self::Action) -> usize {
        0
    }

    fn check_action(&self, _a: &Self::Action) -> Result<()> {
        Ok(())
    }
}

/// The optimality likelihood `p(O_t = 1 | s_t, a_t) = exp(r(s_t, a_t) / β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityModel {
    beta: f64,
}

impl OptimalityModel {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CaiError::invalid(format!("temperature must be positive and finite, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `ln p(O_t = 1 | s_t, a_t)`.
    pub fn log_likelihood(&self, reward: f64) -> f64 {
        reward / self.beta
    }
}

/// A rolled-out trajectory `(s_1, a_1, ..., s_T, a_T)` plus the successor
/// of the final step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S, A> {
    /// `T + 1` entries when the terminal successor is recorded, else `T`.
    pub states: Vec<S>,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
    /// Sum of the behaviour's log-probabilities of the taken actions.
    pub log_prob_actions: f64,
    /// Number of clamped action coordinates.
    pub clamp_events: usize,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `Σ_t γ^t r_t` with `t` counted from zero.
pub fn trajectory_return<S, A>(traj: &Trajectory<S, A>, discount: f64) -> Result<f64> {
    if traj.rewards.is_empty() {
        return Err(CaiError::invalid("return of an empty trajectory"));
    }
    Ok(discounted_sum(&traj.rewards, discount))
}

pub(crate) fn discounted_sum(rewards: &[f64], discount: f64) -> f64 {
    if discount == 1.0 {
        return rewards.iter().sum();
    }
    let mut g = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += g * r;
        g *= discount;
    }
    total
}

/// Something that chooses actions: a policy or a fixed plan.
pub trait Actor<E: Environment + ?Sized> {
    /// Returns the action and its log-probability under the actor
    /// (0 for deterministic actors).
    fn act(&mut self, t: usize, state: &E::State, rng: &mut Rng) -> Result<(E::Action, f64)>;
}

/// Samples from a tabular policy table.
pub struct PolicyActor<'a>(pub &'a PolicyTable);

impl Actor<TabularMDP> for PolicyActor<'_> {
    fn act(&mut self, t: usize, s: &usize, rng: &mut Rng) -> Result<(usize, f64)> {
        let d = self.0.dist(t, *s);
        let a = d.sample(rng);
        Ok((a, d.log_prob(a)?))
    }
}

/// Always takes the most probable action of a policy table.
pub struct GreedyActor<'a>(pub &'a PolicyTable);

impl Actor<TabularMDP> for GreedyActor<'_> {
    fn act(&mut self, t: usize, s: &usize, _rng: &mut Rng) -> Result<(usize, f64)> {
        Ok((self.0.dist(t, *s).mode(), 0.0))
    }
}

/// Replays a fixed open-loop action sequence.
pub struct PlanActor<A>(pub Vec<A>);

impl<E: Environment> Actor<E> for PlanActor<E::Action> {
    fn act(&mut self, t: usize, _s: &E::State, _rng: &mut Rng) -> Result<(E::Action, f64)> {
        self.0
            .get(t)
            .cloned()
            .map(|a| (a, 0.0))
            .ok_or_else(|| CaiError::invalid(format!("plan has no action for step {t}")))
    }
}

/// Samples an open-loop plan once and replays it.
pub struct SampledPlanActor {
    plan: CategoricalSeq,
    drawn: Option<(Vec<usize>, f64)>,
}

impl SampledPlanActor {
    pub fn new(plan: CategoricalSeq) -> Self {
        Self { plan, drawn: None }
    }
}

impl Actor<TabularMDP> for SampledPlanActor {
    fn act(&mut self, t: usize, _s: &usize, rng: &mut Rng) -> Result<(usize, f64)> {
        if self.drawn.is_none() {
            let seq = self.plan.sample(rng);
            let lp = self.plan.log_prob(&seq)?;
            self.drawn = Some((seq, lp));
        }
        let (seq, lp) = self.drawn.as_ref().expect("drawn above");
        let a = *seq
            .get(t)
            .ok_or_else(|| CaiError::invalid(format!("plan has no action for step {t}")))?;
        Ok((a, if t == 0 { *lp } else { 0.0 }))
    }
}

/// Wraps a closure as an actor.
pub struct FnActor<F>(pub F);

impl<E, F> Actor<E> for FnActor<F>
where
    E: Environment,
    F: FnMut(usize, &E::State, &mut Rng) -> Result<(E::Action, f64)>,
{
    fn act(&mut self, t: usize, s: &E::State, rng: &mut Rng) -> Result<(E::Action, f64)> {
        (self.0)(t, s, rng)
    }
}

/// Rolls an actor out for the environment's full horizon.
///
/// Actor randomness is drawn from stream 0 of `seed` and environment
/// randomness (initial state and transitions) from stream 1, so two actors
/// facing the same seed see the same environment noise.
pub fn rollout<E, A>(env: &E, actor: &mut A, seed: u64) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    A: Actor<E> + ?Sized,
{
    rollout_from(env, actor, seed, None)
}

/// Like [`rollout`], optionally starting from a given state instead of
/// sampling the initial state.
pub fn rollout_from<E, A>(
    env: &E,
    actor: &mut A,
    seed: u64,
    start: Option<E::State>,
) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    A: Actor<E> + ?Sized,
{
    let horizon = env.horizon();
    if horizon == 0 {
        return Err(CaiError::invalid("horizon must be positive"));
    }
    let streams = SeedStream::new(seed);
    let mut actor_rng = streams.rng(0);
    let mut env_rng = streams.rng(1);
    let mut s = match start {
        Some(s) => s,
        None => env.initial_state(&mut env_rng),
    };
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        log_prob_actions: 0.0,
        clamp_events: 0,
    };
    for t in 0..horizon {
        let (mut a, lp) = actor.act(t, &s, &mut actor_rng)?;
        traj.clamp_events += env.clamp_action(&mut a);
        env.check_action(&a)?;
        let r = env.reward(&s, &a);
        let next = env.next_state(&s, &a, &mut env_rng);
        traj.log_prob_actions += lp;
        traj.states.push(s);
        traj.actions.push(a);
        traj.rewards.push(r);
        s = next;
    }
    traj.states.push(s);
    Ok(traj)
}
