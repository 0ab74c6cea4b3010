use serde::{Deserialize, Serialize};

use crate::amortised::SoftmaxPolicy;
use crate::dist::{Categorical, PolicyTable};
use crate::env::{rollout, Actor, Environment, TabularMDP, Trajectory};
use crate::error::{CaiError, Result};
use crate::numeric::logsumexp;
use crate::rng::{Rng, SeedStream};
use crate::soft_dp::SoftValues;

/// Which distribution the single-state KL is taken against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    #[default]
    Uniform,
    /// The base policy's own distribution at the refined state.
    Amortised,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RefineUpdate {
    /// `ln q ← (1 − η) ln q + η (ln p + g)`.
    MirrorDescent { step: f64 },
    /// Gradient ascent on the logits.
    ExactGradient { learning_rate: f64 },
}

impl Default for RefineUpdate {
    fn default() -> Self {
        RefineUpdate::MirrorDescent { step: 0.5 }
    }
}

/// Source of `g(a) = Q(t, s, a) / β`, the immediate reward plus the
/// continuation value.
#[derive(Clone, Copy, Debug)]
pub enum Continuation<'a> {
    /// A soft-DP table; `β` is taken from it.
    Exact(&'a SoftValues),
    /// Monte Carlo soft returns of the base policy from each successor.
    Rollouts { beta: f64, n: usize, seed: u64 },
}

impl Continuation<'_> {
    pub fn beta(&self) -> f64 {
        match self {
            Continuation::Exact(v) => v.beta,
            Continuation::Rollouts { beta, .. } => *beta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub n_iters: usize,
    pub update: RefineUpdate,
    pub prior_mode: PriorMode,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { n_iters: 50, update: RefineUpdate::default(), prior_mode: PriorMode::Uniform }
    }
}

/// The locally refined distribution at one `(t, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativePolicyState {
    pub t: usize,
    pub state: usize,
    /// `base_policy(t, s)` at the start of refinement.
    pub base: Categorical,
    pub local: Categorical,
    pub n_iters: usize,
    pub prior_mode: PriorMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub refined: IterativePolicyState,
    /// Single-state ELBO before the first and after every iteration.
    pub elbo_trace: Vec<f64>,
}

impl RefineOutcome {
    pub fn improvement(&self) -> f64 {
        self.elbo_trace.last().expect("non-empty trace") - self.elbo_trace[0]
    }
}

/// `Σ_a q(a) (g(a) − ln q(a) + ln p(a))`.
pub fn single_state_elbo(q: &Categorical, g: &[f64], log_prior: &[f64]) -> f64 {
    let probs = q.probs();
    let lq = q.log_probs();
    (0..g.len()).filter(|&a| probs[a] > 0.0).map(|a| probs[a] * (g[a] - lq[a] + log_prior[a])).sum()
}

fn soft_return_from(
    mdp: &TabularMDP,
    table: &PolicyTable,
    log_prior: &dyn Fn(usize, usize, usize) -> f64,
    t: usize,
    s: usize,
    beta: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let mut g = 0.0;
    let mut s = s;
    for u in t..mdp.horizon() {
        let d = table.dist(u, s);
        let a = d.sample(rng);
        g += mdp.step_reward(u, s, a) / beta - (d.log_prob(a)? - log_prior(u, s, a));
        s = mdp.next_state(&s, &a, rng);
    }
    Ok(g)
}

/// `g(a)` for every action at `(t, s)`.
pub fn continuation_values(
    mdp: &TabularMDP,
    t: usize,
    s: usize,
    base: &SoftmaxPolicy,
    continuation: &Continuation<'_>,
    prior_mode: PriorMode,
) -> Result<Vec<f64>> {
    let n_a = mdp.n_actions();
    match *continuation {
        Continuation::Exact(v) => {
            if v.horizon() != mdp.horizon() || v.n_states() != mdp.n_states() || v.n_actions() != n_a {
                return Err(CaiError::invalid("soft values do not match the MDP"));
            }
            Ok((0..n_a).map(|a| v.q(t, s, a) / v.beta).collect())
        }
        Continuation::Rollouts { beta, n, seed } => {
            if n == 0 || !(beta > 0.0) {
                return Err(CaiError::invalid("rollout continuation needs n >= 1 and beta > 0"));
            }
            let table = base.to_table(mdp.horizon())?;
            let log_prior = |u: usize, st: usize, a: usize| match prior_mode {
                PriorMode::Uniform => -(n_a as f64).ln(),
                PriorMode::Amortised => table.dist(u, st).log_probs()[a],
            };
            let streams = SeedStream::new(seed).derive(t as u64).derive(s as u64);
            let mut g = Vec::with_capacity(n_a);
            for a in 0..n_a {
                let mut rng = streams.rng(a as u64);
                let mut acc = 0.0;
                for _ in 0..n {
                    let next = mdp.next_state(&s, &a, &mut rng);
                    acc += soft_return_from(mdp, &table, &log_prior, t + 1, next, beta, &mut rng)?;
                }
                g.push(mdp.step_reward(t, s, a) / beta + acc / n as f64);
            }
            Ok(g)
        }
    }
}

/// Fine-tunes `base(t, s)` on the single-state ELBO
/// `E_q[g] − KL(q ‖ prior)`; `n_iters = 0` returns the initialization.
pub fn iterative_policy_refine(
    mdp: &TabularMDP,
    t: usize,
    s: usize,
    base: &SoftmaxPolicy,
    continuation: &Continuation<'_>,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    if t >= mdp.horizon() || s >= mdp.n_states() {
        return Err(CaiError::invalid(format!("cannot refine at t={t}, s={s}")));
    }
    if base.n_actions() != mdp.n_actions() {
        return Err(CaiError::invalid("base policy and MDP disagree on the action count"));
    }
    let n_a = mdp.n_actions();
    let base_dist = base.dist(t, s)?;
    let log_prior = match config.prior_mode {
        PriorMode::Uniform => vec![-(n_a as f64).ln(); n_a],
        PriorMode::Amortised => base_dist.log_probs(),
    };
    let g = continuation_values(mdp, t, s, base, continuation, config.prior_mode)?;
    let mut q = base_dist.clone();
    let mut trace = Vec::with_capacity(config.n_iters + 1);
    trace.push(single_state_elbo(&q, &g, &log_prior));
    for _ in 0..config.n_iters {
        let lq = q.log_probs();
        let logits: Vec<f64> = match config.update {
            RefineUpdate::MirrorDescent { step } => {
                if !(step > 0.0 && step <= 1.0) {
                    return Err(CaiError::invalid("mirror-descent step must lie in (0, 1]"));
                }
                (0..n_a).map(|a| (1.0 - step) * lq[a] + step * (log_prior[a] + g[a])).collect()
            }
            RefineUpdate::ExactGradient { learning_rate } => {
                let probs = q.probs();
                let adv: Vec<f64> = (0..n_a)
                    .map(|a| if probs[a] > 0.0 { g[a] - lq[a] + log_prior[a] } else { 0.0 })
                    .collect();
                let mean: f64 = probs.iter().zip(&adv).map(|(p, v)| p * v).sum();
                (0..n_a).map(|a| lq[a] + learning_rate * probs[a] * (adv[a] - mean)).collect()
            }
        };
        let z = logsumexp(&logits);
        q = Categorical::new(logits.iter().map(|l| l - z).collect())?;
        trace.push(single_state_elbo(&q, &g, &log_prior));
    }
    Ok(RefineOutcome {
        refined: IterativePolicyState {
            t,
            state: s,
            base: base_dist,
            local: q,
            n_iters: config.n_iters,
            prior_mode: config.prior_mode,
        },
        elbo_trace: trace,
    })
}

/// When to refine instead of trusting the amortised policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trigger {
    Never,
    Always,
    /// Refine when `H[base(t, s)] > fraction · ln |A|`.
    EntropyAbove { fraction: f64 },
}

impl Default for Trigger {
    fn default() -> Self {
        Trigger::EntropyAbove { fraction: 0.9 }
    }
}

impl Trigger {
    pub fn fires(&self, dist: &Categorical) -> bool {
        match *self {
            Trigger::Never => false,
            Trigger::Always => true,
            Trigger::EntropyAbove { fraction } => dist.entropy() > fraction * (dist.len() as f64).ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub step: usize,
    pub state_id: usize,
    pub triggered: bool,
    pub iters_used: usize,
    pub elbo_before: Option<f64>,
    pub elbo_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub trajectory: Trajectory<usize, usize>,
    pub usage: Vec<UsageRecord>,
}

struct AdaptiveActor<'a> {
    mdp: &'a TabularMDP,
    base: &'a SoftmaxPolicy,
    table: PolicyTable,
    trigger: Trigger,
    continuation: Continuation<'a>,
    config: RefineConfig,
    usage: Vec<UsageRecord>,
}

impl Actor<TabularMDP> for AdaptiveActor<'_> {
    fn act(&mut self, t: usize, s: &usize, rng: &mut Rng) -> Result<(usize, f64)> {
        let d = self.table.dist(t, *s);
        if !self.trigger.fires(d) {
            self.usage.push(UsageRecord {
                step: t,
                state_id: *s,
                triggered: false,
                iters_used: 0,
                elbo_before: None,
                elbo_after: None,
            });
            let a = d.sample(rng);
            return Ok((a, d.log_prob(a)?));
        }
        let out = iterative_policy_refine(self.mdp, t, *s, self.base, &self.continuation, &self.config)?;
        self.usage.push(UsageRecord {
            step: t,
            state_id: *s,
            triggered: true,
            iters_used: out.refined.n_iters,
            elbo_before: Some(out.elbo_trace[0]),
            elbo_after: out.elbo_trace.last().copied(),
        });
        let local = out.refined.local;
        let a = local.sample(rng);
        Ok((a, local.log_prob(a)?))
    }
}

/// Rolls out `base` and refines at the states selected by `trigger`.
pub fn adaptive_refinement_policy(
    mdp: &TabularMDP,
    base: &SoftmaxPolicy,
    trigger: Trigger,
    continuation: Continuation<'_>,
    config: &RefineConfig,
    seed: u64,
) -> Result<AdaptiveOutcome> {
    let mut actor = AdaptiveActor {
        mdp,
        base,
        table: base.to_table(mdp.horizon())?,
        trigger,
        continuation,
        config: *config,
        usage: Vec::with_capacity(mdp.horizon()),
    };
    let trajectory = rollout(mdp, &mut actor, seed)?;
    Ok(AdaptiveOutcome { trajectory, usage: actor.usage })
}
