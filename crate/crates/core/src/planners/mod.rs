//! Iterative inference over action sequences: the mirror-descent plan
//! update with pluggable optimality likelihoods (CEM and MPPI as special
//! cases), receding-horizon control, and sequential Monte Carlo planning.

mod exact;
mod family;
mod mpc;
mod reference;
mod smc;

pub use exact::{
    mirror_descent_exact, sequence_log_likelihoods, ExactUpdateReport, MAX_EXACT_SEQUENCES,
};
pub use family::PlanFamily;
pub use mpc::{plan_mpc, smc_mpc, MpcConfig, MpcOutcome, StepLog, WarmStart};
pub use reference::{cem_reference, mppi_reference};
pub use smc::{smc_plan, systematic_resample, ParticleSet, Selection, SmcConfig, SmcResult, SuccessorModel, ValueSource};

use serde::{Deserialize, Serialize};

use crate::dist::DEFAULT_SMOOTHING;
use crate::env::Environment;
use crate::error::{CaiError, Result};
use crate::numeric::{effective_sample_size, logmeanexp};
use crate::rng::{Rng, SeedStream};

/// How CEM picks its elite set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Elite {
    /// The top `ceil(fraction · K)` samples by return.
    Fraction { fraction: f64 },
    /// Samples with return strictly above `threshold`.
    Threshold { threshold: f64 },
}

/// The per-sequence optimality likelihood `𝒲(a_{t:T})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum OptimalityLikelihood {
    /// `1[R > r_thd]`, as in CEM.
    Indicator(Elite),
    /// `exp(R / η)`, as in MPPI.
    Exponential { eta: f64 },
    /// `exp(R / β)`, the control-as-inference likelihood itself.
    RawBeta { beta: f64 },
}

impl OptimalityLikelihood {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimalityLikelihood::Indicator(Elite::Fraction { fraction }) => fraction > 0.0 && fraction <= 1.0,
            OptimalityLikelihood::Indicator(Elite::Threshold { threshold }) => threshold.is_finite(),
            OptimalityLikelihood::Exponential { eta } => eta > 0.0 && eta.is_finite(),
            OptimalityLikelihood::RawBeta { beta } => beta > 0.0 && beta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(CaiError::invalid(format!("invalid optimality likelihood {self:?}")))
        }
    }

    fn temperature(&self) -> Option<f64> {
        match *self {
            OptimalityLikelihood::Exponential { eta } => Some(eta),
            OptimalityLikelihood::RawBeta { beta } => Some(beta),
            OptimalityLikelihood::Indicator(_) => None,
        }
    }
}

/// Number of elites for a fraction of `k` samples.
pub fn elite_count(fraction: f64, k: usize) -> usize {
    ((fraction * k as f64).ceil() as usize).clamp(1, k)
}

/// Sample indices ordered by descending return; ties keep index order.
pub fn rank_by_return(returns: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..returns.len()).collect();
    idx.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]));
    idx
}

/// Unnormalized weights and a flag for the relaxed-threshold fallback.
///
/// Exponential weights are `exp((R_k - max R) / τ)` over the soft returns,
/// so the best sample has weight exactly 1.
pub fn likelihood_weights(likelihood: &OptimalityLikelihood, returns: &[f64], soft_returns: &[f64]) -> (Vec<f64>, bool) {
    match *likelihood {
        OptimalityLikelihood::Indicator(Elite::Fraction { fraction }) => {
            let mut w = vec![0.0; returns.len()];
            for &i in rank_by_return(returns).iter().take(elite_count(fraction, returns.len())) {
                w[i] = 1.0;
            }
            (w, false)
        }
        OptimalityLikelihood::Indicator(Elite::Threshold { threshold }) => {
            let w: Vec<f64> = returns.iter().map(|&r| if r > threshold { 1.0 } else { 0.0 }).collect();
            if w.iter().any(|&x| x > 0.0) {
                return (w, false);
            }
            let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (returns.iter().map(|&r| if r >= best { 1.0 } else { 0.0 }).collect(), true)
        }
        OptimalityLikelihood::Exponential { eta: tau } | OptimalityLikelihood::RawBeta { beta: tau } => {
            let m = soft_returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (soft_returns.iter().map(|&r| ((r - m) / tau).exp()).collect(), false)
        }
    }
}

/// Sampling settings shared by the mirror-descent update and the reference
/// implementations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig {
    pub n_samples: usize,
    /// Model rollouts per sample used to estimate `𝒲`.
    pub inner_rollouts: usize,
    /// Additive smoothing for categorical refits.
    pub smoothing: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self { n_samples: 64, inner_rollouts: 1, smoothing: DEFAULT_SMOOTHING }
    }
}

/// Sampled sequences scored by model rollouts from a fixed state.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<A> {
    pub samples: Vec<Vec<A>>,
    /// Mean return over the inner rollouts.
    pub returns: Vec<f64>,
    /// `τ ln mean_m exp(R_m / τ)` for exponential likelihoods; equals the
    /// return with one inner rollout or under an indicator.
    pub soft_returns: Vec<f64>,
    pub clamps: usize,
}

/// Return of an open-loop sequence from `state` at time `t0`, discounted
/// as `γ^{t0 + h}`.
pub fn sequence_return<E: Environment>(
    env: &E,
    t0: usize,
    state: &E::State,
    actions: &[E::Action],
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let mut s = state.clone();
    let (mut ret, mut clamps) = (0.0, 0);
    let gamma = env.discount();
    for (h, a) in actions.iter().enumerate() {
        let mut a = a.clone();
        clamps += env.clamp_action(&mut a);
        env.check_action(&a)?;
        let r = env.reward(&s, &a);
        ret += if gamma == 1.0 { r } else { gamma.powi((t0 + h) as i32) * r };
        s = env.next_state(&s, &a, rng);
    }
    Ok((ret, clamps))
}

/// Draws `n_samples` sequences (sample `k` from stream `k` of `seed`) and
/// scores each with `inner_rollouts` model rollouts.
pub fn draw_and_score<E, P>(
    plan: &P,
    env: &E,
    t0: usize,
    state: &E::State,
    likelihood: &OptimalityLikelihood,
    config: &UpdateConfig,
    seed: u64,
) -> Result<SampleBatch<E::Action>>
where
    E: Environment,
    P: PlanFamily<Action = E::Action>,
{
    if config.n_samples == 0 || config.inner_rollouts == 0 {
        return Err(CaiError::invalid("need at least one sample and one inner rollout"));
    }
    let streams = SeedStream::new(seed);
    let env_streams = streams.derive(u64::MAX);
    let temp = likelihood.temperature();
    let mut batch = SampleBatch {
        samples: Vec::with_capacity(config.n_samples),
        returns: Vec::with_capacity(config.n_samples),
        soft_returns: Vec::with_capacity(config.n_samples),
        clamps: 0,
    };
    for k in 0..config.n_samples {
        let mut rng = streams.rng(k as u64);
        let (seq, c) = plan.draw(&mut rng);
        batch.clamps += c;
        let inner = env_streams.derive(k as u64);
        let mut rets = Vec::with_capacity(config.inner_rollouts);
        for m in 0..config.inner_rollouts {
            let (r, _) = sequence_return(env, t0, state, &seq, &mut inner.rng(m as u64))?;
            rets.push(r);
        }
        let (mean, soft) = if rets.len() == 1 {
            (rets[0], rets[0])
        } else {
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            let soft = match temp {
                Some(tau) => tau * logmeanexp(&rets.iter().map(|r| r / tau).collect::<Vec<_>>()),
                None => mean,
            };
            (mean, soft)
        };
        batch.samples.push(seq);
        batch.returns.push(mean);
        batch.soft_returns.push(soft);
    }
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    /// Self-normalized weights `w_k = 𝒲_k / Σ_j 𝒲_j`.
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    pub ess: f64,
    pub best_return: f64,
    pub mean_return: f64,
    /// Entropy of the refit plan.
    pub entropy: f64,
    pub clamps: usize,
    /// The threshold was relaxed to the batch maximum.
    pub fallback: bool,
    pub iteration: usize,
}

/// One mirror-descent step `q^{(i+1)} ∝ q^{(i)} 𝒲` from sampled sequences,
/// projected back into the plan family by weighted refitting.
#[allow(clippy::too_many_arguments)]
pub fn mirror_descent_update<E, P>(
    plan: &P,
    env: &E,
    t0: usize,
    state: &E::State,
    likelihood: &OptimalityLikelihood,
    config: &UpdateConfig,
    seed: u64,
    iteration: usize,
) -> Result<(P, WeightReport)>
where
    E: Environment,
    P: PlanFamily<Action = E::Action>,
{
    likelihood.validate()?;
    let batch = draw_and_score(plan, env, t0, state, likelihood, config, seed)?;
    let (raw, fallback) = likelihood_weights(likelihood, &batch.returns, &batch.soft_returns);
    let next = plan.refit(&batch.samples, &raw, config.smoothing)?;
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mean_return = weights.iter().zip(&batch.returns).map(|(w, r)| w * r).sum();
    let best_return = batch.returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let report = WeightReport {
        ess: effective_sample_size(&weights),
        weights,
        returns: batch.returns,
        best_return,
        mean_return,
        entropy: next.entropy(),
        clamps: batch.clamps,
        fallback,
        iteration: iteration + 1,
    };
    Ok((next, report))
}

#[cfg(test)]
mod tests;
