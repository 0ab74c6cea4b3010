//! Textbook CEM and MPPI refits over Gaussian plans, kept separate from the
//! mirror-descent update so the two can be compared sample for sample.

use super::{draw_and_score, Elite, OptimalityLikelihood, UpdateConfig};
use crate::dist::DiagGaussianSeq;
use crate::env::Environment;
use crate::error::{CaiError, Result};

fn fit(
    plan: &DiagGaussianSeq,
    samples: &[Vec<Vec<f64>>],
    picked: &[(usize, f64)],
) -> DiagGaussianSeq {
    let h = plan.horizon();
    let d = plan.action_dim();
    let mut total = 0.0;
    for &(_, w) in picked {
        total += w;
    }
    let mut mean = vec![vec![0.0; d]; h];
    for &(k, w) in picked {
        for (mrow, xrow) in mean.iter_mut().zip(&samples[k]) {
            for (m, v) in mrow.iter_mut().zip(xrow) {
                *m += w * v;
            }
        }
    }
    for m in mean.iter_mut().flatten() {
        *m /= total;
    }
    let mut var = vec![vec![0.0; d]; h];
    for &(k, w) in picked {
        for ((vrow, xrow), mrow) in var.iter_mut().zip(&samples[k]).zip(&mean) {
            for ((v, xv), m) in vrow.iter_mut().zip(xrow).zip(mrow) {
                let e = xv - m;
                *v += w * (e * e);
            }
        }
    }
    let stddev = var
        .into_iter()
        .map(|row| row.into_iter().map(|v| (v / total).sqrt().max(plan.std_floor)).collect())
        .collect();
    DiagGaussianSeq { mean, stddev, bounds: plan.bounds.clone(), std_floor: plan.std_floor }
}

/// Cross-entropy method: sort by return, refit on the top
/// `ceil(elite_fraction · K)` samples.
pub fn cem_reference<E>(
    plan: &DiagGaussianSeq,
    env: &E,
    t0: usize,
    state: &E::State,
    elite_fraction: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DiagGaussianSeq>
where
    E: Environment<Action = Vec<f64>>,
{
    if !(elite_fraction > 0.0 && elite_fraction <= 1.0) {
        return Err(CaiError::invalid("elite fraction must lie in (0, 1]"));
    }
    let likelihood = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: elite_fraction });
    let config = UpdateConfig { n_samples, inner_rollouts: 1, ..UpdateConfig::default() };
    let batch = draw_and_score(plan, env, t0, state, &likelihood, &config, seed)?;
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.sort_by(|&a, &b| batch.returns[b].total_cmp(&batch.returns[a]));
    let n_elite = ((elite_fraction * n_samples as f64).ceil() as usize).clamp(1, n_samples);
    let mut elites: Vec<usize> = order[..n_elite].to_vec();
    elites.sort_unstable();
    let picked: Vec<(usize, f64)> = elites.into_iter().map(|k| (k, 1.0)).collect();
    Ok(fit(plan, &batch.samples, &picked))
}

/// Model-predictive path integral: weights `exp(-(c_k - c_min) / η)` over
/// costs `c = -R`.
pub fn mppi_reference<E>(
    plan: &DiagGaussianSeq,
    env: &E,
    t0: usize,
    state: &E::State,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DiagGaussianSeq>
where
    E: Environment<Action = Vec<f64>>,
{
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CaiError::invalid("eta must be positive"));
    }
    let likelihood = OptimalityLikelihood::Exponential { eta };
    let config = UpdateConfig { n_samples, inner_rollouts: 1, ..UpdateConfig::default() };
    let batch = draw_and_score(plan, env, t0, state, &likelihood, &config, seed)?;
    let costs: Vec<f64> = batch.returns.iter().map(|r| -r).collect();
    let c_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let picked: Vec<(usize, f64)> = costs
        .iter()
        .enumerate()
        .map(|(k, &c)| (k, (-(c - c_min) / eta).exp()))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    Ok(fit(plan, &batch.samples, &picked))
}
