//! Mirror descent on categorical plans with the expectation replaced by an
//! exhaustive sum over action sequences.

use serde::{Deserialize, Serialize};

use super::OptimalityLikelihood;
use crate::dist::{Categorical, CategoricalSeq};
use crate::env::{enumeration_cap, TabularMDP};
use crate::error::{CaiError, Result};
use crate::numeric::{logsumexp, LogSumExp};

/// Hard ceiling on `|A|^H` regardless of `CAI_MAX_ENUM`.
pub const MAX_EXACT_SEQUENCES: u128 = 1 << 20;

fn sequence_count(n_actions: usize, h: usize) -> Result<usize> {
    let mut count: u128 = 1;
    for _ in 0..h {
        count = count.saturating_mul(n_actions as u128);
    }
    let cap = enumeration_cap().min(MAX_EXACT_SEQUENCES);
    if count > cap {
        return Err(CaiError::ResourceLimit { required: count, cap });
    }
    Ok(count as usize)
}

/// Decodes sequence index `k` into actions, first slot most significant.
fn decode(mut k: usize, n_actions: usize, h: usize, out: &mut [usize]) {
    for slot in (0..h).rev() {
        out[slot] = k % n_actions;
        k /= n_actions;
    }
}

/// `ln 𝒲(a_{t0:t0+H})` for every sequence in lexicographic order, with
/// `𝒲 = E_{s | a}[exp(R / τ)]` computed by a backward pass over states.
pub fn sequence_log_likelihoods(
    mdp: &TabularMDP,
    t0: usize,
    state: usize,
    horizon: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    if horizon == 0 || t0 + horizon > mdp.horizon() {
        return Err(CaiError::invalid(format!(
            "plan of {horizon} steps from t={t0} overruns the episode of {}",
            mdp.horizon()
        )));
    }
    if state >= mdp.n_states() {
        return Err(CaiError::invalid(format!("state {state} out of range")));
    }
    let n_a = mdp.n_actions();
    let n_s = mdp.n_states();
    let count = sequence_count(n_a, horizon)?;
    let mut seq = vec![0; horizon];
    let mut out = Vec::with_capacity(count);
    let mut next = vec![0.0; n_s];
    let mut cur = vec![0.0; n_s];
    let mut terms = Vec::with_capacity(n_s);
    for k in 0..count {
        decode(k, n_a, horizon, &mut seq);
        next.iter_mut().for_each(|x| *x = 0.0);
        for h in (0..horizon).rev() {
            let t = t0 + h;
            let a = seq[h];
            for (s, c) in cur.iter_mut().enumerate() {
                let r = mdp.step_reward(t, s, a) / tau;
                if h + 1 == horizon {
                    *c = r;
                } else {
                    terms.clear();
                    for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            terms.push(p.ln() + next[s2]);
                        }
                    }
                    *c = r + logsumexp(&terms);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.push(next[state]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactUpdateReport {
    /// `ln E_q[𝒲]` under the plan before the update.
    pub log_expected_likelihood: f64,
    pub entropy: f64,
    /// Exact posterior mass on the sequence the refit plan would execute.
    pub modal_sequence_mass: f64,
}

/// One exact mirror-descent step: `q^{(i+1)}_h(a) ∝ Σ_{seq: a_h = a}
/// q^{(i)}(seq) 𝒲(seq)`, then additive smoothing `eps`.
///
/// With `eps = 0` this is an EM step on `ln E_q[𝒲]`, which therefore never
/// decreases.
pub fn mirror_descent_exact(
    plan: &CategoricalSeq,
    mdp: &TabularMDP,
    t0: usize,
    state: usize,
    likelihood: &OptimalityLikelihood,
    smoothing: f64,
) -> Result<(CategoricalSeq, ExactUpdateReport)> {
    let tau = match *likelihood {
        OptimalityLikelihood::Exponential { eta } => eta,
        OptimalityLikelihood::RawBeta { beta } => beta,
        OptimalityLikelihood::Indicator(_) => {
            return Err(CaiError::invalid("exact weights need an exponential or raw-beta likelihood"))
        }
    };
    likelihood.validate()?;
    if plan.n_actions() != mdp.n_actions() {
        return Err(CaiError::invalid("plan and MDP disagree on the action count"));
    }
    let h = plan.horizon();
    let logw = sequence_log_likelihoods(mdp, t0, state, h, tau)?;
    let logq: Vec<Vec<f64>> = plan.steps.iter().map(Categorical::log_probs).collect();
    let n_a = mdp.n_actions();
    let mut seq = vec![0; h];
    let mut joint = Vec::with_capacity(logw.len());
    let mut z = LogSumExp::default();
    for (k, lw) in logw.iter().enumerate() {
        decode(k, n_a, h, &mut seq);
        let lq: f64 = seq.iter().zip(&logq).map(|(&a, row)| row[a]).sum();
        let l = lq + lw;
        z.push(l);
        joint.push(l);
    }
    let log_z = z.value();
    if !log_z.is_finite() {
        return Err(CaiError::Numeric(format!("ln E_q[W] = {log_z}; try a larger temperature")));
    }
    let mut marg = vec![vec![0.0; n_a]; h];
    for (k, l) in joint.iter().enumerate() {
        let p = (l - log_z).exp();
        decode(k, n_a, h, &mut seq);
        for (row, &a) in marg.iter_mut().zip(&seq) {
            row[a] += p;
        }
    }
    let denom = 1.0 + n_a as f64 * smoothing;
    let steps = marg
        .into_iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            let probs: Vec<f64> = row.iter().map(|c| (c / s + smoothing) / denom).collect();
            Categorical::from_probs(&probs)
        })
        .collect::<Result<Vec<_>>>()?;
    let next = CategoricalSeq::new(steps)?;
    let mode = next.mode();
    let mode_k = mode.iter().fold(0usize, |k, &a| k * n_a + a);
    let report = ExactUpdateReport {
        log_expected_likelihood: log_z,
        entropy: plan.entropy(),
        modal_sequence_mass: (joint[mode_k] - log_z).exp(),
    };
    Ok((next, report))
}
