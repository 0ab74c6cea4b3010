//! Sequential Monte Carlo planning over tabular MDPs: particles propose
//! actions from a policy and are reweighted towards the trajectory
//! posterior using a soft value function as the twisting potential.

use serde::{Deserialize, Serialize};

use crate::amortised::QFunctionApprox;
use crate::dist::{ActionPrior, Categorical, PolicyTable};
use crate::env::TabularMDP;
use crate::error::{CaiError, Result};
use crate::numeric::{effective_sample_size, logsumexp};
use crate::rng::{Rng, SeedStream};
use crate::soft_dp::{argmax, SoftValues};
use rand::Rng as _;

/// Soft state values `V_t(s)` in reward units; zero past the horizon.
#[derive(Clone, Copy, Debug)]
pub enum ValueSource<'a> {
    Exact(&'a SoftValues),
    Learned(&'a QFunctionApprox),
}

impl ValueSource<'_> {
    pub fn beta(&self) -> f64 {
        match self {
            ValueSource::Exact(v) => v.beta,
            ValueSource::Learned(q) => q.beta,
        }
    }

    pub fn v(&self, t: usize, s: usize, horizon: usize) -> f64 {
        if t >= horizon {
            return 0.0;
        }
        match self {
            ValueSource::Exact(v) => v.v(t, s),
            ValueSource::Learned(q) => q.soft_v(t, s),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Highest-marginal first action (first index on ties).
    #[default]
    Mode,
    Sample,
}

/// How successors are drawn and how `ln E exp(V(s')/β)` enters the weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessorModel {
    /// Successors from the value-twisted kernel `p(s'|s,a) exp(V(s')/β)`,
    /// normalizer computed exactly from the known transition rows.
    #[default]
    Twisted,
    /// Successors from the environment; the realized `V(s')/β` stands in for
    /// the normalizer.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Resample when `ESS < resample_threshold · K`.
    pub resample_threshold: f64,
    pub selection: Selection,
    pub successor: SuccessorModel,
    /// Planning horizon; `None` plans to the end of the episode.
    pub horizon: Option<usize>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 256,
            resample_threshold: 0.5,
            selection: Selection::Mode,
            successor: SuccessorModel::Twisted,
            horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub actions: Vec<Vec<usize>>,
    pub states: Vec<Vec<usize>>,
    /// Normalized final weights.
    pub weights: Vec<f64>,
    /// `ancestry[h][k]`: the slot particle `k` descended from at step `h`
    /// (identity when no resampling happened).
    pub ancestry: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcResult {
    pub particles: ParticleSet,
    pub first_action_marginal: Vec<f64>,
    pub action: usize,
    /// Normalized weights after each step's reweighting.
    pub weight_history: Vec<Vec<f64>>,
    pub ess_history: Vec<f64>,
    pub resampled: Vec<bool>,
}

fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn normalize(log_w: &[f64]) -> Result<Vec<f64>> {
    let z = logsumexp(log_w);
    if !z.is_finite() {
        return Err(CaiError::Numeric(
            "every particle weight underflowed; increase beta or shorten the horizon".into(),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - z).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Systematic resampling with a single uniform offset.
pub fn systematic_resample(weights: &[f64], rng: &mut Rng) -> Vec<usize> {
    let k = weights.len();
    let u: f64 = rng.random();
    let mut out = Vec::with_capacity(k);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..k {
        let pos = (i as f64 + u) / k as f64;
        while pos > cum && j + 1 < k {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Plans from `state` at time `t0` with `K` particles proposed by
/// `proposal` and weighted towards `p(a|s) exp(r/β)` under `prior`.
#[allow(clippy::too_many_arguments)]
pub fn smc_plan(
    mdp: &TabularMDP,
    t0: usize,
    state: usize,
    value: ValueSource<'_>,
    proposal: &PolicyTable,
    prior: &ActionPrior,
    config: &SmcConfig,
    seed: u64,
) -> Result<SmcResult> {
    let k = config.n_particles;
    if k == 0 {
        return Err(CaiError::invalid("SMC needs at least one particle"));
    }
    if !(0.0..=1.0).contains(&config.resample_threshold) {
        return Err(CaiError::invalid("resample threshold must lie in [0, 1]"));
    }
    let t_end = mdp.horizon();
    if t0 >= t_end || state >= mdp.n_states() {
        return Err(CaiError::invalid(format!("cannot plan from t={t0}, s={state}")));
    }
    let h = config.horizon.unwrap_or(t_end - t0).min(t_end - t0);
    if h == 0 {
        return Err(CaiError::invalid("SMC horizon must be at least 1"));
    }
    let n_a = mdp.n_actions();
    let n_s = mdp.n_states();
    let beta = value.beta();
    let streams = SeedStream::new(seed);
    let resample_streams = streams.derive(u64::MAX);

    let mut actions = vec![Vec::with_capacity(h); k];
    let mut states = vec![vec![state]; k];
    let mut log_w = vec![0.0; k];
    let mut ancestry = Vec::with_capacity(h);
    let mut weight_history = Vec::with_capacity(h);
    let mut ess_history = Vec::with_capacity(h);
    let mut resampled = Vec::with_capacity(h);
    let mut twisted = vec![0.0; n_s];

    for step in 0..h {
        let t = t0 + step;
        let last = step + 1 == h;
        let step_streams = streams.derive(step as u64);
        for i in 0..k {
            let mut rng = step_streams.rng(i as u64);
            let s = *states[i].last().expect("non-empty path");
            let q: &Categorical = proposal.dist(t, s);
            let qp = q.probs();
            let a = draw(&qp, &mut rng);
            let r = mdp.step_reward(t, s, a) / beta;
            let mut inc = r + prior.log_prob(t, s, a, n_a) - q.log_prob(a)? - value.v(t, s, t_end) / beta;
            let row = mdp.transition_row(s, a);
            let next = if last {
                draw(row, &mut rng)
            } else {
                match config.successor {
                    SuccessorModel::Twisted => {
                        for (s2, (&p, tw)) in row.iter().zip(twisted.iter_mut()).enumerate() {
                            *tw = if p > 0.0 { p.ln() + value.v(t + 1, s2, t_end) / beta } else { f64::NEG_INFINITY };
                        }
                        let log_norm = logsumexp(&twisted);
                        inc += log_norm;
                        let probs: Vec<f64> = twisted.iter().map(|l| (l - log_norm).exp()).collect();
                        draw(&probs, &mut rng)
                    }
                    SuccessorModel::Sampled => {
                        let s2 = draw(row, &mut rng);
                        inc += value.v(t + 1, s2, t_end) / beta;
                        s2
                    }
                }
            };
            log_w[i] += inc;
            actions[i].push(a);
            states[i].push(next);
        }
        let w = normalize(&log_w)?;
        let ess = effective_sample_size(&w);
        ess_history.push(ess);
        weight_history.push(w.clone());
        if !last && ess < config.resample_threshold * k as f64 {
            let parents = systematic_resample(&w, &mut resample_streams.rng(step as u64));
            actions = parents.iter().map(|&p| actions[p].clone()).collect();
            states = parents.iter().map(|&p| states[p].clone()).collect();
            log_w.iter_mut().for_each(|l| *l = 0.0);
            ancestry.push(parents);
            resampled.push(true);
        } else {
            ancestry.push((0..k).collect());
            resampled.push(false);
        }
    }

    let weights = weight_history.last().expect("h >= 1").clone();
    let mut marginal = vec![0.0; n_a];
    for (seq, w) in actions.iter().zip(&weights) {
        marginal[seq[0]] += w;
    }
    let action = match config.selection {
        Selection::Mode => argmax(&marginal),
        Selection::Sample => draw(&marginal, &mut resample_streams.rng(u64::MAX)),
    };
    Ok(SmcResult {
        particles: ParticleSet { actions, states, weights, ancestry },
        first_action_marginal: marginal,
        action,
        weight_history,
        ess_history,
        resampled,
    })
}
