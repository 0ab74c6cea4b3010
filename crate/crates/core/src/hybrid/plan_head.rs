use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::amortised::{FeatureMap, GradientEstimator, TrainRecord};
use crate::dist::{Categorical, CategoricalSeq};
use crate::env::{check_enumeration, rollout, Actor, Environment, TabularMDP};
use crate::error::{CaiError, Result};
use crate::planners::{mirror_descent_update, OptimalityLikelihood, UpdateConfig};
use crate::rng::{Rng, SeedStream};

/// A state-conditional open-loop plan `q_φ(a_{1:H} | s)`, factorized over
/// steps: slot `h` has logits `φ(t0, s)ᵀ W[:, h·|A| .. (h+1)·|A|]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmortisedPlanHead {
    pub features: FeatureMap,
    pub weights: Vec<Vec<f64>>,
    pub horizon: usize,
    pub n_actions: usize,
}

impl AmortisedPlanHead {
    pub fn zeros(features: FeatureMap, horizon: usize, n_actions: usize) -> Result<Self> {
        if horizon == 0 || n_actions == 0 {
            return Err(CaiError::invalid("plan head needs H >= 1 and at least one action"));
        }
        let weights = vec![vec![0.0; horizon * n_actions]; features.dim()];
        Ok(Self { features, weights, horizon, n_actions })
    }

    /// Gaussian-initialized weights with standard deviation `scale`.
    pub fn random(features: FeatureMap, horizon: usize, n_actions: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(features, horizon, n_actions)?;
        let mut rng = SeedStream::new(seed).rng(0);
        for w in head.weights.iter_mut().flatten() {
            *w = scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        Ok(head)
    }

    /// A head that emits `plan` from every state (one-hot features only).
    pub fn constant(features: FeatureMap, plan: &CategoricalSeq) -> Result<Self> {
        if !features.is_one_hot() {
            return Err(CaiError::invalid("a constant head needs one-hot features"));
        }
        let n_actions = plan.n_actions();
        let row: Vec<f64> = plan.steps.iter().flat_map(|c| c.logits().to_vec()).collect();
        let weights = vec![row; features.dim()];
        Ok(Self { features, weights, horizon: plan.horizon(), n_actions })
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() * self.horizon * self.n_actions
    }

    fn logits(&self, t0: usize, s: usize) -> Vec<f64> {
        let mut z = vec![0.0; self.horizon * self.n_actions];
        for (k, x) in self.features.sparse(t0, s) {
            for (zi, w) in z.iter_mut().zip(&self.weights[k]) {
                *zi += x * w;
            }
        }
        z
    }

    /// The plan emitted for state `s` at time `t0`.
    pub fn emit(&self, t0: usize, s: usize) -> Result<CategoricalSeq> {
        if s >= self.features.n_states() {
            return Err(CaiError::invalid(format!("state {s} outside the feature map")));
        }
        let z = self.logits(t0, s);
        let steps = z.chunks(self.n_actions).map(|c| Categorical::new(c.to_vec())).collect::<Result<Vec<_>>>()?;
        CategoricalSeq::new(steps)
    }

    fn accumulate(&self, grad: &mut [Vec<f64>], t0: usize, s: usize, dlogits: &[f64]) {
        for (k, x) in self.features.sparse(t0, s) {
            for (g, d) in grad[k].iter_mut().zip(dlogits) {
                *g += x * d;
            }
        }
    }
}

/// Expected return `E_{s | a}[Σ_h γ^{t0+h} r]` of an open-loop sequence.
pub fn open_loop_expected_return(mdp: &TabularMDP, t0: usize, s: usize, seq: &[usize]) -> f64 {
    let mut d = vec![0.0; mdp.n_states()];
    d[s] = 1.0;
    let mut ret = 0.0;
    for (h, &a) in seq.iter().enumerate() {
        let mut next = vec![0.0; mdp.n_states()];
        for (st, &p) in d.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            ret += p * mdp.step_reward(t0 + h, st, a);
            for (s2, &pt) in mdp.transition_row(st, a).iter().enumerate() {
                next[s2] += p * pt;
            }
        }
        d = next;
    }
    ret
}

fn for_each_sequence(n_actions: usize, h: usize, mut visit: impl FnMut(&[usize])) {
    let mut seq = vec![0; h];
    loop {
        visit(&seq);
        let mut slot = h;
        loop {
            if slot == 0 {
                return;
            }
            slot -= 1;
            seq[slot] += 1;
            if seq[slot] < n_actions {
                break;
            }
            seq[slot] = 0;
        }
    }
}

/// Exact open-loop objective over the initial distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanHeadMetrics {
    /// `E[R]/β − KL(q ‖ uniform)`, averaged over start states.
    pub elbo: f64,
    pub expected_return: f64,
    pub entropy: f64,
}

fn check_head(mdp: &TabularMDP, head: &AmortisedPlanHead) -> Result<()> {
    if head.n_actions != mdp.n_actions() || head.features.n_states() != mdp.n_states() {
        return Err(CaiError::invalid("plan head does not match the MDP"));
    }
    if head.horizon > mdp.horizon() {
        return Err(CaiError::invalid("plan head is longer than the episode"));
    }
    Ok(())
}

fn exact_objective(
    mdp: &TabularMDP,
    head: &AmortisedPlanHead,
    beta: f64,
    mut grad: Option<&mut Vec<Vec<f64>>>,
) -> Result<PlanHeadMetrics> {
    check_head(mdp, head)?;
    check_enumeration(&mdp.with_horizon(head.horizon)?)?;
    let (h, n_a) = (head.horizon, head.n_actions);
    let log_na = (n_a as f64).ln();
    let mut m = PlanHeadMetrics { elbo: 0.0, expected_return: 0.0, entropy: 0.0 };
    for (s, &p0) in mdp.initial_dist().iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        let plan = head.emit(0, s)?;
        let probs: Vec<Vec<f64>> = plan.steps.iter().map(Categorical::probs).collect();
        let logq: Vec<Vec<f64>> = plan.steps.iter().map(Categorical::log_probs).collect();
        let mut ret = 0.0;
        let mut score = vec![0.0; h * n_a];
        for_each_sequence(n_a, h, |seq| {
            let q: f64 = seq.iter().enumerate().map(|(i, &a)| probs[i][a]).product();
            if q == 0.0 {
                return;
            }
            let r = open_loop_expected_return(mdp, 0, s, seq);
            ret += q * r;
            for (i, &a) in seq.iter().enumerate() {
                for b in 0..n_a {
                    let ind = if a == b { 1.0 } else { 0.0 };
                    score[i * n_a + b] += q * (r / beta) * (ind - probs[i][b]);
                }
            }
        });
        let entropy = plan.entropy();
        m.expected_return += p0 * ret;
        m.entropy += p0 * entropy;
        m.elbo += p0 * (ret / beta + entropy - h as f64 * log_na);
        if let Some(g) = grad.as_deref_mut() {
            for i in 0..h {
                let ent_i: f64 = -(0..n_a).filter(|&b| probs[i][b] > 0.0).map(|b| probs[i][b] * logq[i][b]).sum::<f64>();
                for b in 0..n_a {
                    if probs[i][b] > 0.0 {
                        score[i * n_a + b] -= probs[i][b] * (logq[i][b] + ent_i);
                    }
                }
            }
            let scaled: Vec<f64> = score.iter().map(|x| p0 * x).collect();
            head.accumulate(g, 0, s, &scaled);
        }
    }
    Ok(m)
}

pub fn plan_head_metrics(mdp: &TabularMDP, head: &AmortisedPlanHead, beta: f64) -> Result<PlanHeadMetrics> {
    exact_objective(mdp, head, beta, None)
}

/// Exact gradient of [`PlanHeadMetrics::elbo`] with respect to the weights.
pub fn plan_head_gradient(mdp: &TabularMDP, head: &AmortisedPlanHead, beta: f64) -> Result<Vec<Vec<f64>>> {
    let mut g = vec![vec![0.0; head.horizon * head.n_actions]; head.weights.len()];
    exact_objective(mdp, head, beta, Some(&mut g))?;
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanTrainConfig {
    pub learning_rate: f64,
    pub n_iterations: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub gradient_estimator: GradientEstimator,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Default for PlanTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            n_iterations: 300,
            beta: 1.0,
            batch_size: 64,
            gradient_estimator: GradientEstimator::ExactExpectation,
            seed: 0,
            record_wall_time: false,
        }
    }
}

fn sampled_plan_gradient(
    mdp: &TabularMDP,
    head: &AmortisedPlanHead,
    config: &PlanTrainConfig,
    iter: usize,
) -> Result<Vec<Vec<f64>>> {
    let (h, n_a) = (head.horizon, head.n_actions);
    let streams = SeedStream::new(config.seed).derive(iter as u64);
    let mut episodes = Vec::with_capacity(config.batch_size);
    for j in 0..config.batch_size {
        let mut rng = streams.rng(j as u64);
        let s0 = mdp.initial_state(&mut rng);
        let plan = head.emit(0, s0)?;
        let seq = plan.sample(&mut rng);
        let mut s = s0;
        let mut ret = 0.0;
        for (t, &a) in seq.iter().enumerate() {
            ret += mdp.step_reward(t, s, a);
            s = mdp.next_state(&s, &a, &mut rng);
        }
        let f = ret / config.beta - (plan.log_prob(&seq)? + h as f64 * (n_a as f64).ln());
        episodes.push((s0, plan, seq, f));
    }
    let baseline = episodes.iter().map(|e| e.3).sum::<f64>() / episodes.len() as f64;
    let mut g = vec![vec![0.0; h * n_a]; head.weights.len()];
    let n = episodes.len() as f64;
    for (s0, plan, seq, f) in &episodes {
        let mut d = vec![0.0; h * n_a];
        for (i, (&a, c)) in seq.iter().zip(&plan.steps).enumerate() {
            for (b, p) in c.probs().into_iter().enumerate() {
                let ind = if a == b { 1.0 } else { 0.0 };
                d[i * n_a + b] = (ind - p) * (f - baseline) / n;
            }
        }
        head.accumulate(&mut g, 0, *s0, &d);
    }
    if g.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CaiError::Numeric(format!("non-finite plan-head gradient at iteration {iter}")));
    }
    Ok(g)
}

/// Score-function training of the head on the open-loop objective.
pub fn amortised_plan_train(
    mdp: &TabularMDP,
    head: AmortisedPlanHead,
    config: &PlanTrainConfig,
) -> Result<(AmortisedPlanHead, Vec<TrainRecord>)> {
    check_head(mdp, &head)?;
    if !(config.learning_rate > 0.0) || !(config.beta > 0.0) || config.n_iterations == 0 || config.batch_size == 0 {
        return Err(CaiError::invalid("plan training needs positive learning rate, beta, iterations and batch"));
    }
    let clock = crate::amortised::Clock::start(config.record_wall_time);
    let mut head = head;
    let mut log = Vec::with_capacity(config.n_iterations);
    for iter in 0..config.n_iterations {
        let g = match config.gradient_estimator {
            GradientEstimator::ExactExpectation => plan_head_gradient(mdp, &head, config.beta)?,
            GradientEstimator::Sampled => sampled_plan_gradient(mdp, &head, config, iter)?,
        };
        let norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        for (wrow, grow) in head.weights.iter_mut().zip(&g) {
            for (w, d) in wrow.iter_mut().zip(grow) {
                *w += config.learning_rate * d;
            }
        }
        let m = plan_head_metrics(mdp, &head, config.beta)?;
        log.push(TrainRecord {
            iter: iter + 1,
            elbo: m.elbo,
            ret: m.expected_return,
            entropy: m.entropy,
            grad_norm: norm,
            wall_ms: clock.ms(),
        });
    }
    Ok((head, log))
}

/// Executes the head open-loop: the state is read once at the start of the
/// horizon and never again.
struct OpenLoopActor<'a> {
    head: &'a AmortisedPlanHead,
    greedy: bool,
    plan: Option<Vec<usize>>,
    state_reads: usize,
}

impl Actor<TabularMDP> for OpenLoopActor<'_> {
    fn act(&mut self, t: usize, s: &usize, rng: &mut Rng) -> Result<(usize, f64)> {
        let h = t % self.head.horizon;
        if h == 0 {
            self.state_reads += 1;
            let plan = self.head.emit(0, *s)?;
            self.plan = Some(if self.greedy { plan.mode() } else { plan.sample(rng) });
        }
        Ok((self.plan.as_ref().expect("drawn at slot 0")[h], 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopEval {
    pub mean_return: f64,
    pub stderr: f64,
    /// Times the executing actor looked at the current state.
    pub state_reads: usize,
    pub episodes: usize,
}

/// Monte Carlo return of executing the head open-loop over a horizon of
/// `head.horizon` steps, either sampling the plan or taking its mode.
pub fn evaluate_plan_head(mdp: &TabularMDP, head: &AmortisedPlanHead, n: usize, seed: u64, greedy: bool) -> Result<OpenLoopEval> {
    check_head(mdp, head)?;
    if n == 0 {
        return Err(CaiError::invalid("evaluation needs at least one episode"));
    }
    let env = mdp.with_horizon(head.horizon)?;
    let streams = SeedStream::new(seed);
    let mut returns = Vec::with_capacity(n);
    let mut reads = 0;
    for j in 0..n {
        let mut actor = OpenLoopActor { head, greedy, plan: None, state_reads: 0 };
        let traj = rollout(&env, &mut actor, streams.derive(j as u64).seed())?;
        reads += actor.state_reads;
        returns.push(crate::env::trajectory_return(&traj, env.discount())?);
    }
    let (mean_return, stderr) = crate::bound::mean_stderr(&returns);
    Ok(OpenLoopEval { mean_return, stderr, state_reads: reads, episodes: n })
}

/// The planner's `q^{(0)}` taken from the head at `(t0, s)`.
pub fn amortised_plan_as_warm_start(
    head: &AmortisedPlanHead,
    t0: usize,
    s: usize,
    planner_horizon: usize,
) -> Result<CategoricalSeq> {
    if head.horizon != planner_horizon {
        return Err(CaiError::invalid(format!(
            "plan head emits {} steps but the planner expects {planner_horizon}",
            head.horizon
        )));
    }
    head.emit(t0, s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStartTrace {
    pub best_returns: Vec<f64>,
    pub mean_returns: Vec<f64>,
    /// First iteration whose batch contains a return `>= threshold`.
    pub iterations_to_threshold: Option<usize>,
    pub final_plan: CategoricalSeq,
}

/// Runs `n_iters` mirror-descent updates from `start` at `(t0, s)`.
#[allow(clippy::too_many_arguments)]
pub fn planning_trace(
    mdp: &TabularMDP,
    start: CategoricalSeq,
    t0: usize,
    s: usize,
    likelihood: &OptimalityLikelihood,
    config: &UpdateConfig,
    n_iters: usize,
    threshold: f64,
    seed: u64,
) -> Result<WarmStartTrace> {
    let streams = SeedStream::new(seed);
    let mut plan = start;
    let mut trace = WarmStartTrace {
        best_returns: Vec::with_capacity(n_iters),
        mean_returns: Vec::with_capacity(n_iters),
        iterations_to_threshold: None,
        final_plan: plan.clone(),
    };
    for i in 0..n_iters {
        let (next, report) = mirror_descent_update(&plan, mdp, t0, &s, likelihood, config, streams.derive(i as u64).seed(), i)?;
        if trace.iterations_to_threshold.is_none() && report.best_return >= threshold {
            trace.iterations_to_threshold = Some(i + 1);
        }
        trace.best_returns.push(report.best_return);
        trace.mean_returns.push(report.mean_return);
        plan = next;
    }
    trace.final_plan = plan;
    Ok(trace)
}
