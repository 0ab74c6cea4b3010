use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ExperimentConfig;
use crate::amortised::{
    soft_actor_critic_loop, train_policy_gradient, train_soft_q, FeatureMap, QFunctionApprox, SoftmaxPolicy,
    TrainConfig, TrainRecord,
};
use crate::bound::log_evidence;
use crate::dist::{ActionPrior, CategoricalSeq, DiagGaussianSeq, PolicyTable};
use crate::env::builtin::{self, BuiltinEnv};
use crate::env::{Environment, OptimalityModel, TabularMDP};
use crate::error::{CaiError, Result};
use crate::hybrid::{
    adaptive_refinement_policy, amortised_plan_as_warm_start, amortised_plan_train, evaluate_plan_head,
    planning_trace, AmortisedPlanHead, Continuation, PlanTrainConfig, RefineConfig, Trigger,
};
use crate::planners::{
    plan_mpc, smc_mpc, Elite, MpcConfig, MpcOutcome, OptimalityLikelihood, SmcConfig, StepLog,
    UpdateConfig, ValueSource,
};
use crate::rng::SeedStream;
use crate::soft_dp::{hard_value_iteration, optimal_posterior, soft_backward_pass, BackupVariant};

/// Version string written next to every run.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const CSV_HEADER: [&str; 8] = ["iter", "step", "elbo", "return", "entropy", "aux1", "aux2", "wall_ms"];

/// One metrics row; `None` columns are left empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: Option<usize>,
    pub step: Option<usize>,
    pub elbo: Option<f64>,
    #[serde(rename = "return")]
    pub ret: Option<f64>,
    pub entropy: Option<f64>,
    pub aux1: Option<f64>,
    pub aux2: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub metrics_csv: PathBuf,
    pub events_jsonl: PathBuf,
    pub checkpoint: PathBuf,
    pub config_echo: ExperimentConfig,
    pub version: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    OneHotState,
    #[default]
    OneHotTimeState,
}

impl FeatureKind {
    fn build(&self, mdp: &TabularMDP) -> FeatureMap {
        match self {
            FeatureKind::OneHotState => FeatureMap::OneHotState { n_states: mdp.n_states() },
            FeatureKind::OneHotTimeState => {
                FeatureMap::OneHotTimeState { horizon: mdp.horizon(), n_states: mdp.n_states() }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftDpParams {
    pub beta: f64,
    pub variant: BackupVariant,
}

impl Default for SoftDpParams {
    fn default() -> Self {
        Self { beta: 1.0, variant: BackupVariant::Expected }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerParams {
    pub features: FeatureKind,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub mpc: MpcConfig,
    /// Used by `mirror`; `cem` and `mppi` fix the likelihood family.
    pub likelihood: OptimalityLikelihood,
    pub elite_fraction: f64,
    pub eta: f64,
    /// Initial per-coordinate stddev of Gaussian plans.
    pub init_std: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            mpc: MpcConfig::default(),
            likelihood: OptimalityLikelihood::RawBeta { beta: 1.0 },
            elite_fraction: 0.1,
            eta: 1.0,
            init_std: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    #[default]
    Uniform,
    Posterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcParams {
    pub beta: f64,
    pub backup: BackupVariant,
    pub proposal: ProposalKind,
    pub smc: SmcConfig,
}

impl Default for SmcParams {
    fn default() -> Self {
        Self { beta: 1.0, backup: BackupVariant::Expected, proposal: ProposalKind::Uniform, smc: SmcConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContinuationKind {
    #[default]
    Exact,
    Rollouts { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterPolicyParams {
    pub beta: f64,
    pub refine: RefineConfig,
    pub trigger: Trigger,
    pub continuation: ContinuationKind,
    /// Policy-gradient iterations used to pretrain the base (0 keeps it uniform).
    pub base_iterations: usize,
}

impl Default for IterPolicyParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            refine: RefineConfig::default(),
            trigger: Trigger::default(),
            continuation: ContinuationKind::Exact,
            base_iterations: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanHeadParams {
    /// Defaults to the episode horizon.
    pub horizon: Option<usize>,
    pub train: PlanTrainConfig,
    pub eval_episodes: usize,
}

impl Default for PlanHeadParams {
    fn default() -> Self {
        Self { horizon: None, train: PlanTrainConfig::default(), eval_episodes: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartParams {
    pub head: PlanHeadParams,
    pub planner: UpdateConfig,
    pub likelihood: OptimalityLikelihood,
    pub n_iters: usize,
    /// Defaults to the hard-VI optimal return.
    pub threshold: Option<f64>,
}

impl Default for WarmStartParams {
    fn default() -> Self {
        Self {
            head: PlanHeadParams::default(),
            planner: UpdateConfig { n_samples: 16, ..UpdateConfig::default() },
            likelihood: OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.25 }),
            n_iters: 10,
            threshold: None,
        }
    }
}

/// Typed parameters for one registry key.
#[derive(Clone, Debug, PartialEq)]
pub enum AlgorithmParams {
    SoftDp(SoftDpParams),
    Learner(LearnerParams),
    Planner(PlannerParams),
    Smc(SmcParams),
    IterPolicy(IterPolicyParams),
    PlanHead(PlanHeadParams),
    WarmStart(WarmStartParams),
}

fn typed<T: DeserializeOwned>(key: &str, params: &Value) -> Result<T> {
    serde_json::from_value(params.clone()).map_err(|e| CaiError::Validation(format!("bad params for {key}: {e}")))
}

pub(crate) fn parse_params(key: &str, params: &Value) -> Result<AlgorithmParams> {
    Ok(match key {
        "soft-dp" => AlgorithmParams::SoftDp(typed(key, params)?),
        "pg" | "soft-q" | "sac" => AlgorithmParams::Learner(typed(key, params)?),
        "cem" | "mppi" | "mirror" => AlgorithmParams::Planner(typed(key, params)?),
        "smc" => AlgorithmParams::Smc(typed(key, params)?),
        "iter-policy" => AlgorithmParams::IterPolicy(typed(key, params)?),
        "amortised-plan" => AlgorithmParams::PlanHead(typed(key, params)?),
        "warm-start" => AlgorithmParams::WarmStart(typed(key, params)?),
        other => return Err(CaiError::Validation(format!("no parameter schema for {other}"))),
    })
}

struct Output {
    rows: Vec<MetricRow>,
    events: Vec<Value>,
    checkpoint: Value,
}

impl Output {
    fn new() -> Self {
        Self { rows: Vec::new(), events: Vec::new(), checkpoint: Value::Null }
    }

    fn event(&mut self, kind: &str, data: impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(data)?;
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("event".into(), Value::String(kind.into()));
            }
            None => v = json!({ "event": kind, "value": v }),
        }
        self.events.push(v);
        Ok(())
    }

    fn train_log(&mut self, log: &[TrainRecord]) -> Result<()> {
        for r in log {
            self.rows.push(MetricRow {
                iter: Some(r.iter),
                elbo: Some(r.elbo),
                ret: Some(r.ret),
                entropy: Some(r.entropy),
                aux1: Some(r.grad_norm),
                wall_ms: r.wall_ms,
                ..MetricRow::default()
            });
            self.event("train", r)?;
        }
        Ok(())
    }

    fn step_logs(&mut self, logs: &[StepLog]) -> Result<()> {
        for l in logs {
            self.rows.push(MetricRow {
                iter: Some(l.iter),
                step: Some(l.step),
                elbo: Some(l.elbo_proxy),
                ret: Some(l.mean_return),
                entropy: Some(l.entropy),
                aux1: Some(l.ess),
                aux2: Some(l.best_return),
                wall_ms: l.wall_ms,
            });
            self.event("plan", l)?;
        }
        Ok(())
    }
}

fn tabular_env(config: &ExperimentConfig) -> Result<TabularMDP> {
    match builtin::load(&config.env_id)? {
        BuiltinEnv::Tabular(m) => Ok(m),
        BuiltinEnv::Continuous(_) => Err(CaiError::Validation(format!("{} needs a tabular environment", config.algorithm))),
    }
}

fn mpc_summary<S: Serialize, A: Serialize, P: Serialize>(out: &mut Output, outcome: &MpcOutcome<S, A, P>, discount: f64) -> Result<()> {
    out.step_logs(&outcome.logs)?;
    let ret = crate::env::trajectory_return(&outcome.trajectory, discount)?;
    out.event("summary", json!({ "return": ret, "clamp_events": outcome.trajectory.clamp_events }))?;
    out.checkpoint = json!({ "trajectory": outcome.trajectory, "final_plan": outcome.final_plan });
    Ok(())
}

fn run_soft_dp(config: &ExperimentConfig, p: &SoftDpParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let opt = OptimalityModel::new(p.beta)?;
    let values = soft_backward_pass(&mdp, &opt, p.variant)?;
    let q = optimal_posterior(&values, &ActionPrior::Uniform);
    for t in 0..mdp.horizon() {
        for s in 0..mdp.n_states() {
            let d = q.dist(t, s);
            let probs = d.probs();
            out.rows.push(MetricRow {
                step: Some(t),
                elbo: Some(values.v(t, s) / p.beta),
                entropy: Some(d.entropy()),
                aux1: Some(s as f64),
                aux2: Some(probs[0]),
                ..MetricRow::default()
            });
            out.event("posterior", json!({ "t": t, "state": s, "v": values.v(t, s), "q": values.q_table[t][s], "posterior": probs }))?;
        }
    }
    let evidence = log_evidence(&mdp, &opt, &ActionPrior::Uniform)?;
    out.event("summary", json!({ "log_evidence": evidence, "log_partition": values.log_partition(mdp.initial_dist()) }))?;
    out.checkpoint = json!({ "values": values, "posterior": q });
    Ok(())
}

fn run_learner(config: &ExperimentConfig, p: &LearnerParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let train = TrainConfig { seed: config.seed, ..p.train.clone() };
    let features = p.features.build(&mdp);
    match config.algorithm.as_str() {
        "pg" => {
            let (policy, log) = train_policy_gradient(&mdp, SoftmaxPolicy::zeros(features.clone(), mdp.n_actions()), &train)?;
            out.train_log(&log)?;
            out.checkpoint = json!({ "iteration": log.len(), "feature_id": features.id(), "policy": policy });
        }
        "soft-q" => {
            let init = QFunctionApprox::zeros(features.clone(), mdp.n_actions(), train.beta)?;
            let (q, log) = train_soft_q(&mdp, init, &train)?;
            out.train_log(&log)?;
            out.checkpoint = json!({ "iteration": log.len(), "feature_id": features.id(), "critic": q });
        }
        _ => {
            let res = soft_actor_critic_loop(&mdp, features.clone(), &train)?;
            out.train_log(&res.log)?;
            out.checkpoint = json!({
                "iteration": res.log.len(),
                "feature_id": features.id(),
                "actor": res.actor,
                "critic": res.critic,
            });
        }
    }
    Ok(())
}

fn run_planner(config: &ExperimentConfig, p: &PlannerParams, out: &mut Output) -> Result<()> {
    let likelihood = match config.algorithm.as_str() {
        "cem" => OptimalityLikelihood::Indicator(Elite::Fraction { fraction: p.elite_fraction }),
        "mppi" => OptimalityLikelihood::Exponential { eta: p.eta },
        _ => p.likelihood,
    };
    let mpc = MpcConfig { seed: config.seed, ..p.mpc };
    match builtin::load(&config.env_id)? {
        BuiltinEnv::Tabular(mdp) => {
            let prior = CategoricalSeq::uniform(mpc.horizon, mdp.n_actions());
            let outcome = plan_mpc(&mdp, &prior, &likelihood, &mpc)?;
            mpc_summary(out, &outcome, mdp.discount())
        }
        BuiltinEnv::Continuous(env) => {
            if !(p.init_std > 0.0) {
                return Err(CaiError::Validation("init_std must be positive".into()));
            }
            let d = env.action_dim;
            let prior = DiagGaussianSeq::constant(mpc.horizon, &vec![0.0; d], &vec![p.init_std; d], Some(env.action_bounds.clone()))?;
            let outcome = plan_mpc(&env, &prior, &likelihood, &mpc)?;
            mpc_summary(out, &outcome, env.discount())
        }
    }
}

fn run_smc(config: &ExperimentConfig, p: &SmcParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let values = soft_backward_pass(&mdp, &OptimalityModel::new(p.beta)?, p.backup)?;
    let proposal = match p.proposal {
        ProposalKind::Uniform => PolicyTable::uniform(mdp.n_states(), mdp.n_actions()),
        ProposalKind::Posterior => optimal_posterior(&values, &ActionPrior::Uniform),
    };
    let outcome = smc_mpc(&mdp, ValueSource::Exact(&values), &proposal, &ActionPrior::Uniform, &p.smc, config.seed, false)?;
    mpc_summary(out, &outcome, mdp.discount())
}

fn run_iter_policy(config: &ExperimentConfig, p: &IterPolicyParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let features = FeatureMap::OneHotTimeState { horizon: mdp.horizon(), n_states: mdp.n_states() };
    let mut base = SoftmaxPolicy::zeros(features, mdp.n_actions());
    if p.base_iterations > 0 {
        let train = TrainConfig { n_iterations: p.base_iterations, beta: p.beta, seed: config.seed, ..TrainConfig::default() };
        base = train_policy_gradient(&mdp, base, &train)?.0;
    }
    let values = soft_backward_pass(&mdp, &OptimalityModel::new(p.beta)?, BackupVariant::Expected)?;
    let continuation = match p.continuation {
        ContinuationKind::Exact => Continuation::Exact(&values),
        ContinuationKind::Rollouts { n } => Continuation::Rollouts { beta: p.beta, n, seed: config.seed },
    };
    let res = adaptive_refinement_policy(&mdp, &base, p.trigger, continuation, &p.refine, config.seed)?;
    for (u, r) in res.usage.iter().zip(&res.trajectory.rewards) {
        out.rows.push(MetricRow {
            step: Some(u.step),
            elbo: u.elbo_after,
            ret: Some(*r),
            aux1: Some(if u.triggered { 1.0 } else { 0.0 }),
            aux2: Some(u.iters_used as f64),
            ..MetricRow::default()
        });
        out.event("usage", u)?;
    }
    let ret = crate::env::trajectory_return(&res.trajectory, mdp.discount())?;
    out.event("summary", json!({ "return": ret }))?;
    out.checkpoint = json!({ "base": base, "trajectory": res.trajectory });
    Ok(())
}

fn train_head(config: &ExperimentConfig, p: &PlanHeadParams, mdp: &TabularMDP) -> Result<(AmortisedPlanHead, Vec<TrainRecord>)> {
    let h = p.horizon.unwrap_or(mdp.horizon());
    let head = AmortisedPlanHead::zeros(FeatureMap::OneHotState { n_states: mdp.n_states() }, h, mdp.n_actions())?;
    amortised_plan_train(mdp, head, &PlanTrainConfig { seed: config.seed, ..p.train })
}

fn run_plan_head(config: &ExperimentConfig, p: &PlanHeadParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let (head, log) = train_head(config, p, &mdp)?;
    out.train_log(&log)?;
    let eval = evaluate_plan_head(&mdp, &head, p.eval_episodes, config.seed, false)?;
    out.event("summary", eval)?;
    out.checkpoint = json!({ "iteration": log.len(), "feature_id": head.features.id(), "head": head });
    Ok(())
}

fn run_warm_start(config: &ExperimentConfig, p: &WarmStartParams, out: &mut Output) -> Result<()> {
    let mdp = tabular_env(config)?;
    let (head, log) = train_head(config, &p.head, &mdp)?;
    for r in &log {
        out.event("train", r)?;
    }
    let h = head.horizon;
    let s0 = mdp.initial_state(&mut SeedStream::new(config.seed).rng(1));
    let threshold = match p.threshold {
        Some(x) => x,
        None => hard_value_iteration(&mdp.with_horizon(h)?).v_table[0][s0],
    };
    let warm_start = amortised_plan_as_warm_start(&head, 0, s0, h)?;
    let cold_start = CategoricalSeq::uniform(h, mdp.n_actions());
    let warm = planning_trace(&mdp, warm_start, 0, s0, &p.likelihood, &p.planner, p.n_iters, threshold, config.seed)?;
    let cold = planning_trace(&mdp, cold_start, 0, s0, &p.likelihood, &p.planner, p.n_iters, threshold, config.seed)?;
    for i in 0..p.n_iters {
        out.rows.push(MetricRow {
            iter: Some(i + 1),
            step: Some(0),
            ret: Some(warm.mean_returns[i]),
            entropy: None,
            aux1: Some(warm.best_returns[i]),
            aux2: Some(cold.best_returns[i]),
            ..MetricRow::default()
        });
    }
    out.event(
        "summary",
        json!({
            "threshold": threshold,
            "warm_iterations_to_threshold": warm.iterations_to_threshold,
            "cold_iterations_to_threshold": cold.iterations_to_threshold,
            "warm_final_entropy": warm.final_plan.entropy(),
            "cold_final_entropy": cold.final_plan.entropy(),
        }),
    )?;
    out.checkpoint = json!({ "head": head, "warm_plan": warm.final_plan, "cold_plan": cold.final_plan });
    Ok(())
}

/// The metrics CSV as a string.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CaiError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| CaiError::Numeric(e.to_string()))
}

fn csv_err(e: csv::Error) -> CaiError {
    CaiError::Io(std::io::Error::other(e))
}

/// Executes `config` end to end, writing `metrics.csv`, `events.jsonl`,
/// `checkpoint.json`, `config.json` and `run.json` under `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunResult> {
    config.validate()?;
    let params = parse_params(&config.algorithm, &config.params)?;
    let mut out = Output::new();
    match &params {
        AlgorithmParams::SoftDp(p) => run_soft_dp(config, p, &mut out)?,
        AlgorithmParams::Learner(p) => run_learner(config, p, &mut out)?,
        AlgorithmParams::Planner(p) => run_planner(config, p, &mut out)?,
        AlgorithmParams::Smc(p) => run_smc(config, p, &mut out)?,
        AlgorithmParams::IterPolicy(p) => run_iter_policy(config, p, &mut out)?,
        AlgorithmParams::PlanHead(p) => run_plan_head(config, p, &mut out)?,
        AlgorithmParams::WarmStart(p) => run_warm_start(config, p, &mut out)?,
    }
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&out.rows)?)?;
    let events_path = out_dir.join("events.jsonl");
    let mut events = String::new();
    for e in &out.events {
        events.push_str(&serde_json::to_string(e)?);
        events.push('\n');
    }
    fs::write(&events_path, events)?;
    let checkpoint_path = out_dir.join("checkpoint.json");
    let checkpoint = json!({
        "algorithm": config.algorithm,
        "env_id": config.env_id,
        "config": config,
        "state": out.checkpoint,
    });
    fs::write(&checkpoint_path, serde_json::to_string_pretty(&checkpoint)?)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let result = RunResult {
        metrics_csv: metrics_path,
        events_jsonl: events_path,
        checkpoint: checkpoint_path,
        config_echo: config.clone(),
        version: VERSION.to_string(),
    };
    fs::write(out_dir.join("run.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}
