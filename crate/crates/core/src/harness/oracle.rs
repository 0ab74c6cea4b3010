use serde::{Deserialize, Serialize};

use crate::bound::oracle::{brute_force_posterior, constrained_optimum};
use crate::bound::{elbo_exact, log_evidence, Behaviour, ElboReport, QDynamics};
use crate::dist::{ActionPrior, PolicyTable};
use crate::env::{builtin, check_enumeration, OptimalityModel, TabularMDP};
use crate::error::Result;
use crate::soft_dp::{optimal_posterior, soft_backward_pass, BackupVariant};

/// Exact ground truth for one tabular environment, computed by
/// enumeration. Posteriors are `[t][s][a]` probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub env_id: String,
    pub beta: f64,
    /// `ln p(O)` under the uniform action prior.
    pub log_evidence: f64,
    /// `p(a_t | s_t, O_{t:T})` by trajectory enumeration.
    pub true_posterior: Vec<Vec<Vec<f64>>>,
    /// The best policy under the environment's own dynamics, by
    /// enumeration of histories; it equals the expected-backup soft-DP
    /// posterior.
    pub constrained_posterior: Vec<Vec<Vec<f64>>>,
    pub constrained_log_evidence: f64,
    /// The expected-backup posterior from the backward pass.
    pub soft_dp_posterior: Vec<Vec<Vec<f64>>>,
    /// ELBO of the supplied policy, or of the soft-DP posterior.
    pub elbo: ElboReport,
}

fn probs(table: &PolicyTable, mdp: &TabularMDP) -> Vec<Vec<Vec<f64>>> {
    (0..mdp.horizon()).map(|t| (0..mdp.n_states()).map(|s| table.dist(t, s).probs()).collect()).collect()
}

pub fn oracle(env_id: &str, beta: f64, policy: Option<&PolicyTable>) -> Result<OracleReport> {
    let mdp = builtin::tabular(env_id)?;
    check_enumeration(&mdp)?;
    let opt = OptimalityModel::new(beta)?;
    let prior = ActionPrior::Uniform;
    let truth = brute_force_posterior(&mdp, &opt, &prior)?;
    let constrained = constrained_optimum(&mdp, &opt, &prior)?;
    let values = soft_backward_pass(&mdp, &opt, BackupVariant::Expected)?;
    let q = optimal_posterior(&values, &prior);
    let behaviour = policy.unwrap_or(&q);
    behaviour.check_shape(mdp.n_states(), mdp.n_actions(), mdp.horizon())?;
    let elbo = elbo_exact(&mdp, Behaviour::Policy(behaviour), &opt, &prior, QDynamics::SameAsEnv)?;
    Ok(OracleReport {
        env_id: env_id.to_string(),
        beta,
        log_evidence: log_evidence(&mdp, &opt, &prior)?,
        true_posterior: probs(&truth.policy, &mdp),
        constrained_posterior: probs(&constrained.policy, &mdp),
        constrained_log_evidence: constrained.log_evidence,
        soft_dp_posterior: probs(&q, &mdp),
        elbo,
    })
}
