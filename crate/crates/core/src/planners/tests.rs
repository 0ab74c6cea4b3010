use proptest::prelude::*;

use super::*;
use crate::dist::{moment_match, ActionPrior, CategoricalSeq, DiagGaussianSeq, PolicyTable};
use crate::env::builtin::{double_integrator, gridworld_4x4, random_mdp, two_arm_bandit};
use crate::env::{OptimalityModel, TabularMDP};
use crate::numeric::total_variation;
use crate::soft_dp::{hard_value_iteration, optimal_posterior, soft_backward_pass, BackupVariant};

fn gaussian_plan(h: usize) -> DiagGaussianSeq {
    DiagGaussianSeq::constant(h, &[0.0], &[0.5], Some(vec![(-1.0, 1.0)])).unwrap()
}

#[test]
fn elite_selection_by_fraction() {
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.5 });
    let returns = [3.0, 1.0, 2.0, 0.0];
    let (w, fallback) = likelihood_weights(&lik, &returns, &returns);
    assert_eq!(w, vec![1.0, 0.0, 1.0, 0.0]);
    assert!(!fallback);
    let samples = vec![vec![vec![1.0]], vec![vec![5.0]], vec![vec![3.0]], vec![vec![7.0]]];
    let fit = moment_match(&samples, &w, None, 1e-3).unwrap();
    assert_eq!(fit.mean, vec![vec![2.0]]);
}

#[test]
fn exponential_weights_are_a_softmax() {
    let lik = OptimalityLikelihood::Exponential { eta: 1.0 };
    let returns = [1.0, 0.0];
    let (w, _) = likelihood_weights(&lik, &returns, &returns);
    let total: f64 = w.iter().sum();
    let e = std::f64::consts::E;
    assert!((w[0] / total - e / (e + 1.0)).abs() < 1e-15);
    assert!((w[1] / total - 1.0 / (e + 1.0)).abs() < 1e-15);
    assert!((w[0] / total - 0.7311).abs() < 1e-4);
}

#[test]
fn saturated_softmax() {
    let lik = OptimalityLikelihood::Exponential { eta: 1.0 };
    let returns = [100.0, 0.0];
    let (w, _) = likelihood_weights(&lik, &returns, &returns);
    let total: f64 = w.iter().sum();
    assert!(w[0] / total >= 1.0 - 1e-40);
    assert!(w[1] / total < 1e-40);
}

#[test]
fn threshold_without_elites_falls_back_to_the_maximum() {
    let lik = OptimalityLikelihood::Indicator(Elite::Threshold { threshold: 10.0 });
    let returns = [1.0, 4.0, 4.0, 2.0];
    let (w, fallback) = likelihood_weights(&lik, &returns, &returns);
    assert!(fallback);
    assert_eq!(w, vec![0.0, 1.0, 1.0, 0.0]);
    let (w, fallback) = likelihood_weights(&OptimalityLikelihood::Indicator(Elite::Threshold { threshold: 1.0 }), &returns, &returns);
    assert!(!fallback);
    assert_eq!(w, vec![0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn elite_counts() {
    assert_eq!(elite_count(0.5, 4), 2);
    assert_eq!(elite_count(0.1, 4), 1);
    assert_eq!(elite_count(1e-9, 4), 1);
    assert_eq!(elite_count(1.0, 4), 4);
    assert_eq!(rank_by_return(&[1.0, 3.0, 3.0, 0.0]), vec![1, 2, 0, 3]);
}

#[test]
fn invalid_likelihoods() {
    for lik in [
        OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.0 }),
        OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 1.5 }),
        OptimalityLikelihood::Exponential { eta: 0.0 },
        OptimalityLikelihood::RawBeta { beta: -1.0 },
    ] {
        assert!(lik.validate().is_err(), "{lik:?}");
    }
}

#[test]
fn constant_returns_give_unweighted_moments() {
    let env = double_integrator().unwrap();
    let zero = crate::env::ContinuousEnv::new(
        2,
        1,
        vec![(-1.0, 1.0)],
        std::sync::Arc::new(|s: &[f64], _: &[f64]| s.to_vec()),
        std::sync::Arc::new(|_: &[f64], _: &[f64]| 0.0),
        None,
        vec![0.0, 0.0],
        3,
    )
    .unwrap();
    let plan = gaussian_plan(3);
    let config = UpdateConfig { n_samples: 16, ..UpdateConfig::default() };
    let lik = OptimalityLikelihood::Exponential { eta: 1.0 };
    let (next, report) = mirror_descent_update(&plan, &zero, 0, &vec![0.0, 0.0], &lik, &config, 4, 0).unwrap();
    assert!(report.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-15));
    assert_eq!(report.iteration, 1);
    let batch = draw_and_score(&plan, &zero, 0, &vec![0.0, 0.0], &lik, &config, 4).unwrap();
    let flat = moment_match(&batch.samples, &[1.0; 16], plan.bounds.clone(), plan.std_floor).unwrap();
    assert_eq!(next, flat);
    let _ = env;
}

#[test]
fn cem_and_mppi_references_match_bit_for_bit() {
    let env = double_integrator().unwrap();
    let plan = gaussian_plan(10);
    let state = vec![1.0, 0.0];
    for seed in 0..8 {
        let config = UpdateConfig { n_samples: 32, ..UpdateConfig::default() };
        let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.1 });
        let (md, _) = mirror_descent_update(&plan, &env, 0, &state, &lik, &config, seed, 0).unwrap();
        let cem = cem_reference(&plan, &env, 0, &state, 0.1, 32, seed).unwrap();
        assert_eq!(md, cem);
        let lik = OptimalityLikelihood::Exponential { eta: 0.7 };
        let (md, _) = mirror_descent_update(&plan, &env, 0, &state, &lik, &config, seed, 0).unwrap();
        let mppi = mppi_reference(&plan, &env, 0, &state, 0.7, 32, seed).unwrap();
        assert_eq!(md, mppi);
    }
}

#[test]
fn full_elite_fraction_is_an_equal_weight_fit() {
    let env = double_integrator().unwrap();
    let plan = gaussian_plan(4);
    let state = vec![1.0, 0.0];
    let cem = cem_reference(&plan, &env, 0, &state, 1.0, 20, 9).unwrap();
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 1.0 });
    let config = UpdateConfig { n_samples: 20, ..UpdateConfig::default() };
    let batch = draw_and_score(&plan, &env, 0, &state, &lik, &config, 9).unwrap();
    assert_eq!(cem, moment_match(&batch.samples, &[1.0; 20], plan.bounds.clone(), plan.std_floor).unwrap());
}

#[test]
fn single_sample_is_a_floored_point_mass() {
    let env = double_integrator().unwrap();
    let plan = gaussian_plan(4);
    let state = vec![1.0, 0.0];
    let cem = cem_reference(&plan, &env, 0, &state, 0.5, 1, 3).unwrap();
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.5 });
    let config = UpdateConfig { n_samples: 1, ..UpdateConfig::default() };
    let batch = draw_and_score(&plan, &env, 0, &state, &lik, &config, 3).unwrap();
    assert_eq!(cem.mean, batch.samples[0]);
    assert!(cem.stddev.iter().flatten().all(|&s| s == plan.std_floor));
}

#[test]
fn large_eta_flattens_the_weights() {
    let env = double_integrator().unwrap();
    let plan = gaussian_plan(5);
    let state = vec![1.0, 0.0];
    let mppi = mppi_reference(&plan, &env, 0, &state, 1e6, 64, 5).unwrap();
    let lik = OptimalityLikelihood::Exponential { eta: 1e6 };
    let config = UpdateConfig { n_samples: 64, ..UpdateConfig::default() };
    let batch = draw_and_score(&plan, &env, 0, &state, &lik, &config, 5).unwrap();
    let flat = moment_match(&batch.samples, &[1.0; 64], plan.bounds.clone(), plan.std_floor).unwrap();
    for (a, b) in mppi.mean.iter().flatten().zip(flat.mean.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
    for (a, b) in mppi.stddev.iter().flatten().zip(flat.stddev.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn inner_rollouts_average_stochastic_returns() {
    let mdp = random_mdp(2).unwrap();
    let plan = CategoricalSeq::uniform(mdp.horizon(), mdp.n_actions());
    let lik = OptimalityLikelihood::RawBeta { beta: 1.0 };
    let one = UpdateConfig { n_samples: 8, inner_rollouts: 1, ..UpdateConfig::default() };
    let many = UpdateConfig { n_samples: 8, inner_rollouts: 4000, ..UpdateConfig::default() };
    let batch = draw_and_score(&plan, &mdp, 0, &0, &lik, &many, 1).unwrap();
    let exact = sequence_log_likelihoods(&mdp, 0, 0, mdp.horizon(), 1.0).unwrap();
    for (seq, soft) in batch.samples.iter().zip(&batch.soft_returns) {
        let k = seq.iter().fold(0, |k, &a| k * mdp.n_actions() + a);
        assert!((soft - exact[k]).abs() < 0.05, "{soft} vs {}", exact[k]);
    }
    let batch = draw_and_score(&plan, &mdp, 0, &0, &lik, &one, 1).unwrap();
    assert_eq!(batch.returns, batch.soft_returns);
    assert!(draw_and_score(&plan, &mdp, 0, &0, &lik, &UpdateConfig { n_samples: 0, ..one }, 1).is_err());
}

#[test]
fn exact_likelihood_matches_deterministic_returns() {
    let mdp = gridworld_4x4().unwrap().with_horizon(3).unwrap();
    let w = sequence_log_likelihoods(&mdp, 0, 0, 3, 0.5).unwrap();
    assert_eq!(w.len(), 64);
    let mut rng = SeedStream::new(0).rng(0);
    for k in [0usize, 7, 33, 63] {
        let seq = [k / 16, (k / 4) % 4, k % 4];
        let (r, _) = sequence_return(&mdp, 0, &0, &seq, &mut rng).unwrap();
        assert!((w[k] - r / 0.5).abs() < 1e-12);
    }
}

#[test]
fn exact_mirror_descent_ascends() {
    for seed in 0..10 {
        let mdp = random_mdp(seed).unwrap();
        let mut plan = CategoricalSeq::uniform(mdp.horizon(), mdp.n_actions());
        let lik = OptimalityLikelihood::RawBeta { beta: 0.5 };
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..10 {
            let (next, report) = mirror_descent_exact(&plan, &mdp, 0, 0, &lik, 0.0).unwrap();
            assert!(report.log_expected_likelihood >= prev - 1e-10, "seed {seed}");
            prev = report.log_expected_likelihood;
            plan = next;
        }
    }
}

#[test]
fn exact_update_rejects_indicators_and_large_spaces() {
    let mdp = gridworld_4x4().unwrap();
    let plan = CategoricalSeq::uniform(8, 4);
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.5 });
    assert!(mirror_descent_exact(&plan, &mdp, 0, 0, &lik, 0.0).is_err());
    let long = CategoricalSeq::uniform(20, 4);
    let big = mdp.with_horizon(20).unwrap();
    let err = mirror_descent_exact(&long, &big, 0, 0, &OptimalityLikelihood::RawBeta { beta: 1.0 }, 0.0).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

fn bandit_setup() -> (TabularMDP, crate::soft_dp::SoftValues) {
    let mdp = two_arm_bandit();
    let v = soft_backward_pass(&mdp, &OptimalityModel::new(1.0).unwrap(), BackupVariant::Expected).unwrap();
    (mdp, v)
}

#[test]
fn single_particle() {
    let (mdp, v) = bandit_setup();
    let config = SmcConfig { n_particles: 1, ..SmcConfig::default() };
    let res = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &PolicyTable::uniform(1, 2), &ActionPrior::Uniform, &config, 0).unwrap();
    assert!(res.weight_history.iter().all(|w| w == &vec![1.0]));
    assert_eq!(res.action, res.particles.actions[0][0]);
    assert!(smc_plan(
        &mdp,
        0,
        0,
        ValueSource::Exact(&v),
        &PolicyTable::uniform(1, 2),
        &ActionPrior::Uniform,
        &SmcConfig { n_particles: 0, ..config },
        0
    )
    .is_err());
}

#[test]
fn posterior_proposal_keeps_full_ess() {
    for seed in 0..5 {
        let mdp = random_mdp(seed).unwrap();
        let v = soft_backward_pass(&mdp, &OptimalityModel::new(1.0).unwrap(), BackupVariant::Optimistic).unwrap();
        let q = optimal_posterior(&v, &ActionPrior::Uniform);
        for successor in [SuccessorModel::Twisted] {
            let config = SmcConfig { n_particles: 64, successor, ..SmcConfig::default() };
            let res = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &q, &ActionPrior::Uniform, &config, seed).unwrap();
            for ess in &res.ess_history {
                assert!((ess - 64.0).abs() < 1e-9, "seed {seed}: {ess}");
            }
            assert!(res.resampled.iter().all(|r| !r));
        }
    }
}

#[test]
fn deterministic_posterior_proposal_with_sampled_successors() {
    let mdp = gridworld_4x4().unwrap();
    let v = soft_backward_pass(&mdp, &OptimalityModel::new(1.0).unwrap(), BackupVariant::Expected).unwrap();
    let q = optimal_posterior(&v, &ActionPrior::Uniform);
    let config = SmcConfig { n_particles: 32, successor: SuccessorModel::Sampled, ..SmcConfig::default() };
    let res = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &q, &ActionPrior::Uniform, &config, 1).unwrap();
    for ess in &res.ess_history {
        assert!((ess - 32.0).abs() < 1e-9);
    }
}

#[test]
fn bandit_marginal_converges_to_the_posterior() {
    let (mdp, v) = bandit_setup();
    let q = optimal_posterior(&v, &ActionPrior::Uniform);
    let config = SmcConfig { n_particles: 10_000, ..SmcConfig::default() };
    let res = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &PolicyTable::uniform(1, 2), &ActionPrior::Uniform, &config, 3).unwrap();
    let tv = total_variation(&res.first_action_marginal, &q.dist(0, 0).probs());
    assert!(tv < 0.02, "{tv}");
    assert_eq!(res.action, 0);
    let s: f64 = res.particles.weights.iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn learned_values_match_exact_values() {
    let mdp = random_mdp(4).unwrap();
    let v = soft_backward_pass(&mdp, &OptimalityModel::new(1.0).unwrap(), BackupVariant::Expected).unwrap();
    let q = crate::amortised::QFunctionApprox::from_soft_values(&v).unwrap();
    let config = SmcConfig { n_particles: 50, ..SmcConfig::default() };
    let proposal = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let a = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &proposal, &ActionPrior::Uniform, &config, 2).unwrap();
    let b = smc_plan(&mdp, 0, 0, ValueSource::Learned(&q), &proposal, &ActionPrior::Uniform, &config, 2).unwrap();
    for (x, y) in a.first_action_marginal.iter().zip(&b.first_action_marginal) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn underflowing_weights_are_reported() {
    let (mdp, v) = bandit_setup();
    let only_first = PolicyTable::stationary(vec![crate::dist::Categorical::from_probs(&[1.0, 0.0]).unwrap()]);
    let only_second = PolicyTable::stationary(vec![crate::dist::Categorical::from_probs(&[0.0, 1.0]).unwrap()]);
    let prior = ActionPrior::Amortised { policy: only_first };
    let config = SmcConfig { n_particles: 4, ..SmcConfig::default() };
    let err = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &only_second, &prior, &config, 0).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn one_step_exhaustive_search_picks_the_best_action() {
    let mdp = TabularMDP::new(
        1,
        4,
        vec![vec![vec![1.0]; 4]],
        vec![vec![0.2, 0.9, -0.3, 0.5]],
        vec![1.0],
        1,
        1.0,
    )
    .unwrap();
    let prior = CategoricalSeq::uniform(1, 4);
    let config = MpcConfig { n_samples: 64, n_iterations: 1, horizon: 1, ..MpcConfig::default() };
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 1.0 / 64.0 });
    let out = plan_mpc(&mdp, &prior, &lik, &config).unwrap();
    assert_eq!(out.trajectory.actions, vec![1]);
    assert_eq!(out.logs.len(), 1);
}

#[test]
fn gridworld_mpc_is_optimal() {
    let mdp = gridworld_4x4().unwrap();
    let opt = hard_value_iteration(&mdp).v_table[0][0];
    let prior = CategoricalSeq::uniform(8, 4);
    let config = MpcConfig { n_samples: 256, n_iterations: 5, horizon: 8, seed: 11, ..MpcConfig::default() };
    let lik = OptimalityLikelihood::RawBeta { beta: 0.05 };
    let out = plan_mpc(&mdp, &prior, &lik, &config).unwrap();
    let ret: f64 = out.trajectory.rewards.iter().sum();
    assert_eq!(ret, opt);
    assert_eq!(out.logs.len(), 8 * 5);
    assert!(out.logs.iter().all(|l| l.wall_ms.is_none()));
}

#[test]
fn mpc_is_reproducible_and_warm_start_modes_differ() {
    let mdp = gridworld_4x4().unwrap();
    let prior = CategoricalSeq::uniform(8, 4);
    let lik = OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.1 });
    let config = MpcConfig { n_samples: 32, n_iterations: 2, horizon: 4, replan_every: 2, seed: 5, ..MpcConfig::default() };
    let a = plan_mpc(&mdp, &prior, &lik, &config).unwrap();
    let b = plan_mpc(&mdp, &prior, &lik, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.logs.len(), 4 * 2);
    assert_eq!(a.trajectory.len(), 8);
    let reset = plan_mpc(&mdp, &prior, &lik, &MpcConfig { warm_start: WarmStart::Reset, ..config }).unwrap();
    assert_ne!(a.logs, reset.logs);
    assert!(plan_mpc(&mdp, &prior, &lik, &MpcConfig { replan_every: 5, ..config }).is_err());
}

#[test]
fn smc_mpc_on_gridworld() {
    let mdp = gridworld_4x4().unwrap();
    let v = soft_backward_pass(&mdp, &OptimalityModel::new(0.05).unwrap(), BackupVariant::Expected).unwrap();
    let config = SmcConfig { n_particles: 128, ..SmcConfig::default() };
    let proposal = PolicyTable::uniform(16, 4);
    let out = smc_mpc(&mdp, ValueSource::Exact(&v), &proposal, &ActionPrior::Uniform, &config, 0, false).unwrap();
    let ret: f64 = out.trajectory.rewards.iter().sum();
    assert_eq!(ret, hard_value_iteration(&mdp).v_table[0][0]);
    assert_eq!(out.logs.len(), 8);
}

#[test]
fn systematic_resampling_counts() {
    let mut rng = SeedStream::new(1).rng(0);
    let idx = systematic_resample(&[0.5, 0.25, 0.25, 0.0], &mut rng);
    assert_eq!(idx.iter().filter(|&&i| i == 0).count(), 2);
    assert_eq!(idx.iter().filter(|&&i| i == 1).count(), 1);
    assert_eq!(idx.iter().filter(|&&i| i == 3).count(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_weights_sum_to_one(seed in 0u64..1000, eta in 0.01f64..100.0, k in 1usize..40) {
        let env = double_integrator().unwrap();
        let plan = gaussian_plan(6);
        let config = UpdateConfig { n_samples: k, ..UpdateConfig::default() };
        for lik in [
            OptimalityLikelihood::Exponential { eta },
            OptimalityLikelihood::Indicator(Elite::Fraction { fraction: 0.25 }),
            OptimalityLikelihood::Indicator(Elite::Threshold { threshold: -eta }),
        ] {
            let (_, r) = mirror_descent_update(&plan, &env, 0, &vec![1.0, 0.0], &lik, &config, seed, 0).unwrap();
            let s: f64 = r.weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn smc_weights_sum_to_one(seed in 0u64..1000, mdp_seed in 0u64..50, k in 1usize..200) {
        let mdp = random_mdp(mdp_seed).unwrap();
        let v = soft_backward_pass(&mdp, &OptimalityModel::new(0.5).unwrap(), BackupVariant::Expected).unwrap();
        let proposal = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
        for successor in [SuccessorModel::Twisted, SuccessorModel::Sampled] {
            let config = SmcConfig { n_particles: k, successor, ..SmcConfig::default() };
            let res = smc_plan(&mdp, 0, 0, ValueSource::Exact(&v), &proposal, &ActionPrior::Uniform, &config, seed).unwrap();
            for w in &res.weight_history {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert!((res.first_action_marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_ascent_over_random_instances(mdp_seed in 0u64..200, beta in 0.2f64..3.0) {
        let mdp = random_mdp(mdp_seed).unwrap();
        let mut plan = CategoricalSeq::uniform(mdp.horizon(), mdp.n_actions());
        let lik = OptimalityLikelihood::RawBeta { beta };
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..10 {
            let (next, r) = mirror_descent_exact(&plan, &mdp, 0, 0, &lik, 0.0).unwrap();
            prop_assert!(r.log_expected_likelihood >= prev - 1e-10);
            prev = r.log_expected_likelihood;
            plan = next;
        }
    }
}
