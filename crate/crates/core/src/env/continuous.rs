use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::env::Environment;
use crate::error::{CaiError, Result};
use crate::rng::Rng;

pub type StepFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type RewardFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A continuous-state, box-bounded continuous-action environment with
/// deterministic dynamics plus optional diagonal Gaussian noise.
#[derive(Clone)]
pub struct ContinuousEnv {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bounds: Vec<(f64, f64)>,
    step_fn: StepFn,
    reward_fn: RewardFn,
    pub noise_std: Option<Vec<f64>>,
    pub initial_state: Vec<f64>,
    pub horizon: usize,
}

impl fmt::Debug for ContinuousEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousEnv")
            .field("state_dim", &self.state_dim)
            .field("action_dim", &self.action_dim)
            .field("action_bounds", &self.action_bounds)
            .field("noise_std", &self.noise_std)
            .field("initial_state", &self.initial_state)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ContinuousEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        action_bounds: Vec<(f64, f64)>,
        step_fn: StepFn,
        reward_fn: RewardFn,
        noise_std: Option<Vec<f64>>,
        initial_state: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(CaiError::invalid("dimensions must be positive"));
        }
        if horizon == 0 {
            return Err(CaiError::invalid("horizon must be positive"));
        }
        if action_bounds.len() != action_dim
            || action_bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(CaiError::invalid("action bounds must be finite with min < max"));
        }
        if initial_state.len() != state_dim {
            return Err(CaiError::invalid("initial state has the wrong dimension"));
        }
        if let Some(n) = &noise_std {
            if n.len() != state_dim || n.iter().any(|s| !(*s >= 0.0)) {
                return Err(CaiError::invalid("noise stddev must be non-negative per state dimension"));
            }
        }
        Ok(Self { state_dim, action_dim, action_bounds, step_fn, reward_fn, noise_std, initial_state, horizon })
    }

    pub fn with_initial_state(&self, s: Vec<f64>) -> Result<Self> {
        if s.len() != self.state_dim {
            return Err(CaiError::invalid("initial state has the wrong dimension"));
        }
        let mut e = self.clone();
        e.initial_state = s;
        Ok(e)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(CaiError::invalid("horizon must be positive"));
        }
        let mut e = self.clone();
        e.horizon = horizon;
        Ok(e)
    }

    /// Noise-free successor `f(s, a)`.
    pub fn mean_step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        (self.step_fn)(s, a)
    }

    pub fn reward_of(&self, s: &[f64], a: &[f64]) -> f64 {
        (self.reward_fn)(s, a)
    }
}

impl Environment for ContinuousEnv {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn initial_state(&self, _rng: &mut Rng) -> Vec<f64> {
        self.initial_state.clone()
    }

    fn reward(&self, s: &Vec<f64>, a: &Vec<f64>) -> f64 {
        (self.reward_fn)(s, a)
    }

    fn next_state(&self, s: &Vec<f64>, a: &Vec<f64>, rng: &mut Rng) -> Vec<f64> {
        let mut next = (self.step_fn)(s, a);
        if let Some(noise) = &self.noise_std {
            for (x, sd) in next.iter_mut().zip(noise) {
                if *sd > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    *x += sd * z;
                }
            }
        }
        next
    }

    fn clamp_action(&self, a: &mut Vec<f64>) -> usize {
        let mut n = 0;
        for (x, (lo, hi)) in a.iter_mut().zip(&self.action_bounds) {
            if *x < *lo {
                *x = *lo;
                n += 1;
            } else if *x > *hi {
                *x = *hi;
                n += 1;
            }
        }
        n
    }

    fn check_action(&self, a: &Vec<f64>) -> Result<()> {
        if a.len() != self.action_dim || a.iter().any(|x| !x.is_finite()) {
            return Err(CaiError::invalid("action has wrong dimension or non-finite entries"));
        }
        Ok(())
    }
}
