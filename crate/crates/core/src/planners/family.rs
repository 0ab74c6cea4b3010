use serde::{de::DeserializeOwned, Serialize};

use crate::dist::{moment_match, CategoricalSeq, DiagGaussianSeq};
use crate::error::{CaiError, Result};
use crate::rng::Rng;

/// A distribution family over `H`-step action sequences that can be
/// sampled and refit from weighted samples.
pub trait PlanFamily: Clone + std::fmt::Debug + Serialize + DeserializeOwned {
    type Action: Clone + std::fmt::Debug + PartialEq;

    fn horizon(&self) -> usize;

    /// Draws an executable sequence and the number of clamped coordinates.
    fn draw(&self, rng: &mut Rng) -> (Vec<Self::Action>, usize);

    /// Weighted refit from unnormalized non-negative weights.
    fn refit(&self, samples: &[Vec<Self::Action>], weights: &[f64], smoothing: f64) -> Result<Self>;

    fn entropy(&self) -> f64;

    /// The action executed at slot `h` (mean for Gaussians, mode for
    /// categoricals).
    fn action_at(&self, h: usize) -> Self::Action;

    /// Drops the first slot and appends the last slot of `prior`.
    fn shifted(&self, prior: &Self) -> Self;

    /// Keeps the first `h` slots.
    fn truncated(&self, h: usize) -> Result<Self>;
}

impl PlanFamily for DiagGaussianSeq {
    type Action = Vec<f64>;

    fn horizon(&self) -> usize {
        DiagGaussianSeq::horizon(self)
    }

    fn draw(&self, rng: &mut Rng) -> (Vec<Vec<f64>>, usize) {
        let s = self.sample(rng);
        (s.clamped, s.clamps)
    }

    fn refit(&self, samples: &[Vec<Vec<f64>>], weights: &[f64], _smoothing: f64) -> Result<Self> {
        moment_match(samples, weights, self.bounds.clone(), self.std_floor)
    }

    fn entropy(&self) -> f64 {
        DiagGaussianSeq::entropy(self)
    }

    fn action_at(&self, h: usize) -> Vec<f64> {
        let mut a = vec![self.mean[h].clone()];
        self.clamp_to_bounds(&mut a);
        a.pop().expect("one row")
    }

    fn shifted(&self, prior: &Self) -> Self {
        let mut next = self.clone();
        next.mean.remove(0);
        next.stddev.remove(0);
        next.mean.push(prior.mean.last().expect("H >= 1").clone());
        next.stddev.push(prior.stddev.last().expect("H >= 1").clone());
        next
    }

    fn truncated(&self, h: usize) -> Result<Self> {
        if h == 0 || h > self.horizon() {
            return Err(CaiError::invalid(format!("cannot truncate a {}-step plan to {h}", self.horizon())));
        }
        let mut next = self.clone();
        next.mean.truncate(h);
        next.stddev.truncate(h);
        Ok(next)
    }
}

impl PlanFamily for CategoricalSeq {
    type Action = usize;

    fn horizon(&self) -> usize {
        CategoricalSeq::horizon(self)
    }

    fn draw(&self, rng: &mut Rng) -> (Vec<usize>, usize) {
        (self.sample(rng), 0)
    }

    fn refit(&self, samples: &[Vec<usize>], weights: &[f64], smoothing: f64) -> Result<Self> {
        CategoricalSeq::refit(self, samples, weights, smoothing)
    }

    fn entropy(&self) -> f64 {
        CategoricalSeq::entropy(self)
    }

    fn action_at(&self, h: usize) -> usize {
        self.steps[h].mode()
    }

    fn shifted(&self, prior: &Self) -> Self {
        let mut next = self.clone();
        next.steps.remove(0);
        next.steps.push(prior.steps.last().expect("H >= 1").clone());
        next
    }

    fn truncated(&self, h: usize) -> Result<Self> {
        if h == 0 || h > self.horizon() {
            return Err(CaiError::invalid(format!("cannot truncate a {}-step plan to {h}", self.horizon())));
        }
        let mut next = self.clone();
        next.steps.truncate(h);
        Ok(next)
    }
}
