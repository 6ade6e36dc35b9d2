//! Observation perturbation attacks.
//!
//! Every generator returns a [`PerturbationMatrix`]: one row per agent, each row
//! bounded by the L∞ budget. Gradient-based attacks share the projected sign
//! ascent in [`pgd`].

mod align;
mod dataset;
mod hadamard;
mod noise;
mod pgd;
mod whitebox;

pub use align::{
    align_loss, select_lowest, select_victims, train_align_model, AlignLoss, AlignModel,
    AlignTrainConfig,
};
pub use dataset::{
    collect_observations, config_digest, sidecar_path, DatasetMeta, ObservationDataset,
};
pub use hadamard::{
    hadamard_for_victims, hadamard_perturbation, largest_power_of_two_at_most, sylvester_entry,
    sylvester_hadamard, sylvester_signs, targeted_hadamard,
};
pub use noise::{exponential_rate, random_perturbation, NoiseKind, OuProcess};
pub use pgd::{align_lighter_perturb, pgd, pgd_align_perturb, sign, Objective};
pub use whitebox::whitebox_perturb;

use serde::{Deserialize, Serialize};

use crate::env::{OBS_MAX, OBS_MIN};
use crate::numkit::Matrix;
use crate::{Error, Result};

/// L∞ budget and PGD schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub epsilon: f64,
    /// Number of PGD iterations.
    pub k: usize,
    pub alpha: f64,
    pub o_min: f64,
    pub o_max: f64,
}

impl AttackBudget {
    /// Step size `ε / K` and the environment's `[-1, 1]` observation range.
    pub fn new(epsilon: f64, k: usize) -> Result<Self> {
        let budget = AttackBudget {
            epsilon,
            k,
            alpha: epsilon / k.max(1) as f64,
            o_min: OBS_MIN,
            o_max: OBS_MAX,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, o_min: f64, o_max: f64) -> Result<Self> {
        self.o_min = o_min;
        self.o_max = o_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::contract(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.k < 1 {
            return Err(Error::contract("PGD needs K >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::contract(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.o_min < self.o_max) {
            return Err(Error::contract("o_min must be below o_max"));
        }
        Ok(())
    }
}

/// Per-agent perturbations `δ` (row `i` is added to agent `i`'s observation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMatrix {
    delta: Matrix,
    epsilon: f64,
}

impl PerturbationMatrix {
    /// Wraps `delta`, rejecting rows that exceed the budget by more than 1e-12.
    pub fn new(delta: Matrix, epsilon: f64) -> Result<Self> {
        let p = PerturbationMatrix { delta, epsilon };
        if p.max_norm() > epsilon + 1e-12 {
            return Err(Error::contract(format!(
                "perturbation norm {} exceeds budget {epsilon}",
                p.max_norm()
            )));
        }
        Ok(p)
    }

    /// Wraps `delta` whose rows are known to be within budget.
    pub(crate) fn exact(delta: Matrix, epsilon: f64) -> Self {
        PerturbationMatrix { delta, epsilon }
    }

    pub fn zeros(n: usize, d: usize, epsilon: f64) -> Self {
        PerturbationMatrix {
            delta: Matrix::zeros(n, d),
            epsilon,
        }
    }

    pub fn delta(&self) -> &Matrix {
        &self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.delta.row(i).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_i ‖δᵢ‖∞`.
    pub fn max_norm(&self) -> f64 {
        self.delta.max_abs()
    }

    /// Indices of agents receiving a non-zero perturbation.
    pub fn perturbed_agents(&self) -> Vec<usize> {
        (0..self.delta.rows())
            .filter(|&i| self.delta.row(i).iter().any(|&v| v != 0.0))
            .collect()
    }

    /// `obs + δ`.
    pub fn apply(&self, obs: &Matrix) -> Result<Matrix> {
        obs.add(&self.delta)
    }
}
