//! Projected sign-gradient ascent over the joint observation.
//!
//! Each iteration takes a step `α·sign(∇J)` from the current perturbed
//! observation, clips the accumulated perturbation to `[-ε, ε]` and the
//! perturbed observation to `[o_min, o_max]`. With `K = 1` and `α = ε` this is
//! FGSM followed by a domain clip.

use super::align::AlignModel;
use super::{AttackBudget, PerturbationMatrix};
use crate::numkit::Matrix;
use crate::{Error, Result};

/// A differentiable objective to be increased.
pub trait Objective {
    /// Gradient of the objective at `obs` (same shape as `obs`).
    fn gradient(&self, obs: &Matrix) -> Result<Matrix>;
}

impl<F> Objective for F
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    fn gradient(&self, obs: &Matrix) -> Result<Matrix> {
        self(obs)
    }
}

/// `+1`, `-1`, or `0` for exactly zero (unlike `f64::signum`).
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs PGD on `objective`. Rows with `active[i] == false` are never perturbed.
pub fn pgd<O: Objective + ?Sized>(
    objective: &O,
    obs: &Matrix,
    budget: &AttackBudget,
    active: Option<&[bool]>,
) -> Result<PerturbationMatrix> {
    budget.validate()?;
    let (n, d) = obs.shape();
    if let Some(mask) = active {
        if mask.len() != n {
            return Err(Error::contract("row mask length differs from agent count"));
        }
    }
    let eps = budget.epsilon;
    let mut adv = obs.clone();
    for _ in 0..budget.k {
        let grad = objective.gradient(&adv)?;
        if grad.shape() != (n, d) {
            return Err(Error::contract("objective gradient has the wrong shape"));
        }
        for i in 0..n {
            if active.is_some_and(|m| !m[i]) {
                continue;
            }
            for j in 0..d {
                let step = budget.alpha * sign(grad[(i, j)]);
                let delta = (adv[(i, j)] + step - obs[(i, j)]).clamp(-eps, eps);
                adv[(i, j)] = (obs[(i, j)] + delta).clamp(budget.o_min, budget.o_max);
            }
        }
    }
    let mut delta = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            delta[(i, j)] = exact_delta(obs[(i, j)], adv[(i, j)], budget);
        }
    }
    PerturbationMatrix::new(delta, eps)
}

/// `target − o`, nudged by ulps so that `|δ| ≤ ε` and `o + δ` stays in the domain
/// under floating-point addition.
fn exact_delta(o: f64, target: f64, budget: &AttackBudget) -> f64 {
    let mut d = (target - o).clamp(-budget.epsilon, budget.epsilon);
    for _ in 0..8 {
        let s = o + d;
        if s > budget.o_max {
            d = d.next_down();
        } else if s < budget.o_min {
            d = d.next_up();
        } else {
            break;
        }
    }
    d
}

/// Align attack on every agent: maximise the mean reconstruction loss.
pub fn pgd_align_perturb(
    model: &AlignModel,
    obs: &Matrix,
    budget: &AttackBudget,
) -> Result<PerturbationMatrix> {
    pgd(
        &|o: &Matrix| Ok(model.loss_gradient(o)?.1),
        obs,
        budget,
        None,
    )
}

/// Align attack restricted to `victims`; everyone else receives a zero row.
pub fn align_lighter_perturb(
    model: &AlignModel,
    obs: &Matrix,
    victims: &[usize],
    budget: &AttackBudget,
) -> Result<PerturbationMatrix> {
    let mut mask = vec![false; obs.rows()];
    for &v in victims {
        *mask
            .get_mut(v)
            .ok_or_else(|| Error::contract(format!("victim {v} out of range")))? = true;
    }
    pgd(
        &|o: &Matrix| Ok(model.loss_gradient(o)?.1),
        obs,
        budget,
        Some(&mask),
    )
}
