//! Random-noise baselines.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::PerturbationMatrix;
use crate::numkit::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `U(−ε, ε)`.
    Uniform,
    /// `N(0, ε²)` clipped to `[−ε, ε]`.
    Normal,
    /// `Exp(λ)` with `λ = −ln(0.01)/ε`, clipped to `[0, ε]`.
    Exponential,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [
        NoiseKind::Uniform,
        NoiseKind::Normal,
        NoiseKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Normal => "normal",
            NoiseKind::Exponential => "exponential",
        }
    }
}

/// Rate at which 99% of exponential draws fall inside the budget.
pub fn exponential_rate(epsilon: f64) -> f64 {
    -(0.01f64).ln() / epsilon
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::contract(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    Ok(())
}

/// I.i.d. noise of the given kind for every entry of an `n × d` matrix.
pub fn random_perturbation<R: Rng + ?Sized>(
    kind: NoiseKind,
    n: usize,
    d: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<PerturbationMatrix> {
    check_epsilon(epsilon)?;
    let mut delta = Matrix::zeros(n, d);
    match kind {
        NoiseKind::Uniform => {
            let dist = Uniform::new_inclusive(-epsilon, epsilon).expect("epsilon > 0");
            delta
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = dist.sample(rng));
        }
        NoiseKind::Normal => {
            for v in delta.as_mut_slice() {
                let z: f64 = StandardNormal.sample(rng);
                *v = (epsilon * z).clamp(-epsilon, epsilon);
            }
        }
        NoiseKind::Exponential => {
            let dist = Exp::new(exponential_rate(epsilon)).expect("positive rate");
            delta
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = dist.sample(rng).min(epsilon));
        }
    }
    PerturbationMatrix::new(delta, epsilon)
}

/// Temporally correlated Ornstein–Uhlenbeck noise,
/// `δₜ₊₁ = δₜ + θ(μ − δₜ)Δt + σ√Δt·N(0, 1)`.
///
/// The internal state is never clipped; each emitted matrix is.
#[derive(Debug, Clone, PartialEq)]
pub struct OuProcess {
    state: Matrix,
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    epsilon: f64,
}

impl OuProcess {
    /// `μ = ε`, `θ = ε`, `σ = ε/10`, `Δt = 1`, starting from `δ₀ = 0`.
    pub fn new(n: usize, d: usize, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(OuProcess {
            state: Matrix::zeros(n, d),
            mu: epsilon,
            theta: epsilon,
            sigma: epsilon / 10.0,
            dt: 1.0,
            epsilon,
        })
    }

    pub fn with_state(mut self, state: Matrix) -> Result<Self> {
        if state.shape() != self.state.shape() {
            return Err(Error::contract("OU state shape mismatch"));
        }
        self.state = state;
        Ok(self)
    }

    pub fn state(&self) -> &Matrix {
        &self.state
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PerturbationMatrix {
        let noise_scale = self.sigma * self.dt.sqrt();
        for v in self.state.as_mut_slice() {
            let z: f64 = StandardNormal.sample(rng);
            *v += self.theta * (self.mu - *v) * self.dt + noise_scale * z;
        }
        let eps = self.epsilon;
        PerturbationMatrix::new(self.state.map(|v| v.clamp(-eps, eps)), eps)
            .expect("clipped to budget")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_rate_value() {
        assert!((exponential_rate(0.1) - 46.051_701_859_880_91).abs() < 1e-9);
    }

    #[test]
    fn exponential_pre_clip_mass_inside_budget() {
        let eps = 0.1;
        let dist = Exp::new(exponential_rate(eps)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 1_000_000;
        let inside = (0..draws).filter(|_| dist.sample(&mut rng) <= eps).count();
        let frac = inside as f64 / draws as f64;
        assert!((frac - 0.99).abs() <= 0.001, "{frac}");
    }

    #[test]
    fn uniform_mean_is_centred() {
        let eps = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_perturbation(NoiseKind::Uniform, 1000, 1000, eps, &mut rng).unwrap();
        let n = 1_000_000.0;
        let mean = p.delta().as_slice().iter().sum::<f64>() / n;
        let sd = eps / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{mean}");
    }

    #[test]
    fn every_kind_respects_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in NoiseKind::ALL {
            let p = random_perturbation(kind, 4, 50, 0.05, &mut rng).unwrap();
            assert!(p.max_norm() <= 0.05);
            if kind == NoiseKind::Exponential {
                assert!(p.delta().as_slice().iter().all(|&v| v >= 0.0));
            }
        }
        assert!(random_perturbation(NoiseKind::Normal, 1, 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn ou_deterministic_drift() {
        let eps = 0.3;
        let mut ou = OuProcess::new(2, 3, eps).unwrap();
        ou.sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ou.step(&mut rng);
        assert!(p
            .delta()
            .as_slice()
            .iter()
            .all(|&v| (v - eps * eps).abs() < 1e-15));
    }

    #[test]
    fn ou_mean_is_fixed_point_without_noise() {
        let eps = 0.2;
        let mut ou = OuProcess::new(1, 4, eps)
            .unwrap()
            .with_state(Matrix::filled(1, 4, eps))
            .unwrap();
        ou.sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ou.step(&mut rng);
        assert_eq!(p.delta().as_slice(), &[eps; 4]);
    }

    #[test]
    fn ou_emits_clipped_but_keeps_raw_state() {
        let eps = 0.1;
        let mut ou = OuProcess::new(3, 5, eps).unwrap();
        ou.sigma = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut saw_outside = false;
        for _ in 0..50 {
            let p = ou.step(&mut rng);
            assert!(p.max_norm() <= eps);
            saw_outside |= ou.state().max_abs() > eps;
        }
        assert!(saw_outside);
    }
}
