use misalign::attack::{
    hadamard_perturbation, largest_power_of_two_at_most, pgd, random_perturbation, select_lowest,
    select_victims, sylvester_signs, targeted_hadamard, AlignModel, AttackBudget, NoiseKind,
    OuProcess,
};
use misalign::numkit::{Matrix, Mlp};
use misalign::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `f ≡ 0`, so agent `i`'s loss is the mean of its squared row.
fn zero_model(n: usize, d: usize) -> AlignModel {
    AlignModel::from_network(n, d, Mlp::zeros(&[(n - 1) * d, d]).unwrap()).unwrap()
}

fn losses_to_obs(losses: &[f64]) -> Matrix {
    // Row [√(2ℓ), 0] has mean square ℓ.
    let rows: Vec<Vec<f64>> = losses.iter().map(|l| vec![(2.0 * l).sqrt(), 0.0]).collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn targeted_hadamard_hits_lowest_loss_agents() {
    let model = zero_model(3, 2);
    let obs = losses_to_obs(&[0.3, 0.1, 0.2]);
    let p = targeted_hadamard(&model, &obs, 2, 0.1).unwrap();
    assert_eq!(p.perturbed_agents(), vec![1, 2]);
    assert_eq!(p.delta().row(1), &[0.1, 0.1]);
    assert_eq!(p.delta().row(2), &[0.1, -0.1]);

    let one = targeted_hadamard(&model, &obs, 1, 0.1).unwrap();
    assert_eq!(one.perturbed_agents(), vec![1]);
    assert_eq!(one.row_norm(1), 0.1);
}

#[test]
fn targeted_hadamard_with_every_agent_permutes_full_assignment() {
    let model = zero_model(2, 4);
    let obs = Matrix::from_rows(&[vec![0.9, 0.0, 0.0, 0.0], vec![0.1, 0.0, 0.0, 0.0]]).unwrap();
    let full = hadamard_perturbation(2, 4, 0.2).unwrap();
    let p = targeted_hadamard(&model, &obs, 2, 0.2).unwrap();
    let mut got = p.delta().to_rows();
    let mut want = full.delta().to_rows();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, want);
}

#[test]
fn victim_selection_rejects_bad_m() {
    let model = zero_model(3, 2);
    let obs = losses_to_obs(&[0.3, 0.1, 0.2]);
    assert!(matches!(
        select_victims(&model, &obs, 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        select_victims(&model, &obs, 4),
        Err(Error::Contract(_))
    ));
}

fn exhaustive_best(losses: &[f64], m: usize) -> f64 {
    let n = losses.len();
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == m)
        .map(|mask| {
            (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| losses[i])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn m_smallest_minimise_subset_loss(losses in prop::collection::vec(0.0f64..1.0, 1..=8), pick in 0usize..8) {
        let m = pick % losses.len() + 1;
        let chosen = select_lowest(&losses, m).unwrap();
        prop_assert_eq!(chosen.len(), m);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let sum: f64 = chosen.iter().map(|&i| losses[i]).sum();
        prop_assert!((sum - exhaustive_best(&losses, m)).abs() < 1e-12);
    }

    #[test]
    fn hadamard_rows_are_exactly_orthogonal(d in 1usize..=1024, n_frac in 0.0f64..1.0) {
        let width = largest_power_of_two_at_most(d);
        let n = 1 + ((width - 1) as f64 * n_frac) as usize;
        let signs = sylvester_signs(width).unwrap();
        for i in 0..n {
            for j in 0..i {
                let dot: i64 = signs[i].iter().zip(&signs[j]).map(|(a, b)| i64::from(a * b)).sum();
                prop_assert_eq!(dot, 0);
            }
        }
        let p = hadamard_perturbation(n, d, 0.15).unwrap();
        for i in 0..n {
            prop_assert_eq!(p.row_norm(i), 0.15);
            prop_assert!(p.delta().row(i)[width..].iter().all(|&v| v == 0.0));
        }
        let too_many = hadamard_perturbation(width + 1, d, 0.15);
        prop_assert!(matches!(too_many, Err(Error::Infeasible(_))));
    }

    #[test]
    fn pgd_respects_budget_and_domain(
        seed in any::<u64>(),
        eps in 0.01f64..0.5,
        k in 1usize..12,
        obs in prop::collection::vec(-1.0f64..=1.0, 12),
    ) {
        let net = Mlp::new(&[8, 6, 4], seed).unwrap();
        let model = AlignModel::from_network(3, 4, net).unwrap();
        let obs = Matrix::from_vec(3, 4, obs).unwrap();
        let budget = AttackBudget::new(eps, k).unwrap();
        let objective = |o: &Matrix| -> misalign::Result<Matrix> { Ok(model.loss_gradient(o)?.1) };
        let p = pgd(&objective, &obs, &budget, None).unwrap();
        for (d, o) in p.delta().as_slice().iter().zip(obs.as_slice()) {
            prop_assert!(d.abs() <= eps);
            prop_assert!((-1.0..=1.0).contains(&(o + d)));
        }
    }

    #[test]
    fn noise_respects_budget(seed in any::<u64>(), eps in 1e-3f64..1.0, kind in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_perturbation(NoiseKind::ALL[kind], 3, 7, eps, &mut rng).unwrap();
        prop_assert!(p.max_norm() <= eps);
        let mut ou = OuProcess::new(3, 7, eps).unwrap();
        for _ in 0..20 {
            prop_assert!(ou.step(&mut rng).max_norm() <= eps);
        }
    }
}
