use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Attack, Experiment};
use crate::attack::{
    align_lighter_perturb, hadamard_for_victims, hadamard_perturbation, pgd_align_perturb,
    random_perturbation, select_victims, targeted_hadamard, whitebox_perturb, AlignModel,
    AttackBudget, NoiseKind, OuProcess, PerturbationMatrix,
};
use crate::env::{ForageEnv, TrajectoryStep};
use crate::numkit::Matrix;
use crate::policy::NeuralPolicy;
use crate::{Error, Result};

/// Outcome of one evaluation episode plus the coordinates that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub attack: String,
    pub epsilon: f64,
    pub eps_index: usize,
    pub m: usize,
    pub episode: usize,
    /// Environment seed; shared by every attack at the same episode index.
    pub seed: u64,
    pub attack_seed: u64,
    pub master_seed: u64,
    pub total_return: f64,
    pub length: usize,
    /// Largest row norm of the perturbation injected at each step.
    pub perturbation_norms: Vec<f64>,
    /// Agents perturbed at least once during the episode.
    pub victims: Vec<usize>,
}

/// Rollout result before it is tagged with experiment coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub total_return: f64,
    pub length: usize,
    pub perturbation_norms: Vec<f64>,
    pub victims: Vec<usize>,
    /// Clean observations and chosen actions, when requested.
    pub trajectory: Vec<TrajectoryStep>,
}

/// Per-episode attack state: OU noise, Hadamard victim draw and RNG stream.
enum Instance<'a> {
    Benign,
    Align {
        model: &'a AlignModel,
        m: Option<usize>,
        budget: AttackBudget,
    },
    Fixed(PerturbationMatrix),
    Targeted {
        model: &'a AlignModel,
        m: usize,
        epsilon: f64,
    },
    Random {
        kind: NoiseKind,
        epsilon: f64,
        rng: ChaCha8Rng,
    },
    Ou {
        process: OuProcess,
        rng: ChaCha8Rng,
    },
    Whitebox {
        policy: &'a NeuralPolicy,
        budget: AttackBudget,
    },
}

impl<'a> Instance<'a> {
    fn new(exp: &'a Experiment, attack: &'a Attack, epsilon: f64, seed: u64) -> Result<Self> {
        if epsilon == 0.0 || matches!(attack, Attack::None) {
            return Ok(Instance::Benign);
        }
        let n = exp.env.n_agents;
        let d = exp.env.obs_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = || -> Result<AttackBudget> {
            let b = AttackBudget::new(epsilon, exp.k)?;
            match exp.alpha {
                Some(a) => b.with_alpha(a),
                None => Ok(b),
            }
        };
        Ok(match attack {
            Attack::None => Instance::Benign,
            Attack::Align { model, m } => Instance::Align {
                model,
                m: m.filter(|&m| m < n),
                budget: budget()?,
            },
            Attack::Hadamard { m } => match m {
                Some(m) if *m < n => {
                    let victims = sample(&mut rng, n, *m).into_vec();
                    Instance::Fixed(hadamard_for_victims(&victims, n, d, epsilon)?)
                }
                _ => Instance::Fixed(hadamard_perturbation(n, d, epsilon)?),
            },
            Attack::TargetedHadamard { model, m } => Instance::Targeted {
                model,
                m: *m,
                epsilon,
            },
            Attack::Random(kind) => Instance::Random {
                kind: *kind,
                epsilon,
                rng,
            },
            Attack::Ou => Instance::Ou {
                process: OuProcess::new(n, d, epsilon)?,
                rng,
            },
            Attack::Whitebox => Instance::Whitebox {
                policy: exp.victim.neural().ok_or_else(|| {
                    Error::UnsupportedAttack(
                        "the white-box attack needs a neural victim policy".into(),
                    )
                })?,
                budget: budget()?,
            },
        })
    }

    fn perturb(&mut self, obs: &Matrix) -> Result<Option<PerturbationMatrix>> {
        let (n, d) = obs.shape();
        Ok(Some(match self {
            Instance::Benign => return Ok(None),
            Instance::Align {
                model,
                m: None,
                budget,
            } => pgd_align_perturb(model, obs, budget)?,
            Instance::Align {
                model,
                m: Some(m),
                budget,
            } => {
                let victims = select_victims(model, obs, *m)?;
                align_lighter_perturb(model, obs, &victims, budget)?
            }
            Instance::Fixed(p) => p.clone(),
            Instance::Targeted { model, m, epsilon } => {
                targeted_hadamard(model, obs, *m, *epsilon)?
            }
            Instance::Random { kind, epsilon, rng } => {
                random_perturbation(*kind, n, d, *epsilon, rng)?
            }
            Instance::Ou { process, rng } => process.step(rng),
            Instance::Whitebox { policy, budget } => whitebox_perturb(policy, obs, budget)?,
        }))
    }
}

/// Plays one episode: at every step the attack sees the clean joint
/// observation, the victims see `o + δ`, and the environment only ever
/// receives the victims' actions.
pub fn run_episode(
    exp: &Experiment,
    attack: &Attack,
    epsilon: f64,
    seed: u64,
    attack_seed: u64,
    record_trajectory: bool,
) -> Result<EpisodeOutcome> {
    let mut instance = Instance::new(exp, attack, epsilon, attack_seed)?;
    let (mut env, mut obs) = ForageEnv::reset(&exp.env, seed)?;
    let mut out = EpisodeOutcome {
        total_return: 0.0,
        length: 0,
        perturbation_norms: Vec::new(),
        victims: Vec::new(),
        trajectory: Vec::new(),
    };
    let mut hit = vec![false; exp.env.n_agents];
    loop {
        let actions = match instance.perturb(&obs)? {
            Some(p) => {
                out.perturbation_norms.push(p.max_norm());
                for i in p.perturbed_agents() {
                    hit[i] = true;
                }
                exp.victim.act_joint(&p.apply(&obs)?)?
            }
            None => {
                out.perturbation_norms.push(0.0);
                exp.victim.act_joint(&obs)?
            }
        };
        let step = env.step(&actions)?;
        out.total_return += step.reward;
        if record_trajectory {
            out.trajectory.push(TrajectoryStep {
                t: step.length - 1,
                actions,
                reward: step.reward,
                obs: obs.to_rows(),
            });
        }
        if step.done {
            out.length = step.length;
            break;
        }
        obs = step.obs;
    }
    out.victims = (0..hit.len()).filter(|&i| hit[i]).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{collect_observations, train_align_model, AlignTrainConfig};
    use crate::env::GridConfig;
    use crate::policy::{ScriptedPolicy, Victim};
    use std::sync::Arc;

    fn experiment(attacks: Vec<Attack>) -> Experiment {
        let env = GridConfig::preset("8x8-3p-2f-coop").unwrap();
        Experiment {
            victim: Victim::Scripted(ScriptedPolicy::for_config(&env)),
            env,
            attacks,
            epsilons: vec![0.2],
            k: 3,
            alpha: None,
            episodes: 4,
            master_seed: 1,
        }
    }

    fn small_model(exp: &Experiment) -> Arc<AlignModel> {
        let ds = collect_observations(&exp.env, &exp.victim, 300, 2).unwrap();
        let cfg = AlignTrainConfig {
            epochs: 3,
            hidden_sizes: vec![16],
            ..AlignTrainConfig::default()
        };
        Arc::new(train_align_model(&ds, &cfg).unwrap())
    }

    #[test]
    fn none_and_zero_budget_match_benign() {
        let exp = experiment(vec![]);
        let model = small_model(&exp);
        let benign = run_episode(&exp, &Attack::None, 0.0, 42, 0, true).unwrap();
        for attack in [
            Attack::None,
            Attack::Hadamard { m: None },
            Attack::Random(NoiseKind::Uniform),
            Attack::Ou,
            Attack::Align {
                model: model.clone(),
                m: None,
            },
            Attack::TargetedHadamard {
                model: model.clone(),
                m: 1,
            },
        ] {
            let eps = if matches!(attack, Attack::None) {
                0.2
            } else {
                0.0
            };
            let r = run_episode(&exp, &attack, eps, 42, 99, true).unwrap();
            assert_eq!(r, benign);
        }
        assert!(benign.perturbation_norms.iter().all(|&v| v == 0.0));
        assert!(benign.victims.is_empty());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let exp = experiment(vec![]);
        let model = small_model(&exp);
        for attack in [
            Attack::Ou,
            Attack::Random(NoiseKind::Normal),
            Attack::Hadamard { m: Some(2) },
            Attack::Align {
                model: model.clone(),
                m: Some(2),
            },
        ] {
            let a = run_episode(&exp, &attack, 0.15, 7, 8, false).unwrap();
            let b = run_episode(&exp, &attack, 0.15, 7, 8, false).unwrap();
            assert_eq!(a, b);
            assert!(a.length <= exp.env.max_steps);
            assert!(a.perturbation_norms.iter().all(|&v| v <= 0.15));
        }
    }

    #[test]
    fn lighter_attacks_touch_only_m_agents_per_step() {
        let exp = experiment(vec![]);
        let r = run_episode(&exp, &Attack::Hadamard { m: Some(1) }, 0.2, 3, 4, false).unwrap();
        assert_eq!(r.victims.len(), 1);
        assert!(r.perturbation_norms.iter().all(|&v| v == 0.2));
    }

    #[test]
    fn attacks_change_only_what_victims_see() {
        // Replaying the attacked episode's actions in a clean environment must
        // reproduce its rewards exactly.
        let exp = experiment(vec![]);
        let attacked =
            run_episode(&exp, &Attack::Random(NoiseKind::Uniform), 0.2, 5, 6, true).unwrap();
        let (mut env, first) = ForageEnv::reset(&exp.env, 5).unwrap();
        assert_eq!(first.to_rows(), attacked.trajectory[0].obs);
        let mut total = 0.0;
        for (i, step) in attacked.trajectory.iter().enumerate() {
            let r = env.step(&step.actions).unwrap();
            assert_eq!(r.reward, step.reward);
            if let Some(next) = attacked.trajectory.get(i + 1) {
                assert_eq!(r.obs.to_rows(), next.obs);
            }
            total += r.reward;
        }
        assert_eq!(total, attacked.total_return);
    }

    #[test]
    fn whitebox_on_scripted_victim_is_unsupported() {
        let exp = experiment(vec![]);
        let err = run_episode(&exp, &Attack::Whitebox, 0.1, 0, 0, false).unwrap_err();
        assert!(matches!(err, Error::UnsupportedAttack(_)));
    }
}
