use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attack::{AlignModel, NoiseKind};
use crate::env::GridConfig;
use crate::io::read_json;
use crate::policy::{NeuralPolicy, ScriptedPolicy, Victim};
use crate::{Error, Result};

pub const DEFAULT_EPISODES: usize = 50;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VictimSpec {
    Scripted,
    Neural { path: PathBuf },
}

/// Attack entry of an experiment. `m` is the number of victims (all agents
/// when absent); `model` names an alignment-network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    Align {
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default)]
        m: Option<usize>,
    },
    Hadamard {
        #[serde(default)]
        m: Option<usize>,
    },
    TargetedHadamard {
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default)]
        m: Option<usize>,
    },
    Random {
        dist: NoiseKind,
    },
    Ou,
    Whitebox,
}

impl AttackSpec {
    pub fn victims(&self) -> Option<usize> {
        match self {
            AttackSpec::Align { m, .. }
            | AttackSpec::Hadamard { m }
            | AttackSpec::TargetedHadamard { m, .. } => *m,
            _ => None,
        }
    }

    pub fn model_path(&self) -> Option<&Path> {
        match self {
            AttackSpec::Align { model, .. } | AttackSpec::TargetedHadamard { model, .. } => {
                model.as_deref()
            }
            _ => None,
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(
            self,
            AttackSpec::Align { .. } | AttackSpec::TargetedHadamard { .. }
        )
    }

    /// Fills a missing model path with `path`.
    pub fn with_default_model(mut self, path: &Path) -> Self {
        if let AttackSpec::Align { model, .. } | AttackSpec::TargetedHadamard { model, .. } =
            &mut self
        {
            model.get_or_insert_with(|| path.to_path_buf());
        }
        self
    }

    pub fn map_model_path(mut self, f: impl Fn(&Path) -> PathBuf) -> Self {
        if let AttackSpec::Align { model: Some(p), .. }
        | AttackSpec::TargetedHadamard { model: Some(p), .. } = &mut self
        {
            *p = f(p);
        }
        self
    }
}

/// Everything needed to run one sweep. `alpha`, when set, replaces the default
/// step size `ε/K` at every budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: GridConfig,
    pub victim: VictimSpec,
    pub attacks: Vec<AttackSpec>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    pub master_seed: u64,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_episodes() -> usize {
    DEFAULT_EPISODES
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let n = self.env.n_agents;
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("alpha must be > 0, got {a}")));
            }
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon sweep is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!(
                "epsilon values must be > 0 (the benign row is implicit), got {e}"
            )));
        }
        let mut labels = HashSet::new();
        for spec in &self.attacks {
            if let Some(m) = spec.victims() {
                if m < 1 || m > n {
                    return Err(Error::Config(format!("m = {m} outside 1..={n}")));
                }
            }
            let label = attack_label(spec, n);
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!("attack {label} listed twice")));
            }
        }
        Ok(())
    }

    /// Loads every referenced artifact. Model files shared by several attacks
    /// are read once.
    pub fn resolve(&self) -> Result<Experiment> {
        self.validate()?;
        let n = self.env.n_agents;
        let d = self.env.obs_dim();
        let victim = match &self.victim {
            VictimSpec::Scripted => Victim::Scripted(ScriptedPolicy::for_config(&self.env)),
            VictimSpec::Neural { path } => {
                let policy: NeuralPolicy = load_artifact(path)?;
                if policy.obs_dim() != d {
                    return Err(Error::load(
                        path,
                        format!(
                            "policy expects d = {}, environment has d = {d}",
                            policy.obs_dim()
                        ),
                    ));
                }
                Victim::Neural(policy)
            }
        };
        let mut models: BTreeMap<PathBuf, Arc<AlignModel>> = BTreeMap::new();
        let mut attacks = Vec::with_capacity(self.attacks.len());
        for spec in &self.attacks {
            let model = match spec.model_path() {
                Some(path) => Some(match models.get(path) {
                    Some(m) => Arc::clone(m),
                    None => {
                        let m: AlignModel = load_artifact(path)?;
                        if (m.n, m.d) != (n, d) {
                            return Err(Error::contract(format!(
                                "model {} was trained for (n, d) = ({}, {}), environment has ({n}, {d})",
                                path.display(),
                                m.n,
                                m.d
                            )));
                        }
                        let m = Arc::new(m);
                        models.insert(path.to_path_buf(), Arc::clone(&m));
                        m
                    }
                }),
                None if spec.needs_model() => {
                    return Err(Error::Config(format!(
                        "attack {} needs an alignment model path",
                        attack_label(spec, n)
                    )))
                }
                None => None,
            };
            let attack = match spec {
                AttackSpec::None => Attack::None,
                AttackSpec::Align { m, .. } => Attack::Align {
                    model: model.expect("checked above"),
                    m: *m,
                },
                AttackSpec::Hadamard { m } => Attack::Hadamard { m: *m },
                AttackSpec::TargetedHadamard { m, .. } => Attack::TargetedHadamard {
                    model: model.expect("checked above"),
                    m: m.unwrap_or(n),
                },
                AttackSpec::Random { dist } => Attack::Random(*dist),
                AttackSpec::Ou => Attack::Ou,
                AttackSpec::Whitebox => {
                    if victim.neural().is_none() {
                        return Err(Error::UnsupportedAttack(
                            "the white-box attack needs a neural victim policy".into(),
                        ));
                    }
                    Attack::Whitebox
                }
            };
            attacks.push(attack);
        }
        Ok(Experiment {
            env: self.env.clone(),
            victim,
            attacks,
            epsilons: self.epsilons.clone(),
            k: self.k,
            alpha: self.alpha,
            episodes: self.episodes,
            master_seed: self.master_seed,
        })
    }
}

/// An attack with its artifacts loaded.
#[derive(Debug, Clone)]
pub enum Attack {
    None,
    /// Align on all agents, or lighter Align on the `m` lowest-loss agents.
    Align {
        model: Arc<AlignModel>,
        m: Option<usize>,
    },
    /// Hadamard rows on all agents, or on `m` agents drawn at random once per episode.
    Hadamard {
        m: Option<usize>,
    },
    TargetedHadamard {
        model: Arc<AlignModel>,
        m: usize,
    },
    Random(NoiseKind),
    Ou,
    Whitebox,
}

impl Attack {
    pub fn label(&self, n: usize) -> String {
        match self {
            Attack::None => "none".into(),
            Attack::Align { m, .. } => with_m("align", *m, n),
            Attack::Hadamard { m } => with_m("hadamard", *m, n),
            Attack::TargetedHadamard { m, .. } => with_m("targeted_hadamard", Some(*m), n),
            Attack::Random(kind) => format!("random_{}", kind.name()),
            Attack::Ou => "ou".into(),
            Attack::Whitebox => "whitebox".into(),
        }
    }

    /// Number of agents the attack perturbs.
    pub fn victim_count(&self, n: usize) -> usize {
        match self {
            Attack::Align { m, .. } | Attack::Hadamard { m } => m.unwrap_or(n),
            Attack::TargetedHadamard { m, .. } => *m,
            Attack::None => 0,
            _ => n,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Attack::Random(_) | Attack::Ou)
    }
}

fn with_m(base: &str, m: Option<usize>, n: usize) -> String {
    match m {
        Some(m) if m < n => format!("{base}_m{m}"),
        _ => base.to_string(),
    }
}

fn attack_label(spec: &AttackSpec, n: usize) -> String {
    match spec {
        AttackSpec::None => "none".into(),
        AttackSpec::Align { m, .. } => with_m("align", *m, n),
        AttackSpec::Hadamard { m } => with_m("hadamard", *m, n),
        AttackSpec::TargetedHadamard { m, .. } => with_m("targeted_hadamard", *m, n),
        AttackSpec::Random { dist } => format!("random_{}", dist.name()),
        AttackSpec::Ou => "ou".into(),
        AttackSpec::Whitebox => "whitebox".into(),
    }
}

/// Reads a JSON artifact, reporting an unreadable file as a load error.
fn load_artifact<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| match e {
        Error::Io { path, source } => Error::load(path, source),
        other => other,
    })
}

/// A resolved experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub env: GridConfig,
    pub victim: Victim,
    pub attacks: Vec<Attack>,
    pub epsilons: Vec<f64>,
    pub k: usize,
    pub alpha: Option<f64>,
    pub episodes: usize,
    pub master_seed: u64,
}
