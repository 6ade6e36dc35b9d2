//! The experiment JSON file shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use misalign::attack::AlignTrainConfig;
use misalign::env::GridConfig;
use misalign::eval::{AttackSpec, ExperimentConfig, VictimSpec, DEFAULT_EPISODES, DEFAULT_K};
use misalign::policy::BcConfig;

use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_FILE: &str = "align_model.json";
pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfigFile {
    pub env: GridConfig,
    pub victim: VictimSpec,
    #[serde(default)]
    pub collection: CollectionSection,
    #[serde(default)]
    pub align_training: AlignTrainingSection,
    #[serde(default)]
    pub policy_training: PolicyTrainingSection,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    pub sweep: SweepSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionSection {
    #[serde(rename = "T_c", default = "default_t_c")]
    pub t_c: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignTrainingSection {
    #[serde(default = "default_align_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_align_lr")]
    pub lr: f64,
    #[serde(default = "default_align_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Behaviour cloning of the scripted team, producing the neural victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyTrainingSection {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_bc_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_bc_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_bc_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_t_c() -> usize {
    5000
}
fn default_align_epochs() -> usize {
    AlignTrainConfig::default().epochs
}
fn default_batch() -> usize {
    64
}
fn default_align_lr() -> f64 {
    AlignTrainConfig::default().lr
}
fn default_align_hidden() -> Vec<usize> {
    AlignTrainConfig::default().hidden_sizes
}
fn default_pairs() -> usize {
    20_000
}
fn default_bc_hidden() -> Vec<usize> {
    BcConfig::default().hidden_sizes
}
fn default_bc_epochs() -> usize {
    BcConfig::default().epochs
}
fn default_bc_lr() -> f64 {
    BcConfig::default().lr
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_episodes() -> usize {
    DEFAULT_EPISODES
}

impl Default for CollectionSection {
    fn default() -> Self {
        CollectionSection {
            t_c: default_t_c(),
            seed: 0,
        }
    }
}

impl Default for AlignTrainingSection {
    fn default() -> Self {
        AlignTrainingSection {
            epochs: default_align_epochs(),
            batch: default_batch(),
            lr: default_align_lr(),
            hidden_sizes: default_align_hidden(),
            seed: 0,
        }
    }
}

impl Default for PolicyTrainingSection {
    fn default() -> Self {
        PolicyTrainingSection {
            pairs: default_pairs(),
            hidden_sizes: default_bc_hidden(),
            epochs: default_bc_epochs(),
            batch: default_batch(),
            lr: default_bc_lr(),
            seed: 0,
        }
    }
}

impl AlignTrainingSection {
    pub fn to_config(&self) -> AlignTrainConfig {
        AlignTrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            hidden_sizes: self.hidden_sizes.clone(),
            seed: self.seed,
        }
    }
}

impl PolicyTrainingSection {
    pub fn to_config(&self) -> BcConfig {
        BcConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

/// A parsed config with every relative path anchored at the config's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub file: CliConfigFile,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn output_dir(&self) -> &Path {
        &self.file.output_dir
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir().join(DATASET_FILE)
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir().join(MODEL_FILE)
    }

    /// Where the neural victim lives: the configured path, or the output dir.
    pub fn policy_path(&self) -> PathBuf {
        match &self.file.victim {
            VictimSpec::Neural { path } => path.clone(),
            VictimSpec::Scripted => self.output_dir().join(POLICY_FILE),
        }
    }

    /// The evaluation sweep, with missing model paths pointing at the default model.
    pub fn experiment(&self) -> ExperimentConfig {
        let model = self.model_path();
        ExperimentConfig {
            env: self.file.env.clone(),
            victim: self.file.victim.clone(),
            attacks: self
                .file
                .attacks
                .iter()
                .cloned()
                .map(|a| a.with_default_model(&model))
                .collect(),
            epsilons: self.file.sweep.epsilons.clone(),
            k: self.file.sweep.k,
            alpha: self.file.sweep.alpha,
            episodes: self.file.sweep.episodes,
            master_seed: self.file.sweep.master_seed,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let f = &self.file;
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(CliError::schema(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        positive("collection.T_c", f.collection.t_c)?;
        positive("align_training.batch", f.align_training.batch)?;
        positive("policy_training.batch", f.policy_training.batch)?;
        positive("policy_training.pairs", f.policy_training.pairs)?;
        for (name, lr) in [
            ("align_training.lr", f.align_training.lr),
            ("policy_training.lr", f.policy_training.lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(CliError::schema(format!("{name} must be > 0")));
            }
        }
        self.experiment()
            .validate()
            .map_err(|e| CliError::schema(e.to_string()))
    }
}

fn anchor(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads, schema-checks and validates a config file. Errors name the JSON path
/// of the offending field.
pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut file: CliConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::schema(format!(
            "{}: field `{field}`: {}",
            path.display(),
            e.inner()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    file.output_dir = anchor(&base, &file.output_dir);
    if let VictimSpec::Neural { path: p } = &mut file.victim {
        *p = anchor(&base, p);
    }
    file.attacks = file
        .attacks
        .into_iter()
        .map(|a| a.map_model_path(|p| anchor(&base, p)))
        .collect();
    let loaded = LoadedConfig {
        file,
        path: path.to_path_buf(),
    };
    loaded.validate()?;
    Ok(loaded)
}
