use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ForageEnv, GridConfig};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::numkit::Matrix;
use crate::policy::Victim;
use crate::seed::{derive_seed, digest_hex};
use crate::{Error, Result};

/// Benign joint observations gathered before the attack starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDataset {
    pub n: usize,
    pub d: usize,
    pub observations: Vec<Matrix>,
}

/// Sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T_c")]
    pub t_c: usize,
    pub env_config_digest: String,
    pub seed: u64,
}

/// `dataset.jsonl` → `dataset.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl ObservationDataset {
    pub fn new(n: usize, d: usize, observations: Vec<Matrix>) -> Result<Self> {
        if let Some(bad) = observations.iter().position(|o| o.shape() != (n, d)) {
            return Err(Error::contract(format!(
                "observation {bad} has shape {:?}, expected ({n}, {d})",
                observations[bad].shape()
            )));
        }
        Ok(ObservationDataset { n, d, observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Writes one JSON array of `n` rows per line plus the sidecar.
    pub fn save(&self, path: &Path, meta: &DatasetMeta) -> Result<()> {
        let rows: Vec<Vec<Vec<f64>>> = self.observations.iter().map(Matrix::to_rows).collect();
        write_jsonl(path, &rows)?;
        write_json(&sidecar_path(path), meta)
    }

    pub fn load(path: &Path) -> Result<(Self, DatasetMeta)> {
        let meta: DatasetMeta = read_json(&sidecar_path(path))?;
        let rows: Vec<Vec<Vec<f64>>> = read_jsonl(path)?;
        let observations = rows
            .iter()
            .map(|r| Matrix::from_rows(r))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::load(path, e))?;
        let ds = ObservationDataset::new(meta.n, meta.d, observations)
            .map_err(|e| Error::load(path, e))?;
        if ds.len() != meta.t_c {
            return Err(Error::load(
                path,
                format!(
                    "sidecar says T_c = {} but file holds {} lines",
                    meta.t_c,
                    ds.len()
                ),
            ));
        }
        Ok((ds, meta))
    }
}

impl DatasetMeta {
    pub fn describe(config: &GridConfig, t_c: usize, seed: u64) -> Self {
        DatasetMeta {
            n: config.n_agents,
            d: config.obs_dim(),
            t_c,
            env_config_digest: config_digest(config),
            seed,
        }
    }
}

/// SHA-256 of the canonical JSON encoding of the environment config.
pub fn config_digest(config: &GridConfig) -> String {
    digest_hex(
        serde_json::to_string(config)
            .expect("config serializes")
            .as_bytes(),
    )
}

/// Records `t_c` benign joint observations, resetting whenever an episode ends.
pub fn collect_observations(
    config: &GridConfig,
    victim: &Victim,
    t_c: usize,
    seed: u64,
) -> Result<ObservationDataset> {
    if t_c < 1 {
        return Err(Error::contract("collection period must be >= 1"));
    }
    let mut observations = Vec::with_capacity(t_c);
    let mut episode = 0;
    while observations.len() < t_c {
        let (mut env, mut obs) =
            ForageEnv::reset(config, derive_seed(seed, "collect", 0, episode))?;
        episode += 1;
        loop {
            observations.push(obs.clone());
            if observations.len() == t_c {
                break;
            }
            let r = env.step(&victim.act_joint(&obs)?)?;
            if r.done {
                break;
            }
            obs = r.obs;
        }
    }
    ObservationDataset::new(config.n_agents, config.obs_dim(), observations)
}
