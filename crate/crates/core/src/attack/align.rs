//! Observation-reconstruction ("alignment") network.
//!
//! A single network `f` is trained so that `f(o₋ᵢ) ≈ oᵢ` for every agent `i`,
//! where `o₋ᵢ` concatenates the other agents' rows in ascending index order. Its
//! mean squared error is low on consistent joint observations and grows when the
//! agents' views disagree, which is what the Align attack maximises.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ObservationDataset;
use crate::numkit::{gather_rows, minibatches, AdamState, Matrix, Mlp};
use crate::seed::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        AlignTrainConfig {
            epochs: 100,
            batch: 64,
            lr: 1e-4,
            hidden_sizes: vec![256, 256, 256],
            seed: 0,
        }
    }
}

/// Trained reconstruction network plus its training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignModel {
    pub n: usize,
    pub d: usize,
    pub network: Mlp,
    pub epochs: usize,
    /// Mean minibatch loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Mean reconstruction loss over the whole training set after training.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignLoss {
    /// Mean of `per_agent`.
    pub total: f64,
    /// `per_agent[i]` = mean squared error of `f(o₋ᵢ)` against `oᵢ`.
    pub per_agent: Vec<f64>,
}

impl AlignModel {
    /// Wraps an existing network; it must map `(n−1)·d` inputs to `d` outputs.
    pub fn from_network(n: usize, d: usize, network: Mlp) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract("alignment needs at least two agents"));
        }
        if network.input_size() != (n - 1) * d || network.output_size() != d {
            return Err(Error::contract(format!(
                "network {:?} does not map {} inputs to {d} outputs",
                network.layer_sizes(),
                (n - 1) * d
            )));
        }
        Ok(AlignModel {
            n,
            d,
            network,
            epochs: 0,
            loss_curve: Vec::new(),
            final_loss: f64::NAN,
        })
    }

    fn check_obs(&self, obs: &Matrix) -> Result<()> {
        if obs.shape() != (self.n, self.d) {
            return Err(Error::contract(format!(
                "joint observation {:?}, model expects ({}, {})",
                obs.shape(),
                self.n,
                self.d
            )));
        }
        Ok(())
    }

    /// Row `i` holds `o₋ᵢ`.
    pub fn leave_one_out_inputs(&self, obs: &Matrix) -> Result<Matrix> {
        self.check_obs(obs)?;
        Ok(leave_one_out(obs))
    }

    /// `f(o₋ᵢ)` for every agent, one row each.
    pub fn reconstruct(&self, obs: &Matrix) -> Result<Matrix> {
        self.network.forward_batch(&self.leave_one_out_inputs(obs)?)
    }

    pub fn loss(&self, obs: &Matrix) -> Result<AlignLoss> {
        let recon = self.reconstruct(obs)?;
        Ok(loss_from(&recon, obs))
    }

    /// Loss and its exact gradient with respect to the whole joint observation.
    ///
    /// Row `j` collects the gradient flowing through every input slot that holds
    /// `oⱼ` plus the gradient of its own target term.
    pub fn loss_gradient(&self, obs: &Matrix) -> Result<(AlignLoss, Matrix)> {
        let inputs = self.leave_one_out_inputs(obs)?;
        let trace = self.network.forward_traced(&inputs)?;
        let recon = trace.output();
        let loss = loss_from(recon, obs);
        let (n, d) = (self.n, self.d);
        let scale = 2.0 / (n * d) as f64;
        let residual_grad = recon.sub(obs)?.scale(scale);
        let (_, input_grad) = self.network.backward_traced(&trace, &residual_grad)?;
        let mut grad = residual_grad.scale(-1.0);
        for i in 0..n {
            let g_in = input_grad.row(i);
            for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
                for (dst, src) in grad
                    .row_mut(j)
                    .iter_mut()
                    .zip(&g_in[slot * d..(slot + 1) * d])
                {
                    *dst += src;
                }
            }
        }
        Ok((loss, grad))
    }
}

fn leave_one_out(obs: &Matrix) -> Matrix {
    let (n, d) = obs.shape();
    let mut out = Matrix::zeros(n, (n - 1) * d);
    for i in 0..n {
        let row = out.row_mut(i);
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            row[slot * d..(slot + 1) * d].copy_from_slice(obs.row(j));
        }
    }
    out
}

fn loss_from(recon: &Matrix, obs: &Matrix) -> AlignLoss {
    let d = obs.cols() as f64;
    let per_agent: Vec<f64> = (0..obs.rows())
        .map(|i| {
            recon
                .row(i)
                .iter()
                .zip(obs.row(i))
                .map(|(r, o)| (r - o) * (r - o))
                .sum::<f64>()
                / d
        })
        .collect();
    let total = per_agent.iter().sum::<f64>() / per_agent.len() as f64;
    AlignLoss { total, per_agent }
}

/// Per-agent and mean reconstruction loss of `obs` under `model`.
pub fn align_loss(model: &AlignModel, obs: &Matrix) -> Result<AlignLoss> {
    model.loss(obs)
}

/// Indices of the `m` smallest losses (ties by ascending index), returned sorted.
pub fn select_lowest(losses: &[f64], m: usize) -> Result<Vec<usize>> {
    if m < 1 || m > losses.len() {
        return Err(Error::contract(format!(
            "victim count {m} outside 1..={}",
            losses.len()
        )));
    }
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    idx.truncate(m);
    idx.sort_unstable();
    Ok(idx)
}

/// The `m` agents whose observations the model reconstructs best.
pub fn select_victims(model: &AlignModel, obs: &Matrix, m: usize) -> Result<Vec<usize>> {
    select_lowest(&model.loss(obs)?.per_agent, m)
}

/// Minibatch Adam on every `(o₋ᵢ, oᵢ)` pair of the dataset.
pub fn train_align_model(
    dataset: &ObservationDataset,
    config: &AlignTrainConfig,
) -> Result<AlignModel> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let (n, d) = (dataset.n, dataset.d);
    if n < 2 {
        return Err(Error::contract("alignment needs at least two agents"));
    }
    let mut sizes = vec![(n - 1) * d];
    sizes.extend(&config.hidden_sizes);
    sizes.push(d);
    let mut model = AlignModel::from_network(n, d, Mlp::new(&sizes, config.seed)?)?;

    let pairs = dataset.len() * n;
    let mut inputs = Matrix::zeros(pairs, (n - 1) * d);
    let mut targets = Matrix::zeros(pairs, d);
    for (t, obs) in dataset.observations.iter().enumerate() {
        let loo = leave_one_out(obs);
        for i in 0..n {
            inputs.row_mut(t * n + i).copy_from_slice(loo.row(i));
            targets.row_mut(t * n + i).copy_from_slice(obs.row(i));
        }
    }

    let mut adam = AdamState::new(&model.network, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "align-shuffle", 0, 0));
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in minibatches(pairs, config.batch, &mut rng) {
            let x = gather_rows(&inputs, &batch);
            let y = gather_rows(&targets, &batch);
            let trace = model.network.forward_traced(&x)?;
            let residual = trace.output().sub(&y)?;
            epoch_loss += residual.as_slice().iter().map(|r| r * r).sum::<f64>() / d as f64;
            let grad = residual.scale(2.0 / (batch.len() * d) as f64);
            let (g, _) = model.network.backward_traced(&trace, &grad)?;
            adam.step(&mut model.network, &g)?;
        }
        let mean = epoch_loss / pairs as f64;
        log::debug!("align epoch {}: loss {mean:.6}", epoch + 1);
        model.loss_curve.push(mean);
    }
    model.epochs = config.epochs;
    let recon = model.network.forward_batch(&inputs)?;
    let residual = recon.sub(&targets)?;
    model.final_loss = residual.as_slice().iter().map(|r| r * r).sum::<f64>() / (pairs * d) as f64;
    Ok(model)
}
