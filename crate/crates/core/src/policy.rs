//! Victim policies: a scripted cooperative expert and its behaviour clone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{chebyshev, manhattan, Action, ForageEnv, GridConfig, Pos};
use crate::numkit::{gather_rows, minibatches, AdamState, Matrix, Mlp};
use crate::seed::derive_seed;
use crate::{Error, Result};

/// What a policy needs to decode an observation row back into grid terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub n_foods: usize,
    pub n_agents: usize,
    pub width: usize,
    pub height: usize,
    pub level_norm: f64,
}

impl ObsLayout {
    pub fn of(config: &GridConfig) -> Self {
        ObsLayout {
            n_foods: config.n_foods,
            n_agents: config.n_agents,
            width: config.width,
            height: config.height,
            level_norm: config.level_norm(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        3 * (self.n_foods + self.n_agents)
    }
}

#[derive(Debug, Clone, Copy)]
struct Seen {
    pos: Pos,
    level: i64,
}

const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

/// Deterministic heuristic expert. Reads only the acting agent's own row.
///
/// Targets the lowest-level visible food the visible team can lift (ties by food
/// index), loads when orthogonally adjacent, and otherwise steps towards the
/// nearest free cell next to the target, preferring the move that most reduces
/// Chebyshev and then Manhattan distance (ties: Up, Down, Left, Right). With no
/// food in sight it sweeps the grid boustrophedon-style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPolicy {
    layout: ObsLayout,
}

impl ScriptedPolicy {
    pub fn new(layout: ObsLayout) -> Self {
        ScriptedPolicy { layout }
    }

    pub fn for_config(config: &GridConfig) -> Self {
        ScriptedPolicy::new(ObsLayout::of(config))
    }

    pub fn layout(&self) -> &ObsLayout {
        &self.layout
    }

    fn decode(&self, t: &[f64]) -> Option<Seen> {
        if !(t[0] >= -0.5 && t[1] >= -0.5) {
            return None;
        }
        let cell =
            |v: f64, size: usize| (v * size as f64).round().clamp(0.0, (size - 1) as f64) as usize;
        Some(Seen {
            pos: (
                cell(t[0], self.layout.width),
                cell(t[1], self.layout.height),
            ),
            level: (t[2] * self.layout.level_norm).round().max(0.0) as i64,
        })
    }

    fn neighbour(&self, (x, y): Pos, a: Action) -> Option<Pos> {
        let (dx, dy) = a.offset();
        let nx = x.checked_add_signed(dx)?;
        let ny = y.checked_add_signed(dy)?;
        (nx < self.layout.width && ny < self.layout.height).then_some((nx, ny))
    }

    pub fn act(&self, row: &[f64]) -> Result<Action> {
        let d = self.layout.obs_dim();
        if row.len() != d {
            return Err(Error::contract(format!(
                "observation row has length {}, expected {d}",
                row.len()
            )));
        }
        let triples: Vec<&[f64]> = row.chunks(3).collect();
        let nf = self.layout.n_foods;
        let Some(me) = self.decode(triples[nf]) else {
            return Ok(Action::None);
        };
        let others: Vec<Seen> = triples[nf + 1..]
            .iter()
            .filter_map(|t| self.decode(t))
            .collect();
        let foods: Vec<(usize, Seen)> = triples[..nf]
            .iter()
            .enumerate()
            .filter_map(|(i, t)| self.decode(t).map(|s| (i, s)))
            .collect();
        if foods.is_empty() {
            return Ok(self.sweep(me.pos));
        }

        let team: i64 = me.level + others.iter().map(|o| o.level).sum::<i64>();
        let by_level =
            |a: &&(usize, Seen), b: &&(usize, Seen)| (a.1.level, a.0).cmp(&(b.1.level, b.0));
        let target = foods
            .iter()
            .filter(|(_, f)| f.level <= team)
            .min_by(by_level)
            .or_else(|| foods.iter().min_by(by_level))
            .expect("foods is non-empty")
            .1
            .pos;
        if manhattan(me.pos, target) == 1 {
            return Ok(Action::Load);
        }

        let blocked =
            |p: Pos| foods.iter().any(|(_, f)| f.pos == p) || others.iter().any(|o| o.pos == p);
        let around: Vec<Pos> = MOVES
            .iter()
            .filter_map(|&a| self.neighbour(target, a))
            .collect();
        let free: Vec<Pos> = around.iter().copied().filter(|&p| !blocked(p)).collect();
        let goals = if free.is_empty() { around } else { free };
        let Some(goal) = goals.into_iter().min_by_key(|&g| manhattan(me.pos, g)) else {
            return Ok(Action::None);
        };

        let best = MOVES
            .iter()
            .filter_map(|&a| self.neighbour(me.pos, a).map(|p| (a, p)))
            .filter(|&(_, p)| !blocked(p))
            .min_by_key(|&(_, p)| (chebyshev(p, goal), manhattan(p, goal)));
        Ok(best.map_or(Action::None, |(a, _)| a))
    }

    fn sweep(&self, (x, y): Pos) -> Action {
        let (w, h) = (self.layout.width, self.layout.height);
        let vertical = if y + 1 < h { Action::Down } else { Action::Up };
        if y % 2 == 0 {
            if x + 1 < w {
                Action::Right
            } else {
                vertical
            }
        } else if x > 0 {
            Action::Left
        } else {
            vertical
        }
    }
}

/// Differentiable victim: an MLP mapping one observation row to six action logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct NeuralPolicy {
    network: Mlp,
}

/// On-disk format: network JSON behind a small header.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub policy_type: String,
    pub d: usize,
    pub action_count: usize,
    pub network: Mlp,
}

impl TryFrom<PolicyFile> for NeuralPolicy {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        if f.policy_type != "neural" {
            return Err(Error::contract(format!(
                "unsupported policy type {:?}",
                f.policy_type
            )));
        }
        if f.d != f.network.input_size() || f.action_count != f.network.output_size() {
            return Err(Error::contract(
                "policy header disagrees with network shape",
            ));
        }
        NeuralPolicy::new(f.network)
    }
}

impl From<NeuralPolicy> for PolicyFile {
    fn from(p: NeuralPolicy) -> Self {
        PolicyFile {
            policy_type: "neural".into(),
            d: p.network.input_size(),
            action_count: p.network.output_size(),
            network: p.network,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl NeuralPolicy {
    pub fn new(network: Mlp) -> Result<Self> {
        if network.output_size() != Action::COUNT {
            return Err(Error::contract(format!(
                "policy network must emit {} logits, got {}",
                Action::COUNT,
                network.output_size()
            )));
        }
        Ok(NeuralPolicy { network })
    }

    pub fn network(&self) -> &Mlp {
        &self.network
    }

    pub fn obs_dim(&self) -> usize {
        self.network.input_size()
    }

    pub fn probabilities(&self, row: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.network.forward(row)?))
    }

    /// Greedy action; ties resolve to the lowest action index.
    pub fn act(&self, row: &[f64]) -> Result<Action> {
        let logits = self.network.forward(row)?;
        Ok(Action::from_index(argmax(&logits)).expect("six logits"))
    }

    /// `π(row, action)` and its exact gradient with respect to `row`.
    pub fn prob_and_grad(&self, row: &[f64], action: Action) -> Result<(f64, Vec<f64>)> {
        let probs = self.probabilities(row)?;
        let a = action.index();
        let pa = probs[a];
        // ∂p_a/∂z_j = p_a (1[j = a] − p_j)
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| pa * (f64::from(u8::from(j == a)) - pj))
            .collect();
        let (_, grad) = self.network.backward(row, &dlogits)?;
        Ok((pa, grad))
    }
}

/// Any victim the evaluation harness can deploy.
#[derive(Debug, Clone)]
pub enum Victim {
    Scripted(ScriptedPolicy),
    Neural(NeuralPolicy),
}

impl Victim {
    pub fn act(&self, row: &[f64]) -> Result<Action> {
        match self {
            Victim::Scripted(p) => p.act(row),
            Victim::Neural(p) => p.act(row),
        }
    }

    /// One greedy action per row of the joint observation.
    pub fn act_joint(&self, obs: &Matrix) -> Result<Vec<Action>> {
        (0..obs.rows()).map(|i| self.act(obs.row(i))).collect()
    }

    pub fn neural(&self) -> Option<&NeuralPolicy> {
        match self {
            Victim::Neural(p) => Some(p),
            Victim::Scripted(_) => None,
        }
    }
}

/// `(observation row, expert action)` pairs.
pub type ExpertData = Vec<(Vec<f64>, Action)>;

/// Rolls out the scripted team until `n_pairs` per-agent pairs are gathered.
pub fn collect_expert_pairs(config: &GridConfig, n_pairs: usize, seed: u64) -> Result<ExpertData> {
    let expert = ScriptedPolicy::for_config(config);
    let mut out = Vec::with_capacity(n_pairs);
    let mut episode = 0;
    while out.len() < n_pairs {
        let (mut env, mut obs) = ForageEnv::reset(config, derive_seed(seed, "expert", 0, episode))?;
        episode += 1;
        while !env.is_done() && out.len() < n_pairs {
            let actions: Vec<Action> = (0..obs.rows())
                .map(|i| expert.act(obs.row(i)))
                .collect::<Result<_>>()?;
            for (i, &a) in actions.iter().enumerate() {
                if out.len() < n_pairs {
                    out.push((obs.row(i).to_vec(), a));
                }
            }
            obs = env.step(&actions)?.obs;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            hidden_sizes: vec![128, 128],
            epochs: 60,
            batch: 64,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub train_accuracy: f64,
    pub loss_curve: Vec<f64>,
}

/// Fraction of pairs where the greedy action equals the expert's.
pub fn accuracy(policy: &NeuralPolicy, data: &[(Vec<f64>, Action)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("accuracy of an empty dataset"));
    }
    let mut hits = 0usize;
    for (row, a) in data {
        hits += usize::from(policy.act(row)? == *a);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Cross-entropy behaviour cloning with minibatch Adam.
pub fn bc_train(
    data: &[(Vec<f64>, Action)],
    config: &BcConfig,
) -> Result<(NeuralPolicy, BcReport)> {
    let Some((first, _)) = data.first() else {
        return Err(Error::contract(
            "behaviour cloning needs a non-empty dataset",
        ));
    };
    let d = first.len();
    let mut sizes = vec![d];
    sizes.extend(&config.hidden_sizes);
    sizes.push(Action::COUNT);
    let mut net = Mlp::new(&sizes, config.seed)?;
    let inputs = Matrix::from_rows(&data.iter().map(|(r, _)| r.as_slice()).collect::<Vec<_>>())?;
    let labels: Vec<usize> = data.iter().map(|(_, a)| a.index()).collect();
    let mut adam = AdamState::new(&net, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "bc-shuffle", 0, 0));
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in minibatches(data.len(), config.batch, &mut rng) {
            let x = gather_rows(&inputs, &batch);
            let trace = net.forward_traced(&x)?;
            let logits = trace.output();
            let mut grad = Matrix::zeros(batch.len(), Action::COUNT);
            let scale = 1.0 / batch.len() as f64;
            for (r, &idx) in batch.iter().enumerate() {
                let p = softmax(logits.row(r));
                let y = labels[idx];
                epoch_loss -= p[y].max(1e-300).ln();
                for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
                    *g = scale * (p[j] - f64::from(u8::from(j == y)));
                }
            }
            let (g, _) = net.backward_traced(&trace, &grad)?;
            adam.step(&mut net, &g)?;
        }
        loss_curve.push(epoch_loss / data.len() as f64);
    }
    let policy = NeuralPolicy::new(net)?;
    let train_accuracy = accuracy(&policy, data)?;
    Ok((
        policy,
        BcReport {
            train_accuracy,
            loss_curve,
        },
    ))
}
