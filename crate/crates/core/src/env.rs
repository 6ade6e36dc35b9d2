//! Level-based foraging grid world.
//!
//! Agents with integer levels walk a grid and collect foods. A food is collected
//! when the agents choosing `Load` while orthogonally adjacent to it have a summed
//! level at least the food's level. In cooperative mode every food's level equals
//! the sum of all agent levels, so the whole team must load together.
//!
//! Each agent observes one triple `(x/width, y/height, level/level_norm)` per
//! entity: foods first, then itself, then the other agents by ascending index.
//! Collected foods and entities beyond the sight radius (Chebyshev distance)
//! read as the sentinel `(-1, -1, 0)`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numkit::Matrix;
use crate::{Error, Result};

pub const OBS_MIN: f64 = -1.0;
pub const OBS_MAX: f64 = 1.0;
pub const SENTINEL: [f64; 3] = [-1.0, -1.0, 0.0];

/// Joint observation: one row per agent.
pub type JointObservation = Matrix;

/// Valid range of every observation entry, used by the PGD clipping step.
pub fn obs_bounds(_config: &GridConfig) -> (f64, f64) {
    (OBS_MIN, OBS_MAX)
}

fn default_max_steps() -> usize {
    50
}

fn default_level_range() -> (u32, u32) {
    (1, 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_foods: usize,
    #[serde(default)]
    pub cooperative: bool,
    /// `None` means fully observable.
    #[serde(default)]
    pub sight_radius: Option<usize>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Inclusive agent level range.
    #[serde(default = "default_level_range")]
    pub level_range: (u32, u32),
}

impl GridConfig {
    pub fn new(width: usize, height: usize, n_agents: usize, n_foods: usize) -> Self {
        GridConfig {
            width,
            height,
            n_agents,
            n_foods,
            cooperative: false,
            sight_radius: None,
            max_steps: default_max_steps(),
            level_range: default_level_range(),
        }
    }

    /// Parses task names such as `8x8-3p-2f`, `8x8-3p-2f-coop` or `2s-10x10-4p-2f`.
    pub fn preset(name: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown task name {name:?}"));
        let mut parts: Vec<&str> = name.split('-').collect();
        let mut sight_radius = None;
        if let Some(r) = parts.first().and_then(|p| p.strip_suffix('s')) {
            sight_radius = Some(r.parse().map_err(|_| bad())?);
            parts.remove(0);
        }
        let cooperative = parts.last() == Some(&"coop");
        if cooperative {
            parts.pop();
        }
        let [grid, agents, foods] = parts.as_slice() else {
            return Err(bad());
        };
        let (w, h) = grid.split_once('x').ok_or_else(bad)?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let mut cfg = GridConfig::new(
            num(w)?,
            num(h)?,
            num(agents.strip_suffix('p').ok_or_else(bad)?)?,
            num(foods.strip_suffix('f').ok_or_else(bad)?)?,
        );
        cfg.cooperative = cooperative;
        cfg.sight_radius = sight_radius;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_agents < 2 {
            return fail(format!("n_agents must be >= 2, got {}", self.n_agents));
        }
        if self.n_foods < 1 {
            return fail("n_foods must be >= 1".into());
        }
        if self.width == 0 || self.height == 0 {
            return fail("grid dimensions must be positive".into());
        }
        if self.width * self.height < self.n_agents + self.n_foods {
            return fail(format!(
                "{}x{} grid cannot hold {} entities",
                self.width,
                self.height,
                self.n_agents + self.n_foods
            ));
        }
        if self.max_steps < 1 {
            return fail("max_steps must be >= 1".into());
        }
        let (lo, hi) = self.level_range;
        if lo < 1 || lo > hi {
            return fail(format!("invalid level range ({lo}, {hi})"));
        }
        Ok(())
    }

    /// Per-agent observation length `3 · (n_foods + n_agents)`.
    pub fn obs_dim(&self) -> usize {
        3 * (self.n_foods + self.n_agents)
    }

    /// Divisor for levels: the largest level any entity can have.
    pub fn level_norm(&self) -> f64 {
        (self.n_agents as u32 * self.level_range.1) as f64
    }

    /// Short task label in the preset naming scheme.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if let Some(r) = self.sight_radius {
            s.push_str(&format!("{r}s-"));
        }
        s.push_str(&format!(
            "{}x{}-{}p-{}f",
            self.width, self.height, self.n_agents, self.n_foods
        ));
        if self.cooperative {
            s.push_str("-coop");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    None,
    Up,
    Down,
    Left,
    Right,
    Load,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::None,
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Load,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Grid offset `(dx, dy)`; `Up` decreases y.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::None | Action::Load => (0, 0),
        }
    }
}

pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub pos: Pos,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Food {
    pub pos: Pos,
    pub level: u32,
    pub collected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub agents: Vec<Agent>,
    pub foods: Vec<Food>,
    pub step: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: JointObservation,
    pub reward: f64,
    pub done: bool,
    pub length: usize,
}

/// One line of an optional trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub actions: Vec<Action>,
    pub reward: f64,
    pub obs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForageEnv {
    config: GridConfig,
    state: EnvState,
    done: bool,
}

pub fn chebyshev(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

pub fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

impl ForageEnv {
    /// Places foods (away from the border when the grid allows, never next to
    /// another food) and then agents, uniformly over the remaining free cells.
    pub fn reset(config: &GridConfig, seed: u64) -> Result<(ForageEnv, JointObservation)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (config.width, config.height);
        let interior = w >= 3 && h >= 3;
        let mut food_pos: Vec<Pos> = Vec::with_capacity(config.n_foods);
        for _ in 0..config.n_foods {
            let candidates: Vec<Pos> = cells(w, h)
                .filter(|&(x, y)| !interior || (x > 0 && y > 0 && x + 1 < w && y + 1 < h))
                .filter(|&p| food_pos.iter().all(|&f| chebyshev(f, p) > 1))
                .collect();
            let &p = candidates.choose(&mut rng).ok_or_else(|| {
                Error::Config(format!(
                    "cannot place {} foods on a {w}x{h} grid",
                    config.n_foods
                ))
            })?;
            food_pos.push(p);
        }
        let mut agents = Vec::with_capacity(config.n_agents);
        for _ in 0..config.n_agents {
            let candidates: Vec<Pos> = cells(w, h)
                .filter(|p| !food_pos.contains(p) && agents.iter().all(|a: &Agent| a.pos != *p))
                .collect();
            let &pos = candidates.choose(&mut rng).ok_or_else(|| {
                Error::Config(format!(
                    "cannot place {} agents on a {w}x{h} grid",
                    config.n_agents
                ))
            })?;
            let level = rng.random_range(config.level_range.0..=config.level_range.1);
            agents.push(Agent { pos, level });
        }
        let team: u32 = agents.iter().map(|a| a.level).sum();
        let foods = food_pos
            .into_iter()
            .map(|pos| Food {
                pos,
                level: if config.cooperative {
                    team
                } else {
                    rng.random_range(config.level_range.0..=team)
                },
                collected: false,
            })
            .collect();
        let env = ForageEnv {
            config: config.clone(),
            state: EnvState {
                agents,
                foods,
                step: 0,
                seed,
            },
            done: false,
        };
        let obs = env.observe();
        Ok((env, obs))
    }

    /// Wraps an explicit state, checking it against the configuration.
    pub fn from_state(config: &GridConfig, state: EnvState) -> Result<ForageEnv> {
        config.validate()?;
        if state.agents.len() != config.n_agents || state.foods.len() != config.n_foods {
            return Err(Error::contract("state entity counts do not match config"));
        }
        let mut seen: Vec<Pos> = Vec::new();
        let occupied = state
            .agents
            .iter()
            .map(|a| a.pos)
            .chain(state.foods.iter().filter(|f| !f.collected).map(|f| f.pos));
        for p in occupied {
            if p.0 >= config.width || p.1 >= config.height || seen.contains(&p) {
                return Err(Error::contract(format!("invalid or shared cell {p:?}")));
            }
            seen.push(p);
        }
        if state.step > config.max_steps {
            return Err(Error::contract("step counter exceeds max_steps"));
        }
        let done = state.step == config.max_steps || state.foods.iter().all(|f| f.collected);
        Ok(ForageEnv {
            config: config.clone(),
            state,
            done,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies one joint action. Moves resolve in ascending agent index; a move
    /// into a wall, a food, or an occupied cell is a no-op.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a terminated episode"));
        }
        if actions.len() != self.config.n_agents {
            return Err(Error::contract(format!(
                "expected {} actions, got {}",
                self.config.n_agents,
                actions.len()
            )));
        }
        for (i, &a) in actions.iter().enumerate() {
            let (dx, dy) = a.offset();
            if (dx, dy) == (0, 0) {
                continue;
            }
            let Some(target) = self.shifted(self.state.agents[i].pos, dx, dy) else {
                continue;
            };
            if !self.occupied(target) {
                self.state.agents[i].pos = target;
            }
        }

        let total: f64 = self.state.foods.iter().map(|f| f.level as f64).sum();
        let mut reward = 0.0;
        for f in 0..self.state.foods.len() {
            let food = &self.state.foods[f];
            if food.collected {
                continue;
            }
            let loading: u32 = self
                .state
                .agents
                .iter()
                .zip(actions)
                .filter(|(a, &act)| act == Action::Load && manhattan(a.pos, food.pos) == 1)
                .map(|(a, _)| a.level)
                .sum();
            if loading >= food.level {
                reward += food.level as f64 / total;
                self.state.foods[f].collected = true;
            }
        }

        self.state.step += 1;
        self.done = self.state.step >= self.config.max_steps
            || self.state.foods.iter().all(|f| f.collected);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            length: self.state.step,
        })
    }

    fn shifted(&self, (x, y): Pos, dx: isize, dy: isize) -> Option<Pos> {
        let nx = x.checked_add_signed(dx)?;
        let ny = y.checked_add_signed(dy)?;
        (nx < self.config.width && ny < self.config.height).then_some((nx, ny))
    }

    fn occupied(&self, p: Pos) -> bool {
        self.state.agents.iter().any(|a| a.pos == p)
            || self.state.foods.iter().any(|f| !f.collected && f.pos == p)
    }

    pub fn observe(&self) -> JointObservation {
        observe(&self.state, &self.config)
    }
}

fn cells(w: usize, h: usize) -> impl Iterator<Item = Pos> {
    (0..h).flat_map(move |y| (0..w).map(move |x| (x, y)))
}

/// Builds the joint observation for `state`.
pub fn observe(state: &EnvState, config: &GridConfig) -> JointObservation {
    let n = config.n_agents;
    let d = config.obs_dim();
    let norm = config.level_norm();
    let triple = |pos: Pos, level: u32| {
        [
            pos.0 as f64 / config.width as f64,
            pos.1 as f64 / config.height as f64,
            level as f64 / norm,
        ]
    };
    let mut obs = Matrix::zeros(n, d);
    for i in 0..n {
        let me = state.agents[i].pos;
        let visible = |p: Pos| config.sight_radius.is_none_or(|r| chebyshev(me, p) <= r);
        let row = obs.row_mut(i);
        let mut slot = 0;
        let mut put = |t: [f64; 3]| {
            row[slot..slot + 3].copy_from_slice(&t);
            slot += 3;
        };
        for f in &state.foods {
            put(if !f.collected && visible(f.pos) {
                triple(f.pos, f.level)
            } else {
                SENTINEL
            });
        }
        put(triple(me, state.agents[i].level));
        for (j, a) in state.agents.iter().enumerate() {
            if j != i {
                put(if visible(a.pos) {
                    triple(a.pos, a.level)
                } else {
                    SENTINEL
                });
            }
        }
    }
    obs
}
