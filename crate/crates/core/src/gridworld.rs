//! Slippery navigation gridworlds with a block of danger cells.
//!
//! Cell `(x, y)` is state `y * width + x`; `y` grows downwards. With an
//! absorbing goal, one extra sink state follows the cells: stepping out of the
//! goal moves into the sink, which pays nothing and never leaves. Rewards are
//! those of the entered cell, so every task on the same layout is linear in
//! one-hot next-state features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::successor::FeatureMap;
use crate::transfer::sample_index;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRewards {
    pub white: f64,
    pub danger: f64,
    pub goal: f64,
}

impl Default for CellRewards {
    fn default() -> Self {
        Self {
            white: 0.3,
            danger: -0.8,
            goal: 10.0,
        }
    }
}

fn default_slip() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.95
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    #[serde(default)]
    pub danger: Vec<[usize; 2]>,
    #[serde(default)]
    pub rewards: CellRewards,
    #[serde(default = "default_slip")]
    pub slip: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub goal_absorbing: bool,
}

impl GridConfig {
    pub fn new(width: usize, height: usize, start: [usize; 2], goal: [usize; 2]) -> Self {
        Self {
            width,
            height,
            start,
            goal,
            danger: Vec::new(),
            rewards: CellRewards::default(),
            slip: default_slip(),
            gamma: default_gamma(),
            goal_absorbing: true,
        }
    }

    pub fn with_danger(mut self, danger: Vec<[usize; 2]>) -> Self {
        self.danger = danger;
        self
    }

    pub fn with_slip(mut self, slip: f64) -> Self {
        self.slip = slip;
        self
    }

    /// Same layout without slip noise.
    pub fn deterministic(&self) -> Self {
        self.clone().with_slip(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CatError::InvalidArgument(
                "grid must have positive width and height".into(),
            ));
        }
        let in_bounds = |[x, y]: [usize; 2]| x < self.width && y < self.height;
        for (what, cell) in [("start", self.start), ("goal", self.goal)] {
            if !in_bounds(cell) {
                return Err(CatError::InvalidArgument(format!(
                    "{what} cell {cell:?} outside the grid"
                )));
            }
        }
        if let Some(cell) = self.danger.iter().find(|c| !in_bounds(**c)) {
            return Err(CatError::InvalidArgument(format!(
                "danger cell {cell:?} outside the grid"
            )));
        }
        if self.start == self.goal {
            return Err(CatError::InvalidArgument(
                "start and goal must differ".into(),
            ));
        }
        if self.danger.contains(&self.start) {
            return Err(CatError::InvalidArgument(
                "start cell is a danger cell".into(),
            ));
        }
        if self.danger.contains(&self.goal) {
            return Err(CatError::InvalidArgument(
                "goal cell is a danger cell".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(CatError::InvalidArgument(format!(
                "slip {} outside [0, 1)",
                self.slip
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CatError::InvalidArgument(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        let r = &self.rewards;
        if ![r.white, r.danger, r.goal].iter().all(|x| x.is_finite()) {
            return Err(CatError::InvalidArgument(
                "cell rewards must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    /// Two layouts with the same geometry and noise share their dynamics,
    /// whatever their danger cells.
    pub fn same_dynamics(&self, other: &GridConfig) -> bool {
        (
            self.width,
            self.height,
            self.start,
            self.goal,
            self.goal_absorbing,
        ) == (
            other.width,
            other.height,
            other.start,
            other.goal,
            other.goal_absorbing,
        ) && self.slip == other.slip
            && self.gamma == other.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Failure,
    Goal,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub n_episodes: usize,
    pub failure_rate: f64,
    pub goal_rate: f64,
    pub timeout_rate: f64,
    pub mean_return: f64,
    pub return_variance: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    config: GridConfig,
    mdp: TabularMdp,
    danger_states: Vec<usize>,
}

impl GridWorld {
    pub fn new(config: GridConfig) -> Result<Self> {
        let mdp = build_gridworld(&config)?;
        let mut danger_states: Vec<usize> = config
            .danger
            .iter()
            .map(|&[x, y]| y * config.width + x)
            .collect();
        danger_states.sort_unstable();
        danger_states.dedup();
        Ok(Self {
            config,
            mdp,
            danger_states,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn state(&self, [x, y]: [usize; 2]) -> usize {
        y * self.config.width + x
    }

    pub fn start_state(&self) -> usize {
        self.state(self.config.start)
    }

    pub fn goal_state(&self) -> usize {
        self.state(self.config.goal)
    }

    pub fn sink_state(&self) -> Option<usize> {
        self.config.goal_absorbing.then_some(self.config.n_cells())
    }

    pub fn danger_states(&self) -> &[usize] {
        &self.danger_states
    }

    pub fn is_danger(&self, s: usize) -> bool {
        self.danger_states.binary_search(&s).is_ok()
    }

    /// Reward for entering each state: the task weights for one-hot
    /// next-state features.
    pub fn reward_weights(&self) -> Vec<f64> {
        state_rewards(&self.config)
    }

    pub fn features(&self) -> FeatureMap {
        FeatureMap::one_hot_next_state(self.n_states())
    }

    /// Simulates `n_episodes` episodes from the start cell. An episode ends
    /// when it enters a danger cell (failure), reaches the goal, or runs for
    /// `horizon` steps. Episode `k` draws from its own generator seeded with
    /// `seed + k`.
    pub fn rollout(
        &self,
        policy: &TabularPolicy,
        horizon: usize,
        n_episodes: usize,
        seed: u64,
    ) -> Result<RolloutStats> {
        rollout(self, policy, horizon, n_episodes, seed)
    }

    /// One seeded episode.
    pub fn episode<R: Rng + ?Sized>(
        &self,
        policy: &TabularPolicy,
        horizon: usize,
        rng: &mut R,
    ) -> (Termination, f64, usize) {
        let gamma = self.mdp.discount();
        let goal = self.goal_state();
        let mut s = self.start_state();
        let (mut g, mut discount) = (0.0, 1.0);
        for step in 1..=horizon {
            let a = sample_index(policy.row(s), rng.gen());
            let next = sample_index(self.mdp.next_dist(s, a), rng.gen());
            g += discount * self.mdp.transition_reward(s, a, next);
            discount *= gamma;
            s = next;
            if self.is_danger(s) {
                return (Termination::Failure, g, step);
            }
            if s == goal {
                return (Termination::Goal, g, step);
            }
        }
        (Termination::Timeout, g, horizon)
    }
}

fn state_rewards(config: &GridConfig) -> Vec<f64> {
    let r = &config.rewards;
    let mut w = vec![r.white; config.n_cells()];
    for &[x, y] in &config.danger {
        w[y * config.width + x] = r.danger;
    }
    w[config.goal[1] * config.width + config.goal[0]] = r.goal;
    if config.goal_absorbing {
        w.push(0.0);
    }
    w
}

/// Cell reached by moving from `(x, y)` in direction `a`; the agent stays put
/// when the move would leave the grid.
fn step_cell(config: &GridConfig, [x, y]: [usize; 2], a: usize) -> [usize; 2] {
    match a {
        UP if y > 0 => [x, y - 1],
        DOWN if y + 1 < config.height => [x, y + 1],
        LEFT if x > 0 => [x - 1, y],
        RIGHT if x + 1 < config.width => [x + 1, y],
        _ => [x, y],
    }
}

fn perpendicular(a: usize) -> [usize; 2] {
    if a == UP || a == DOWN {
        [LEFT, RIGHT]
    } else {
        [UP, DOWN]
    }
}

/// Four-action MDP for `config`: the intended move succeeds with
/// probability `1 - slip` and slips to each perpendicular direction with
/// probability `slip / 2`. The start distribution is the start cell.
pub fn build_gridworld(config: &GridConfig) -> Result<TabularMdp> {
    config.validate()?;
    let cells = config.n_cells();
    let ns = cells + usize::from(config.goal_absorbing);
    let goal = config.goal[1] * config.width + config.goal[0];
    let mut transition = vec![0.0; ns * N_ACTIONS * ns];
    for s in 0..ns {
        for a in 0..N_ACTIONS {
            let row = &mut transition[(s * N_ACTIONS + a) * ns..(s * N_ACTIONS + a + 1) * ns];
            if config.goal_absorbing && (s == goal || s == cells) {
                row[cells] = 1.0;
                continue;
            }
            let here = [s % config.width, s / config.width];
            let [side_a, side_b] = perpendicular(a);
            for (dir, p) in [
                (a, 1.0 - config.slip),
                (side_a, config.slip / 2.0),
                (side_b, config.slip / 2.0),
            ] {
                if p > 0.0 {
                    let [x, y] = step_cell(config, here, dir);
                    row[y * config.width + x] += p;
                }
            }
        }
    }
    let w = state_rewards(config);
    let reward_raw = (0..ns * N_ACTIONS)
        .flat_map(|_| w.iter().copied())
        .collect();
    let mut init = vec![0.0; ns];
    init[config.start[1] * config.width + config.start[0]] = 1.0;
    TabularMdp::new(ns, N_ACTIONS, transition, reward_raw, config.gamma, init)
}

pub fn rollout(
    world: &GridWorld,
    policy: &TabularPolicy,
    horizon: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<RolloutStats> {
    if horizon == 0 {
        return Err(CatError::InvalidArgument(
            "rollout horizon must be at least 1".into(),
        ));
    }
    if n_episodes == 0 {
        return Err(CatError::InvalidArgument(
            "need at least one episode".into(),
        ));
    }
    if policy.n_states() != world.n_states() || policy.n_actions() != N_ACTIONS {
        return Err(CatError::InvalidArgument(
            "policy shape does not match the grid".into(),
        ));
    }
    let (mut failures, mut goals, mut steps) = (0usize, 0usize, 0usize);
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n_episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let (end, g, n) = world.episode(policy, horizon, &mut rng);
        match end {
            Termination::Failure => failures += 1,
            Termination::Goal => goals += 1,
            Termination::Timeout => {}
        }
        steps += n;
        let delta = g - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (g - mean);
    }
    let n = n_episodes as f64;
    Ok(RolloutStats {
        n_episodes,
        failure_rate: failures as f64 / n,
        goal_rate: goals as f64 / n,
        timeout_rate: (n_episodes - failures - goals) as f64 / n,
        mean_return: mean,
        return_variance: if n_episodes > 1 { m2 / (n - 1.0) } else { 0.0 },
        mean_steps: steps as f64 / n,
    })
}

const ARROWS: [char; N_ACTIONS] = ['^', 'v', '<', '>'];

/// Text map of the most likely action per cell. Each cell takes two
/// characters: a marker (`S` start, `G` goal, `#` danger, `.` otherwise) and
/// an arrow; the goal has no arrow. Trailing spaces are trimmed.
pub fn render_policy(policy: &TabularPolicy, config: &GridConfig) -> String {
    let goal = config.goal[1] * config.width + config.goal[0];
    let mut out = String::new();
    for y in 0..config.height {
        let mut line = String::with_capacity(2 * config.width);
        for x in 0..config.width {
            let s = y * config.width + x;
            let marker = if [x, y] == config.start {
                'S'
            } else if s == goal {
                'G'
            } else if config.danger.contains(&[x, y]) {
                '#'
            } else {
                '.'
            };
            line.push(marker);
            if s == goal || s >= policy.n_states() {
                line.push(' ');
            } else {
                line.push(ARROWS[crate::mdp::argmax(policy.row(s)) % N_ACTIONS]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
