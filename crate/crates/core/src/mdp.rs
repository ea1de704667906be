//! Finite tabular MDPs, policies, action-value tables and their exact solvers.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::linalg;

/// Tolerance used when validating that probability vectors are normalised.
pub const PROB_TOL: f64 = 1e-12;

/// Above this many state-action pairs policy evaluation switches from a
/// direct solve to fixed-point iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 4096;

const MAX_SWEEPS: usize = 1_000_000;

thread_local! {
    static VALUE_ITERATIONS: Cell<u64> = const { Cell::new(0) };
    static POLICY_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of solver invocations made on the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverCalls {
    pub value_iterations: u64,
    pub policy_evaluations: u64,
}

pub fn solver_calls() -> SolverCalls {
    SolverCalls {
        value_iterations: VALUE_ITERATIONS.with(Cell::get),
        policy_evaluations: POLICY_EVALUATIONS.with(Cell::get),
    }
}

pub fn reset_solver_calls() {
    VALUE_ITERATIONS.with(|c| c.set(0));
    POLICY_EVALUATIONS.with(|c| c.set(0));
}

/// A finite MDP with transition rewards.
///
/// Storage is flat and row-major: `transition[(s * n_actions + a) * n_states + s']`
/// and `reward_mean[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward_mean: Vec<f64>,
    reward_sq_mean: Vec<f64>,
    reward_raw: Option<Vec<f64>>,
    discount: f64,
    init_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from a transition-reward tensor `reward_raw[s][a][s']`
    /// (flattened like `transition`). Both reward moments are derived from it.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_raw: Vec<f64>,
        discount: f64,
        init_dist: Vec<f64>,
    ) -> Result<Self> {
        let n_sas = n_states * n_actions * n_states;
        if reward_raw.len() != n_sas {
            return Err(CatError::DimensionMismatch {
                expected: n_sas,
                actual: reward_raw.len(),
                context: "reward_raw",
            });
        }
        check_shape(n_states, n_actions, &transition, &init_dist)?;
        let (reward_mean, reward_sq_mean) = moments(n_states, n_actions, &transition, &reward_raw);
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward_mean,
            reward_sq_mean,
            reward_raw: Some(reward_raw),
            discount,
            init_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds an MDP from the two reward moments directly, without a raw
    /// transition-reward tensor.
    pub fn from_moments(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_sq_mean: Vec<f64>,
        discount: f64,
        init_dist: Vec<f64>,
    ) -> Result<Self> {
        check_shape(n_states, n_actions, &transition, &init_dist)?;
        for (name, v) in [
            ("reward_mean", &reward_mean),
            ("reward_sq_mean", &reward_sq_mean),
        ] {
            if v.len() != n_states * n_actions {
                return Err(CatError::InvalidModel(format!(
                    "{name} has {} entries, expected {}",
                    v.len(),
                    n_states * n_actions
                )));
            }
        }
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward_mean,
            reward_sq_mean,
            reward_raw: None,
            discount,
            init_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Same dynamics, discount and start distribution; new transition rewards.
    pub fn with_reward_raw(&self, reward_raw: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward_raw,
            self.discount,
            self.init_dist.clone(),
        )
    }

    pub fn with_init_dist(&self, init_dist: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.init_dist = init_dist;
        out.validate()?;
        Ok(out)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let mut out = self.clone();
        out.discount = discount;
        out.validate()?;
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(CatError::InvalidModel(
                "MDP needs at least one state and one action".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(CatError::InvalidModel(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                check_distribution(self.next_dist(s, a), &format!("transition row ({s}, {a})"))?;
            }
        }
        check_distribution(&self.init_dist, "init_dist")?;
        let all_finite = self
            .reward_mean
            .iter()
            .chain(&self.reward_sq_mean)
            .chain(self.reward_raw.iter().flatten())
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(CatError::InvalidModel("rewards must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    /// Flat transition tensor, see the type-level docs for the layout.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.n_actions + a]
    }

    #[inline]
    pub fn reward_sq(&self, s: usize, a: usize) -> f64 {
        self.reward_sq_mean[s * self.n_actions + a]
    }

    pub fn reward_mean(&self) -> &[f64] {
        &self.reward_mean
    }

    pub fn reward_sq_mean(&self) -> &[f64] {
        &self.reward_sq_mean
    }

    pub fn reward_raw(&self) -> Option<&[f64]> {
        self.reward_raw.as_deref()
    }

    /// Reward of the transition `(s, a, next)`. Falls back to the mean reward
    /// when no raw tensor is stored.
    #[inline]
    pub fn transition_reward(&self, s: usize, a: usize, next: usize) -> f64 {
        match &self.reward_raw {
            Some(raw) => raw[(s * self.n_actions + a) * self.n_states + next],
            None => self.reward(s, a),
        }
    }

    /// `max |r(s, a)|` over the mean-reward table.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward_mean.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// True when the dynamics and start distributions of both MDPs coincide.
    pub fn same_dynamics(&self, other: &TabularMdp) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.discount == other.discount
            && self.transition == other.transition
            && self.init_dist == other.init_dist
    }

    /// State-to-state transition matrix under `policy`, row-major `n_states x n_states`.
    pub(crate) fn state_transition(&self, policy: &TabularPolicy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            let row = &mut out[s * n..(s + 1) * n];
            for a in 0..self.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for (o, p) in row.iter_mut().zip(self.next_dist(s, a)) {
                    *o += pa * p;
                }
            }
        }
        out
    }
}

fn check_shape(
    n_states: usize,
    n_actions: usize,
    transition: &[f64],
    init_dist: &[f64],
) -> Result<()> {
    let n_sas = n_states * n_actions * n_states;
    if transition.len() != n_sas {
        return Err(CatError::DimensionMismatch {
            expected: n_sas,
            actual: transition.len(),
            context: "transition",
        });
    }
    if init_dist.len() != n_states {
        return Err(CatError::DimensionMismatch {
            expected: n_states,
            actual: init_dist.len(),
            context: "init_dist",
        });
    }
    Ok(())
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CatError::InvalidModel(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(CatError::InvalidModel(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn moments(
    n_states: usize,
    n_actions: usize,
    transition: &[f64],
    raw: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; n_states * n_actions];
    let mut sq = vec![0.0; n_states * n_actions];
    for sa in 0..n_states * n_actions {
        let row = &transition[sa * n_states..(sa + 1) * n_states];
        let r = &raw[sa * n_states..(sa + 1) * n_states];
        for (p, x) in row.iter().zip(r) {
            mean[sa] += p * x;
            sq[sa] += p * x * x;
        }
    }
    (mean, sq)
}

/// A stationary stochastic policy `probs[s * n_actions + a] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(CatError::DimensionMismatch {
                expected: n_states * n_actions,
                actual: probs.len(),
                context: "policy table",
            });
        }
        for s in 0..n_states {
            check_distribution(
                &probs[s * n_actions..(s + 1) * n_actions],
                &format!("policy row {s}"),
            )?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(CatError::IndexOutOfRange {
                    what: "action",
                    index: a,
                    size: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The action taken in `s` when the row is one-hot.
    pub fn action(&self, s: usize) -> Option<usize> {
        let row = self.row(s);
        let hot = row.iter().position(|&p| p == 1.0)?;
        row.iter()
            .enumerate()
            .all(|(a, &p)| a == hot || p == 0.0)
            .then_some(hot)
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states).all(|s| self.action(s).is_some())
    }

    /// Per-state actions of a deterministic policy.
    pub fn actions(&self) -> Option<Vec<usize>> {
        (0..self.n_states).map(|s| self.action(s)).collect()
    }

    fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(CatError::InvalidArgument(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for TabularPolicy {
    type Error = CatError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
            return Err(CatError::Format(
                "policy must be a non-empty rectangular table".into(),
            ));
        }
        Self::from_probs(n_states, n_actions, rows.concat())
    }
}

impl From<TabularPolicy> for Vec<Vec<f64>> {
    fn from(p: TabularPolicy) -> Self {
        p.probs.chunks(p.n_actions).map(<[f64]>::to_vec).collect()
    }
}

/// Action values `values[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(CatError::DimensionMismatch {
                expected: n_states * n_actions,
                actual: values.len(),
                context: "Q table",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CatError::NumericalFailure("non-finite action value".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Expected value of `policy` in state `s`.
    pub fn state_value(&self, policy: &TabularPolicy, s: usize) -> f64 {
        self.row(s)
            .iter()
            .zip(policy.row(s))
            .map(|(q, p)| q * p)
            .sum()
    }
}

impl TryFrom<Vec<Vec<f64>>> for QTable {
    type Error = CatError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
            return Err(CatError::Format(
                "Q table must be a non-empty rectangular table".into(),
            ));
        }
        Self::new(n_states, n_actions, rows.concat())
    }
}

impl From<QTable> for Vec<Vec<f64>> {
    fn from(q: QTable) -> Self {
        q.values.chunks(q.n_actions).map(<[f64]>::to_vec).collect()
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CatError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

/// One application of the policy Bellman operator.
fn bellman_backup(mdp: &TabularMdp, state_values: &[f64]) -> Vec<f64> {
    let gamma = mdp.discount();
    let mut out = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let future: f64 = mdp
                .next_dist(s, a)
                .iter()
                .zip(state_values)
                .map(|(p, v)| p * v)
                .sum();
            out.push(mdp.reward(s, a) + gamma * future);
        }
    }
    out
}

fn policy_state_values(q: &[f64], policy: &TabularPolicy) -> Vec<f64> {
    let na = policy.n_actions();
    (0..policy.n_states())
        .map(|s| {
            q[s * na..(s + 1) * na]
                .iter()
                .zip(policy.row(s))
                .map(|(q, p)| q * p)
                .sum()
        })
        .collect()
}

fn greedy_state_values(q: &[f64], n_actions: usize) -> Vec<f64> {
    q.chunks(n_actions)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CatError::NumericalFailure(format!(
            "non-finite values in {what}"
        )))
    }
}

/// Largest violation of `Q(s,a) = r(s,a) + gamma * E[pi-weighted Q(s',.)]`.
pub fn bellman_residual(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> f64 {
    let v = policy_state_values(q.values(), policy);
    sup_diff(&bellman_backup(mdp, &v), q.values())
}

/// Largest violation of the Bellman optimality equation.
pub fn optimality_residual(mdp: &TabularMdp, q: &QTable) -> f64 {
    let v = greedy_state_values(q.values(), q.n_actions());
    sup_diff(&bellman_backup(mdp, &v), q.values())
}

/// Action values of `policy`.
///
/// Small models are solved directly through the state-value system
/// `(I - gamma P_pi) V = r_pi`, followed by one backup to recover `Q`; larger
/// ones fall back to fixed-point iteration.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<QTable> {
    check_tol(tol)?;
    policy.check_compatible(mdp)?;
    POLICY_EVALUATIONS.with(|c| c.set(c.get() + 1));

    let values = if mdp.n_states() * mdp.n_actions() <= DIRECT_SOLVE_LIMIT {
        evaluate_direct(mdp, policy, tol)?
    } else {
        evaluate_iterative(mdp, policy, tol)?
    };
    QTable::new(mdp.n_states(), mdp.n_actions(), values)
}

fn evaluate_direct(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<Vec<f64>> {
    let solver = linalg::ResolventSolver::new(mdp, policy)?;
    let r_pi = policy_state_values(mdp.reward_mean(), policy);
    let v = solver.solve(&r_pi)?;
    let mut q = bellman_backup(mdp, &v);
    ensure_finite(&q, "policy evaluation")?;
    // Polish with a few backups if round-off left the residual above tol.
    for _ in 0..64 {
        let next = bellman_backup(mdp, &policy_state_values(&q, policy));
        let residual = sup_diff(&next, &q);
        q = next;
        if residual <= tol * 1e-3 {
            break;
        }
    }
    Ok(q)
}

fn evaluate_iterative(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<Vec<f64>> {
    let mut q = mdp.reward_mean().to_vec();
    for _ in 0..MAX_SWEEPS {
        let next = bellman_backup(mdp, &policy_state_values(&q, policy));
        ensure_finite(&next, "policy evaluation")?;
        let delta = sup_diff(&next, &q);
        q = next;
        if delta <= tol {
            return Ok(q);
        }
    }
    Err(CatError::NumericalFailure(
        "policy evaluation did not converge".into(),
    ))
}

/// Optimal action values and the greedy policy with respect to them.
///
/// Value iteration runs to `tol`; for models small enough for a direct
/// solve, the greedy policy is then refined by exact policy iteration so the
/// returned values are the exact fixed point up to round-off.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(QTable, TabularPolicy)> {
    check_tol(tol)?;
    VALUE_ITERATIONS.with(|c| c.set(c.get() + 1));
    let na = mdp.n_actions();

    let mut q = mdp.reward_mean().to_vec();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let next = bellman_backup(mdp, &greedy_state_values(&q, na));
        ensure_finite(&next, "value iteration")?;
        let delta = sup_diff(&next, &q);
        q = next;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CatError::NumericalFailure(
            "value iteration did not converge".into(),
        ));
    }
    let mut table = QTable::new(mdp.n_states(), na, q)?;

    if mdp.n_states() * na <= DIRECT_SOLVE_LIMIT {
        let mut actions = greedy_actions(&table);
        for _ in 0..mdp.n_states() * na + 1 {
            let policy = TabularPolicy::deterministic(na, &actions)?;
            let values = evaluate_direct(mdp, &policy, tol)?;
            let evaluated = QTable::new(mdp.n_states(), na, values)?;
            let mut changed = false;
            for (s, current) in actions.iter_mut().enumerate() {
                let row = evaluated.row(s);
                let best = argmax(row);
                let margin = 1e-12 * (1.0 + row[*current].abs());
                if row[best] > row[*current] + margin {
                    *current = best;
                    changed = true;
                }
            }
            table = evaluated;
            if !changed {
                break;
            }
        }
    }
    let policy = greedy_policy(&table);
    Ok((table, policy))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.n_states()).map(|s| argmax(q.row(s))).collect()
}

/// Deterministic greedy policy with lowest-index tie-breaking.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    TabularPolicy::deterministic(q.n_actions(), &greedy_actions(q)).expect("argmax is in range")
}

/// `(1 - gamma) * E_{s0 ~ mu0, a0 ~ pi}[Q(s0, a0)]`, the Q-LP primal objective.
pub fn start_return(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> f64 {
    let expected: f64 = mdp
        .init_dist()
        .iter()
        .enumerate()
        .filter(|(_, &mu)| mu > 0.0)
        .map(|(s, mu)| mu * q.state_value(policy, s))
        .sum();
    (1.0 - mdp.discount()) * expected
}

/// JSON layout of an MDP: nested arrays `s -> a -> s'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(default = "crate::serde_ext::schema_version")]
    pub schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_raw: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub init_dist: Vec<f64>,
}

fn flatten3(
    t: &[Vec<Vec<f64>>],
    n_states: usize,
    n_actions: usize,
    what: &str,
) -> Result<Vec<f64>> {
    let ok = t.len() == n_states
        && t.iter()
            .all(|rows| rows.len() == n_actions && rows.iter().all(|r| r.len() == n_states));
    if !ok {
        return Err(CatError::Format(format!(
            "{what} must have shape [{n_states}][{n_actions}][{n_states}]"
        )));
    }
    Ok(t.iter().flatten().flatten().copied().collect())
}

fn nest3(flat: &[f64], n_states: usize, n_actions: usize) -> Vec<Vec<Vec<f64>>> {
    flat.chunks(n_actions * n_states)
        .map(|per_state| per_state.chunks(n_states).map(<[f64]>::to_vec).collect())
        .collect()
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = CatError;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let transition = flatten3(&doc.transition, doc.n_states, doc.n_actions, "transition")?;
        let reward_raw = flatten3(&doc.reward_raw, doc.n_states, doc.n_actions, "reward_raw")?;
        TabularMdp::new(
            doc.n_states,
            doc.n_actions,
            transition,
            reward_raw,
            doc.discount,
            doc.init_dist,
        )
    }
}

impl TabularMdp {
    /// JSON document for this MDP. Models built from moments only have no raw
    /// reward tensor; the mean reward is then written for every successor.
    pub fn to_document(&self) -> MdpDocument {
        let raw = match &self.reward_raw {
            Some(raw) => raw.clone(),
            None => (0..self.n_states * self.n_actions)
                .flat_map(|sa| std::iter::repeat_n(self.reward_mean[sa], self.n_states))
                .collect(),
        };
        MdpDocument {
            schema_version: crate::serde_ext::SCHEMA_VERSION,
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: nest3(&self.transition, self.n_states, self.n_actions),
            reward_raw: nest3(&raw, self.n_states, self.n_actions),
            discount: self.discount,
            init_dist: self.init_dist.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{chain, random_mdp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_values_are_geometric() {
        let mdp = chain(0.5);
        let pi = TabularPolicy::uniform(2, 1);
        let q = policy_evaluation(&mdp, &pi, 1e-9).unwrap();
        for &v in q.values() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert!((start_return(&mdp, &pi, &q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_gives_reward() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(3), 4, 3, 0.0);
        let pi = TabularPolicy::uniform(4, 3);
        let q = policy_evaluation(&mdp, &pi, 1e-9).unwrap();
        assert_eq!(q.values(), mdp.reward_mean());
        let expected: f64 = (0..4)
            .map(|s| mdp.init_dist()[s] * (0..3).map(|a| mdp.reward(s, a) / 3.0).sum::<f64>())
            .sum();
        assert!((start_return(&mdp, &pi, &q) - expected).abs() < 1e-12);
    }

    #[test]
    fn evaluation_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        let pi = TabularPolicy::uniform(5, 3);
        let q = policy_evaluation(&mdp, &pi, 1e-9).unwrap();

        // Truncated discounted returns from (s0, a0) = (2, 1); gamma^200 is negligible.
        let n = 10_000;
        let (s0, a0) = (2, 1);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (mut s, mut a) = (s0, a0);
            let mut g = 0.0;
            let mut disc = 1.0;
            for _ in 0..200 {
                let next = sample(mdp.next_dist(s, a), rng.gen());
                g += disc * mdp.transition_reward(s, a, next);
                disc *= 0.9;
                s = next;
                a = rng.gen_range(0..3);
            }
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - q.get(s0, a0)).abs() < 3.0 * se,
            "mc {mean} vs {} (se {se})",
            q.get(s0, a0)
        );
    }

    fn sample(row: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        row.len() - 1
    }

    #[test]
    fn single_state_optimum() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0], 0.9, vec![1.0]).unwrap();
        let (q, pi) = value_iteration(&mdp, 1e-9).unwrap();
        assert!((q.get(0, 1) - 10.0).abs() < 1e-9);
        assert!((q.get(0, 0) - 9.0).abs() < 1e-9);
        assert_eq!(pi.action(0), Some(1));
    }

    #[test]
    fn identical_actions_tie_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_mdp(&mut rng, 4, 1, 0.8);
        let mut transition = Vec::new();
        let mut raw = Vec::new();
        for s in 0..4 {
            for _ in 0..3 {
                transition.extend_from_slice(base.next_dist(s, 0));
                raw.extend((0..4).map(|n| base.transition_reward(s, 0, n)));
            }
        }
        let mdp = TabularMdp::new(4, 3, transition, raw, 0.8, base.init_dist().to_vec()).unwrap();
        let (_, pi) = value_iteration(&mdp, 1e-9).unwrap();
        assert_eq!(pi.actions().unwrap(), vec![0; 4]);
    }

    #[test]
    fn greedy_examples() {
        let q = QTable::new(3, 3, vec![1.0, 3.0, 2.0, 5.0, 5.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(greedy_policy(&q).actions().unwrap(), vec![1, 0, 0]);
        assert_eq!(
            greedy_policy(&QTable::zeros(4, 2)).actions().unwrap(),
            vec![0; 4]
        );
    }

    #[test]
    fn rejects_bad_models() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![0.5]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![f64::NAN], 0.5, vec![1.0]).is_err());
        assert!(policy_evaluation(&chain(0.5), &TabularPolicy::uniform(2, 1), 0.0).is_err());
    }

    #[test]
    fn iterative_evaluation_agrees_with_direct() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(9), 6, 2, 0.9);
        let pi = TabularPolicy::uniform(6, 2);
        let direct = evaluate_direct(&mdp, &pi, 1e-10).unwrap();
        let iter = evaluate_iterative(&mdp, &pi, 1e-12).unwrap();
        assert!(sup_diff(&direct, &iter) < 1e-10);
    }

    #[test]
    fn contraction_per_sweep() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(17), 5, 3, 0.8);
        let pi = TabularPolicy::uniform(5, 3);
        let fixed = policy_evaluation(&mdp, &pi, 1e-12).unwrap();
        let mut q = vec![0.0; 15];
        let mut dist = sup_diff(&q, fixed.values());
        for _ in 0..20 {
            q = bellman_backup(&mdp, &policy_state_values(&q, &pi));
            let next = sup_diff(&q, fixed.values());
            assert!(next <= 0.8 * dist + 1e-12);
            dist = next;
        }
    }

    #[test]
    fn json_round_trip() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(1), 3, 2, 0.7);
        let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn dominates_every_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 5, 3, 0.9);
            let (qstar, _) = value_iteration(&mdp, 1e-9).unwrap();
            assert!(optimality_residual(&mdp, &qstar) <= 1e-9);
            let actions: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
            let pi = TabularPolicy::deterministic(3, &actions).unwrap();
            let q = policy_evaluation(&mdp, &pi, 1e-9).unwrap();
            for (a, b) in qstar.values().iter().zip(q.values()) {
                assert!(*a >= b - 2e-9);
            }
        }
    }
}
