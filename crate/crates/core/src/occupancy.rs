//! Discounted state-action occupancy measures.
//!
//! For a policy `pi` and start distribution `mu0` the occupancy is the unique
//! solution of the flow constraints
//!
//! ```text
//! d(s, a) = (1 - gamma) mu0(s) pi(a|s) + gamma pi(a|s) sum_{s', a'} p(s | s', a') d(s', a')
//! ```
//!
//! which are the constraints of the dual of the policy-evaluation LP. Since
//! `d(s, a) = nu(s) pi(a|s)` for the state marginal `nu`, the system is solved
//! on the state space: `(I - gamma P_pi^T) nu = (1 - gamma) mu0`.

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::linalg::ResolventSolver;
use crate::mdp::{start_return, QTable, TabularMdp, TabularPolicy};

/// Mass below which a state counts as unvisited.
pub const UNVISITED_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OccupancyDocument", into = "OccupancyDocument")]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    d: Vec<f64>,
    init_dist: Vec<f64>,
}

impl OccupancyMeasure {
    /// Wraps an occupancy table given row-major `d[s * n_actions + a]`.
    /// Only checks shape, sign and normalisation; flow feasibility is a
    /// property of the generating policy, see [`flow_residual`].
    pub fn new(
        n_states: usize,
        n_actions: usize,
        d: Vec<f64>,
        init_dist: Vec<f64>,
    ) -> Result<Self> {
        if d.len() != n_states * n_actions {
            return Err(CatError::DimensionMismatch {
                expected: n_states * n_actions,
                actual: d.len(),
                context: "occupancy table",
            });
        }
        if init_dist.len() != n_states {
            return Err(CatError::DimensionMismatch {
                expected: n_states,
                actual: init_dist.len(),
                context: "occupancy start distribution",
            });
        }
        if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(CatError::InvalidArgument(
                "occupancy entries must be finite and >= 0".into(),
            ));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CatError::InvalidArgument(format!(
                "occupancy sums to {total}"
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            d,
            init_dist,
        })
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
        self.d[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn total_mass(&self) -> f64 {
        self.d.iter().sum()
    }

    /// Marginal mass of state `s`.
    pub fn state_mass(&self, s: usize) -> f64 {
        self.d[s * self.n_actions..(s + 1) * self.n_actions]
            .iter()
            .sum()
    }

    /// `d(S) = sum_{s in S, a} d(s, a)`.
    pub fn mass_in(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.state_mass(s)).sum()
    }

    /// `<d, r>` for a row-major state-action table.
    pub fn dot(&self, table: &[f64]) -> f64 {
        self.d.iter().zip(table).map(|(d, r)| d * r).sum()
    }

    /// `(1 - t) * self + t * other`; stays in the occupancy polytope when both
    /// endpoints do.
    pub fn lerp(&self, other: &OccupancyMeasure, t: f64) -> OccupancyMeasure {
        let d = self
            .d
            .iter()
            .zip(&other.d)
            .map(|(x, y)| ((1.0 - t) * x + t * y).max(0.0))
            .collect();
        OccupancyMeasure {
            n_states: self.n_states,
            n_actions: self.n_actions,
            d,
            init_dist: self.init_dist.clone(),
        }
    }

    pub fn l1_distance(&self, other: &OccupancyMeasure) -> f64 {
        self.d
            .iter()
            .zip(&other.d)
            .map(|(x, y)| (x - y).abs())
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct OccupancyDocument {
    #[serde(default = "crate::serde_ext::schema_version")]
    schema_version: u32,
    occupancy: Vec<Vec<f64>>,
    init_dist: Vec<f64>,
}

impl TryFrom<OccupancyDocument> for OccupancyMeasure {
    type Error = CatError;

    fn try_from(doc: OccupancyDocument) -> Result<Self> {
        let n_states = doc.occupancy.len();
        let n_actions = doc.occupancy.first().map_or(0, Vec::len);
        if n_actions == 0 || doc.occupancy.iter().any(|r| r.len() != n_actions) {
            return Err(CatError::Format(
                "occupancy must be a non-empty rectangular table".into(),
            ));
        }
        OccupancyMeasure::new(n_states, n_actions, doc.occupancy.concat(), doc.init_dist)
    }
}

impl From<OccupancyMeasure> for OccupancyDocument {
    fn from(m: OccupancyMeasure) -> Self {
        OccupancyDocument {
            schema_version: crate::serde_ext::SCHEMA_VERSION,
            occupancy: m.d.chunks(m.n_actions).map(<[f64]>::to_vec).collect(),
            init_dist: m.init_dist,
        }
    }
}

/// Occupancy of `policy` from the MDP's own start distribution.
pub fn compute_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    occupancy_under(mdp, policy, mdp.init_dist())
}

/// Occupancy of `policy` when every episode starts in `s0`.
pub fn compute_occupancy_from_state(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    s0: usize,
) -> Result<OccupancyMeasure> {
    if s0 >= mdp.n_states() {
        return Err(CatError::IndexOutOfRange {
            what: "state",
            index: s0,
            size: mdp.n_states(),
        });
    }
    let mut mu0 = vec![0.0; mdp.n_states()];
    mu0[s0] = 1.0;
    occupancy_under(mdp, policy, &mu0)
}

/// Per-state occupancies for every start state, sharing one factorisation.
pub fn occupancies_from_each_state(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<Vec<OccupancyMeasure>> {
    check_policy(mdp, policy)?;
    let n = mdp.n_states();
    let solver = ResolventSolver::transposed(mdp, policy)?;
    let mut rhs = vec![0.0; n * n];
    for s in 0..n {
        rhs[s * n + s] = 1.0 - mdp.discount();
    }
    // Column s of the solution is the state marginal when starting in s.
    let nu = solver.solve_many(&rhs, n)?;
    (0..n)
        .map(|s0| {
            let marginal: Vec<f64> = (0..n).map(|s| nu[s * n + s0]).collect();
            let mut mu0 = vec![0.0; n];
            mu0[s0] = 1.0;
            from_marginal(mdp, policy, &marginal, mu0)
        })
        .collect()
}

fn check_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(CatError::InvalidArgument(
            "policy shape does not match MDP".into(),
        ));
    }
    Ok(())
}

fn occupancy_under(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu0: &[f64],
) -> Result<OccupancyMeasure> {
    check_policy(mdp, policy)?;
    let solver = ResolventSolver::transposed(mdp, policy)?;
    let rhs: Vec<f64> = mu0.iter().map(|m| (1.0 - mdp.discount()) * m).collect();
    let marginal = solver.solve(&rhs)?;
    from_marginal(mdp, policy, &marginal, mu0.to_vec())
}

fn from_marginal(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    marginal: &[f64],
    mu0: Vec<f64>,
) -> Result<OccupancyMeasure> {
    let na = mdp.n_actions();
    let mut d = Vec::with_capacity(mdp.n_states() * na);
    for (s, nu) in marginal.iter().enumerate() {
        // Round-off can leave tiny negative marginals on unreachable states.
        let nu = nu.max(0.0);
        d.extend(policy.row(s).iter().map(|p| p * nu));
    }
    OccupancyMeasure::new(mdp.n_states(), na, d, mu0)
}

/// Largest violation of the flow constraints for `d` and `policy`.
pub fn flow_residual(mdp: &TabularMdp, policy: &TabularPolicy, d: &OccupancyMeasure) -> f64 {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut inflow = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let mass = d.get(s, a);
            if mass == 0.0 {
                continue;
            }
            for (next, p) in mdp.next_dist(s, a).iter().enumerate() {
                inflow[next] += p * mass;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let pi = policy.prob(s, a);
            let rhs = (1.0 - gamma) * d.init_dist()[s] * pi + gamma * pi * inflow[s];
            worst = worst.max((d.get(s, a) - rhs).abs());
        }
    }
    worst
}

/// Policy encoded by an occupancy: `pi(a|s) = d(s, a) / sum_b d(s, b)`,
/// uniform on states with no mass.
pub fn recover_policy(d: &OccupancyMeasure) -> TabularPolicy {
    let na = d.n_actions();
    let mut probs = Vec::with_capacity(d.n_states() * na);
    for s in 0..d.n_states() {
        let mass = d.state_mass(s);
        if mass > UNVISITED_MASS {
            probs.extend((0..na).map(|a| d.get(s, a) / mass));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        }
    }
    TabularPolicy::from_probs(d.n_states(), na, probs).expect("normalised rows")
}

/// Strong-duality gap `|<d, r> - (1 - gamma) E_{mu0, pi}[Q(s0, a0)]|`.
pub fn duality_residual(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    d: &OccupancyMeasure,
    q: &QTable,
) -> f64 {
    (d.dot(mdp.reward_mean()) - start_return(mdp, policy, q)).abs()
}
