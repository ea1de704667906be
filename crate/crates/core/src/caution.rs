//! Occupancy-based caution factors.
//!
//! Every factor maps an occupancy measure to an extended real. Infeasible
//! occupancies (a barrier that has been crossed, a KL divergence with
//! mismatched support) evaluate to `f64::INFINITY`, which the transfer rules
//! treat as a disqualified candidate.

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::mdp::TabularMdp;
use crate::occupancy::OccupancyMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CautionSpec {
    None,
    /// `-log(delta - d(danger))`.
    Barrier {
        #[serde(default)]
        danger_states: Vec<usize>,
        delta: f64,
    },
    /// Per-timestep reward variance `<d, r2> - <d, r>^2`.
    Variance,
    /// `KL(d || expert)`.
    #[serde(rename = "kl")]
    KlToExpert {
        expert_occupancy: OccupancyMeasure,
    },
}

impl CautionSpec {
    pub fn barrier(danger_states: Vec<usize>, delta: f64) -> Self {
        CautionSpec::Barrier {
            danger_states,
            delta,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, CautionSpec::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CautionSpec::None => "none",
            CautionSpec::Barrier { .. } => "barrier",
            CautionSpec::Variance => "variance",
            CautionSpec::KlToExpert { .. } => "kl",
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        match self {
            CautionSpec::Barrier {
                danger_states,
                delta,
            } => {
                if !(*delta > 0.0 && *delta <= 1.0) {
                    return Err(CatError::InvalidArgument(format!(
                        "barrier delta {delta} outside (0, 1]"
                    )));
                }
                if let Some(&bad) = danger_states.iter().find(|&&s| s >= n_states) {
                    return Err(CatError::IndexOutOfRange {
                        what: "danger state",
                        index: bad,
                        size: n_states,
                    });
                }
            }
            CautionSpec::KlToExpert { expert_occupancy } => {
                if expert_occupancy.n_states() != n_states
                    || expert_occupancy.n_actions() != n_actions
                {
                    return Err(CatError::InvalidArgument(
                        "expert occupancy shape does not match MDP".into(),
                    ));
                }
            }
            CautionSpec::None | CautionSpec::Variance => {}
        }
        Ok(())
    }

    /// Caution value of `d`; `+inf` marks an infeasible occupancy.
    pub fn evaluate(&self, d: &OccupancyMeasure, mdp: &TabularMdp) -> f64 {
        match self {
            CautionSpec::None => 0.0,
            CautionSpec::Barrier {
                danger_states,
                delta,
            } => barrier_caution(d, danger_states, *delta),
            CautionSpec::Variance => variance_caution(d, mdp),
            CautionSpec::KlToExpert { expert_occupancy } => kl_caution(d, expert_occupancy),
        }
    }
}

/// `-log(delta - d(danger))`, or `+inf` once the danger mass reaches `delta`.
pub fn barrier_caution(d: &OccupancyMeasure, danger_states: &[usize], delta: f64) -> f64 {
    let slack = delta - d.mass_in(danger_states);
    if slack > 0.0 {
        -slack.ln()
    } else {
        f64::INFINITY
    }
}

/// Variance of the per-step reward when `(s, a) ~ d` and `s' ~ p(.|s, a)`.
pub fn variance_caution(d: &OccupancyMeasure, mdp: &TabularMdp) -> f64 {
    let mean = d.dot(mdp.reward_mean());
    d.dot(mdp.reward_sq_mean()) - mean * mean
}

/// `KL(d || expert)` with `0 log 0 = 0`; `+inf` when `d` puts mass where the
/// expert has none.
pub fn kl_caution(d: &OccupancyMeasure, expert: &OccupancyMeasure) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in d.values().iter().zip(expert.values()) {
        if x <= 0.0 {
            continue;
        }
        if y <= 0.0 {
            return f64::INFINITY;
        }
        total += x * (x / y).ln();
    }
    total
}

/// Analytic gradient of the caution factor with respect to the occupancy
/// table, laid out like [`OccupancyMeasure::values`].
pub fn caution_gradient(
    spec: &CautionSpec,
    d: &OccupancyMeasure,
    mdp: &TabularMdp,
) -> Result<Vec<f64>> {
    let (ns, na) = (d.n_states(), d.n_actions());
    match spec {
        CautionSpec::None => Ok(vec![0.0; ns * na]),
        CautionSpec::Barrier {
            danger_states,
            delta,
        } => {
            let slack = delta - d.mass_in(danger_states);
            if slack <= 0.0 {
                return Err(CatError::Infeasible(format!(
                    "danger occupancy {} is not below delta {delta}",
                    d.mass_in(danger_states)
                )));
            }
            let mut g = vec![0.0; ns * na];
            for &s in danger_states {
                g[s * na..(s + 1) * na].fill(1.0 / slack);
            }
            Ok(g)
        }
        CautionSpec::Variance => {
            let mean = d.dot(mdp.reward_mean());
            Ok(mdp
                .reward_sq_mean()
                .iter()
                .zip(mdp.reward_mean())
                .map(|(r2, r)| r2 - 2.0 * mean * r)
                .collect())
        }
        CautionSpec::KlToExpert { expert_occupancy } => {
            let mut g = Vec::with_capacity(ns * na);
            for (&x, &y) in d.values().iter().zip(expert_occupancy.values()) {
                if y <= 0.0 {
                    if x > 0.0 {
                        return Err(CatError::Infeasible(
                            "occupancy has mass outside the expert support".into(),
                        ));
                    }
                    // Moving mass here makes the divergence infinite.
                    g.push(f64::INFINITY);
                } else {
                    // The derivative of x log x diverges at 0; clamp so the
                    // value stays finite and strongly negative.
                    g.push((x.max(f64::MIN_POSITIVE) / y).ln() + 1.0);
                }
            }
            Ok(g)
        }
    }
}

/// Lipschitz constant `L` (with respect to the L1 norm on occupancies) and
/// bound `K` on `|rho|`, where they exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CautionBounds {
    pub lipschitz_l: Option<f64>,
    pub bound_k: Option<f64>,
}

impl CautionBounds {
    pub fn is_defined(&self) -> bool {
        self.lipschitz_l.is_some() && self.bound_k.is_some()
    }
}

/// Analytic constants valid on the region where the barrier slack is at
/// least `feasible_margin`.
///
/// * barrier: `L = 1/m`, `K = max(|log delta|, |log m|)`;
/// * variance: `L = 2 max r2 + 2 max|r|^2`, `K = max r2`;
/// * KL: undefined, the divergence is unbounded near the simplex boundary.
pub fn caution_bounds(
    spec: &CautionSpec,
    mdp: &TabularMdp,
    feasible_margin: f64,
) -> Result<CautionBounds> {
    if !(feasible_margin > 0.0) {
        return Err(CatError::InvalidArgument(format!(
            "feasible margin must be positive, got {feasible_margin}"
        )));
    }
    Ok(match spec {
        CautionSpec::None => CautionBounds {
            lipschitz_l: Some(0.0),
            bound_k: Some(0.0),
        },
        CautionSpec::Barrier { delta, .. } => {
            if feasible_margin >= *delta {
                return Err(CatError::InvalidArgument(format!(
                    "feasible margin {feasible_margin} must be below delta {delta}"
                )));
            }
            CautionBounds {
                lipschitz_l: Some(1.0 / feasible_margin),
                bound_k: Some(delta.ln().abs().max(feasible_margin.ln().abs())),
            }
        }
        CautionSpec::Variance => {
            let r2_max = mdp.reward_sq_mean().iter().fold(0.0_f64, |m, x| m.max(*x));
            let r_max = mdp.max_abs_reward();
            CautionBounds {
                lipschitz_l: Some(2.0 * r2_max + 2.0 * r_max * r_max),
                bound_k: Some(r2_max),
            }
        }
        CautionSpec::KlToExpert { .. } => CautionBounds {
            lipschitz_l: None,
            bound_k: None,
        },
    })
}
