//! Ground truth for caution-aware control on small MDPs.
//!
//! The caution-aware objective of an occupancy `d` is `<d, r> - c * rho(d)`;
//! its maximiser over the occupancy polytope is the reference the transfer
//! rules are measured against.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caution::{caution_bounds, caution_gradient, CautionSpec};
use crate::error::{CatError, Result};
use crate::generate::{random_mdp, random_simplex};
use crate::mdp::{policy_evaluation, value_iteration, QTable, TabularMdp, TabularPolicy};
use crate::occupancy::{
    compute_occupancy, occupancies_from_each_state, recover_policy, OccupancyMeasure,
};
use crate::successor::FeatureMap;
use crate::transfer::{
    cat_transfer, evaluate_sources, source_cautions, EvaluationMode, SourceEntry, SourceLibrary,
};

/// Largest number of deterministic policies [`enumerate_caution_optimal`]
/// will visit.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

const ORACLE_TOL: f64 = 1e-11;
const BOUND_SLACK: f64 = 1e-9;

/// `<d, r> - c * rho(d)`; `-inf` when the caution is infinite and `c > 0`.
pub fn caution_aware_objective(
    mdp: &TabularMdp,
    spec: &CautionSpec,
    c: f64,
    d: &OccupancyMeasure,
) -> f64 {
    let ret = d.dot(mdp.reward_mean());
    if c == 0.0 {
        ret
    } else {
        ret - c * spec.evaluate(d, mdp)
    }
}

fn n_deterministic_policies(mdp: &TabularMdp) -> Option<u64> {
    let mut n: u64 = 1;
    for _ in 0..mdp.n_states() {
        n = n.checked_mul(mdp.n_actions() as u64)?;
        if n > ENUMERATION_LIMIT {
            return None;
        }
    }
    Some(n)
}

/// Best deterministic policy for the caution-aware objective, by exhaustive
/// search. Ties keep the first policy in lexicographic action order.
pub fn enumerate_caution_optimal(
    mdp: &TabularMdp,
    spec: &CautionSpec,
    c: f64,
) -> Result<(TabularPolicy, f64)> {
    spec.validate(mdp.n_states(), mdp.n_actions())?;
    if n_deterministic_policies(mdp).is_none() {
        return Err(CatError::EnumerationTooLarge {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; ns];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let pi = TabularPolicy::deterministic(na, &actions)?;
        let value = caution_aware_objective(mdp, spec, c, &compute_occupancy(mdp, &pi)?);
        if best
            .as_ref()
            .map_or(value > f64::NEG_INFINITY, |(_, b)| value > *b)
        {
            best = Some((actions.clone(), value));
        }
        // Odometer with the last state as the fastest digit.
        let mut k = ns;
        loop {
            if k == 0 {
                let (acts, value) = best.ok_or_else(|| {
                    CatError::Infeasible("every deterministic policy has infinite caution".into())
                })?;
                return Ok((TabularPolicy::deterministic(na, &acts)?, value));
            }
            k -= 1;
            actions[k] += 1;
            if actions[k] < na {
                break;
            }
            actions[k] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwSolution {
    pub occupancy: OccupancyMeasure,
    pub policy: TabularPolicy,
    pub objective: f64,
    /// `<grad f(d), v - d>` at the final iterate.
    pub fw_gap: f64,
    pub iterations: usize,
    /// Objective after each iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Vertex of the occupancy polytope that maximises `<g, d>`.
fn linear_oracle(mdp: &TabularMdp, g: &[f64]) -> Result<OccupancyMeasure> {
    let lmo = TabularMdp::from_moments(
        mdp.n_states(),
        mdp.n_actions(),
        mdp.transition().to_vec(),
        g.to_vec(),
        vec![0.0; g.len()],
        mdp.discount(),
        mdp.init_dist().to_vec(),
    )?;
    let (_, pi) = value_iteration(&lmo, ORACLE_TOL)?;
    compute_occupancy(mdp, &pi)
}

/// `r - c * grad rho`, with infinite penalties replaced by a finite cost
/// larger than any achievable return difference.
fn objective_gradient(
    mdp: &TabularMdp,
    spec: &CautionSpec,
    c: f64,
    d: &OccupancyMeasure,
) -> Result<Vec<f64>> {
    if c == 0.0 {
        return Ok(mdp.reward_mean().to_vec());
    }
    let grad = caution_gradient(spec, d, mdp)?;
    let mut g: Vec<f64> = mdp
        .reward_mean()
        .iter()
        .zip(&grad)
        .map(|(r, x)| r - c * x)
        .collect();
    let finite = g.iter().copied().filter(|x| x.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if lo.is_finite() {
        let penalty = lo - 2.0 * (hi - lo + 1.0) / (1.0 - mdp.discount());
        g.iter_mut()
            .filter(|x| !x.is_finite())
            .for_each(|x| *x = penalty);
    }
    Ok(g)
}

fn directional_derivative(g: &[f64], from: &OccupancyMeasure, to: &OccupancyMeasure) -> f64 {
    // Skip untouched entries so infinite gradient components do not poison
    // the sum with 0 * inf.
    g.iter()
        .zip(from.values().iter().zip(to.values()))
        .filter(|(_, (a, b))| a != b)
        .map(|(gi, (a, b))| gi * (b - a))
        .sum()
}

fn starting_point(mdp: &TabularMdp, spec: &CautionSpec, c: f64) -> Result<OccupancyMeasure> {
    let uniform = compute_occupancy(
        mdp,
        &TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()),
    )?;
    if caution_aware_objective(mdp, spec, c, &uniform).is_finite() {
        return Ok(uniform);
    }
    let fallback = match spec {
        CautionSpec::Barrier { danger_states, .. } => {
            let mut cost = vec![0.0; mdp.n_states() * mdp.n_actions()];
            for &s in danger_states {
                cost[s * mdp.n_actions()..(s + 1) * mdp.n_actions()].fill(-1.0);
            }
            linear_oracle(mdp, &cost)?
        }
        CautionSpec::KlToExpert { expert_occupancy } => {
            compute_occupancy(mdp, &recover_policy(expert_occupancy))?
        }
        CautionSpec::None | CautionSpec::Variance => uniform,
    };
    if caution_aware_objective(mdp, spec, c, &fallback).is_finite() {
        Ok(fallback)
    } else {
        Err(CatError::Infeasible(format!(
            "no feasible starting occupancy for the {} caution (caution {} at the safest start)",
            spec.name(),
            spec.evaluate(&fallback, mdp)
        )))
    }
}

/// Frank-Wolfe ascent on the caution-aware objective over the occupancy
/// polytope.
///
/// The linear oracle is an MDP solve on the reward `r - c * grad rho(d)`.
/// Steps use an exact line search on the segment towards the oracle vertex;
/// for the barrier the segment is cut where it meets the danger allowance,
/// so every iterate stays strictly feasible. The objective never decreases.
pub fn frank_wolfe_dual_v(
    mdp: &TabularMdp,
    spec: &CautionSpec,
    c: f64,
    max_iters: usize,
    tol: f64,
) -> Result<FwSolution> {
    spec.validate(mdp.n_states(), mdp.n_actions())?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(CatError::InvalidArgument(format!(
            "caution weight must be >= 0, got {c}"
        )));
    }
    let h = |d: &OccupancyMeasure| caution_aware_objective(mdp, spec, c, d);

    let mut d = starting_point(mdp, spec, c)?;
    let mut value = h(&d);
    let mut trace = vec![value];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        let g = objective_gradient(mdp, spec, c, &d)?;
        let v = linear_oracle(mdp, &g)?;
        gap = directional_derivative(&g, &d, &v);
        if gap <= tol {
            break;
        }
        iterations += 1;

        let mut t_hi = 1.0;
        if let CautionSpec::Barrier {
            danger_states,
            delta,
        } = spec
        {
            let (m0, m1) = (d.mass_in(danger_states), v.mass_in(danger_states));
            if c > 0.0 && m1 >= *delta {
                t_hi = ((delta - m0) / (m1 - m0)) * (1.0 - 1e-9);
            }
        }
        let along = |t: f64| d.lerp(&v, t);
        let slope = |t: f64| -> f64 {
            let p = along(t);
            objective_gradient(mdp, spec, c, &p)
                .map_or(f64::NAN, |g| directional_derivative(&g, &d, &v))
        };
        let mut candidates = vec![t_hi];
        if slope(0.0) > 0.0 && slope(t_hi) < 0.0 {
            let (mut lo, mut hi) = (0.0, t_hi);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            candidates.push(0.5 * (lo + hi));
        }
        let mut best_t = 0.0;
        for t in candidates {
            let candidate = h(&along(t));
            if candidate > value {
                value = candidate;
                best_t = t;
            }
        }
        if best_t == 0.0 {
            // No improving step along the oracle direction: a stationary point
            // for concave objectives, a local stall otherwise.
            trace.push(value);
            break;
        }
        d = along(best_t);
        trace.push(value);
    }
    let policy = recover_policy(&d);
    Ok(FwSolution {
        occupancy: d,
        policy,
        objective: value,
        fw_gap: gap,
        iterations,
        trace,
    })
}

/// One source's contribution to a suboptimality bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub source: usize,
    /// `max |r_i - r_j|` or `phi_max * ||w_i - w_j||`.
    pub reward_gap: f64,
    /// `2 / (1 - gamma) * reward_gap`.
    pub reward_term: f64,
    /// `(4 L + K) c`.
    pub caution_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Enumeration,
    FrankWolfe,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(default = "crate::serde_ext::schema_version")]
    pub schema_version: u32,
    /// `max_{s,a} |Q~*(s,a) - Q~cat(s,a)|`; absent for the corollary alone.
    pub lhs: Option<f64>,
    /// `min_j` of the per-source totals; `+inf` (written as `null`) when the
    /// constants are undefined.
    #[serde(with = "crate::serde_ext::ext_real")]
    pub rhs: f64,
    pub per_task_terms: Vec<BoundTerm>,
    pub holds: Option<bool>,
    /// `false` when `L` or `K` is undefined for the caution.
    pub checkable: bool,
    pub lipschitz_l: Option<f64>,
    pub bound_k: Option<f64>,
    pub caution_weight: f64,
    pub discount: f64,
    /// Whether the oracle policy, the transferred policy and every source keep
    /// the barrier slack at least `feasible_margin`.
    pub margin_valid: bool,
    /// `max_{s -> s'} |rho(d_s) - rho(d_s')|` over transitions of the
    /// transferred policy, using per-state occupancies.
    #[serde(with = "crate::serde_ext::ext_real")]
    pub caution_transition_gap: f64,
    pub oracle: OracleKind,
    pub corollary_rhs: Option<f64>,
}

impl BoundReport {
    /// `rhs - lhs`, the unused part of the bound.
    pub fn slack(&self) -> Option<f64> {
        self.lhs.map(|lhs| self.rhs - lhs)
    }
}

fn caution_adjusted_q(
    mdp: &TabularMdp,
    spec: &CautionSpec,
    pi: &TabularPolicy,
) -> Result<(QTable, f64)> {
    let q = policy_evaluation(mdp, pi, ORACLE_TOL)?;
    let rho = spec.evaluate(&compute_occupancy(mdp, pi)?, mdp);
    Ok((q, rho))
}

fn max_adjusted_gap(a: &(QTable, f64), b: &(QTable, f64), c: f64) -> f64 {
    let shift = if c == 0.0 { 0.0 } else { c * (a.1 - b.1) };
    a.0.values()
        .iter()
        .zip(b.0.values())
        .map(|(x, y)| (x - y - shift).abs())
        .fold(
            0.0,
            |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x) },
        )
}

fn caution_transition_gap(mdp: &TabularMdp, spec: &CautionSpec, pi: &TabularPolicy) -> Result<f64> {
    let per_state: Vec<f64> = occupancies_from_each_state(mdp, pi)?
        .iter()
        .map(|d| spec.evaluate(d, mdp))
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if pi.prob(s, a) == 0.0 {
                continue;
            }
            for (next, &p) in mdp.next_dist(s, a).iter().enumerate() {
                if p == 0.0 || per_state[s] == per_state[next] {
                    continue;
                }
                worst = worst.max((per_state[s] - per_state[next]).abs());
            }
        }
    }
    Ok(worst)
}

fn reward_gap(a: &TabularMdp, b: &TabularMdp) -> f64 {
    a.reward_mean()
        .iter()
        .zip(b.reward_mean())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn bound_terms(gaps: &[f64], gamma: f64, l: f64, k: f64, c: f64) -> Vec<BoundTerm> {
    gaps.iter()
        .enumerate()
        .map(|(j, &gap)| {
            let reward_term = 2.0 / (1.0 - gamma) * gap;
            let caution_term = (4.0 * l + k) * c;
            BoundTerm {
                source: j,
                reward_gap: gap,
                reward_term,
                caution_term,
                total: reward_term + caution_term,
            }
        })
        .collect()
}

fn min_total(terms: &[BoundTerm]) -> f64 {
    terms.iter().map(|t| t.total).fold(f64::INFINITY, f64::min)
}

/// Empirical check of the transfer suboptimality bound on one instance.
///
/// The caution-aware optimum comes from enumeration when the policy count is
/// within [`ENUMERATION_LIMIT`] and from Frank-Wolfe otherwise. `Q~` is the
/// evaluated action value minus `c` times the task-level caution of the
/// policy's occupancy.
pub fn check_theorem1(
    mdp_test: &TabularMdp,
    source_tasks: &[TabularMdp],
    library: &SourceLibrary,
    spec: &CautionSpec,
    c: f64,
    feasible_margin: f64,
) -> Result<BoundReport> {
    if source_tasks.len() != library.len() {
        return Err(CatError::DimensionMismatch {
            expected: library.len(),
            actual: source_tasks.len(),
            context: "source tasks",
        });
    }
    if let Some(bad) = source_tasks.iter().find(|m| !m.same_dynamics(mdp_test)) {
        return Err(CatError::InvalidArgument(format!(
            "source task with {} states does not share the test dynamics",
            bad.n_states()
        )));
    }
    let bounds = caution_bounds(spec, mdp_test, feasible_margin)?;
    let gamma = mdp_test.discount();
    let gaps: Vec<f64> = source_tasks
        .iter()
        .map(|m| reward_gap(mdp_test, m))
        .collect();

    let q_sources = evaluate_sources(
        mdp_test,
        library,
        EvaluationMode::Iterative,
        None,
        ORACLE_TOL,
    )?;
    let cautions = source_cautions(mdp_test, library, spec)?;
    let cat = cat_transfer(&q_sources, &cautions, c)?;

    let (oracle_policy, oracle) = match enumerate_caution_optimal(mdp_test, spec, c) {
        Ok((pi, _)) => (pi, OracleKind::Enumeration),
        Err(CatError::EnumerationTooLarge { .. }) => (
            frank_wolfe_dual_v(mdp_test, spec, c, 500, 1e-10)?.policy,
            OracleKind::FrankWolfe,
        ),
        Err(e) => return Err(e),
    };
    let optimum = caution_adjusted_q(mdp_test, spec, &oracle_policy)?;
    let transferred = caution_adjusted_q(mdp_test, spec, &cat.policy)?;
    let lhs = max_adjusted_gap(&optimum, &transferred, c);

    let margin_valid = match spec {
        CautionSpec::Barrier {
            danger_states,
            delta,
        } => {
            let limit = delta - feasible_margin;
            let mut policies = vec![&oracle_policy, &cat.policy];
            policies.extend(library.policies());
            policies
                .into_iter()
                .map(|pi| {
                    compute_occupancy(mdp_test, pi).map(|d| d.mass_in(danger_states) <= limit)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .all(|ok| ok)
        }
        _ => true,
    };
    let transition_gap = caution_transition_gap(mdp_test, spec, &cat.policy)?;

    let (terms, rhs, holds) = match (bounds.lipschitz_l, bounds.bound_k) {
        (Some(l), Some(k)) => {
            let terms = bound_terms(&gaps, gamma, l, k, c);
            let rhs = min_total(&terms);
            (terms, rhs, Some(lhs <= rhs + BOUND_SLACK))
        }
        _ => (Vec::new(), f64::INFINITY, None),
    };
    Ok(BoundReport {
        schema_version: crate::serde_ext::SCHEMA_VERSION,
        lhs: Some(lhs),
        rhs,
        per_task_terms: terms,
        holds,
        checkable: bounds.is_defined(),
        lipschitz_l: bounds.lipschitz_l,
        bound_k: bounds.bound_k,
        caution_weight: c,
        discount: gamma,
        margin_valid,
        caution_transition_gap: transition_gap,
        oracle,
        corollary_rhs: None,
    })
}

/// Feature-space form of the bound: the reward gap is replaced by
/// `phi_max * ||w_i - w_j||_2`.
pub fn check_corollary1(
    phi: &FeatureMap,
    w_test: &[f64],
    w_sources: &[Vec<f64>],
    lipschitz_l: f64,
    bound_k: f64,
    c: f64,
    gamma: f64,
) -> Result<BoundReport> {
    if w_sources.is_empty() {
        return Err(CatError::EmptyLibrary);
    }
    for w in std::iter::once(w_test).chain(w_sources.iter().map(Vec::as_slice)) {
        if w.len() != phi.dim() {
            return Err(CatError::DimensionMismatch {
                expected: phi.dim(),
                actual: w.len(),
                context: "task weights",
            });
        }
    }
    let phi_max = phi.phi_max();
    let gaps: Vec<f64> = w_sources
        .iter()
        .map(|w| {
            phi_max
                * w.iter()
                    .zip(w_test)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
        })
        .collect();
    let terms = bound_terms(&gaps, gamma, lipschitz_l, bound_k, c);
    let rhs = min_total(&terms);
    Ok(BoundReport {
        schema_version: crate::serde_ext::SCHEMA_VERSION,
        lhs: None,
        rhs,
        per_task_terms: terms,
        holds: None,
        checkable: true,
        lipschitz_l: Some(lipschitz_l),
        bound_k: Some(bound_k),
        caution_weight: c,
        discount: gamma,
        margin_valid: true,
        caution_transition_gap: 0.0,
        oracle: OracleKind::None,
        corollary_rhs: Some(rhs),
    })
}

/// How the source rewards of a random instance relate to the test reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// Source 0 solves the test task itself and `c = 0`.
    IdenticalRiskNeutral,
    /// Source 0 solves the test task itself, `c > 0`.
    IdenticalCautious,
    /// Source weights are small perturbations of the test weights.
    Perturbed,
    /// Source weights are drawn independently.
    Independent,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 4] = [
        InstanceKind::IdenticalRiskNeutral,
        InstanceKind::IdenticalCautious,
        InstanceKind::Perturbed,
        InstanceKind::Independent,
    ];
}

/// A random test task with source tasks that share its dynamics, rewards
/// linear in a random feature table.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub kind: InstanceKind,
    pub mdp_test: TabularMdp,
    pub source_tasks: Vec<TabularMdp>,
    pub library: SourceLibrary,
    pub spec: CautionSpec,
    pub c: f64,
    pub features: FeatureMap,
    pub w_test: Vec<f64>,
    pub w_sources: Vec<Vec<f64>>,
}

pub const INSTANCE_FEATURE_DIM: usize = 3;
pub const INSTANCE_DELTA: f64 = 0.5;

/// Draws one instance: 2 to 6 states, 2 actions, discount in `[0.5, 0.9]`,
/// 2 or 3 optimal source policies, one danger state with a barrier caution
/// and `c` uniform in `[0, 1]` (exactly 0 for
/// [`InstanceKind::IdenticalRiskNeutral`]).
pub fn random_bound_instance<R: Rng + ?Sized>(
    rng: &mut R,
    kind: InstanceKind,
) -> Result<BoundInstance> {
    let ns = rng.gen_range(2..=6);
    let na = 2;
    let gamma = rng.gen_range(0.5..0.9);
    let base = random_mdp(rng, ns, na, gamma).with_init_dist(random_simplex(rng, ns))?;

    let dim = INSTANCE_FEATURE_DIM;
    let table = (0..ns * na * ns * dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let features = FeatureMap::table(ns, na, dim, table)?;
    let draw = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let w_test = draw(rng);
    let n_sources = rng.gen_range(2..=3);
    let w_sources: Vec<Vec<f64>> = (0..n_sources)
        .map(|j| match kind {
            InstanceKind::IdenticalRiskNeutral | InstanceKind::IdenticalCautious if j == 0 => {
                w_test.clone()
            }
            InstanceKind::Perturbed => w_test
                .iter()
                .map(|w| w + rng.gen_range(-0.1..0.1))
                .collect(),
            _ => draw(rng),
        })
        .collect();

    let mdp_test = base.with_reward_raw(features.rewards(na, &w_test)?)?;
    let mut source_tasks = Vec::with_capacity(n_sources);
    let mut entries = Vec::with_capacity(n_sources);
    for (j, w) in w_sources.iter().enumerate() {
        let task = base.with_reward_raw(features.rewards(na, w)?)?;
        let (_, pi) = value_iteration(&task, ORACLE_TOL)?;
        entries.push(SourceEntry::new(
            format!("source-{j}"),
            format!("task-{j}"),
            pi,
        ));
        source_tasks.push(task);
    }
    let c = match kind {
        InstanceKind::IdenticalRiskNeutral => 0.0,
        _ => rng.gen_range(0.0..1.0),
    };
    Ok(BoundInstance {
        kind,
        mdp_test,
        source_tasks,
        library: SourceLibrary::new(entries)?,
        spec: CautionSpec::barrier(vec![rng.gen_range(0..ns)], INSTANCE_DELTA),
        c,
        features,
        w_test,
        w_sources,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub kind: InstanceKind,
    pub n_states: usize,
    pub report: BoundReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub records: Vec<InstanceRecord>,
    /// Draws discarded because some policy left the margin region or no
    /// policy was feasible.
    pub rejected: usize,
}

impl SuiteOutcome {
    pub fn n_holding(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.report.holds == Some(true))
            .count()
    }

    /// Largest `lhs / rhs` over instances with a positive right-hand side.
    pub fn max_slack_utilization(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| r.report.rhs > 0.0)
            .filter_map(|r| r.report.lhs.map(|lhs| lhs / r.report.rhs))
            .fold(0.0, f64::max)
    }
}

const MAX_REDRAWS: usize = 10_000;

/// Runs the bound check on `n_instances` seeded random instances, cycling
/// through [`InstanceKind::ALL`]. Draws whose policies violate the feasible
/// margin are discarded and redrawn, since the constants only hold there.
pub fn randomized_theorem1_suite(
    n_instances: usize,
    seed: u64,
    feasible_margin: f64,
) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_instances);
    let mut rejected = 0;
    for index in 0..n_instances {
        let kind = InstanceKind::ALL[index % InstanceKind::ALL.len()];
        let mut redraws = 0;
        let (instance, mut report) = loop {
            let instance = random_bound_instance(&mut rng, kind)?;
            let checked = check_theorem1(
                &instance.mdp_test,
                &instance.source_tasks,
                &instance.library,
                &instance.spec,
                instance.c,
                feasible_margin,
            );
            match checked {
                Ok(report) if report.margin_valid => break (instance, report),
                Ok(_) | Err(CatError::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
            rejected += 1;
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(CatError::NumericalFailure(
                    "could not draw an instance inside the feasible margin".into(),
                ));
            }
        };
        let corollary = check_corollary1(
            &instance.features,
            &instance.w_test,
            &instance.w_sources,
            report.lipschitz_l.unwrap_or(0.0),
            report.bound_k.unwrap_or(0.0),
            instance.c,
            instance.mdp_test.discount(),
        )?;
        report.corollary_rhs = Some(corollary.rhs);
        records.push(InstanceRecord {
            index,
            kind,
            n_states: instance.mdp_test.n_states(),
            report,
        });
    }
    Ok(SuiteOutcome { records, rejected })
}
