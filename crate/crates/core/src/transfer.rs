//! Composition of source policies into a policy for a test task.
//!
//! Every rule scores each `(source j, action b)` in each state as
//! `W_j(s, b) = Q_j(s, b) - c * rho_j` and acts greedily on the best score,
//! breaking ties towards the lowest `(j, b)` pair.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caution::CautionSpec;
use crate::error::{CatError, Result};
use crate::mdp::{policy_evaluation, QTable, TabularMdp, TabularPolicy};
use crate::occupancy::{compute_occupancy, OccupancyMeasure};
use crate::successor::{sf_evaluate, SuccessorFeatureTable};

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEntry {
    pub policy_id: String,
    pub source_task_id: String,
    pub policy: TabularPolicy,
    pub successor_features: Option<SuccessorFeatureTable>,
    /// Occupancy under the shared dynamics, cached at training time.
    pub occupancy: Option<OccupancyMeasure>,
}

impl SourceEntry {
    pub fn new(
        policy_id: impl Into<String>,
        source_task_id: impl Into<String>,
        policy: TabularPolicy,
    ) -> Self {
        Self {
            policy_id: policy_id.into(),
            source_task_id: source_task_id.into(),
            policy,
            successor_features: None,
            occupancy: None,
        }
    }

    pub fn with_successor_features(mut self, sf: SuccessorFeatureTable) -> Self {
        self.successor_features = Some(sf);
        self
    }

    pub fn with_occupancy(mut self, d: OccupancyMeasure) -> Self {
        self.occupancy = Some(d);
        self
    }

    fn occupancy_on(&self, mdp: &TabularMdp) -> Result<OccupancyMeasure> {
        match &self.occupancy {
            Some(d) => Ok(d.clone()),
            None => compute_occupancy(mdp, &self.policy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceLibrary {
    entries: Vec<SourceEntry>,
}

impl SourceLibrary {
    pub fn new(entries: Vec<SourceEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.policy_id.as_str()) {
                return Err(CatError::InvalidArgument(format!(
                    "duplicate policy id `{}`",
                    e.policy_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[SourceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn policies(&self) -> impl Iterator<Item = &TabularPolicy> {
        self.entries.iter().map(|e| &e.policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Policy evaluation on the test MDP.
    Iterative,
    /// `psi . w` from stored successor-feature tables.
    SuccessorFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub policy: TabularPolicy,
    /// Index of the winning source in each state.
    pub winner: Vec<usize>,
    /// `W_j(s, b)` at `[(s * n_actions + b) * n_sources + j]`; disqualified
    /// sources score `-inf` (written as `null`).
    #[serde(with = "crate::serde_ext::neg_ext_real_vec")]
    pub scores: Vec<f64>,
    pub n_sources: usize,
    /// Per-source caution values; `+inf` (written as `null`) is infeasible.
    #[serde(with = "crate::serde_ext::ext_real_vec")]
    pub cautions: Vec<f64>,
    pub caution_weight: f64,
    /// Set when every source was disqualified and the rule fell back to the
    /// risk-neutral argmax.
    pub all_disqualified: bool,
}

impl TransferResult {
    pub fn score(&self, s: usize, a: usize, j: usize) -> f64 {
        let na = self.policy.n_actions();
        self.scores[(s * na + a) * self.n_sources + j]
    }

    /// Deterministic action per state.
    pub fn actions(&self) -> Vec<usize> {
        self.policy
            .actions()
            .expect("transfer policies are deterministic")
    }
}

/// Action values of every source policy on the test task.
pub fn evaluate_sources(
    mdp_test: &TabularMdp,
    library: &SourceLibrary,
    mode: EvaluationMode,
    w_test: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<QTable>> {
    if library.is_empty() {
        return Err(CatError::EmptyLibrary);
    }
    match mode {
        EvaluationMode::Iterative => library
            .policies()
            .map(|pi| policy_evaluation(mdp_test, pi, tol))
            .collect(),
        EvaluationMode::SuccessorFeatures => {
            let w = w_test.ok_or_else(|| {
                CatError::InvalidArgument(
                    "successor-feature evaluation needs test-task weights".into(),
                )
            })?;
            library
                .entries()
                .iter()
                .map(|e| {
                    let sf = e
                        .successor_features
                        .as_ref()
                        .ok_or_else(|| CatError::MissingSuccessorFeatures(e.policy_id.clone()))?;
                    sf_evaluate(sf, w)
                })
                .collect()
        }
    }
}

/// Greedy composition on `Q` alone.
pub fn risk_neutral_transfer(q_tables: &[QTable]) -> Result<TransferResult> {
    cat_transfer(q_tables, &vec![0.0; q_tables.len()], 0.0)
}

/// Caution-aware composition with per-source caution values.
///
/// With `c = 0` the scores are the action values exactly. With `c > 0`,
/// sources whose caution is `+inf` are disqualified; if that removes every
/// source the risk-neutral argmax is used and `all_disqualified` is set.
pub fn cat_transfer(q_tables: &[QTable], cautions: &[f64], c: f64) -> Result<TransferResult> {
    let first = q_tables.first().ok_or(CatError::EmptyLibrary)?;
    if cautions.len() != q_tables.len() {
        return Err(CatError::DimensionMismatch {
            expected: q_tables.len(),
            actual: cautions.len(),
            context: "caution values",
        });
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(CatError::InvalidArgument(format!(
            "caution weight must be >= 0, got {c}"
        )));
    }
    if cautions.iter().any(|x| x.is_nan()) {
        return Err(CatError::InvalidArgument(
            "caution values must not be NaN".into(),
        ));
    }
    let (ns, na, nj) = (first.n_states(), first.n_actions(), q_tables.len());
    if q_tables
        .iter()
        .any(|q| q.n_states() != ns || q.n_actions() != na)
    {
        return Err(CatError::InvalidArgument(
            "source Q tables differ in shape".into(),
        ));
    }

    let mut scores = vec![0.0; ns * na * nj];
    for (j, q) in q_tables.iter().enumerate() {
        let penalty = if c == 0.0 { 0.0 } else { c * cautions[j] };
        for s in 0..ns {
            for a in 0..na {
                scores[(s * na + a) * nj + j] = if penalty.is_infinite() {
                    f64::NEG_INFINITY
                } else {
                    q.get(s, a) - penalty
                };
            }
        }
    }
    let all_disqualified = scores.iter().all(|w| *w == f64::NEG_INFINITY);

    let mut winner = Vec::with_capacity(ns);
    let mut actions = Vec::with_capacity(ns);
    for s in 0..ns {
        let value = |j: usize, a: usize| {
            if all_disqualified {
                q_tables[j].get(s, a)
            } else {
                scores[(s * na + a) * nj + j]
            }
        };
        let (mut best_j, mut best_a) = (0, 0);
        let mut best = value(0, 0);
        for j in 0..nj {
            for a in 0..na {
                let v = value(j, a);
                if v > best {
                    best = v;
                    best_j = j;
                    best_a = a;
                }
            }
        }
        winner.push(best_j);
        actions.push(best_a);
    }

    Ok(TransferResult {
        policy: TabularPolicy::deterministic(na, &actions)?,
        winner,
        scores,
        n_sources: nj,
        cautions: cautions.to_vec(),
        caution_weight: c,
        all_disqualified,
    })
}

/// Per-source caution values `rho(d^{pi_j})` on the test task.
pub fn source_cautions(
    mdp_test: &TabularMdp,
    library: &SourceLibrary,
    spec: &CautionSpec,
) -> Result<Vec<f64>> {
    spec.validate(mdp_test.n_states(), mdp_test.n_actions())?;
    library
        .entries()
        .iter()
        .map(|e| Ok(spec.evaluate(&e.occupancy_on(mdp_test)?, mdp_test)))
        .collect()
}

/// Caution-aware transfer with iterative evaluation of the sources.
pub fn cat_iterative_transfer(
    mdp_test: &TabularMdp,
    library: &SourceLibrary,
    spec: &CautionSpec,
    c: f64,
    tol: f64,
) -> Result<TransferResult> {
    let q = evaluate_sources(mdp_test, library, EvaluationMode::Iterative, None, tol)?;
    compose(mdp_test, library, &q, spec, c)
}

/// Caution-aware transfer with successor-feature evaluation: no MDP solve is
/// performed when the library carries cached occupancies.
pub fn cat_sf_transfer(
    library: &SourceLibrary,
    w_test: &[f64],
    spec: &CautionSpec,
    c: f64,
    mdp_test: &TabularMdp,
) -> Result<TransferResult> {
    let q = evaluate_sources(
        mdp_test,
        library,
        EvaluationMode::SuccessorFeatures,
        Some(w_test),
        1.0,
    )?;
    compose(mdp_test, library, &q, spec, c)
}

fn compose(
    mdp_test: &TabularMdp,
    library: &SourceLibrary,
    q: &[QTable],
    spec: &CautionSpec,
    c: f64,
) -> Result<TransferResult> {
    if spec.is_none() {
        return risk_neutral_transfer(q);
    }
    let cautions = source_cautions(mdp_test, library, spec)?;
    cat_transfer(q, &cautions, c)
}

/// Mean and variance of sampled discounted returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl ReturnMoments {
    pub fn std_error_of_mean(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}

pub(crate) fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the round-off gap above the cumulative sum.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Monte-Carlo moments of the discounted return `G` truncated at `horizon`,
/// starting from `mu0`. Episode `k` uses its own stream derived from
/// `(seed, k)`.
pub fn sample_return_moments(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<ReturnMoments> {
    if n_rollouts == 0 {
        return Err(CatError::InvalidArgument(
            "need at least one rollout".into(),
        ));
    }
    let gamma = mdp.discount();
    // Welford: identical samples give exactly zero variance.
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n_rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut s = sample_index(mdp.init_dist(), rng.gen());
        let mut g = 0.0;
        let mut discount = 1.0;
        for _ in 0..horizon {
            let a = sample_index(policy.row(s), rng.gen());
            let next = sample_index(mdp.next_dist(s, a), rng.gen());
            g += discount * mdp.transition_reward(s, a, next);
            discount *= gamma;
            s = next;
        }
        let delta = g - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (g - mean);
    }
    let variance = if n_rollouts > 1 {
        m2 / (n_rollouts - 1) as f64
    } else {
        0.0
    };
    Ok(ReturnMoments {
        n: n_rollouts,
        mean,
        variance,
    })
}

/// Baseline: penalise each source by the sampled variance of its
/// trajectory return, `W = Q - c * Var[G]`.
pub fn primal_variance_transfer(
    mdp_test: &TabularMdp,
    library: &SourceLibrary,
    c: f64,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransferResult> {
    let q = evaluate_sources(
        mdp_test,
        library,
        EvaluationMode::Iterative,
        None,
        crate::DEFAULT_TOL,
    )?;
    let variances = library
        .entries()
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let source_seed = seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            sample_return_moments(mdp_test, &e.policy, n_rollouts, horizon, source_seed)
                .map(|m| m.variance)
        })
        .collect::<Result<Vec<_>>>()?;
    cat_transfer(&q, &variances, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_deterministic_policy, random_mdp};
    use crate::mdp::{greedy_policy, value_iteration};
    use rand::SeedableRng;

    fn q(ns: usize, na: usize, v: &[f64]) -> QTable {
        QTable::new(ns, na, v.to_vec()).unwrap()
    }

    #[test]
    fn single_source_is_greedy() {
        let q1 = q(3, 2, &[1.0, 2.0, 5.0, 4.0, 0.0, 0.0]);
        let res = risk_neutral_transfer(std::slice::from_ref(&q1)).unwrap();
        assert_eq!(res.policy, greedy_policy(&q1));
        assert_eq!(res.winner, vec![0; 3]);
    }

    #[test]
    fn dominating_source_wins() {
        let q1 = q(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let q2 = q(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let res = risk_neutral_transfer(&[q1, q2]).unwrap();
        assert_eq!(res.winner, vec![1, 1]);
        assert_eq!(res.actions(), vec![1, 1]);
    }

    #[test]
    fn zero_weight_equals_risk_neutral() {
        let q1 = q(2, 2, &[1.0, 2.0, 3.0, 0.5]);
        let q2 = q(2, 2, &[1.5, 0.0, 2.0, 4.0]);
        let rn = risk_neutral_transfer(&[q1.clone(), q2.clone()]).unwrap();
        let cat = cat_transfer(&[q1.clone(), q2.clone()], &[3.0, f64::INFINITY], 0.0).unwrap();
        assert_eq!(rn.policy, cat.policy);
        assert_eq!(rn.winner, cat.winner);
        assert_eq!(rn.scores, cat.scores);
        assert_eq!(cat.scores[..2], [q1.get(0, 0), q2.get(0, 0)]);
    }

    #[test]
    fn caution_breaks_ties() {
        let q1 = q(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let res = cat_transfer(&[q1.clone(), q1.clone()], &[5.0, 0.0], 1.0).unwrap();
        assert_eq!(res.winner, vec![1, 1]);
        let tie = cat_transfer(&[q1.clone(), q1], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(tie.winner, vec![0, 0]);
    }

    #[test]
    fn large_weight_picks_min_caution() {
        let q1 = q(2, 2, &[10.0, 9.0, 8.0, 7.0]);
        let q2 = q(2, 2, &[0.0, 1.0, 0.0, 2.0]);
        let q3 = q(2, 2, &[5.0, 5.0, 5.0, 5.0]);
        let res = cat_transfer(&[q1, q2, q3], &[0.3, 0.1, 0.2], 1e6).unwrap();
        assert_eq!(res.winner, vec![1, 1]);
    }

    #[test]
    fn infeasible_sources_are_disqualified() {
        let q1 = q(1, 2, &[10.0, 0.0]);
        let q2 = q(1, 2, &[0.0, 1.0]);
        let res = cat_transfer(&[q1.clone(), q2.clone()], &[f64::INFINITY, 0.5], 1.0).unwrap();
        assert_eq!((res.winner[0], res.actions()[0]), (1, 1));
        assert!(!res.all_disqualified);

        let res = cat_transfer(&[q1, q2], &[f64::INFINITY, f64::INFINITY], 1.0).unwrap();
        assert!(res.all_disqualified);
        assert_eq!((res.winner[0], res.actions()[0]), (0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            risk_neutral_transfer(&[]),
            Err(CatError::EmptyLibrary)
        ));
        let q1 = q(1, 1, &[0.0]);
        assert!(cat_transfer(std::slice::from_ref(&q1), &[], 1.0).is_err());
        assert!(cat_transfer(std::slice::from_ref(&q1), &[0.0], -1.0).is_err());
        let lib = SourceLibrary::default();
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(1), 2, 1, 0.5);
        assert!(matches!(
            evaluate_sources(&mdp, &lib, EvaluationMode::Iterative, None, 1e-9),
            Err(CatError::EmptyLibrary)
        ));
        let lib = SourceLibrary::new(vec![SourceEntry::new(
            "a",
            "t",
            TabularPolicy::uniform(2, 1),
        )])
        .unwrap();
        assert!(matches!(
            evaluate_sources(
                &mdp,
                &lib,
                EvaluationMode::SuccessorFeatures,
                Some(&[0.0, 0.0]),
                1e-9
            ),
            Err(CatError::MissingSuccessorFeatures(_))
        ));
        let dup = vec![
            SourceEntry::new("a", "t", TabularPolicy::uniform(2, 1)),
            SourceEntry::new("a", "u", TabularPolicy::uniform(2, 1)),
        ];
        assert!(SourceLibrary::new(dup).is_err());
    }

    #[test]
    fn optimal_source_reproduces_optimum() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(3), 5, 3, 0.9);
        let (qstar, pistar) = value_iteration(&mdp, 1e-10).unwrap();
        let lib = SourceLibrary::new(vec![SourceEntry::new("opt", "t", pistar)]).unwrap();
        let qs = evaluate_sources(&mdp, &lib, EvaluationMode::Iterative, None, 1e-10).unwrap();
        assert!(qs[0].max_abs_diff(&qstar) < 1e-9);
    }

    #[test]
    fn caution_shift_keeps_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mdp = random_mdp(&mut rng, 5, 2, 0.9);
        let lib: Vec<QTable> = (0..3)
            .map(|_| {
                policy_evaluation(&mdp, &random_deterministic_policy(&mut rng, 5, 2), 1e-9).unwrap()
            })
            .collect();
        let cautions = [0.4, 1.3, 0.2];
        let base = cat_transfer(&lib, &cautions, 0.7).unwrap();
        let shifted: Vec<f64> = cautions.iter().map(|x| x + 2.5).collect();
        assert_eq!(
            cat_transfer(&lib, &shifted, 0.7).unwrap().policy,
            base.policy
        );
    }

    #[test]
    fn two_armed_return_variance() {
        // Single state, arms pay 0/1 with probability 0.3 (arm 0) or a
        // constant 0.5 (arm 1). With gamma = 0 the return is one reward.
        let transition = vec![0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.3, 0.7];
        let raw = vec![1.0, 0.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5];
        let mdp = TabularMdp::new(2, 2, transition, raw, 0.0, vec![1.0, 0.0]).unwrap();
        let arm0 = TabularPolicy::deterministic(2, &[0, 0]).unwrap();
        let arm1 = TabularPolicy::deterministic(2, &[1, 1]).unwrap();
        let m0 = sample_return_moments(&mdp, &arm0, 20_000, 1, 5).unwrap();
        let analytic = 0.3 * 0.7;
        // SE of the sample variance of a Bernoulli(p): sqrt((mu4 - sigma^4) / n).
        let mu4 = 0.3 * 0.7f64.powi(4) + 0.7 * 0.3f64.powi(4);
        let se = ((mu4 - analytic * analytic) / 20_000.0).sqrt();
        assert!((m0.variance - analytic).abs() < 3.0 * se);
        assert_eq!(
            sample_return_moments(&mdp, &arm1, 1_000, 1, 5)
                .unwrap()
                .variance,
            0.0
        );
        assert!(sample_return_moments(&mdp, &arm1, 0, 1, 5).is_err());
    }

    #[test]
    fn deterministic_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mdp = random_mdp(&mut rng, 4, 2, 0.8);
        let entries = (0..3)
            .map(|j| {
                SourceEntry::new(
                    format!("p{j}"),
                    "t",
                    random_deterministic_policy(&mut rng, 4, 2),
                )
            })
            .collect();
        let lib = SourceLibrary::new(entries).unwrap();
        let a = primal_variance_transfer(&mdp, &lib, 0.5, 200, 30, 9).unwrap();
        let b = primal_variance_transfer(&mdp, &lib, 0.5, 200, 30, 9).unwrap();
        assert_eq!(a, b);
        let rn = risk_neutral_transfer(
            &evaluate_sources(&mdp, &lib, EvaluationMode::Iterative, None, 1e-9).unwrap(),
        )
        .unwrap();
        let zero = primal_variance_transfer(&mdp, &lib, 0.0, 50, 30, 9).unwrap();
        assert_eq!(
            (zero.policy, zero.winner, zero.scores),
            (rn.policy, rn.winner, rn.scores)
        );
    }

    #[test]
    fn json_round_trip_with_infinite_caution() {
        let q1 = q(1, 2, &[1.0, 0.0]);
        let res = cat_transfer(&[q1.clone(), q1], &[f64::INFINITY, 0.1], 2.0).unwrap();
        let text = serde_json::to_string(&res).unwrap();
        assert!(text.contains("null"));
        let back: TransferResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, res);
    }
}
