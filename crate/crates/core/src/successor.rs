//! Successor features: `Q^pi(s, a) = psi^pi(s, a) . w` whenever the task
//! reward decomposes as `r(s, a, s') = phi(s, a, s') . w`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::linalg::ResolventSolver;
use crate::mdp::{QTable, TabularMdp, TabularPolicy};

/// Transition features `phi(s, a, s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// One-hot encoding of the successor state; `dim == n_states`.
    OneHotNextState { n_states: usize },
    /// Dense table `values[((s * n_actions + a) * n_states + s') * dim + k]`.
    Table {
        n_states: usize,
        n_actions: usize,
        dim: usize,
        values: Vec<f64>,
    },
}

impl FeatureMap {
    pub fn one_hot_next_state(n_states: usize) -> Self {
        FeatureMap::OneHotNextState { n_states }
    }

    pub fn table(n_states: usize, n_actions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = n_states * n_actions * n_states * dim;
        if values.len() != expected {
            return Err(CatError::DimensionMismatch {
                expected,
                actual: values.len(),
                context: "feature table",
            });
        }
        Ok(FeatureMap::Table {
            n_states,
            n_actions,
            dim,
            values,
        })
    }

    /// The reward itself as a one-dimensional feature.
    pub fn from_reward(mdp: &TabularMdp) -> Result<Self> {
        let raw = mdp
            .reward_raw()
            .ok_or_else(|| CatError::InvalidArgument("MDP has no raw reward tensor".into()))?;
        Self::table(mdp.n_states(), mdp.n_actions(), 1, raw.to_vec())
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHotNextState { n_states } => *n_states,
            FeatureMap::Table { dim, .. } => *dim,
        }
    }

    fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHotNextState { n_states } | FeatureMap::Table { n_states, .. } => {
                *n_states
            }
        }
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        let ok = match self {
            FeatureMap::OneHotNextState { n_states } => *n_states == mdp.n_states(),
            FeatureMap::Table {
                n_states,
                n_actions,
                ..
            } => *n_states == mdp.n_states() && *n_actions == mdp.n_actions(),
        };
        if ok {
            Ok(())
        } else {
            Err(CatError::InvalidArgument(
                "feature map shape does not match MDP".into(),
            ))
        }
    }

    /// Adds `scale * phi(s, a, next)` into `out`.
    fn accumulate(&self, s: usize, a: usize, next: usize, scale: f64, out: &mut [f64]) {
        match self {
            FeatureMap::OneHotNextState { .. } => out[next] += scale,
            FeatureMap::Table {
                n_states,
                n_actions,
                dim,
                values,
            } => {
                let base = ((s * n_actions + a) * n_states + next) * dim;
                for (o, v) in out.iter_mut().zip(&values[base..base + dim]) {
                    *o += scale * v;
                }
            }
        }
    }

    pub fn feature(&self, s: usize, a: usize, next: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.accumulate(s, a, next, 1.0, &mut out);
        out
    }

    /// `E_{s' ~ p(.|s, a)} phi(s, a, s')`.
    pub fn expected(&self, mdp: &TabularMdp, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (next, &p) in mdp.next_dist(s, a).iter().enumerate() {
            if p != 0.0 {
                self.accumulate(s, a, next, p, &mut out);
            }
        }
        out
    }

    /// `max_{s, a, s'} ||phi(s, a, s')||_2`.
    pub fn phi_max(&self) -> f64 {
        match self {
            FeatureMap::OneHotNextState { .. } => 1.0,
            FeatureMap::Table { dim, values, .. } => values
                .chunks(*dim)
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
        }
    }

    /// Transition rewards `phi(s, a, s') . w`, laid out like an MDP's raw
    /// reward tensor.
    pub fn rewards(&self, n_actions: usize, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.dim() {
            return Err(CatError::DimensionMismatch {
                expected: self.dim(),
                actual: weights.len(),
                context: "task weights",
            });
        }
        let ns = self.n_states();
        Ok(match self {
            FeatureMap::OneHotNextState { .. } => (0..ns * n_actions)
                .flat_map(|_| weights.iter().copied())
                .collect(),
            FeatureMap::Table { dim, values, .. } => values
                .chunks(*dim)
                .map(|v| v.iter().zip(weights).map(|(x, w)| x * w).sum())
                .collect(),
        })
    }
}

/// `psi[(s * n_actions + a) * dim + k]` for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessorFeatureTable {
    #[serde(default = "crate::serde_ext::schema_version")]
    pub schema_version: u32,
    pub policy_id: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    pub psi: Vec<f64>,
}

impl SuccessorFeatureTable {
    pub fn get(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.dim;
        &self.psi[base..base + self.dim]
    }

    fn check(&self) -> Result<()> {
        let expected = self.n_states * self.n_actions * self.dim;
        if self.psi.len() != expected {
            return Err(CatError::DimensionMismatch {
                expected,
                actual: self.psi.len(),
                context: "successor-feature table",
            });
        }
        Ok(())
    }

    /// Flat little-endian layout: `n_states`, `n_actions`, `dim` and the
    /// byte length of `policy_id` as `u64`, the UTF-8 id, then every `psi`
    /// entry as an `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.policy_id.len() + 8 * self.psi.len());
        for v in [
            self.n_states,
            self.n_actions,
            self.dim,
            self.policy_id.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(self.policy_id.as_bytes());
        for v in &self.psi {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<usize> {
            bytes
                .get(i * 8..(i + 1) * 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
                .ok_or_else(|| CatError::Format("truncated successor-feature header".into()))
        };
        let (n_states, n_actions, dim, id_len) = (word(0)?, word(1)?, word(2)?, word(3)?);
        let id_end = 32usize
            .checked_add(id_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CatError::Format("truncated policy id".into()))?;
        let policy_id = std::str::from_utf8(&bytes[32..id_end])
            .map_err(|e| CatError::Format(format!("policy id is not UTF-8: {e}")))?
            .to_owned();
        let body = &bytes[id_end..];
        let count = n_states
            .checked_mul(n_actions)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| CatError::Format("header sizes overflow".into()))?;
        if body.len() != count * 8 {
            return Err(CatError::Format(format!(
                "expected {} bytes of values, found {}",
                count * 8,
                body.len()
            )));
        }
        let psi = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            schema_version: crate::serde_ext::SCHEMA_VERSION,
            policy_id,
            n_states,
            n_actions,
            dim,
            psi,
        })
    }
}

/// Successor features of `policy`: `psi(s, a) = E[phi(s, a, s') + gamma psi(s', a')]`.
///
/// All `dim` coordinates share one factorisation of `I - gamma P_pi` on the
/// state space.
pub fn compute_sf(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    features: &FeatureMap,
    tol: f64,
    policy_id: impl Into<String>,
) -> Result<SuccessorFeatureTable> {
    if !(tol > 0.0) {
        return Err(CatError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    features.check(mdp)?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(CatError::InvalidArgument(
            "policy shape does not match MDP".into(),
        ));
    }
    let (ns, na, dim) = (mdp.n_states(), mdp.n_actions(), features.dim());
    let gamma = mdp.discount();

    let mut phi_bar = vec![0.0; ns * na * dim];
    for s in 0..ns {
        for a in 0..na {
            let e = features.expected(mdp, s, a);
            phi_bar[(s * na + a) * dim..(s * na + a + 1) * dim].copy_from_slice(&e);
        }
    }
    // Policy-averaged features per state, one column per coordinate.
    let mut rhs = vec![0.0; ns * dim];
    for s in 0..ns {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            for k in 0..dim {
                rhs[s * dim + k] += p * phi_bar[(s * na + a) * dim + k];
            }
        }
    }
    let solver = ResolventSolver::new(mdp, policy)?;
    let state_sf = solver.solve_many(&rhs, dim)?;

    let mut psi = phi_bar;
    for s in 0..ns {
        for a in 0..na {
            let out = &mut psi[(s * na + a) * dim..(s * na + a + 1) * dim];
            for (next, &p) in mdp.next_dist(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(&state_sf[next * dim..(next + 1) * dim]) {
                    *o += gamma * p * v;
                }
            }
        }
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(CatError::NumericalFailure(
            "non-finite successor features".into(),
        ));
    }
    let table = SuccessorFeatureTable {
        schema_version: crate::serde_ext::SCHEMA_VERSION,
        policy_id: policy_id.into(),
        n_states: ns,
        n_actions: na,
        dim,
        psi,
    };
    let residual = sf_residual(mdp, policy, features, &table);
    if residual > tol {
        return Err(CatError::NumericalFailure(format!(
            "successor-feature recurrence residual {residual:e} exceeds {tol:e}"
        )));
    }
    Ok(table)
}

/// Largest coordinate-wise violation of the successor-feature recurrence.
pub fn sf_residual(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    features: &FeatureMap,
    table: &SuccessorFeatureTable,
) -> f64 {
    let (ns, na, dim) = (mdp.n_states(), mdp.n_actions(), table.dim);
    let gamma = mdp.discount();
    let mut state_sf = vec![0.0; ns * dim];
    for s in 0..ns {
        for a in 0..na {
            let p = policy.prob(s, a);
            for (o, v) in state_sf[s * dim..(s + 1) * dim]
                .iter_mut()
                .zip(table.get(s, a))
            {
                *o += p * v;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let mut target = features.expected(mdp, s, a);
            for (next, &p) in mdp.next_dist(s, a).iter().enumerate() {
                for (t, v) in target
                    .iter_mut()
                    .zip(&state_sf[next * dim..(next + 1) * dim])
                {
                    *t += gamma * p * v;
                }
            }
            for (t, v) in target.iter().zip(table.get(s, a)) {
                worst = worst.max((t - v).abs());
            }
        }
    }
    worst
}

/// `Q(s, a) = psi(s, a) . w`.
pub fn sf_evaluate(table: &SuccessorFeatureTable, weights: &[f64]) -> Result<QTable> {
    table.check()?;
    if weights.len() != table.dim {
        return Err(CatError::DimensionMismatch {
            expected: table.dim,
            actual: weights.len(),
            context: "task weights",
        });
    }
    let values = table
        .psi
        .chunks(table.dim)
        .map(|psi| psi.iter().zip(weights).map(|(p, w)| p * w).sum())
        .collect();
    QTable::new(table.n_states, table.n_actions, values)
}

/// Least-squares task weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    pub rank: usize,
    /// True when the design matrix has rank below `dim`; `weights` is then
    /// the minimum-norm solution.
    pub rank_deficient: bool,
    /// `max |phi . w - r|` over the fitted rows.
    pub max_residual: f64,
}

/// Fits `w` to a full transition-reward tensor (every `(s, a, s')` row).
pub fn fit_weights(
    features: &FeatureMap,
    n_actions: usize,
    reward_raw: &[f64],
) -> Result<WeightFit> {
    let ns = features.n_states();
    if reward_raw.len() != ns * n_actions * ns {
        return Err(CatError::DimensionMismatch {
            expected: ns * n_actions * ns,
            actual: reward_raw.len(),
            context: "reward tensor",
        });
    }
    if let FeatureMap::OneHotNextState { .. } = features {
        return Ok(fit_one_hot(ns, n_actions, reward_raw));
    }
    let dim = features.dim();
    let mut rows = Vec::with_capacity(reward_raw.len() * dim);
    for s in 0..ns {
        for a in 0..n_actions {
            for next in 0..ns {
                rows.extend(features.feature(s, a, next));
            }
        }
    }
    least_squares(&rows, dim, reward_raw)
}

// Columns of the one-hot design are disjoint indicators, so the normal
// equations decouple into per-successor averages.
fn fit_one_hot(ns: usize, na: usize, reward_raw: &[f64]) -> WeightFit {
    let rows = (ns * na) as f64;
    // Average deviations from the first row so constant columns come out
    // exactly.
    let first = &reward_raw[..ns];
    let mut w = first.to_vec();
    for chunk in reward_raw.chunks(ns).skip(1) {
        for ((wi, r), r0) in w.iter_mut().zip(chunk).zip(first) {
            *wi += (r - r0) / rows;
        }
    }
    let max_residual = reward_raw
        .chunks(ns)
        .flat_map(|chunk| chunk.iter().zip(&w).map(|(r, wi)| (r - wi).abs()))
        .fold(0.0, f64::max);
    WeightFit {
        weights: w,
        rank: ns,
        rank_deficient: false,
        max_residual,
    }
}

/// Fits `w` to reward samples; `rows` holds one feature vector per sample.
pub fn fit_weights_from_samples(rows: &[Vec<f64>], targets: &[f64]) -> Result<WeightFit> {
    if rows.len() != targets.len() || rows.is_empty() {
        return Err(CatError::InvalidArgument(
            "need one target per non-empty feature row".into(),
        ));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(CatError::InvalidArgument(
            "feature rows must share a positive dimension".into(),
        ));
    }
    least_squares(&rows.concat(), dim, targets)
}

fn least_squares(rows: &[f64], dim: usize, targets: &[f64]) -> Result<WeightFit> {
    let n = targets.len();
    let a = DMatrix::from_row_slice(n, dim, rows);
    let b = DVector::from_column_slice(targets);
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let eps = s_max * (n.max(dim) as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let w = svd
        .solve(&b, eps)
        .map_err(|e| CatError::NumericalFailure(format!("least squares failed: {e}")))?;
    let residual = &a * &w - &b;
    Ok(WeightFit {
        weights: w.iter().copied().collect(),
        rank,
        rank_deficient: rank < dim,
        max_residual: residual.amax(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_mdp, random_policy};
    use crate::mdp::policy_evaluation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorbing_state_geometric() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![1.0]).unwrap();
        let pi = TabularPolicy::uniform(1, 1);
        let sf = compute_sf(&mdp, &pi, &FeatureMap::one_hot_next_state(1), 1e-9, "p").unwrap();
        assert!((sf.psi[0] - 2.0).abs() < 1e-12);
        let q = sf_evaluate(&sf, &[3.0]).unwrap();
        assert!((q.get(0, 0) - 6.0).abs() < 1e-12);
        assert_eq!(sf_evaluate(&sf, &[0.0]).unwrap().values(), &[0.0]);
        assert!(sf_evaluate(&sf, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_discount_is_expected_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = random_mdp(&mut rng, 4, 2, 0.0);
        let pi = random_policy(&mut rng, 4, 2);
        let phi = FeatureMap::one_hot_next_state(4);
        let sf = compute_sf(&mdp, &pi, &phi, 1e-9, "p").unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(sf.get(s, a), mdp.next_dist(s, a));
            }
        }
    }

    #[test]
    fn matches_policy_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mdp = random_mdp(&mut rng, 6, 3, 0.9);
        let pi = random_policy(&mut rng, 6, 3);
        let phi = FeatureMap::one_hot_next_state(6);
        let sf = compute_sf(&mdp, &pi, &phi, 1e-9, "p").unwrap();
        for _ in 0..5 {
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let task = mdp.with_reward_raw(phi.rewards(3, &w).unwrap()).unwrap();
            let direct = policy_evaluation(&task, &pi, 1e-9).unwrap();
            assert!(sf_evaluate(&sf, &w).unwrap().max_abs_diff(&direct) < 1e-6);
        }
    }

    #[test]
    fn one_hot_mass_is_geometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = random_mdp(&mut rng, 5, 2, 0.75);
        let pi = random_policy(&mut rng, 5, 2);
        let sf = compute_sf(&mdp, &pi, &FeatureMap::one_hot_next_state(5), 1e-9, "p").unwrap();
        for chunk in sf.psi.chunks(5) {
            assert!(chunk.iter().all(|&x| x >= -1e-15));
            assert!((chunk.iter().sum::<f64>() - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_mdp(&mut rng, 4, 2, 0.9);
        let cells = [0.3, -0.8, 10.0, 0.3];
        let phi = FeatureMap::one_hot_next_state(4);
        let fit = fit_weights(&phi, 2, &phi.rewards(2, &cells).unwrap()).unwrap();
        assert_eq!(fit.weights, cells.to_vec());
        assert_eq!(fit.max_residual, 0.0);

        let identity = FeatureMap::from_reward(&base).unwrap();
        let fit = fit_weights(&identity, 2, base.reward_raw().unwrap()).unwrap();
        assert!((fit.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dim = 4;
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..10 * dim)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Box-Muller noise, sigma = 0.01.
        let targets: Vec<f64> = rows
            .iter()
            .map(|x| {
                let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.01 * z
            })
            .collect();
        let fit = fit_weights_from_samples(&rows, &targets).unwrap();
        let err: f64 = fit
            .weights
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 0.05, "error {err}");
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn rank_deficient_is_flagged() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let fit = fit_weights_from_samples(&rows, &[2.0, 4.0, 6.0]).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 1);
        assert!((fit.weights[0] - 1.0).abs() < 1e-9 && (fit.weights[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn binary_layout() {
        let mdp = random_mdp(&mut ChaCha8Rng::seed_from_u64(2), 3, 2, 0.5);
        let sf = compute_sf(
            &mdp,
            &TabularPolicy::uniform(3, 2),
            &FeatureMap::one_hot_next_state(3),
            1e-9,
            "src-1",
        )
        .unwrap();
        let bytes = sf.to_bytes();
        assert_eq!(&bytes[0..8], &3u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &5u64.to_le_bytes());
        assert_eq!(&bytes[32..37], b"src-1");
        assert_eq!(bytes.len(), 37 + 8 * 18);
        assert_eq!(SuccessorFeatureTable::from_bytes(&bytes).unwrap(), sf);
        assert!(SuccessorFeatureTable::from_bytes(&bytes[..40]).is_err());
    }
}
