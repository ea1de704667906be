//! Seeded random instances for tests, benchmarks and the randomized bound checks.

use rand::Rng;

use crate::mdp::{TabularMdp, TabularPolicy};

/// Two states, one action: `0 -> 1 -> 1 -> ...` with reward 1 on every step
/// and the start fixed at state 0.
pub fn chain(gamma: f64) -> TabularMdp {
    TabularMdp::new(
        2,
        1,
        vec![0.0, 1.0, 0.0, 1.0],
        vec![1.0; 4],
        gamma,
        vec![1.0, 0.0],
    )
    .expect("chain MDP is valid")
}

/// Random probability vector with strictly positive entries.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // Exponential spacings give a flat Dirichlet sample.
    let mut v: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3)
        .collect();
    normalize(&mut v);
    v
}

/// Random probability vector supported on roughly `fraction` of the entries
/// (always at least one).
pub fn random_sparse_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, fraction: f64) -> Vec<f64> {
    let mut v = random_simplex(rng, n);
    let keep = rng.gen_range(0..n);
    for (i, x) in v.iter_mut().enumerate() {
        if i != keep && rng.gen::<f64>() > fraction {
            *x = 0.0;
        }
    }
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
    // Push the round-off into the largest entry so the sum is 1 to the last bit
    // we can reasonably get.
    let err = 1.0 - v.iter().sum::<f64>();
    if let Some(max) = v.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += err;
    }
}

/// Dense random MDP: Dirichlet transition rows, transition rewards uniform in
/// `[-1, 1]` and a fully supported start distribution.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> TabularMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(rng, n_states));
    }
    let reward_raw = (0..n_states * n_actions * n_states)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let init = random_simplex(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward_raw, gamma, init)
        .expect("random MDP is valid")
}

/// Like [`random_mdp`] with sparse transition rows.
pub fn random_sparse_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    fraction: f64,
) -> TabularMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_sparse_simplex(rng, n_states, fraction));
    }
    let reward_raw = (0..n_states * n_actions * n_states)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let init = random_simplex(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward_raw, gamma, init)
        .expect("random MDP is valid")
}

pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> TabularPolicy {
    let probs = (0..n_states)
        .flat_map(|_| random_simplex(rng, n_actions))
        .collect();
    TabularPolicy::from_probs(n_states, n_actions, probs).expect("random policy is valid")
}

pub fn random_deterministic_policy<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> TabularPolicy {
    let actions: Vec<usize> = (0..n_states).map(|_| rng.gen_range(0..n_actions)).collect();
    TabularPolicy::deterministic(n_actions, &actions).expect("actions in range")
}
