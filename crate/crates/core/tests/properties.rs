use cat_core::caution::{caution_bounds, caution_gradient, kl_caution, variance_caution};
use cat_core::generate::{random_deterministic_policy, random_mdp, random_policy};
use cat_core::mdp::{
    bellman_residual, greedy_policy, policy_evaluation, start_return, value_iteration,
};
use cat_core::occupancy::{
    compute_occupancy, compute_occupancy_from_state, duality_residual, flow_residual,
    recover_policy,
};
use cat_core::oracle::{enumerate_caution_optimal, frank_wolfe_dual_v};
use cat_core::successor::{compute_sf, sf_evaluate};
use cat_core::transfer::{
    cat_iterative_transfer, cat_sf_transfer, cat_transfer, evaluate_sources, risk_neutral_transfer,
    source_cautions, EvaluationMode, TransferResult,
};
use cat_core::{
    CautionSpec, FeatureMap, GridConfig, GridWorld, OccupancyMeasure, QTable, SourceEntry,
    SourceLibrary, TabularMdp, DEFAULT_TOL,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mdp_from(seed: u64, max_states: usize, max_actions: usize) -> (TabularMdp, ChaCha8Rng) {
    let mut r = rng(seed);
    let ns = r.gen_range(1..=max_states);
    let na = r.gen_range(1..=max_actions);
    let gamma = r.gen_range(0.0..0.97);
    (random_mdp(&mut r, ns, na, gamma), r)
}

/// Same dynamics, reward `w[s']` for entering `s'`.
fn next_state_task(mdp: &TabularMdp, w: &[f64]) -> TabularMdp {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let raw = (0..ns * na).flat_map(|_| w.iter().copied()).collect();
    mdp.with_reward_raw(raw).unwrap()
}

fn occupancy_of(mdp: &TabularMdp, r: &mut ChaCha8Rng) -> OccupancyMeasure {
    compute_occupancy(mdp, &random_policy(r, mdp.n_states(), mdp.n_actions())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_is_a_fixed_point(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 12, 4);
        let pi = random_policy(&mut r, mdp.n_states(), mdp.n_actions());
        let q = policy_evaluation(&mdp, &pi, DEFAULT_TOL).unwrap();
        prop_assert!(bellman_residual(&mdp, &pi, &q) <= DEFAULT_TOL);
    }

    #[test]
    fn optimum_dominates_policies(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 10, 3);
        let (q_star, _) = value_iteration(&mdp, DEFAULT_TOL).unwrap();
        for _ in 0..4 {
            let pi = random_policy(&mut r, mdp.n_states(), mdp.n_actions());
            let q = policy_evaluation(&mdp, &pi, DEFAULT_TOL).unwrap();
            for (a, b) in q_star.values().iter().zip(q.values()) {
                prop_assert!(*a >= b - 2.0 * DEFAULT_TOL);
            }
        }
    }

    #[test]
    fn greedy_ignores_row_shift_and_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let (ns, na) = (r.gen_range(1..8), r.gen_range(1..5));
        // Quarter-integer values keep shifts and rescaling exact.
        let values: Vec<f64> = (0..ns * na).map(|_| f64::from(r.gen_range(-8i32..8)) / 4.0).collect();
        let q = QTable::new(ns, na, values.clone()).unwrap();
        let shifts: Vec<f64> = (0..ns).map(|_| f64::from(r.gen_range(-64i32..64))).collect();
        let shifted: Vec<f64> = values.iter().enumerate().map(|(i, v)| v + shifts[i / na]).collect();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let base = greedy_policy(&q);
        prop_assert_eq!(&base, &greedy_policy(&QTable::new(ns, na, shifted).unwrap()));
        prop_assert_eq!(&base, &greedy_policy(&QTable::new(ns, na, scaled).unwrap()));
    }

    #[test]
    fn occupancy_identities(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 15, 4);
        let pi = random_policy(&mut r, mdp.n_states(), mdp.n_actions());
        let d = compute_occupancy(&mdp, &pi).unwrap();
        let q = policy_evaluation(&mdp, &pi, DEFAULT_TOL).unwrap();
        prop_assert!((d.total_mass() - 1.0).abs() <= 1e-9);
        prop_assert!(flow_residual(&mdp, &pi, &d) <= 1e-9);
        prop_assert!(duality_residual(&mdp, &pi, &d, &q) <= 1e-8);
    }

    #[test]
    fn policy_round_trips_through_occupancy(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 10, 4);
        let pi = random_policy(&mut r, mdp.n_states(), mdp.n_actions());
        let back = recover_policy(&compute_occupancy(&mdp, &pi).unwrap());
        let d = compute_occupancy(&mdp, &pi).unwrap();
        for s in 0..mdp.n_states() {
            if d.state_mass(s) > 1e-12 {
                for a in 0..mdp.n_actions() {
                    prop_assert!((back.prob(s, a) - pi.prob(s, a)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn occupancy_is_linear_in_start(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 8, 3);
        let pi = random_policy(&mut r, mdp.n_states(), mdp.n_actions());
        let d = compute_occupancy(&mdp, &pi).unwrap();
        let mut mix = vec![0.0; d.values().len()];
        for (s, &w) in mdp.init_dist().iter().enumerate() {
            let ds = compute_occupancy_from_state(&mdp, &pi, s).unwrap();
            for (m, x) in mix.iter_mut().zip(ds.values()) {
                *m += w * x;
            }
        }
        for (a, b) in d.values().iter().zip(&mix) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn caution_sign_properties(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 8, 3);
        let d1 = occupancy_of(&mdp, &mut r);
        let d2 = occupancy_of(&mdp, &mut r);
        prop_assert!(variance_caution(&d1, &mdp) >= -1e-12);
        prop_assert!(kl_caution(&d1, &d1).abs() <= 1e-12);
        prop_assert!(kl_caution(&d1, &d2) >= -1e-12);
    }

    #[test]
    fn lipschitz_ratios_respect_analytic_constant(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 8, 3);
        let danger = vec![r.gen_range(0..mdp.n_states())];
        let (delta, margin) = (0.6, 0.1);
        let specs = [CautionSpec::barrier(danger.clone(), delta), CautionSpec::Variance];
        for spec in &specs {
            let l = caution_bounds(spec, &mdp, margin).unwrap().lipschitz_l.unwrap();
            for _ in 0..8 {
                let d1 = occupancy_of(&mdp, &mut r);
                let d2 = occupancy_of(&mdp, &mut r);
                let slack_ok = |d: &OccupancyMeasure| delta - d.mass_in(&danger) >= margin;
                if matches!(spec, CautionSpec::Barrier { .. }) && !(slack_ok(&d1) && slack_ok(&d2)) {
                    continue;
                }
                let dist = d1.l1_distance(&d2);
                if dist > 1e-9 {
                    let ratio = (spec.evaluate(&d1, &mdp) - spec.evaluate(&d2, &mdp)).abs() / dist;
                    prop_assert!(ratio <= l * (1.0 + 1e-9), "{} ratio {ratio} > {l}", spec.name());
                }
            }
        }
    }

    #[test]
    fn sf_matches_direct_evaluation(seed in any::<u64>()) {
        let (mdp, mut r) = mdp_from(seed, 12, 4);
        let ns = mdp.n_states();
        let pi = random_policy(&mut r, ns, mdp.n_actions());
        let sf = compute_sf(&mdp, &pi, &FeatureMap::one_hot_next_state(ns), DEFAULT_TOL, "pi").unwrap();
        let w1: Vec<f64> = (0..ns).map(|_| r.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..ns).map(|_| r.gen_range(-1.0..1.0)).collect();
        let direct = policy_evaluation(&next_state_task(&mdp, &w1), &pi, DEFAULT_TOL).unwrap();
        let q1 = sf_evaluate(&sf, &w1).unwrap();
        prop_assert!(direct.max_abs_diff(&q1) <= 1e-6);

        // One-hot coordinates are a discounted distribution over next states.
        let mass = 1.0 / (1.0 - mdp.discount());
        for s in 0..ns {
            for a in 0..mdp.n_actions() {
                let psi = sf.get(s, a);
                prop_assert!(psi.iter().all(|x| *x >= -1e-12));
                prop_assert!((psi.iter().sum::<f64>() - mass).abs() <= 1e-9 * mass);
            }
        }

        let alpha = r.gen_range(-3.0..3.0);
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + b).collect();
        let qc = sf_evaluate(&sf, &combo).unwrap();
        let q2 = sf_evaluate(&sf, &w2).unwrap();
        for i in 0..qc.values().len() {
            let lin = alpha * q1.values()[i] + q2.values()[i];
            prop_assert!((qc.values()[i] - lin).abs() <= 1e-12 * (1.0 + lin.abs()) * ns as f64);
        }
    }

    #[test]
    fn enumeration_without_caution_matches_optimum(seed in any::<u64>()) {
        let (mdp, _) = mdp_from(seed, 6, 2);
        let (q, pi) = value_iteration(&mdp, DEFAULT_TOL).unwrap();
        let (_, best) = enumerate_caution_optimal(&mdp, &CautionSpec::None, 0.0).unwrap();
        prop_assert!((best - start_return(&mdp, &pi, &q)).abs() <= 1e-8);
    }

    #[test]
    fn frank_wolfe_objective_never_decreases(seed in any::<u64>(), c in 0.0f64..2.0) {
        let (mdp, _) = mdp_from(seed, 6, 3);
        let fw = frank_wolfe_dual_v(&mdp, &CautionSpec::Variance, c, 100, 1e-10).unwrap();
        for w in fw.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        prop_assert!(fw.fw_gap >= -1e-9);
    }

    #[test]
    fn slip_free_grids_have_no_within_pair_variance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(2..6), r.gen_range(1..5));
        let danger = vec![[r.gen_range(0..w), r.gen_range(0..h)]];
        let config = GridConfig::new(w, h, [0, 0], [w - 1, h - 1]).with_danger(danger);
        prop_assume!(config.validate().is_ok());
        let world = GridWorld::new(config.deterministic()).unwrap();
        let mdp = world.mdp();
        // Each (s, a) has a single successor, so its reward is deterministic
        // and the caution reduces to the spread of r(s, a) under d.
        for (r2, r1) in mdp.reward_sq_mean().iter().zip(mdp.reward_mean()) {
            prop_assert_eq!(*r2, r1 * r1);
        }
        let d = occupancy_of(mdp, &mut r);
        let mean = d.dot(mdp.reward_mean());
        let spread: f64 = d.values().iter().zip(mdp.reward_mean()).map(|(p, x)| p * (x - mean).powi(2)).sum();
        prop_assert!((variance_caution(&d, mdp) - spread).abs() <= 1e-12);
    }
}

/// Worst relative error between the analytic gradient and central finite
/// differences along simplex-tangent directions.
fn gradient_relative_error(spec: &CautionSpec, mdp: &TabularMdp, d: &OccupancyMeasure) -> f64 {
    let g = caution_gradient(spec, d, mdp).unwrap();
    let vals = d.values();
    let m = (0..vals.len()).fold(0, |m, i| if vals[i] > vals[m] { i } else { m });
    // Move mass between entry k and the largest entry, with a step scaled
    // to entry k so that logarithmic terms stay well resolved.
    let eval = |k: usize, t: f64| {
        let mut v = vals.to_vec();
        v[k] += t;
        v[m] -= t;
        let dd =
            OccupancyMeasure::new(d.n_states(), d.n_actions(), v, d.init_dist().to_vec()).unwrap();
        spec.evaluate(&dd, mdp)
    };
    let (mut err, mut scale) = (0.0_f64, 0.0_f64);
    for k in (0..vals.len()).filter(|&k| k != m) {
        let h = 1e-4 * vals[k].min(vals[m] / 2.0);
        let fd = (eval(k, h) - eval(k, -h)) / (2.0 * h);
        let exact = g[k] - g[m];
        err = err.max((fd - exact).abs());
        scale = scale.max(exact.abs());
    }
    // Directional derivatives can all vanish (d equal to the expert), so the
    // error is measured against the gradient magnitude as well.
    let gmax = g.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    err / scale.max(gmax).max(1e-12)
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(11);
    let mut checked = [0usize; 3];
    while checked.iter().any(|&k| k < 20) {
        let ns = r.gen_range(2..7);
        let mdp = random_mdp(&mut r, ns, 2, 0.8);
        let d = occupancy_of(&mdp, &mut r);
        let expert = occupancy_of(&mdp, &mut r);
        let danger = vec![r.gen_range(0..ns)];
        let specs = [
            CautionSpec::barrier(danger.clone(), (d.mass_in(&danger) + 0.2).min(1.0)),
            CautionSpec::Variance,
            CautionSpec::KlToExpert {
                expert_occupancy: expert,
            },
        ];
        for (k, spec) in specs.iter().enumerate() {
            if checked[k] < 20 {
                let e = gradient_relative_error(spec, &mdp, &d);
                assert!(e <= 1e-4, "{} relative error {e}", spec.name());
                checked[k] += 1;
            }
        }
    }
}

fn random_library(
    mdp: &TabularMdp,
    r: &mut ChaCha8Rng,
    n: usize,
) -> (SourceLibrary, Vec<Vec<f64>>) {
    let ns = mdp.n_states();
    let phi = FeatureMap::one_hot_next_state(ns);
    let mut weights = Vec::new();
    let entries = (0..n)
        .map(|j| {
            let w: Vec<f64> = (0..ns).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, pi) = value_iteration(&next_state_task(mdp, &w), DEFAULT_TOL).unwrap();
            let sf = compute_sf(mdp, &pi, &phi, DEFAULT_TOL, format!("pi{j}")).unwrap();
            let d = compute_occupancy(mdp, &pi).unwrap();
            weights.push(w);
            SourceEntry::new(format!("pi{j}"), format!("task{j}"), pi)
                .with_successor_features(sf)
                .with_occupancy(d)
        })
        .collect();
    (SourceLibrary::new(entries).unwrap(), weights)
}

/// Gap between the best score and the best score of a different action.
fn runner_up_gap(result: &TransferResult, s: usize) -> f64 {
    let na = result.policy.n_actions();
    let best_a = result.actions()[s];
    let best = (0..result.n_sources)
        .map(|j| result.score(s, best_a, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let other = (0..na)
        .filter(|&a| a != best_a)
        .flat_map(|a| (0..result.n_sources).map(move |j| (a, j)))
        .map(|(a, j)| result.score(s, a, j))
        .fold(f64::NEG_INFINITY, f64::max);
    best - other
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn sf_and_iterative_transfer_agree(seed in any::<u64>(), c in 0.0f64..5.0) {
        let mut r = rng(seed);
        let ns = r.gen_range(2..10);
        let (na, gamma) = (r.gen_range(2..4), r.gen_range(0.5..0.95));
        let mdp = random_mdp(&mut r, ns, na, gamma);
        let (library, _) = random_library(&mdp, &mut r, 3);
        let w: Vec<f64> = (0..ns).map(|_| r.gen_range(-1.0..1.0)).collect();
        let test = next_state_task(&mdp, &w);
        let danger = vec![r.gen_range(0..ns)];
        let spec = CautionSpec::barrier(danger, 1.0);
        let it = cat_iterative_transfer(&test, &library, &spec, c, DEFAULT_TOL).unwrap();
        let sf = cat_sf_transfer(&library, &w, &spec, c, &test).unwrap();
        for s in 0..ns {
            if runner_up_gap(&it, s) > 1e-5 {
                prop_assert_eq!(it.actions()[s], sf.actions()[s]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transfer_invariants(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ns = r.gen_range(2..8);
        let (na, n_sources) = (r.gen_range(2..4), r.gen_range(1..4));
        let mdp = random_mdp(&mut r, ns, na, 0.9);
        let (library, _) = random_library(&mdp, &mut r, n_sources);
        let w: Vec<f64> = (0..ns).map(|_| r.gen_range(-1.0..1.0)).collect();
        let test = next_state_task(&mdp, &w);
        let q = evaluate_sources(&test, &library, EvaluationMode::Iterative, None, DEFAULT_TOL).unwrap();
        let spec = CautionSpec::Variance;
        let rho = source_cautions(&test, &library, &spec).unwrap();

        // c = 0 is the greedy composition, bit for bit.
        prop_assert_eq!(cat_transfer(&q, &rho, 0.0).unwrap().policy, risk_neutral_transfer(&q).unwrap().policy);
        let rn = risk_neutral_transfer(&q).unwrap();
        let zero = cat_transfer(&q, &rho, 0.0).unwrap();
        prop_assert_eq!(&rn.winner, &zero.winner);
        prop_assert_eq!(&rn.scores, &zero.scores);

        // A common shift of every caution leaves the actions alone. Dyadic
        // values keep the shifted scores exact.
        let c = 0.5;
        let dyadic: Vec<f64> = rho.iter().map(|x| (x * 1024.0).round() / 1024.0).collect();
        let qd: Vec<QTable> = q
            .iter()
            .map(|t| QTable::new(ns, t.n_actions(), t.values().iter().map(|x| (x * 1024.0).round() / 1024.0).collect()).unwrap())
            .collect();
        let shifted: Vec<f64> = dyadic.iter().map(|x| x + 3.0).collect();
        prop_assert_eq!(cat_transfer(&qd, &dyadic, c).unwrap().actions(), cat_transfer(&qd, &shifted, c).unwrap().actions());

        // Raising c never hands a state to a more cautious-costly source.
        let grid: Vec<f64> = (0..=40).map(|i| f64::from(i) * 0.25).collect();
        let mut prev = cat_transfer(&q, &rho, grid[0]).unwrap();
        for &cw in &grid[1..] {
            let next = cat_transfer(&q, &rho, cw).unwrap();
            for s in 0..ns {
                if next.winner[s] != prev.winner[s] {
                    prop_assert!(rho[next.winner[s]] <= rho[prev.winner[s]]);
                }
            }
            prev = next;
        }

        // Identical inputs give identical results.
        let a = cat_transfer(&q, &rho, 1.5).unwrap();
        let b = cat_transfer(&q, &rho, 1.5).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn sampled_policies_never_beat_enumeration() {
    let mut r = rng(5);
    for _ in 0..20 {
        let mdp = random_mdp(&mut r, 4, 2, 0.8);
        let spec = CautionSpec::Variance;
        let (_, best) = enumerate_caution_optimal(&mdp, &spec, 0.3).unwrap();
        for _ in 0..10 {
            let pi = random_deterministic_policy(&mut r, 4, 2);
            let q = policy_evaluation(&mdp, &pi, DEFAULT_TOL).unwrap();
            let d = compute_occupancy(&mdp, &pi).unwrap();
            let value = start_return(&mdp, &pi, &q) - 0.3 * spec.evaluate(&d, &mdp);
            assert!(value <= best + 1e-9);
        }
    }
}
