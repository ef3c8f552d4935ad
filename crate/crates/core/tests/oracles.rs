//! Independent oracles: exhaustive policy enumeration, both reductions, full
//! enumeration of draw tuples and brute-force sampling.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use pmdp::exact::{exante_bellman, exante_value_iteration, theorem4_value_iteration, TheoremFourMdp};
use pmdp::mdp::{extract_policy, relative_value_iteration, value_iteration, FiniteMdp, ValueVector};
use pmdp::pmdp::{ex_ante_reduction, ex_post_reduction, CostFunction, Draws, ExPostSpace, ExPostState, PseudoMdp};
use pmdp::problems::{card_game_pmdp, lra_joint_distribution, lra_pmdp, LraSpec};
use pmdp::utility::{
    build_utility_grid, dichotomy_cdf, fast_bellman, fast_value_iteration, naive_utility_distribution, single_draw_cdf,
};
use pmdp::{extract_action_pmdp, sample_ex_post, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_mdp(rng: &mut impl Rng, states: usize, actions: usize) -> FiniteMdp<f64> {
    let transition = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let w: Vec<f64> = (0..states).map(|_| rng.random_range(0.05..1.0)).collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    let reward = (0..states).map(|_| (0..actions).map(|_| rng.random_range(-1.0..2.0)).collect()).collect();
    FiniteMdp::from_dense(transition, reward).unwrap()
}

/// `V^π = (I - γ P_π)^{-1} R_π` for every deterministic policy; returns the
/// pointwise best value and a policy attaining it.
fn enumerate_policies(mdp: &FiniteMdp<f64>, discount: f64) -> (Vec<f64>, Vec<usize>) {
    let n = mdp.num_states();
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut best_policy = vec![0; n];
    let total: usize = (0..n).map(|s| mdp.num_actions(s)).product();
    for code in 0..total {
        let mut rest = code;
        let policy: Vec<usize> = (0..n)
            .map(|s| {
                let a = rest % mdp.num_actions(s);
                rest /= mdp.num_actions(s);
                a
            })
            .collect();
        let p = DMatrix::from_fn(n, n, |i, j| mdp.transition(i, policy[i])[j]);
        let r = DVector::from_fn(n, |i, _| mdp.reward(i, policy[i]));
        let v = (DMatrix::identity(n, n) - p * discount).lu().solve(&r).unwrap();
        if v.iter().zip(&best).all(|(a, b)| *a >= *b - 1e-12) {
            best = v.iter().copied().collect();
            best_policy = policy;
        }
    }
    (best, best_policy)
}

#[test]
fn value_iteration_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let mdp = random_mdp(&mut rng, 3, 2);
        let discount = rng.random_range(0.1..0.95);
        let (oracle, oracle_policy) = enumerate_policies(&mdp, discount);
        let v = value_iteration(&mdp, discount, 1e-12, 100_000).unwrap().into_converged().unwrap();
        for (a, b) in v.values.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        let policy = extract_policy(&mdp, &v).unwrap();
        // Ties are measure-zero for continuous random rewards.
        assert_eq!(policy.choice, oracle_policy);
    }
}

#[test]
fn relative_gain_matches_simulated_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mdp = random_mdp(&mut rng, 3, 2);
    let sol = relative_value_iteration(&mdp, 0, 1e-10, 100_000).unwrap().into_converged().unwrap();
    assert_eq!(sol.values[0], 0.0);
    // The policy greedy in ΔV with γ = 1 attains the gain.
    let policy = extract_policy(&mdp, &ValueVector::new(sol.values.clone(), 1.0)).unwrap();
    let steps = 1_000_000;
    let batches = 100;
    let mut sums = vec![0.0; batches];
    let mut s = 0;
    for t in 0..steps {
        let a = policy.choice[s];
        sums[t / (steps / batches)] += mdp.reward(s, a);
        let u: f64 = rng.random();
        let row = mdp.transition(s, a);
        let mut acc = 0.0;
        s = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                s = j;
                break;
            }
        }
    }
    let means: Vec<f64> = sums.iter().map(|x| x / (steps / batches) as f64).collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let se = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt();
    assert!((mean - sol.gain).abs() <= 3.0 * se, "gain {} vs simulated {mean} ± {se}", sol.gain);
}

fn tiny_pmdp() -> PseudoMdp<f64> {
    PseudoMdp::new(
        vec![-0.5, 1.0],
        vec![Arc::from(vec![0.1, 0.4, 0.3, 0.2]), Arc::from(vec![0.0, 0.5, 0.25, 0.25])],
        vec![Draws::count(2); 2],
        CostFunction::Table(vec![0.0, 0.3]),
        None,
    )
    .unwrap()
}

fn ex_post_expectation(pmdp: &PseudoMdp<f64>, discount: f64) -> Vec<f64> {
    let mdp = ex_post_reduction(pmdp, 1 << 20).unwrap();
    let v = value_iteration(&mdp, discount, 1e-13, 100_000).unwrap().into_converged().unwrap();
    let space = ExPostSpace::new(pmdp, 1 << 20).unwrap();
    (0..pmdp.num_states())
        .map(|s| space.emission(pmdp, s).iter().zip(&v.values).map(|(p, v)| p * v).sum())
        .collect()
}

#[test]
fn ex_ante_reduction_is_expectation_of_ex_post_values() {
    let p = tiny_pmdp();
    let discount = 0.85;
    let ante = ex_ante_reduction(&p, 1 << 20).unwrap();
    assert_eq!(ante.num_actions(0), 2usize.pow(16));
    let w = value_iteration(&ante, discount, 1e-13, 100_000).unwrap().into_converged().unwrap();
    for (a, b) in w.values.iter().zip(ex_post_expectation(&p, discount)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
    }
}

#[test]
fn exante_and_theorem4_match_ex_post() {
    let p = tiny_pmdp();
    let oracle = ex_post_expectation(&p, 0.9);
    let w = exante_value_iteration(&p, 0.9, 1e-13, 100_000, 1 << 20).unwrap().into_converged().unwrap();
    let model = TheoremFourMdp::from_pmdp(&p, 1 << 20).unwrap();
    let w4 = theorem4_value_iteration(&model, 0.9, 1e-13, 100_000).unwrap().into_converged().unwrap();
    for s in 0..2 {
        assert_abs_diff_eq!(w.values[s], oracle[s], epsilon = 1e-8);
        assert_abs_diff_eq!(w4.values[s], w.values[s], epsilon = 1e-9);
    }
}

#[test]
fn ex_post_policy_agrees_with_draw_extraction() {
    let p = tiny_pmdp();
    let discount = 0.9;
    let mdp = ex_post_reduction(&p, 1 << 20).unwrap();
    let v = value_iteration(&mdp, discount, 1e-13, 100_000).unwrap().into_converged().unwrap();
    let w = exante_value_iteration(&p, discount, 1e-13, 100_000, 1 << 20).unwrap().into_converged().unwrap();
    let q = mdp.q_values(&v.values, discount);
    let space = ExPostSpace::new(&p, 1 << 20).unwrap();
    for (id, q) in q.iter().enumerate() {
        let outcomes = space.tuple(id).into_iter().map(|pair| p.pair(pair)).collect();
        let a = extract_action_pmdp(&p, &w, &ExPostState { origin: 0, outcomes }).unwrap() as usize - 1;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(q[a] >= best - 1e-9, "state {id}: draw {a} scores {} < {best}", q[a]);
    }
}

#[test]
fn card_game_ex_post_space_is_rejected() {
    let err = ex_post_reduction(&card_game_pmdp::<f64>(), 1 << 30).unwrap_err();
    let expected = 40u128 + 40u128.pow(2) + 40u128.pow(4) + 40u128.pow(8);
    assert_eq!(expected, 6_553_602_561_640);
    match err {
        Error::TooLarge { size, formula, .. } => {
            assert_eq!(size, expected.to_string());
            assert!(formula.contains("|Sigma|*|R|"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn sample_hand_prefers_the_ten_of_spades() {
    let cards = card_game_pmdp::<f64>();
    let w = ValueVector::new(vec![0.0, 1.41, 2.01, 2.07], 1.0);
    // Spade 10, diamond 8, diamond 8, heart 1: net 3, 0, -1, -9.
    let hand = ExPostState { origin: 2, outcomes: vec![(1, 9), (2, 7), (2, 7), (3, 0)] };
    let scores: Vec<f64> = hand
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, &(s, r))| cards.net_reward(cards.pair_index(s, r), i as u64 + 1) + w.values[s])
        .collect();
    for (got, want) in scores.iter().zip([4.41, 2.01, 1.01, -6.93]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }
    assert_eq!(extract_action_pmdp(&cards, &w, &hand).unwrap(), 1);
}

#[test]
fn sampled_single_draws_follow_joint() {
    let p = tiny_pmdp();
    let single = PseudoMdp::new(p.rewards().to_vec(), p.joint_rows().to_vec(), vec![Draws::ONE; 2], CostFunction::Table(vec![0.0]), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let n = 100_000;
    let mut counts = [0u64; 4];
    for _ in 0..n {
        let s = sample_ex_post(&single, 0, &mut rng).unwrap();
        let (next, r) = s.outcomes[0];
        counts[single.pair_index(next, r)] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(single.joint(0))
        .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat}, p = {p_value}");
}

#[test]
fn lra_joint_matches_sampled_allocations() {
    let (kappa, stake) = (8, 0.3);
    let table = lra_joint_distribution::<f64>(kappa, stake).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let n = 10_000_000u64;
    let mut counts = vec![0u64; table.len()];
    for _ in 0..n {
        let slots: u32 = (0..kappa).fold(0, |acc, i| acc | ((rng.random_bool(stake) as u32) << i));
        // Bit κ-1 is the last slot of the epoch.
        let tail = (!slots << (32 - kappa)).leading_zeros().min(kappa as u32) as usize;
        counts[tail * (kappa + 1) + slots.count_ones() as usize] += 1;
    }
    for (i, (&c, &p)) in counts.iter().zip(&table).enumerate() {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - mean).abs() <= 3.0 * sd.max(1e-9), "cell {i}: {c} vs {mean} ± {sd}");
    }
}

#[test]
fn card_single_draw_cdf_at_two() {
    let cards = card_game_pmdp::<f64>();
    let single = single_draw_cdf(&cards, &[0.0; 4], 0.0).unwrap();
    for sigma in 0..4 {
        assert_abs_diff_eq!(single.evaluate(sigma, 2.0).unwrap(), 36.0 / 52.0, epsilon = 1e-15);
        assert_abs_diff_eq!(single.evaluate(sigma, 3.0).unwrap(), 1.0, epsilon = 1e-15);
    }
}

#[test]
fn utility_grid_bounds() {
    let cards = card_game_pmdp::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        assert!(build_utility_grid(&cards, &w, rng.random()).unwrap().len() <= 68);
    }
    let lra = lra_pmdp::<f64>(LraSpec::new(32, 0.3)).unwrap();
    let w: Vec<f64> = (0..33).map(|_| rng.random_range(0.0..3.0)).collect();
    assert!(build_utility_grid(&lra, &w, 1.0).unwrap().len() <= 65 * 33);
}

#[test]
fn card_dichotomy_matches_enumeration_and_sampling() {
    let cards = card_game_pmdp::<f64>();
    let w = [0.0, 1.41, 2.01, 2.07];
    let single = single_draw_cdf(&cards, &w, 1.0).unwrap();
    let fast = dichotomy_cdf(&single, &cards, 1).unwrap();
    let naive = naive_utility_distribution(&cards, &w, 1.0, 1, 1 << 20).unwrap();
    for (a, b) in fast.rows[0].cdf().iter().zip(naive.rows[0].cdf()) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    // Heart: 8 draws, 40^8 tuples; compare against sampled hands.
    let heart = dichotomy_cdf(&single, &cards, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1_000_000;
    let probes = [-1.0, 1.0, 2.5, 3.5, 4.0];
    let mut below = [0u64; 5];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let hand = sample_ex_post(&cards, 3, &mut rng).unwrap();
        let u = hand
            .outcomes
            .iter()
            .enumerate()
            .map(|(i, &(s, r))| cards.net_reward(cards.pair_index(s, r), i as u64 + 1) + w[s])
            .fold(f64::NEG_INFINITY, f64::max);
        sum += u;
        sum_sq += u * u;
        for (count, &v) in below.iter_mut().zip(&probes) {
            *count += (u <= v + 1e-9) as u64;
        }
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    let exact = heart.expected_utility(3).unwrap();
    assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} vs {exact} ± {se}");
    for (&count, &v) in below.iter().zip(&probes) {
        let f = heart.evaluate(3, v).unwrap();
        let sd = (f * (1.0 - f) / n as f64).sqrt();
        assert!((count as f64 / n as f64 - f).abs() <= 3.0 * sd.max(1e-12), "cdf({v})");
    }
}

#[test]
fn lra_truncation_fast_matches_enumeration() {
    let lra = lra_pmdp::<f64>(LraSpec { kappa: 4, stake: 0.2, sigma_max: 2 }).unwrap();
    let exact = exante_value_iteration(&lra, 0.99, 1e-10, 100_000, 1 << 20).unwrap().into_converged().unwrap();
    let fast = fast_value_iteration(&lra, 0.99, 1e-10, 100_000).unwrap().into_converged().unwrap();
    for (a, b) in fast.values.iter().zip(&exact.values) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
    }
}

#[test]
fn lra_fast_bellman_matches_enumeration_on_small_states() {
    let lra = lra_pmdp::<f64>(LraSpec::new(8, 0.3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w: Vec<f64> = (0..9).map(|s| s as f64 * 0.4 + rng.random_range(0.0..0.1)).collect();
    let fast = fast_bellman(&lra, &w, 0.95).unwrap();
    // σ = 2 has 81^4 tuples on the full state space; the truncated model covers it below.
    for sigma in 0..=1 {
        let naive = naive_utility_distribution(&lra, &w, 0.95, sigma, 1 << 24).unwrap();
        assert_abs_diff_eq!(fast[sigma], naive.expected_utility(sigma).unwrap(), epsilon = 1e-9);
    }
    let cut = lra_pmdp::<f64>(LraSpec { kappa: 8, stake: 0.3, sigma_max: 2 }).unwrap();
    let enumerated = exante_bellman(&cut, &w[..3], 0.95, 1 << 24).unwrap();
    let fast_cut = fast_bellman(&cut, &w[..3], 0.95).unwrap();
    for (a, b) in fast_cut.iter().zip(&enumerated) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
    }
}
