use pmdp::exact::TheoremFourMdp;
use pmdp::mc::{mcvi, simulate_strategy, SelectionRule};
use pmdp::problems::{card_game_pmdp, lra_pmdp, LraSpec};
use pmdp::utility::{fast_relative_value_iteration, fast_value_iteration};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mcvi_on_cards_brackets_the_fast_solution() {
    let cards = card_game_pmdp::<f64>();
    let exact = fast_value_iteration(&cards, 0.9, 1e-12, 10_000).unwrap().into_converged().unwrap();
    let est = mcvi(&cards, 0.9, 20_000, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for ((m, se), w) in est.values.values.iter().zip(est.combined_std_errors()).zip(&exact.values) {
        assert!((m - w).abs() <= 3.0 * se, "mcvi {m} ± {se} vs {w}");
    }
}

#[test]
fn mcvi_error_shrinks_with_samples() {
    let cards = card_game_pmdp::<f64>();
    let exact = fast_value_iteration(&cards, 0.8, 1e-12, 10_000).unwrap().into_converged().unwrap();
    let error = |n| {
        // Average over seeds so a single lucky run cannot invert the trend.
        (0..4)
            .map(|seed| {
                let est = mcvi(&cards, 0.8, n, 30, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                pmdp::scalar::sup_distance(&est.values.values, &exact.values)
            })
            .sum::<f64>()
            / 4.0
    };
    let (coarse, fine) = (error(100), error(10_000));
    assert!(fine < coarse / 3.0, "error {coarse} -> {fine}");
}

#[test]
fn mcvi_runs_on_the_intermediate_model() {
    let lra = lra_pmdp::<f64>(LraSpec { kappa: 4, stake: 0.2, sigma_max: 2 }).unwrap();
    let model = TheoremFourMdp::from_pmdp(&lra, 1 << 20).unwrap();
    let exact = fast_value_iteration(&lra, 0.8, 1e-12, 10_000).unwrap().into_converged().unwrap();
    let est = mcvi(&model, 0.8, 20_000, 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for ((m, se), w) in est.values.values.iter().zip(est.combined_std_errors()).zip(&exact.values) {
        assert!((m - w).abs() <= 3.0 * se, "mcvi {m} ± {se} vs {w}");
    }
}

#[test]
fn sampling_cap_barely_moves_the_simulated_reward() {
    let lra = lra_pmdp::<f64>(LraSpec::new(32, 0.3)).unwrap();
    let w = fast_relative_value_iteration(&lra, 0, 1.0, 1e-6, 1000).unwrap().into_converged().unwrap();
    let rule = SelectionRule::Optimal { values: w.values.clone(), discount: 1.0 };
    let a = simulate_strategy(&lra, &rule, 200_000, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = simulate_strategy(&lra, &rule, 200_000, 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let se = a.std_error.hypot(b.std_error);
    assert!((a.mean_reward_per_epoch - b.mean_reward_per_epoch).abs() <= 3.0 * se);
    // Epochs this deep are rare enough that the cap only touches the tail.
    assert!(a.sigma_occupancy[17..].iter().sum::<f64>() < 1e-3);
}

#[test]
fn simulated_gain_matches_relative_value_iteration() {
    let cards = card_game_pmdp::<f64>();
    let sol = fast_relative_value_iteration(&cards, 0, 1.0, 1e-9, 10_000).unwrap().into_converged().unwrap();
    let rule = SelectionRule::Optimal { values: sol.values.clone(), discount: 1.0 };
    let sim = simulate_strategy(&cards, &rule, 400_000, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!((sim.mean_reward_per_epoch - sol.gain).abs() <= 3.0 * sim.std_error, "{sim:?} vs {}", sol.gain);
}
