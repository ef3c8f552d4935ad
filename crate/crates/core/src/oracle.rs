//! Cross-solver equivalence on random tiny pMDPs: every solver that can
//! handle an instance must reach the same `W`.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::exact::{exante_value_iteration, theorem4_value_iteration, TheoremFourMdp};
use crate::mdp::{value_iteration, FiniteMdp};
use crate::pmdp::{ex_post_reduction, CostFunction, Draws, ExPostSpace, PseudoMdp, ShiftDescriptor, ShiftKind};
use crate::scalar::sup_distance;
use crate::utility::{fast_value_iteration, naive_utility_distribution};

/// Bounds on the random instances.
#[derive(Clone, Debug)]
pub struct TinyPreset {
    pub max_states: usize,
    pub max_rewards: usize,
    pub draw_choices: Vec<u64>,
    pub discount_range: (f64, f64),
}

impl Default for TinyPreset {
    fn default() -> Self {
        Self { max_states: 3, max_rewards: 3, draw_choices: vec![1, 2, 4], discount_range: (0.5, 0.95) }
    }
}

impl TinyPreset {
    /// Ex-post states of the largest instance the preset can produce.
    pub fn worst_case_states(&self) -> u128 {
        let pairs = (self.max_states * self.max_rewards) as u128;
        let mut ds = self.draw_choices.clone();
        ds.sort_unstable();
        ds.dedup();
        ds.iter().map(|&d| pairs.saturating_pow(d.min(u32::MAX as u64) as u32)).fold(0u128, u128::saturating_add)
    }
}

/// A random pMDP with a shift-consistent cost of the given kind:
/// constant kind uses `c(i) = c₀ + ς popcount(i - 1)`, linear kind
/// `c(i) = c₀ + c₁ i`.
pub fn random_tiny_pmdp<R: Rng + ?Sized>(rng: &mut R, preset: &TinyPreset, kind: ShiftKind) -> PseudoMdp<f64> {
    let sigma = rng.random_range(1..=preset.max_states);
    let nr = rng.random_range(1..=preset.max_rewards);
    let mut rewards: Vec<f64> = Vec::with_capacity(nr);
    while rewards.len() < nr {
        let r = (rng.random_range(-1.0..2.0) * 64.0f64).round() / 64.0;
        if !rewards.contains(&r) {
            rewards.push(r);
        }
    }
    rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let joint = (0..sigma)
        .map(|_| loop {
            let w: Vec<f64> = (0..sigma * nr)
                .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.05..1.0) })
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                break Arc::from(w.into_iter().map(|x| x / total).collect::<Vec<_>>());
            }
        })
        .collect();
    let draws: Vec<Draws> = (0..sigma)
        .map(|_| Draws::count(preset.draw_choices[rng.random_range(0..preset.draw_choices.len())]))
        .collect();
    let max_d = draws.iter().map(|d| d.exact().unwrap()).max().unwrap();
    let base = rng.random_range(-0.5..0.5);
    let step = rng.random_range(-0.5..1.0);
    let (cost, shift) = match kind {
        ShiftKind::Constant => (
            (1..=max_d).map(|i| base + step * (i - 1).count_ones() as f64).collect(),
            ShiftDescriptor::constant(step),
        ),
        ShiftKind::Linear => ((1..=max_d).map(|i| base + step * i as f64).collect(), ShiftDescriptor::linear(step)),
    };
    PseudoMdp::new(rewards, joint, draws, CostFunction::Table(cost), Some(shift)).expect("generated pMDP is valid")
}

/// Deliberate defects for checking that the suite catches them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Injection {
    #[default]
    None,
    /// The fast path sees `c(i + 1)` in place of `c(i)`.
    CostOffByOne,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    pub discount: f64,
    /// `E_{s~P(s|σ)} V*(s)` from value iteration on the ex-post reduction.
    pub ex_post: Vec<f64>,
    pub exante: Vec<f64>,
    pub theorem4: Vec<f64>,
    pub naive: Vec<f64>,
    /// `None` when the fast path rejected its input.
    pub fast: Option<Vec<f64>>,
    pub fast_error: Option<String>,
    pub max_gap: f64,
}

impl CrossCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.fast.is_some() && self.max_gap <= tol
    }
}

/// Stopping threshold of every solver in the suite.
const EPSILON: f64 = 1e-12;
const MAX_ITERS: usize = 100_000;

/// Solves `pmdp` five ways and reports the largest disagreement.
pub fn cross_check(pmdp: &PseudoMdp<f64>, discount: f64, size_limit: u128, injection: Injection) -> Result<CrossCheck> {
    let ex_post_mdp = ex_post_reduction(pmdp, size_limit)?;
    let space = ExPostSpace::new(pmdp, size_limit)?;
    let v = value_iteration(&ex_post_mdp, discount, EPSILON, MAX_ITERS)?.into_converged()?;
    let ex_post: Vec<f64> = (0..pmdp.num_states())
        .map(|s| space.emission(pmdp, s).iter().zip(&v.values).map(|(p, v)| p * v).sum())
        .collect();
    let exante = exante_value_iteration(pmdp, discount, EPSILON, MAX_ITERS, size_limit)?.into_converged()?.values;
    let model = TheoremFourMdp::from_pmdp(pmdp, size_limit)?;
    let theorem4 = theorem4_value_iteration(&model, discount, EPSILON, MAX_ITERS)?.into_converged()?.values;
    let naive = crate::exact::iterate(pmdp.num_states(), discount, EPSILON, MAX_ITERS, |w| {
        (0..pmdp.num_states())
            .map(|s| {
                naive_utility_distribution(pmdp, w, discount, s, size_limit)
                    .map(|d| d.expected_utility(s).expect("row present"))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    })
    .into_converged()?
    .values;
    let fast_input = match injection {
        Injection::None => pmdp.clone(),
        Injection::CostOffByOne => {
            let max_d = pmdp.max_draws().exact().unwrap_or(1);
            let shifted = (2..=max_d + 1).map(|i| extrapolated_cost(pmdp, i)).collect();
            pmdp.clone().with_cost(CostFunction::Table(shifted))
        }
    };
    let (fast, fast_error) = match fast_value_iteration(&fast_input, discount, EPSILON, MAX_ITERS).and_then(|s| s.into_converged()) {
        Ok(w) => (Some(w.values), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut max_gap: f64 = 0.0;
    for other in [&exante, &theorem4, &naive].into_iter().chain(fast.as_ref()) {
        let gap = sup_distance(&ex_post, other);
        max_gap = if gap.is_nan() { f64::INFINITY } else { max_gap.max(gap) };
    }
    Ok(CrossCheck { discount, ex_post, exante, theorem4, naive, fast, fast_error, max_gap })
}

/// `c(i)` extended one index past a table by its shift structure.
fn extrapolated_cost(pmdp: &PseudoMdp<f64>, i: u64) -> f64 {
    if let Some(c) = pmdp.cost_function().get(i) {
        return c;
    }
    let shift = pmdp.shift().expect("generated instances carry a shift");
    // i - 1 = half + rest with half the top power of two of i - 1.
    let half = 1u64 << (63 - (i - 1).leading_zeros());
    let k = half.trailing_zeros();
    extrapolated_cost(pmdp, i - half) + shift.offset(k)
}

/// Ex-post reduction of an instance, for dumping failures.
pub fn ex_post_model(pmdp: &PseudoMdp<f64>, size_limit: u128) -> Result<FiniteMdp<f64>> {
    ex_post_reduction(pmdp, size_limit)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn generated_instances_are_fast_ready() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..50 {
            let kind = if i % 2 == 0 { ShiftKind::Constant } else { ShiftKind::Linear };
            let p = random_tiny_pmdp(&mut rng, &TinyPreset::default(), kind);
            assert!(p.ensure_fast_ready().is_ok());
            assert!(p.ex_post_state_count().unwrap() <= TinyPreset::default().worst_case_states());
        }
    }

    #[test]
    fn extrapolation_follows_shift() {
        let p = random_tiny_pmdp(&mut ChaCha8Rng::seed_from_u64(2), &TinyPreset::default(), ShiftKind::Constant);
        let shift = p.shift().unwrap().parameter;
        let c1 = p.cost(1);
        // c(5) = c(1) + ς·popcount(4) and c(8) = c(1) + 3ς.
        assert!((extrapolated_cost(&p, 5) - (c1 + shift)).abs() < 1e-12);
        assert!((extrapolated_cost(&p, 8) - (c1 + 3.0 * shift)).abs() < 1e-12);
    }
}
