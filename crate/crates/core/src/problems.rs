//! The two worked pMDPs: the four-colour card game and the RANDAO last
//! revealer attack.

use std::sync::Arc;

use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};
use crate::pmdp::{CostFunction, Draws, PseudoMdp, ShiftDescriptor};
use crate::scalar::Scalar;

pub const CARD_COLORS: [&str; 4] = ["club", "spade", "diamond", "heart"];

/// Four colours in increasing draw count `1, 2, 4, 8`; values `1..=10` with
/// the four face cards counted as 10; picking card `i` costs `6 + i`.
pub fn card_game_pmdp<T: Scalar>() -> PseudoMdp<T> {
    let rewards = (1..=10).map(|r| T::lit(r as f64)).collect();
    let row: Arc<[T]> = (0..4)
        .flat_map(|_| (1..=10).map(|r| T::lit(if r == 10 { 4.0 } else { 1.0 } / 52.0)))
        .collect();
    let cost = CostFunction::Table((1..=8).map(|i| T::lit(6.0 + i as f64)).collect());
    let draws = [1, 2, 4, 8].into_iter().map(Draws::count).collect();
    PseudoMdp::new(rewards, vec![row; 4], draws, cost, Some(ShiftDescriptor::linear(T::one())))
        .expect("card game is a valid pMDP")
}

/// Configuration of the last revealer attack model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LraSpec {
    /// Slots per epoch.
    pub kappa: usize,
    /// Attacker's share of the stake, the per-slot control probability.
    pub stake: f64,
    /// Largest tail length kept as a state; longer tails are folded into it.
    pub sigma_max: usize,
}

impl LraSpec {
    pub fn new(kappa: usize, stake: f64) -> Self {
        Self { kappa, stake, sigma_max: kappa }
    }
}

/// `P(T = t, N = n)` for `κ` IID slots controlled with probability `p`, where
/// `T` is the length of the controlled run at the end of the epoch and `N`
/// the number of controlled slots. Entry `t * (κ + 1) + n`.
///
/// For `t < κ` slot `κ - t` is lost and the `n - t` other controlled slots
/// lie among the first `κ - t - 1`.
pub fn lra_joint_distribution<T: Scalar>(kappa: usize, stake: f64) -> Result<Vec<T>> {
    if !(stake > 0.0 && stake < 1.0) {
        return Err(invalid(format!("stake must lie in (0, 1), got {stake}")));
    }
    if kappa == 0 {
        return Err(invalid("kappa must be positive"));
    }
    let width = kappa + 1;
    let (lp, lq) = (stake.ln(), (-stake).ln_1p());
    let mut table = vec![T::zero(); width * width];
    for t in 0..kappa {
        for n in t..kappa {
            let ln = ln_binomial((kappa - t - 1) as u64, (n - t) as u64) + n as f64 * lp + (kappa - n) as f64 * lq;
            table[t * width + n] = T::lit(ln.exp());
        }
    }
    table[kappa * width + kappa] = T::lit((kappa as f64 * lp).exp());
    Ok(table)
}

/// `Σ = {0..σ_max}`, `R = {0..κ}`, `d(σ) = 2^σ`, `(σ', r) = (T, N)` for every
/// `σ`, and `c(i) = popcount(i - 1)`: candidate seed `i` withholds the blocks
/// of the set bits of `i - 1`. Halving the seed index range withholds one
/// more block, hence the constant shift 1.
pub fn lra_pmdp<T: Scalar>(spec: LraSpec) -> Result<PseudoMdp<T>> {
    let LraSpec { kappa, stake, sigma_max } = spec;
    if sigma_max > kappa {
        return Err(invalid(format!("sigma_max {sigma_max} exceeds kappa {kappa}")));
    }
    let table = lra_joint_distribution::<T>(kappa, stake)?;
    let width = kappa + 1;
    let mut row = vec![T::zero(); (sigma_max + 1) * width];
    for t in 0..=kappa {
        let next = t.min(sigma_max);
        for n in 0..=kappa {
            row[next * width + n] = row[next * width + n] + table[t * width + n];
        }
    }
    let row: Arc<[T]> = Arc::from(row);
    let rewards = (0..=kappa).map(|n| T::lit(n as f64)).collect();
    let draws = (0..=sigma_max as u32).map(Draws::pow2).collect();
    PseudoMdp::new(
        rewards,
        vec![row; sigma_max + 1],
        draws,
        CostFunction::WithheldCount,
        Some(ShiftDescriptor::constant(T::one())),
    )
}
