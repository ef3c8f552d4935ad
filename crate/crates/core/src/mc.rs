//! Sampling-based solvers: Monte Carlo value iteration and long-run
//! simulation of selection rules.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::exact::TheoremFourMdp;
use crate::mdp::ValueVector;
use crate::pmdp::{ExPostSampler, PseudoMdp};
use crate::scalar::Scalar;

/// Largest draw count MCVI will sample per ex-post state.
const MCVI_MAX_DRAWS: u64 = 1 << 20;

/// Models MCVI can sample from.
#[derive(Clone, Copy, Debug)]
pub enum McviModel<'a, T> {
    Pmdp(&'a PseudoMdp<T>),
    TheoremFour(&'a TheoremFourMdp<T>),
}

impl<'a, T> From<&'a PseudoMdp<T>> for McviModel<'a, T> {
    fn from(p: &'a PseudoMdp<T>) -> Self {
        McviModel::Pmdp(p)
    }
}

impl<'a, T> From<&'a TheoremFourMdp<T>> for McviModel<'a, T> {
    fn from(m: &'a TheoremFourMdp<T>) -> Self {
        McviModel::TheoremFour(m)
    }
}

#[derive(Clone, Debug)]
pub struct McviResult<T> {
    pub values: ValueVector<T>,
    /// Standard error of each state's sample mean in the last sweep.
    pub std_errors: Vec<T>,
}

impl<T: Scalar> McviResult<T> {
    /// Last-sweep error inflated by the noise carried in from earlier sweeps,
    /// each damped by `γ`: `se / sqrt(1 - γ²)`.
    pub fn combined_std_errors(&self) -> Vec<T> {
        let g = self.values.discount;
        let factor = (T::one() - g * g).sqrt().recip();
        self.std_errors.iter().map(|&s| s * factor).collect()
    }
}

enum Backup<'a, T> {
    Pmdp { pmdp: &'a PseudoMdp<T>, sampler: ExPostSampler },
    TheoremFour { model: &'a TheoremFourMdp<T>, emission: Vec<WeightedAliasIndex<f64>> },
}

impl<'a, T: Scalar> Backup<'a, T> {
    fn new(model: McviModel<'a, T>) -> Result<Self> {
        Ok(match model {
            McviModel::Pmdp(pmdp) => {
                pmdp.ensure_well_formed()?;
                if let Some(s) = (0..pmdp.num_states()).find(|&s| pmdp.draws(s).exact().is_none_or(|d| d > MCVI_MAX_DRAWS)) {
                    return Err(invalid(format!("d({s}) = {} is too many draws to sample", pmdp.draws(s))));
                }
                Backup::Pmdp { pmdp, sampler: ExPostSampler::new(pmdp)? }
            }
            McviModel::TheoremFour(model) => {
                let emission = (0..model.num_sigma())
                    .map(|sigma| {
                        let weights = model.emission(sigma).iter().map(|&(_, p)| p.to_f64_lossy()).collect();
                        WeightedAliasIndex::new(weights).map_err(|e| invalid(format!("emission({sigma}): {e}")))
                    })
                    .collect::<Result<_>>()?;
                Backup::TheoremFour { model, emission }
            }
        })
    }

    fn num_sigma(&self) -> usize {
        match self {
            Backup::Pmdp { pmdp, .. } => pmdp.num_states(),
            Backup::TheoremFour { model, .. } => model.num_sigma(),
        }
    }

    /// One sampled `max_a [R(s,a) + γ E(W(σ')|s,a)]` with `s ~ P(·|σ)`.
    fn sample<R: Rng + ?Sized>(&self, sigma: usize, w: &[T], discount: T, rng: &mut R) -> T {
        match self {
            Backup::Pmdp { pmdp, sampler } => {
                let d = pmdp.draws(sigma).exact().unwrap();
                (1..=d)
                    .map(|a| {
                        let pair = sampler.sample_pair(sigma, rng);
                        pmdp.net_reward(pair, a) + discount * w[pmdp.pair_next(pair)]
                    })
                    .fold(T::neg_infinity(), T::max)
            }
            Backup::TheoremFour { model, emission } => {
                let s = model.emission(sigma)[emission[sigma].sample(rng)].0;
                model.best_q(s, w, discount)
            }
        }
    }
}

/// Value iteration with each expectation over `s ~ P(·|σ)` replaced by the
/// mean of `n_sample` draws; starts from `W = 0` and runs exactly `sweeps`.
pub fn mcvi<'a, T: Scalar, R: Rng + ?Sized>(
    model: impl Into<McviModel<'a, T>>,
    discount: T,
    n_sample: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<McviResult<T>> {
    crate::mdp::check_discount(discount)?;
    if n_sample == 0 {
        return Err(invalid("n_sample must be at least 1"));
    }
    let backup = Backup::new(model.into())?;
    let n = T::lit(n_sample as f64);
    let mut w = vec![T::zero(); backup.num_sigma()];
    let mut std_errors = vec![T::zero(); w.len()];
    for _ in 0..sweeps {
        let mut next = Vec::with_capacity(w.len());
        for (sigma, se) in std_errors.iter_mut().enumerate() {
            let (mut sum, mut sum_sq) = (T::zero(), T::zero());
            for _ in 0..n_sample {
                let x = backup.sample(sigma, &w, discount, rng);
                sum = sum + x;
                sum_sq = sum_sq + x * x;
            }
            let mean = sum / n;
            *se = if n_sample > 1 {
                let var = (sum_sq - n * mean * mean) / (n - T::one());
                (var.max(T::zero()) / n).sqrt()
            } else {
                T::zero()
            };
            next.push(mean);
        }
        w = next;
    }
    Ok(McviResult { values: ValueVector::new(w, discount), std_errors })
}

/// How the agent picks among its realized draws.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectionRule<T> {
    /// `argmax_a r_a - c(a) + γ ΔW(σ'_a)`, lowest index on ties.
    Optimal { values: Vec<T>, discount: T },
    /// `argmax_a r_a - c(a)`, lowest index on ties.
    Myopic,
    /// `argmax_a σ'_a`, lowest index on ties: rewards play no part.
    ControlMax,
    /// Always draw 1, which must be free.
    Honest,
}

impl<T> SelectionRule<T> {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::Optimal { .. } => "optimal",
            SelectionRule::Myopic => "myopic",
            SelectionRule::ControlMax => "control_max",
            SelectionRule::Honest => "honest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub mean_reward_per_epoch: f64,
    /// Batch-means standard error of the mean.
    pub std_error: f64,
    pub steps: usize,
    /// Fraction of epochs started in each ex-ante state.
    pub sigma_occupancy: Vec<f64>,
    pub batches: usize,
}

pub const DEFAULT_BATCHES: usize = 100;
pub const DEFAULT_SIGMA_CAP: u32 = 16;

/// Runs `steps` epochs from `σ = 0` under `rule`, sampling at most
/// `2^sigma_cap` draws per epoch.
pub fn simulate_strategy<T: Scalar, R: Rng + ?Sized>(
    pmdp: &PseudoMdp<T>,
    rule: &SelectionRule<T>,
    steps: usize,
    sigma_cap: u32,
    rng: &mut R,
) -> Result<SimulationResult> {
    pmdp.ensure_well_formed()?;
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    if sigma_cap > 40 {
        return Err(invalid(format!("sigma_cap {sigma_cap} is too large to sample")));
    }
    match rule {
        SelectionRule::Honest if pmdp.cost(1) != T::zero() => {
            return Err(invalid("honest rule needs a zero-cost first draw"));
        }
        SelectionRule::Optimal { values, .. } if values.len() != pmdp.num_states() => {
            return Err(invalid("optimal rule needs one value per ex-ante state"));
        }
        _ => {}
    }
    let sampler = ExPostSampler::new(pmdp)?;
    let cap = 1u64 << sigma_cap;
    let batches = steps.min(DEFAULT_BATCHES);
    let mut batch_sums = vec![0.0; batches];
    let mut visits = vec![0u64; pmdp.num_states()];
    let mut sigma = 0;
    for step in 0..steps {
        visits[sigma] += 1;
        let d = pmdp.draws(sigma).capped(cap);
        let pair = pick(pmdp, rule, &sampler, sigma, d, rng);
        let (pair, index) = pair;
        batch_sums[step * batches / steps] += pmdp.net_reward(pair, index).to_f64_lossy();
        sigma = pmdp.pair_next(pair);
    }
    let total: f64 = batch_sums.iter().sum();
    let mean = total / steps as f64;
    let std_error = if batches > 1 {
        let means: Vec<f64> = (0..batches)
            .map(|b| {
                let len = step_start(b + 1, steps, batches) - step_start(b, steps, batches);
                batch_sums[b] / len as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(SimulationResult {
        mean_reward_per_epoch: mean,
        std_error,
        steps,
        sigma_occupancy: visits.iter().map(|&v| v as f64 / steps as f64).collect(),
        batches,
    })
}

/// First step of batch `b` under `step * batches / steps` assignment.
fn step_start(b: usize, steps: usize, batches: usize) -> usize {
    (b * steps).div_ceil(batches)
}

/// Samples `d` draws and returns the chosen `(pair, 1-based index)`.
fn pick<T: Scalar, R: Rng + ?Sized>(
    pmdp: &PseudoMdp<T>,
    rule: &SelectionRule<T>,
    sampler: &ExPostSampler,
    sigma: usize,
    d: u64,
    rng: &mut R,
) -> (usize, u64) {
    let first = sampler.sample_pair(sigma, rng);
    if let SelectionRule::Honest = rule {
        // Remaining draws do not influence the choice.
        return (first, 1);
    }
    let score = |pair: usize, a: u64| -> (T, T) {
        let net = pmdp.net_reward(pair, a);
        match rule {
            SelectionRule::Optimal { values, discount } => (net + *discount * values[pmdp.pair_next(pair)], T::zero()),
            SelectionRule::Myopic => (net, T::zero()),
            SelectionRule::ControlMax => (T::lit(pmdp.pair_next(pair) as f64), T::zero()),
            SelectionRule::Honest => unreachable!(),
        }
    };
    let mut best = (first, 1);
    let mut best_score = score(first, 1);
    for a in 2..=d {
        let pair = sampler.sample_pair(sigma, rng);
        let s = score(pair, a);
        if s.0 > best_score.0 || (s.0 == best_score.0 && s.1 > best_score.1) {
            best = (pair, a);
            best_score = s;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::exact::exante_value_iteration;
    use crate::pmdp::{CostFunction, Draws};

    fn degenerate() -> PseudoMdp<f64> {
        PseudoMdp::new(
            vec![1.0, 2.0],
            vec![Arc::from(vec![0.0, 0.0, 0.0, 1.0]), Arc::from(vec![1.0, 0.0, 0.0, 0.0])],
            vec![Draws::ONE, Draws::count(2)],
            CostFunction::Table(vec![0.0, 0.5]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_on_degenerate_joint_is_exact() {
        let p = degenerate();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mc = mcvi(&p, 0.7, 1, 30, &mut rng).unwrap();
        let exact = exante_value_iteration(&p, 0.7, 1e-300, 30, 100).unwrap();
        assert_eq!(mc.values.values, exact.value.values);
        assert_eq!(mc.std_errors, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_rewards_stay_zero() {
        let p = PseudoMdp::new(
            vec![0.0],
            vec![Arc::from(vec![0.5, 0.5]), Arc::from(vec![0.2, 0.8])],
            vec![Draws::count(2); 2],
            CostFunction::Table(vec![0.0, 0.0]),
            None,
        )
        .unwrap();
        let mc = mcvi(&p, 0.9, 10, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(mc.values.values, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_zero_samples_and_huge_draws() {
        let p = degenerate();
        assert!(mcvi(&p, 0.5, 0, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let big = PseudoMdp::new(
            vec![0.0],
            vec![Arc::from(vec![1.0])],
            vec![Draws::pow2(30)],
            CostFunction::WithheldCount,
            None,
        )
        .unwrap();
        assert!(mcvi(&big, 0.5, 1, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn honest_needs_free_first_draw() {
        let p = PseudoMdp::new(vec![1.0], vec![Arc::from(vec![1.0])], vec![Draws::ONE], CostFunction::Table(vec![1.0]), None).unwrap();
        let err = simulate_strategy(&p, &SelectionRule::Honest, 10, 16, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(err.is_err());
    }

    #[test]
    fn deterministic_chain_statistics() {
        // σ=0 → (σ'=1, r=2) surely; σ=1 draws two copies of (0, 1), index 2 costs 0.5.
        let p = degenerate();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let res = simulate_strategy(&p, &SelectionRule::Myopic, 1000, 16, &mut rng).unwrap();
        assert!((res.mean_reward_per_epoch - 1.5).abs() < 1e-12);
        assert_eq!(res.sigma_occupancy, vec![0.5, 0.5]);
        assert_eq!(res.batches, 100);
        assert_eq!(res.std_error, 0.0);
    }

    #[test]
    fn control_max_takes_the_first_draw_reaching_the_top_state() {
        // Three equally likely pairs: (0, r=5), (1, r=0), (1, r=1); costs 0.
        let p = PseudoMdp::new(
            vec![0.0, 1.0, 5.0],
            vec![Arc::from(vec![0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]); 2],
            vec![Draws::count(64); 2],
            CostFunction::Table(vec![0.0; 64]),
            None,
        )
        .unwrap();
        let sampler = ExPostSampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut replay = rng.clone();
        let (pair, index) = pick(&p, &SelectionRule::ControlMax, &sampler, 0, 64, &mut rng);
        let first = (1..=64u64).find(|_| p.pair_next(sampler.sample_pair(0, &mut replay)) == 1).unwrap();
        assert_eq!((p.pair_next(pair), index), (1, first));
        let (pair, _) = pick(&p, &SelectionRule::<f64>::Myopic, &sampler, 0, 64, &mut rng);
        assert_eq!(p.pair(pair), (0, 2));
    }

    #[test]
    fn batch_boundaries_cover_all_steps() {
        for steps in [100, 101, 250, 12345] {
            let total: usize = (0..100).map(|b| step_start(b + 1, steps, 100) - step_start(b, steps, 100)).sum();
            assert_eq!(total, steps);
            for step in 0..steps {
                let b = step * 100 / steps;
                assert!(step_start(b, steps, 100) <= step && step < step_start(b + 1, steps, 100));
            }
        }
    }
}
