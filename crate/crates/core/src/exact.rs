//! Mid-rung solvers that enumerate ex-post states but iterate on `Σ` only:
//! ex-ante value iteration for pMDPs and its conditional-independence
//! generalization, plus the matching policy extractions.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::mdp::{check_discount, check_epsilon, FiniteMdp, Solve, ValueVector};
use crate::pmdp::{for_each_tuple, ExPostSpace, ExPostState, PseudoMdp};
use crate::scalar::{argmax_first, sup_distance, Scalar};

/// Tolerance of the two-step composition check.
const CONSISTENCY_TOL: f64 = 1e-9;

/// An MDP whose next state `s'` is conditionally independent of `(s, a)`
/// given an intermediate `σ'`: `P(s'|s,a) = Σ_σ' P(σ'|s,a) P(s'|σ')`.
#[derive(Clone, Debug)]
pub struct TheoremFourMdp<T> {
    base: FiniteMdp<T>,
    num_sigma: usize,
    /// Distinct `P(·|s,a)` rows over `Σ`.
    intermediate_rows: Vec<Vec<T>>,
    /// Row id per `(s, a)`.
    intermediate: Vec<Vec<usize>>,
    /// Sparse `P(s|σ)` per `σ`.
    emission: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> TheoremFourMdp<T> {
    /// Validates normalization and the two-step composition against
    /// `base.transition`, memoized per distinct (transition, intermediate) row pair.
    pub fn new(
        base: FiniteMdp<T>,
        intermediate_rows: Vec<Vec<T>>,
        intermediate: Vec<Vec<usize>>,
        emission: Vec<Vec<T>>,
    ) -> Result<Self> {
        let num_sigma = emission.len();
        let n = base.num_states();
        if num_sigma == 0 {
            return Err(invalid("no intermediate states"));
        }
        let tol = T::normalization_tol();
        for (name, rows, width) in [("intermediate", &intermediate_rows, num_sigma), ("emission", &emission, n)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != width {
                    return Err(invalid(format!("{name} row {i} has {} entries, expected {width}", row.len())));
                }
                if row.iter().any(|&p| !(p >= T::zero())) {
                    return Err(invalid(format!("{name} row {i} has a negative or non-finite entry")));
                }
                let sum: T = row.iter().copied().sum();
                if (sum - T::one()).abs() > tol {
                    return Err(invalid(format!("{name} row {i} sums to {sum}")));
                }
            }
        }
        if intermediate.len() != n {
            return Err(invalid("intermediate map must cover every state"));
        }
        let tol = T::lit(CONSISTENCY_TOL);
        let mut checked = HashMap::new();
        for (s, mids) in intermediate.iter().enumerate() {
            if mids.len() != base.num_actions(s) {
                return Err(invalid(format!("state {s}: intermediate map does not cover every action")));
            }
            for (a, &mid) in mids.iter().enumerate() {
                if mid >= intermediate_rows.len() {
                    return Err(invalid(format!("state {s}, action {a}: unknown intermediate row {mid}")));
                }
                let key = (base.row_id(s, a), mid);
                if checked.insert(key, ()).is_some() {
                    continue;
                }
                let target = base.transition(s, a);
                let mut composed = vec![T::zero(); n];
                for (sigma, &q) in intermediate_rows[mid].iter().enumerate() {
                    if q > T::zero() {
                        for (c, &e) in composed.iter_mut().zip(&emission[sigma]) {
                            *c = *c + q * e;
                        }
                    }
                }
                let gap = sup_distance(&composed, target);
                if !(gap <= tol) {
                    return Err(invalid(format!(
                        "state {s}, action {a}: next state is not conditionally independent given sigma' (gap {gap})"
                    )));
                }
            }
        }
        let emission = emission
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|(_, p)| *p > T::zero()).collect())
            .collect();
        Ok(Self { base, num_sigma, intermediate_rows, intermediate, emission })
    }

    /// The model induced by a pMDP's ex-post reduction, with indicator
    /// intermediate distributions `σ' = s_a^σ`.
    pub fn from_pmdp(pmdp: &PseudoMdp<T>, size_limit: u128) -> Result<Self> {
        let base = crate::pmdp::ex_post_reduction(pmdp, size_limit)?;
        let space = ExPostSpace::new(pmdp, size_limit)?;
        let sigma = pmdp.num_states();
        let intermediate_rows = (0..sigma)
            .map(|next| {
                let mut row = vec![T::zero(); sigma];
                row[next] = T::one();
                row
            })
            .collect();
        let intermediate = (0..space.len())
            .map(|id| space.tuple(id).into_iter().map(|pair| pmdp.pair_next(pair)).collect())
            .collect();
        let emission = (0..sigma).map(|s| space.emission(pmdp, s)).collect();
        Self::new(base, intermediate_rows, intermediate, emission)
    }

    pub fn base(&self) -> &FiniteMdp<T> {
        &self.base
    }

    pub fn num_sigma(&self) -> usize {
        self.num_sigma
    }

    /// `P(·|s, a)` over `Σ`.
    pub fn intermediate(&self, state: usize, action: usize) -> &[T] {
        &self.intermediate_rows[self.intermediate[state][action]]
    }

    /// Positive entries of `P(·|σ)` over states.
    pub fn emission(&self, sigma: usize) -> &[(usize, T)] {
        &self.emission[sigma]
    }

    /// `R(s,a) + γ E(W(σ')|s,a)`.
    fn q_value(&self, state: usize, action: usize, w: &[T], discount: T) -> T {
        let expect = self
            .intermediate(state, action)
            .iter()
            .zip(w)
            .filter(|(&q, _)| q > T::zero())
            .fold(T::zero(), |acc, (&q, &v)| acc + q * v);
        self.base.reward(state, action) + discount * expect
    }

    /// `max_a [R(s,a) + γ E(W(σ')|s,a)]`.
    pub(crate) fn best_q(&self, state: usize, w: &[T], discount: T) -> T {
        (0..self.base.num_actions(state))
            .map(|a| self.q_value(state, a, w, discount))
            .fold(T::neg_infinity(), T::max)
    }
}

/// Per-sweep work counter of [`exante_value_iteration`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepCounter {
    /// `(s, a)` pairs scored in the last sweep: `Σ_σ |S_σ| · d(σ)`.
    pub action_evaluations: u64,
}

/// `T*W(σ) = E_{s~P(s|σ)} [max_a r_a - c(a) + γ W(σ'_a)]`, enumerating the
/// support of `P(·|σ)`.
fn exante_sweep<T: Scalar>(pmdp: &PseudoMdp<T>, w: &[T], discount: T, counter: &mut SweepCounter) -> Vec<T> {
    let mut out = Vec::with_capacity(pmdp.num_states());
    for sigma in 0..pmdp.num_states() {
        let d = pmdp.draws(sigma).exact().unwrap() as usize;
        let mut acc = T::zero();
        for_each_tuple(&pmdp.support(sigma), d, |tuple, p| {
            acc = acc + p * best_draw(pmdp, w, discount, tuple).1;
            counter.action_evaluations += d as u64;
        });
        out.push(acc);
    }
    out
}

/// `(a, score)` maximizing `r_a - c(a) + γ W(σ'_a)`, lowest index on ties.
pub(crate) fn best_draw<T: Scalar>(pmdp: &PseudoMdp<T>, w: &[T], discount: T, pairs: &[usize]) -> (usize, T) {
    argmax_first(
        pairs
            .iter()
            .enumerate()
            .map(|(a, &pair)| pmdp.net_reward(pair, a as u64 + 1) + discount * w[pmdp.pair_next(pair)]),
    )
    .expect("at least one draw")
}

fn check_enumerable<T: Scalar>(pmdp: &PseudoMdp<T>, size_limit: u128) -> Result<()> {
    pmdp.ensure_well_formed()?;
    let mut total = 0u128;
    for sigma in 0..pmdp.num_states() {
        let n = pmdp.support(sigma).len() as u128;
        let size = pmdp
            .draws(sigma)
            .exact()
            .and_then(|d| u32::try_from(d).ok())
            .and_then(|d| n.checked_pow(d))
            .and_then(|s| total.checked_add(s));
        match size {
            Some(s) if s <= size_limit => total = s,
            _ => {
                return Err(crate::error::Error::TooLarge {
                    what: "ex-post support",
                    formula: "sum over sigma of |supp P(.|sigma)|^d(sigma)",
                    size: size.map_or_else(|| "more than 2^128".into(), |s| s.to_string()),
                    limit: size_limit,
                })
            }
        }
    }
    Ok(())
}

/// Value iteration on `Σ` for a pMDP, enumerating ex-post draws.
pub fn exante_value_iteration<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    discount: T,
    epsilon: T,
    max_iters: usize,
    size_limit: u128,
) -> Result<Solve<ValueVector<T>, T>> {
    exante_value_iteration_counted(pmdp, discount, epsilon, max_iters, size_limit).map(|(s, _)| s)
}

/// [`exante_value_iteration`] also returning the work of the last sweep.
pub fn exante_value_iteration_counted<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    discount: T,
    epsilon: T,
    max_iters: usize,
    size_limit: u128,
) -> Result<(Solve<ValueVector<T>, T>, SweepCounter)> {
    check_discount(discount)?;
    check_epsilon(epsilon)?;
    check_enumerable(pmdp, size_limit)?;
    let mut counter = SweepCounter::default();
    let solve = iterate(pmdp.num_states(), discount, epsilon, max_iters, |w| {
        counter = SweepCounter::default();
        exante_sweep(pmdp, w, discount, &mut counter)
    });
    Ok((solve, counter))
}

/// One ex-ante Bellman sweep by enumeration (no iteration).
pub fn exante_bellman<T: Scalar>(pmdp: &PseudoMdp<T>, values: &[T], discount: T, size_limit: u128) -> Result<Vec<T>> {
    check_enumerable(pmdp, size_limit)?;
    if values.len() != pmdp.num_states() {
        return Err(invalid("value vector length does not match |Sigma|"));
    }
    Ok(exante_sweep(pmdp, values, discount, &mut SweepCounter::default()))
}

pub(crate) fn iterate<T: Scalar>(
    len: usize,
    discount: T,
    epsilon: T,
    max_iters: usize,
    mut sweep: impl FnMut(&[T]) -> Vec<T>,
) -> Solve<ValueVector<T>, T> {
    let mut w = vec![T::zero(); len];
    let mut residual = T::infinity();
    let mut iterations = 0;
    while iterations < max_iters {
        let next = sweep(&w);
        residual = sup_distance(&next, &w);
        w = next;
        iterations += 1;
        if residual <= epsilon {
            break;
        }
    }
    Solve {
        value: ValueVector::new(w, discount),
        iterations,
        converged: residual <= epsilon,
        residual,
    }
}

/// Value iteration on `Σ` for a [`TheoremFourMdp`]:
/// `T*W(σ) = E_{s~P(s|σ)} [max_a R(s,a) + γ E(W(σ')|s,a)]`.
pub fn theorem4_value_iteration<T: Scalar>(
    model: &TheoremFourMdp<T>,
    discount: T,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<ValueVector<T>, T>> {
    check_discount(discount)?;
    check_epsilon(epsilon)?;
    Ok(iterate(model.num_sigma, discount, epsilon, max_iters, |w| {
        (0..model.num_sigma)
            .map(|sigma| {
                model.emission[sigma]
                    .iter()
                    .fold(T::zero(), |acc, &(s, p)| acc + p * model.best_q(s, w, discount))
            })
            .collect()
    }))
}

/// Draw index (1-based) maximizing `r_a - c(a) + γ W(σ'_a)` in a realized
/// ex-post state; touches only its `d(s)` draws.
pub fn extract_action_pmdp<T: Scalar>(pmdp: &PseudoMdp<T>, values: &ValueVector<T>, state: &ExPostState) -> Result<u64> {
    if state.outcomes.is_empty() {
        return Err(invalid("ex-post state has no draws"));
    }
    let mut pairs = Vec::with_capacity(state.outcomes.len());
    for &(next, r) in &state.outcomes {
        if next >= values.len() || next >= pmdp.num_states() || r >= pmdp.num_rewards() {
            return Err(invalid(format!("outcome ({next}, {r}) is outside the model or value vector")));
        }
        pairs.push(pmdp.pair_index(next, r));
    }
    if values.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("value vector has non-finite entries"));
    }
    let (a, _) = best_draw(pmdp, &values.values, values.discount, &pairs);
    Ok(a as u64 + 1)
}

/// Action index maximizing `R(s,a) + γ E(W(σ')|s,a)`, lowest index on ties.
pub fn extract_action_theorem4<T: Scalar>(model: &TheoremFourMdp<T>, values: &ValueVector<T>, state: usize) -> Result<usize> {
    if values.len() != model.num_sigma {
        return Err(invalid("value vector length does not match |Sigma|"));
    }
    if state >= model.base.num_states() {
        return Err(invalid(format!("state {state} out of range")));
    }
    let scores = (0..model.base.num_actions(state)).map(|a| model.q_value(state, a, &values.values, values.discount));
    Ok(argmax_first(scores).expect("non-empty action set").0)
}
