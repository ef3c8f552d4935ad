//! Pseudo-MDPs: draw `d(σ)` IID `(σ', r)` pairs, pick one, pay `c(i)`.
//!
//! This module holds the data model, its validation, ex-post sampling and the
//! two reductions to a [`FiniteMdp`]. The reductions exist for oracle checks
//! only; both are gated by a size limit because they explode combinatorially.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{FiniteMdp, FiniteMdpBuilder};
use crate::scalar::Scalar;

/// Upper index up to which cost/shift consistency is checked numerically.
const SHIFT_CHECK_LIMIT: u64 = 1 << 16;

/// Number of draws `d(σ)`. Counts beyond `u64` are representable as powers of
/// two only, which is all the fast solver needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "DrawsRepr", into = "DrawsRepr")]
pub struct Draws(DrawsInner);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum DrawsInner {
    Count(u64),
    /// Exponent `k >= 64`.
    Pow2(u32),
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum DrawsRepr {
    Count(u64),
    Pow2 { pow2: u32 },
}

impl From<DrawsRepr> for Draws {
    fn from(repr: DrawsRepr) -> Self {
        match repr {
            DrawsRepr::Count(n) => Draws::count(n),
            DrawsRepr::Pow2 { pow2 } => Draws::pow2(pow2),
        }
    }
}

impl From<Draws> for DrawsRepr {
    fn from(d: Draws) -> Self {
        match d.0 {
            DrawsInner::Count(n) => DrawsRepr::Count(n),
            DrawsInner::Pow2(k) => DrawsRepr::Pow2 { pow2: k },
        }
    }
}

impl Draws {
    pub const ONE: Draws = Draws(DrawsInner::Count(1));

    pub fn count(n: u64) -> Self {
        Draws(DrawsInner::Count(n))
    }

    pub fn pow2(k: u32) -> Self {
        if k < 64 {
            Draws(DrawsInner::Count(1u64 << k))
        } else {
            Draws(DrawsInner::Pow2(k))
        }
    }

    /// The count, when it fits in a `u64`.
    pub fn exact(self) -> Option<u64> {
        match self.0 {
            DrawsInner::Count(n) => Some(n),
            DrawsInner::Pow2(_) => None,
        }
    }

    /// `log2 d` when `d` is a power of two.
    pub fn log2(self) -> Option<u32> {
        match self.0 {
            DrawsInner::Count(n) if n.is_power_of_two() => Some(n.trailing_zeros()),
            DrawsInner::Count(_) => None,
            DrawsInner::Pow2(k) => Some(k),
        }
    }

    pub fn is_power_of_two(self) -> bool {
        self.log2().is_some()
    }

    pub fn to_f64(self) -> f64 {
        match self.0 {
            DrawsInner::Count(n) => n as f64,
            DrawsInner::Pow2(k) => 2f64.powi(k as i32),
        }
    }

    /// `min(self, cap)` as an exact count.
    pub fn capped(self, cap: u64) -> u64 {
        self.exact().map_or(cap, |n| n.min(cap))
    }
}

impl Ord for Draws {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0, other.0) {
            (DrawsInner::Count(a), DrawsInner::Count(b)) => a.cmp(&b),
            (DrawsInner::Count(_), DrawsInner::Pow2(_)) => Ordering::Less,
            (DrawsInner::Pow2(_), DrawsInner::Count(_)) => Ordering::Greater,
            (DrawsInner::Pow2(a), DrawsInner::Pow2(b)) => a.cmp(&b),
        }
    }
}

impl PartialOrd for Draws {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Draws {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            DrawsInner::Count(n) => write!(f, "{n}"),
            DrawsInner::Pow2(k) => write!(f, "2^{k}"),
        }
    }
}

/// Cost `c(i)` of picking draw `i` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CostRepr<T>", into = "CostRepr<T>", bound = "T: Scalar")]
pub enum CostFunction<T> {
    /// `c(i) = table[i - 1]`, defined for `i <= table.len()`.
    Table(Vec<T>),
    /// `c(i) = intercept + slope * i`.
    Linear { intercept: T, slope: T },
    /// `c(i) = popcount(i - 1)`: withheld blocks under the doubling seed index.
    WithheldCount,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged, bound = "T: Scalar")]
enum CostRepr<T> {
    Table(Vec<T>),
    Closed(ClosedCost<T>),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
enum ClosedCost<T> {
    Linear { intercept: T, slope: T },
    WithheldCount,
}

impl<T: Scalar> From<CostRepr<T>> for CostFunction<T> {
    fn from(repr: CostRepr<T>) -> Self {
        match repr {
            CostRepr::Table(t) => CostFunction::Table(t),
            CostRepr::Closed(ClosedCost::Linear { intercept, slope }) => CostFunction::Linear { intercept, slope },
            CostRepr::Closed(ClosedCost::WithheldCount) => CostFunction::WithheldCount,
        }
    }
}

impl<T: Scalar> From<CostFunction<T>> for CostRepr<T> {
    fn from(cost: CostFunction<T>) -> Self {
        match cost {
            CostFunction::Table(t) => CostRepr::Table(t),
            CostFunction::Linear { intercept, slope } => CostRepr::Closed(ClosedCost::Linear { intercept, slope }),
            CostFunction::WithheldCount => CostRepr::Closed(ClosedCost::WithheldCount),
        }
    }
}

impl<T: Scalar> CostFunction<T> {
    /// `c(i)`; `None` outside the table or for `i = 0`.
    pub fn get(&self, index: u64) -> Option<T> {
        if index == 0 {
            return None;
        }
        match self {
            CostFunction::Table(t) => t.get((index - 1) as usize).copied(),
            CostFunction::Linear { intercept, slope } => Some(*intercept + *slope * T::lit(index as f64)),
            CostFunction::WithheldCount => Some(T::lit((index - 1).count_ones() as f64)),
        }
    }

    /// Largest index the cost is defined for; `None` means unbounded.
    pub fn defined_up_to(&self) -> Option<u64> {
        match self {
            CostFunction::Table(t) => Some(t.len() as u64),
            _ => None,
        }
    }

    /// Sorted distinct values of `c(1..=max)`.
    pub fn distinct_costs(&self, max: Draws) -> Result<Vec<T>> {
        let mut out = match self {
            CostFunction::WithheldCount => {
                let top = match max.exact() {
                    Some(0) => return Ok(Vec::new()),
                    Some(n) => {
                        let last = n - 1;
                        let bits = 64 - last.leading_zeros();
                        last.count_ones().max(bits.saturating_sub(1))
                    }
                    None => max.log2().expect("oversized draws are powers of two"),
                };
                (0..=top).map(|k| T::lit(k as f64)).collect()
            }
            CostFunction::Table(t) => {
                let n = max.exact().map_or(t.len(), |n| (n as usize).min(t.len()));
                t[..n].to_vec()
            }
            CostFunction::Linear { .. } => {
                let n = max
                    .exact()
                    .filter(|&n| n <= 1 << 24)
                    .ok_or_else(|| invalid(format!("linear cost over {max} draws is too many distinct values")))?;
                (1..=n).map(|i| self.get(i).unwrap()).collect()
            }
        };
        out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        out.dedup();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// The upper half of a doubled range costs `ς` more than the lower half.
    Constant,
    /// Linear cost with slope `c₁`: the upper half of `2m` draws costs `c₁·m` more.
    Linear,
}

/// Shift `ς` making the upper half of `2m` draws a translated copy of the
/// lower half: `P_{m+1,2m+1}(u ≤ υ) = P_{1,m+1}(u ≤ υ + shift)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ShiftDescriptor<T> {
    pub kind: ShiftKind,
    pub parameter: T,
}

impl<T: Scalar> ShiftDescriptor<T> {
    pub fn constant(shift: T) -> Self {
        Self { kind: ShiftKind::Constant, parameter: shift }
    }

    pub fn linear(slope: T) -> Self {
        Self { kind: ShiftKind::Linear, parameter: slope }
    }

    /// Offset applied when doubling from `2^half_log2` draws.
    pub fn offset(&self, half_log2: u32) -> T {
        match self.kind {
            ShiftKind::Constant => self.parameter,
            ShiftKind::Linear => self.parameter * T::lit(2f64.powi(half_log2 as i32)),
        }
    }
}

/// An invariant broken by a [`PseudoMdp`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoStates,
    RewardsNotIncreasing,
    NonFinite(String),
    NegativeProbability { state: usize },
    Normalization { state: usize, sum: f64 },
    ZeroDraws { state: usize },
    NotPowerOfTwo { state: usize, draws: Draws },
    CostDomain { required: Draws, defined: u64 },
    ShiftInconsistent { half: u64, index: u64 },
}

impl Violation {
    /// Violations that only matter to the fast solver.
    pub fn is_shift_related(&self) -> bool {
        matches!(self, Violation::NotPowerOfTwo { .. } | Violation::ShiftInconsistent { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "no ex-ante states"),
            Violation::RewardsNotIncreasing => write!(f, "reward support is not strictly increasing"),
            Violation::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Violation::NegativeProbability { state } => write!(f, "joint({state}) has a negative entry"),
            Violation::Normalization { state, sum } => write!(f, "joint({state}) sums to {sum}"),
            Violation::ZeroDraws { state } => write!(f, "d({state}) = 0"),
            Violation::NotPowerOfTwo { state, draws } => {
                write!(f, "d({state}) = {draws} is not a power of two but a shift is present")
            }
            Violation::CostDomain { required, defined } => {
                write!(f, "cost defined on 1..={defined} but max d = {required}")
            }
            Violation::ShiftInconsistent { half, index } => {
                write!(f, "c({}) != c({index}) + shift when doubling from {half} draws", half + index)
            }
        }
    }
}

/// Outcome of [`PseudoMdp::validate`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn into_result(self, include_shift: bool) -> Result<()> {
        let msgs: Vec<String> = self
            .violations
            .iter()
            .filter(|v| include_shift || !v.is_shift_related())
            .map(ToString::to_string)
            .collect();
        if msgs.is_empty() {
            Ok(())
        } else {
            Err(invalid(msgs.join("; ")))
        }
    }
}

/// A pMDP `(Σ, R, P, d, c)` with an optional shift descriptor.
///
/// Joint tables are row-major over `(σ', r)`: entry `σ' * |R| + r`. Rows may be
/// shared between states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmdpDocument<T>", into = "PmdpDocument<T>", bound = "T: Scalar")]
pub struct PseudoMdp<T> {
    num_states: usize,
    rewards: Vec<T>,
    joint: Vec<Arc<[T]>>,
    draws: Vec<Draws>,
    cost: CostFunction<T>,
    shift: Option<ShiftDescriptor<T>>,
}

impl<T: Scalar> PseudoMdp<T> {
    /// Builds a pMDP and rejects it unless [`validate`](Self::validate) is clean.
    pub fn new(
        rewards: Vec<T>,
        joint: Vec<Arc<[T]>>,
        draws: Vec<Draws>,
        cost: CostFunction<T>,
        shift: Option<ShiftDescriptor<T>>,
    ) -> Result<Self> {
        let pmdp = Self::from_parts(rewards, joint, draws, cost, shift)?;
        pmdp.validate().into_result(true)?;
        Ok(pmdp)
    }

    /// Builds a pMDP checking only array shapes.
    pub fn from_parts(
        rewards: Vec<T>,
        joint: Vec<Arc<[T]>>,
        draws: Vec<Draws>,
        cost: CostFunction<T>,
        shift: Option<ShiftDescriptor<T>>,
    ) -> Result<Self> {
        let num_states = joint.len();
        if draws.len() != num_states {
            return Err(invalid(format!("{} draw counts for {num_states} states", draws.len())));
        }
        let width = num_states * rewards.len();
        if let Some((s, row)) = joint.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(invalid(format!("joint({s}) has {} entries, expected {width}", row.len())));
        }
        Ok(Self { num_states, rewards, joint, draws, cost, shift })
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.num_states == 0 || self.rewards.is_empty() {
            violations.push(Violation::NoStates);
        }
        if self.rewards.windows(2).any(|w| !(w[0] < w[1])) {
            violations.push(Violation::RewardsNotIncreasing);
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            violations.push(Violation::NonFinite("rewards".into()));
        }
        let tol = T::normalization_tol();
        for (s, row) in self.joint.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite()) {
                violations.push(Violation::NonFinite(format!("joint({s})")));
                continue;
            }
            if row.iter().any(|&p| p < T::zero()) {
                violations.push(Violation::NegativeProbability { state: s });
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                violations.push(Violation::Normalization { state: s, sum: sum.to_f64_lossy() });
            }
        }
        for (s, &d) in self.draws.iter().enumerate() {
            if d.exact() == Some(0) {
                violations.push(Violation::ZeroDraws { state: s });
            } else if self.shift.is_some() && !d.is_power_of_two() {
                violations.push(Violation::NotPowerOfTwo { state: s, draws: d });
            }
        }
        let max_d = self.max_draws();
        if let Some(defined) = self.cost.defined_up_to() {
            if max_d > Draws::count(defined) {
                violations.push(Violation::CostDomain { required: max_d, defined });
            }
        }
        let checked = max_d.capped(self.cost.defined_up_to().unwrap_or(u64::MAX).min(SHIFT_CHECK_LIMIT));
        if (1..=checked).any(|i| !self.cost.get(i).is_some_and(|c| c.is_finite())) {
            violations.push(Violation::NonFinite("cost".into()));
        }
        if let Some(shift) = &self.shift {
            violations.extend(self.shift_violations(shift, checked));
        }
        ValidationReport { violations }
    }

    fn shift_violations(&self, shift: &ShiftDescriptor<T>, checked: u64) -> Option<Violation> {
        let tol = T::dedup_tol();
        let mut half_log2 = 0u32;
        while (2u64 << half_log2) <= checked {
            let half = 1u64 << half_log2;
            let offset = shift.offset(half_log2);
            for i in 1..=half {
                let (lo, hi) = (self.cost.get(i)?, self.cost.get(half + i)?);
                if (hi - lo - offset).abs() > tol {
                    return Some(Violation::ShiftInconsistent { half, index: i });
                }
            }
            half_log2 += 1;
        }
        None
    }

    /// Errors on any violation except the fast-solver-only ones.
    pub fn ensure_well_formed(&self) -> Result<()> {
        self.validate().into_result(false)
    }

    /// Errors unless the fast solver's preconditions hold.
    pub fn ensure_fast_ready(&self) -> Result<()> {
        let shift = self.shift.ok_or(Error::MissingShift)?;
        if let Some((state, d)) = self.draws.iter().enumerate().find(|(_, d)| !d.is_power_of_two()) {
            return Err(Error::NotPowerOfTwo { state, draws: d.to_string() });
        }
        let _ = shift;
        self.validate().into_result(true)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_rewards(&self) -> usize {
        self.rewards.len()
    }

    /// `|Σ| · |R|`, the number of `(σ', r)` pairs.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.rewards.len()
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn joint(&self, state: usize) -> &[T] {
        &self.joint[state]
    }

    pub fn joint_rows(&self) -> &[Arc<[T]>] {
        &self.joint
    }

    pub fn draws(&self, state: usize) -> Draws {
        self.draws[state]
    }

    pub fn all_draws(&self) -> &[Draws] {
        &self.draws
    }

    pub fn max_draws(&self) -> Draws {
        self.draws.iter().copied().max().unwrap_or(Draws::ONE)
    }

    pub fn cost_function(&self) -> &CostFunction<T> {
        &self.cost
    }

    /// `c(i)` for a 1-based draw index; NaN outside the cost's domain.
    #[inline]
    pub fn cost(&self, index: u64) -> T {
        self.cost.get(index).unwrap_or_else(T::nan)
    }

    pub fn shift(&self) -> Option<&ShiftDescriptor<T>> {
        self.shift.as_ref()
    }

    /// Replaces the shift descriptor (fixtures and what-if runs).
    pub fn with_shift(mut self, shift: Option<ShiftDescriptor<T>>) -> Self {
        self.shift = shift;
        self
    }

    /// Replaces the cost function.
    pub fn with_cost(mut self, cost: CostFunction<T>) -> Self {
        self.cost = cost;
        self
    }

    #[inline]
    pub fn pair_index(&self, next: usize, reward: usize) -> usize {
        next * self.rewards.len() + reward
    }

    /// `(σ', r-index)` of a pair index.
    #[inline]
    pub fn pair(&self, index: usize) -> (usize, usize) {
        (index / self.rewards.len(), index % self.rewards.len())
    }

    #[inline]
    pub fn pair_reward(&self, index: usize) -> T {
        self.rewards[index % self.rewards.len()]
    }

    #[inline]
    pub fn pair_next(&self, index: usize) -> usize {
        index / self.rewards.len()
    }

    /// Net reward `r - c(a)` of picking `pair` as draw `a`.
    #[inline]
    pub fn net_reward(&self, pair: usize, draw_index: u64) -> T {
        self.pair_reward(pair) - self.cost(draw_index)
    }

    /// Positive-probability pairs of `joint(state)` with their probabilities.
    pub fn support(&self, state: usize) -> Vec<(usize, T)> {
        self.joint[state]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > T::zero())
            .map(|(i, &p)| (i, p))
            .collect()
    }

    /// `|S| = Σ_{d' ∈ d(Σ)} (|Σ||R|)^{d'}`, or `None` on `u128` overflow.
    pub fn ex_post_state_count(&self) -> Option<u128> {
        let mut distinct: Vec<Draws> = self.draws.clone();
        distinct.sort();
        distinct.dedup();
        distinct.into_iter().try_fold(0u128, |acc, d| {
            let exp = u32::try_from(d.exact()?).ok()?;
            acc.checked_add((self.num_pairs() as u128).checked_pow(exp)?)
        })
    }

    /// `Σ_σ d(σ)^{(|Σ||R|)^{d(σ)}}`, or `None` on `u128` overflow.
    pub fn ex_ante_action_count(&self) -> Option<u128> {
        self.draws.iter().try_fold(0u128, |acc, d| {
            let n = d.exact()?;
            let tuples = (self.num_pairs() as u128).checked_pow(u32::try_from(n).ok()?)?;
            acc.checked_add((n as u128).checked_pow(u32::try_from(tuples).ok()?)?)
        })
    }
}

/// Serialized form of a [`PseudoMdp`].
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct PmdpDocument<T> {
    sigma: usize,
    rewards: Vec<T>,
    joint: Vec<Vec<T>>,
    draws: Vec<Draws>,
    cost: CostFunction<T>,
    shift: Option<ShiftDescriptor<T>>,
}

impl<T: Scalar> TryFrom<PmdpDocument<T>> for PseudoMdp<T> {
    type Error = Error;

    fn try_from(doc: PmdpDocument<T>) -> Result<Self> {
        if doc.joint.len() != doc.sigma {
            return Err(invalid(format!("sigma = {} but {} joint rows", doc.sigma, doc.joint.len())));
        }
        let joint = doc.joint.into_iter().map(Arc::from).collect();
        PseudoMdp::from_parts(doc.rewards, joint, doc.draws, doc.cost, doc.shift)
    }
}

impl<T: Scalar> From<PseudoMdp<T>> for PmdpDocument<T> {
    fn from(p: PseudoMdp<T>) -> Self {
        PmdpDocument {
            sigma: p.num_states,
            rewards: p.rewards,
            joint: p.joint.iter().map(|r| r.to_vec()).collect(),
            draws: p.draws,
            cost: p.cost,
            shift: p.shift,
        }
    }
}

/// A realized draw from ex-ante state `origin`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExPostState {
    pub origin: usize,
    /// `(σ', r-index)` per draw, in draw order.
    pub outcomes: Vec<(usize, usize)>,
}

/// Alias-table sampler over the joint rows of a pMDP.
#[derive(Clone, Debug)]
pub struct ExPostSampler {
    tables: Vec<Arc<WeightedAliasIndex<f64>>>,
}

impl ExPostSampler {
    pub fn new<T: Scalar>(pmdp: &PseudoMdp<T>) -> Result<Self> {
        let mut tables: Vec<Arc<WeightedAliasIndex<f64>>> = Vec::with_capacity(pmdp.num_states());
        for s in 0..pmdp.num_states() {
            let shared = (0..s).find(|&prev| Arc::ptr_eq(&pmdp.joint[prev], &pmdp.joint[s]));
            let table = match shared {
                Some(prev) => tables[prev].clone(),
                None => {
                    let weights = pmdp.joint(s).iter().map(|p| p.to_f64_lossy().max(0.0)).collect();
                    Arc::new(WeightedAliasIndex::new(weights).map_err(|e| invalid(format!("joint({s}): {e}")))?)
                }
            };
            tables.push(table);
        }
        Ok(Self { tables })
    }

    /// One `(σ', r)` pair index drawn from `joint(state)`.
    #[inline]
    pub fn sample_pair<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        self.tables[state].sample(rng)
    }

    /// Fills `out` with `count` IID pair indices from `joint(state)`.
    pub fn sample_into<R: Rng + ?Sized>(&self, state: usize, count: u64, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        out.extend((0..count).map(|_| self.tables[state].sample(rng)));
    }
}

/// Samples the `d(σ)` IID draws of an ex-post state.
pub fn sample_ex_post<T: Scalar, R: Rng + ?Sized>(
    pmdp: &PseudoMdp<T>,
    state: usize,
    rng: &mut R,
) -> Result<ExPostState> {
    let d = pmdp
        .draws(state)
        .exact()
        .filter(|&d| d <= 1 << 32)
        .ok_or_else(|| invalid(format!("cannot sample {} draws", pmdp.draws(state))))?;
    let sampler = ExPostSampler::new(pmdp)?;
    let mut pairs = Vec::new();
    sampler.sample_into(state, d, rng, &mut pairs);
    Ok(ExPostState {
        origin: state,
        outcomes: pairs.into_iter().map(|p| pmdp.pair(p)).collect(),
    })
}

fn too_large(what: &'static str, formula: &'static str, size: Option<u128>, limit: u128) -> Error {
    Error::TooLarge {
        what,
        formula,
        size: size.map_or_else(|| "more than 2^128".to_string(), |s| s.to_string()),
        limit,
    }
}

/// Visits every length-`len` tuple over `alphabet` in lexicographic order
/// (first position most significant) with the product of its weights.
pub(crate) fn for_each_tuple<T: Scalar>(alphabet: &[(usize, T)], len: usize, mut visit: impl FnMut(&[usize], T)) {
    if alphabet.is_empty() {
        return;
    }
    let mut digits = vec![0usize; len];
    let mut tuple: Vec<usize> = vec![alphabet[0].0; len];
    loop {
        let prob = digits.iter().fold(T::one(), |acc, &d| acc * alphabet[d].1);
        visit(&tuple, prob);
        let mut pos = len;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < alphabet.len() {
                tuple[pos] = alphabet[digits[pos]].0;
                break;
            }
            digits[pos] = 0;
            tuple[pos] = alphabet[0].0;
        }
    }
}

/// Indexing of the ex-post state set `∪_{d'} (Σ × R)^{d'}`: groups ordered by
/// increasing `d'`, tuples within a group in lexicographic pair order.
#[derive(Clone, Debug)]
pub struct ExPostSpace {
    pairs: usize,
    /// `(d', offset)` sorted by `d'`.
    groups: Vec<(usize, usize)>,
    len: usize,
}

impl ExPostSpace {
    pub fn new<T: Scalar>(pmdp: &PseudoMdp<T>, size_limit: u128) -> Result<Self> {
        const FORMULA: &str = "sum over distinct d' of (|Sigma|*|R|)^d'";
        let size = pmdp.ex_post_state_count();
        match size {
            Some(n) if n <= size_limit && n <= usize::MAX as u128 => {}
            _ => return Err(too_large("ex-post state space", FORMULA, size, size_limit)),
        }
        let mut ds: Vec<usize> = pmdp.all_draws().iter().map(|d| d.exact().unwrap() as usize).collect();
        ds.sort_unstable();
        ds.dedup();
        let pairs = pmdp.num_pairs();
        let mut groups = Vec::with_capacity(ds.len());
        let mut offset = 0;
        for d in ds {
            groups.push((d, offset));
            offset += pairs.pow(d as u32);
        }
        Ok(Self { pairs, groups, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn offset_of(&self, d: usize) -> usize {
        self.groups.iter().find(|(g, _)| *g == d).map(|(_, o)| *o).expect("draw count not in space")
    }

    /// State id of a tuple of pair indices.
    pub fn state_id(&self, tuple: &[usize]) -> usize {
        self.offset_of(tuple.len()) + tuple.iter().fold(0, |acc, &p| acc * self.pairs + p)
    }

    /// Pair indices of a state id.
    pub fn tuple(&self, id: usize) -> Vec<usize> {
        let (d, offset) = *self.groups.iter().rev().find(|(_, o)| *o <= id).expect("id out of range");
        let mut rest = id - offset;
        let mut out = vec![0; d];
        for slot in out.iter_mut().rev() {
            *slot = rest % self.pairs;
            rest /= self.pairs;
        }
        out
    }

    /// Dense `P(s | σ)` over the whole space.
    pub fn emission<T: Scalar>(&self, pmdp: &PseudoMdp<T>, state: usize) -> Vec<T> {
        let mut row = vec![T::zero(); self.len];
        let d = pmdp.draws(state).exact().unwrap() as usize;
        for_each_tuple(&pmdp.support(state), d, |tuple, p| row[self.state_id(tuple)] = p);
        row
    }
}

/// The ex-post MDP: states are realized draw tuples, `A(s) = 1..=d(s)`,
/// `R(s,a) = r_a - c(a)`, and `s'` is drawn afresh from `σ' = s_a^σ`.
pub fn ex_post_reduction<T: Scalar>(pmdp: &PseudoMdp<T>, size_limit: u128) -> Result<FiniteMdp<T>> {
    pmdp.ensure_well_formed()?;
    let space = ExPostSpace::new(pmdp, size_limit)?;
    let mut builder = FiniteMdpBuilder::new(space.len());
    let rows: Vec<usize> = (0..pmdp.num_states())
        .map(|next| builder.add_row(space.emission(pmdp, next)))
        .collect();
    for id in 0..space.len() {
        let tuple = space.tuple(id);
        for (a, &pair) in tuple.iter().enumerate() {
            let index = a as u64 + 1;
            builder.add_action(id, index, rows[pmdp.pair_next(pair)], pmdp.net_reward(pair, index));
        }
    }
    builder.build()
}

/// The ex-ante MDP: states are `Σ`, actions are all maps from `S_σ` to a draw
/// index, with expected reward and induced next-state distribution.
pub fn ex_ante_reduction<T: Scalar>(pmdp: &PseudoMdp<T>, size_limit: u128) -> Result<FiniteMdp<T>> {
    const FORMULA: &str = "sum over sigma of d(sigma)^((|Sigma|*|R|)^d(sigma))";
    pmdp.ensure_well_formed()?;
    let size = pmdp.ex_ante_action_count();
    match size {
        Some(n) if n <= size_limit => {}
        _ => return Err(too_large("ex-ante action space", FORMULA, size, size_limit)),
    }
    let all_pairs: Vec<(usize, T)> = (0..pmdp.num_pairs()).map(|i| (i, T::one())).collect();
    let mut builder = FiniteMdpBuilder::new(pmdp.num_states());
    for sigma in 0..pmdp.num_states() {
        let d = pmdp.draws(sigma).exact().unwrap() as usize;
        let joint = pmdp.joint(sigma);
        let mut tuples: Vec<(Vec<usize>, T)> = Vec::new();
        for_each_tuple(&all_pairs, d, |t, _| {
            let p = t.iter().fold(T::one(), |acc, &pair| acc * joint[pair]);
            tuples.push((t.to_vec(), p));
        });
        // α is a base-d number with one digit per tuple.
        let mut choice = vec![0usize; tuples.len()];
        let mut label = 0u64;
        loop {
            let mut row = vec![T::zero(); pmdp.num_states()];
            let mut reward = T::zero();
            for ((tuple, p), &a) in tuples.iter().zip(&choice) {
                let pair = tuple[a];
                reward = reward + *p * pmdp.net_reward(pair, a as u64 + 1);
                row[pmdp.pair_next(pair)] = row[pmdp.pair_next(pair)] + *p;
            }
            let id = builder.add_row(row);
            builder.add_action(sigma, label, id, reward);
            label += 1;
            let mut pos = choice.len();
            let done = loop {
                if pos == 0 {
                    break true;
                }
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < d {
                    break false;
                }
                choice[pos] = 0;
            };
            if done {
                break;
            }
        }
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two(d: u64) -> PseudoMdp<f64> {
        let row: Arc<[f64]> = Arc::from(vec![0.1, 0.2, 0.3, 0.4]);
        PseudoMdp::new(
            vec![0.0, 1.0],
            vec![row.clone(), row],
            vec![Draws::count(d); 2],
            CostFunction::Table(vec![0.0, 0.5]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn draws_ordering_and_repr() {
        assert!(Draws::pow2(70) > Draws::count(u64::MAX));
        assert_eq!(Draws::pow2(3), Draws::count(8));
        assert_eq!(Draws::pow2(100).log2(), Some(100));
        assert_eq!(Draws::count(6).log2(), None);
        assert_eq!(serde_json::to_string(&vec![Draws::count(4), Draws::pow2(80)]).unwrap(), r#"[4,{"pow2":80}]"#);
        let back: Vec<Draws> = serde_json::from_str(r#"[4,{"pow2":3}]"#).unwrap();
        assert_eq!(back, vec![Draws::count(4), Draws::count(8)]);
    }

    #[test]
    fn withheld_count_costs() {
        let c = CostFunction::<f64>::WithheldCount;
        let got: Vec<f64> = (1..=8).map(|i| c.get(i).unwrap()).collect();
        assert_eq!(got, vec![0.0, 1.0, 1.0, 2.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(c.distinct_costs(Draws::pow2(5)).unwrap().len(), 6);
        assert_eq!(c.distinct_costs(Draws::pow2(200)).unwrap().len(), 201);
        assert_eq!(c.distinct_costs(Draws::count(5)).unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(c.distinct_costs(Draws::count(3)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn validation_reports_each_violation() {
        let bad_row: Arc<[f64]> = Arc::from(vec![0.5, 0.4]);
        let p = PseudoMdp::from_parts(vec![0.0, 1.0], vec![bad_row], vec![Draws::ONE], CostFunction::Table(vec![0.0]), None).unwrap();
        assert!(matches!(p.validate().violations.as_slice(), [Violation::Normalization { state: 0, .. }]));

        let row: Arc<[f64]> = Arc::from(vec![1.0]);
        let p = PseudoMdp::from_parts(
            vec![1.0],
            vec![row],
            vec![Draws::count(3)],
            CostFunction::Table(vec![0.0, 1.0, 1.0]),
            Some(ShiftDescriptor::constant(1.0)),
        )
        .unwrap();
        assert!(p.validate().violations.iter().any(|v| matches!(v, Violation::NotPowerOfTwo { state: 0, .. })));

        let row: Arc<[f64]> = Arc::from(vec![1.0]);
        let p = PseudoMdp::from_parts(vec![1.0], vec![row], vec![Draws::count(4)], CostFunction::Table(vec![0.0, 1.0]), None).unwrap();
        assert!(p.validate().violations.iter().any(|v| matches!(v, Violation::CostDomain { defined: 2, .. })));

        let row: Arc<[f64]> = Arc::from(vec![1.0]);
        let p = PseudoMdp::from_parts(
            vec![1.0],
            vec![row],
            vec![Draws::count(4)],
            CostFunction::Table(vec![0.0, 1.0, 1.0, 1.0]),
            Some(ShiftDescriptor::constant(1.0)),
        )
        .unwrap();
        assert!(matches!(p.validate().violations.as_slice(), [Violation::ShiftInconsistent { half: 2, index: 2 }]));
        assert!(p.ensure_well_formed().is_ok());
        assert!(p.ensure_fast_ready().is_err());
    }

    #[test]
    fn missing_shift_is_reported_for_fast_path() {
        assert!(matches!(two_by_two(2).ensure_fast_ready(), Err(Error::MissingShift)));
    }

    #[test]
    fn degenerate_joint_samples_constant() {
        let row: Arc<[f64]> = Arc::from(vec![0.0, 1.0]);
        let p = PseudoMdp::new(vec![0.0, 5.0], vec![row], vec![Draws::count(3)], CostFunction::Table(vec![0.0; 3]), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_ex_post(&p, 0, &mut rng).unwrap();
        assert_eq!(s.outcomes, vec![(0, 1); 3]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = two_by_two(2);
        let a = sample_ex_post(&p, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_ex_post(&p, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcomes.len(), 2);
    }

    #[test]
    fn ex_post_size_matches_closed_form() {
        let p = two_by_two(2);
        assert_eq!(p.ex_post_state_count(), Some(16));
        let mdp = ex_post_reduction(&p, 1000).unwrap();
        assert_eq!(mdp.num_states(), 16);
        assert_eq!(mdp.max_actions(), 2);
        assert!(matches!(ex_post_reduction(&p, 15), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn space_ids_round_trip() {
        let row: Arc<[f64]> = Arc::from(vec![0.5, 0.5, 0.0]);
        let p = PseudoMdp::new(vec![1.0, 2.0, 3.0], vec![row], vec![Draws::count(2)], CostFunction::Table(vec![0.0, 0.0]), None).unwrap();
        let space = ExPostSpace::new(&p, 100).unwrap();
        assert_eq!(space.len(), 9);
        for id in 0..space.len() {
            assert_eq!(space.state_id(&space.tuple(id)), id);
        }
        assert_eq!(space.tuple(5), vec![1, 2]);
        let em = space.emission(&p, 0);
        assert!((em.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(em[space.state_id(&[0, 2])], 0.0);
    }

    #[test]
    fn ex_ante_action_counts() {
        let row: Arc<[f64]> = Arc::from(vec![0.5, 0.5]);
        let single = PseudoMdp::new(vec![0.0, 1.0], vec![row], vec![Draws::ONE], CostFunction::Table(vec![0.0]), None).unwrap();
        let mdp = ex_ante_reduction(&single, 10).unwrap();
        assert_eq!(mdp.num_states(), 1);
        assert_eq!(mdp.num_actions(0), 1);

        let row: Arc<[f64]> = Arc::from(vec![0.5, 0.5]);
        let p = PseudoMdp::new(vec![1.0], vec![row.clone(), row], vec![Draws::count(2); 2], CostFunction::Table(vec![0.0, 0.0]), None).unwrap();
        assert_eq!(p.ex_ante_action_count(), Some(32));
        let mdp = ex_ante_reduction(&p, 32).unwrap();
        assert_eq!(mdp.num_actions(0), 16);
        assert_eq!(mdp.num_actions(1), 16);
        assert!(ex_ante_reduction(&p, 31).is_err());
    }

    #[test]
    fn json_round_trip_and_schema() {
        let p = two_by_two(2).with_shift(Some(ShiftDescriptor::constant(0.5)));
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["sigma"], 2);
        assert_eq!(v["shift"]["kind"], "constant");
        let back: PseudoMdp<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let closed = r#"{"sigma":1,"rewards":[0.0],"joint":[[1.0]],"draws":[{"pow2":70}],"cost":{"kind":"withheld_count"},"shift":{"kind":"constant","parameter":1.0}}"#;
        let lra_like: PseudoMdp<f64> = serde_json::from_str(closed).unwrap();
        assert!(lra_like.validate().is_valid());
        assert_eq!(lra_like.draws(0), Draws::pow2(70));
    }
}
