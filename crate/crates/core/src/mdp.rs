//! Explicit finite MDPs and the textbook solvers over them.
//!
//! Everything else in the crate is checked against these routines on small
//! instances, so they favour plainness over speed. The one structural
//! optimisation is that transition distributions are stored as shared rows:
//! many `(s, a)` pairs of a reduced pMDP point at the same distribution, and
//! `E[V | row]` is evaluated once per row per sweep.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{argmax_first, sup_distance, Scalar};

/// Damping used by [`relative_value_iteration`] to make periodic chains
/// converge (aperiodicity transform).
pub const DEFAULT_APERIODICITY_DAMPING: f64 = 0.5;

/// Finite MDP `(S, A, P, R)` with dense transition rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "MdpDocument<T>",
    into = "MdpDocument<T>",
    bound = "T: Scalar"
)]
pub struct FiniteMdp<T> {
    num_states: usize,
    labels: Vec<Vec<u64>>,
    rows: Vec<Vec<T>>,
    transition: Vec<Vec<usize>>,
    reward: Vec<Vec<T>>,
}

/// Incremental constructor for [`FiniteMdp`].
#[derive(Clone, Debug)]
pub struct FiniteMdpBuilder<T> {
    num_states: usize,
    labels: Vec<Vec<u64>>,
    rows: Vec<Vec<T>>,
    transition: Vec<Vec<usize>>,
    reward: Vec<Vec<T>>,
}

impl<T: Scalar> FiniteMdpBuilder<T> {
    pub fn new(num_states: usize) -> Self {
        Self {
            num_states,
            labels: vec![Vec::new(); num_states],
            rows: Vec::new(),
            transition: vec![Vec::new(); num_states],
            reward: vec![Vec::new(); num_states],
        }
    }

    /// Registers a distribution over states and returns its row id.
    pub fn add_row(&mut self, distribution: Vec<T>) -> usize {
        self.rows.push(distribution);
        self.rows.len() - 1
    }

    /// Appends an action to `state` that transitions according to `row`.
    pub fn add_action(&mut self, state: usize, label: u64, row: usize, reward: T) -> &mut Self {
        self.labels[state].push(label);
        self.transition[state].push(row);
        self.reward[state].push(reward);
        self
    }

    pub fn build(self) -> Result<FiniteMdp<T>> {
        let mdp = FiniteMdp {
            num_states: self.num_states,
            labels: self.labels,
            rows: self.rows,
            transition: self.transition,
            reward: self.reward,
        };
        mdp.check()?;
        Ok(mdp)
    }
}

impl<T: Scalar> FiniteMdp<T> {
    /// Builds an MDP from `transition[s][a][s']` and `reward[s][a]`.
    pub fn from_dense(transition: Vec<Vec<Vec<T>>>, reward: Vec<Vec<T>>) -> Result<Self> {
        if transition.len() != reward.len() {
            return Err(invalid("transition and reward disagree on the number of states"));
        }
        let mut builder = FiniteMdpBuilder::new(transition.len());
        for (s, (rows, rewards)) in transition.into_iter().zip(reward).enumerate() {
            if rows.len() != rewards.len() {
                return Err(invalid(format!("state {s}: transition/reward action counts differ")));
            }
            for (a, (row, r)) in rows.into_iter().zip(rewards).enumerate() {
                let id = builder.add_row(row);
                builder.add_action(s, a as u64, id, r);
            }
        }
        builder.build()
    }

    fn check(&self) -> Result<()> {
        let tol = T::normalization_tol();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.num_states {
                return Err(invalid(format!("row {i} has length {} != {}", row.len(), self.num_states)));
            }
            if row.iter().any(|p| !p.is_finite() || *p < T::zero()) {
                return Err(invalid(format!("row {i} has a negative or non-finite probability")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(invalid(format!("row {i} sums to {total}")));
            }
        }
        for s in 0..self.num_states {
            if self.transition[s].is_empty() {
                return Err(invalid(format!("state {s} has no action")));
            }
            if self.transition[s].iter().any(|&id| id >= self.rows.len()) {
                return Err(invalid(format!("state {s} references an unknown row")));
            }
            if self.reward[s].iter().any(|r| !r.is_finite()) {
                return Err(invalid(format!("state {s} has a non-finite reward")));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.transition[state].len()
    }

    pub fn max_actions(&self) -> usize {
        self.transition.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn action_label(&self, state: usize, action: usize) -> u64 {
        self.labels[state][action]
    }

    pub fn reward(&self, state: usize, action: usize) -> T {
        self.reward[state][action]
    }

    pub fn transition(&self, state: usize, action: usize) -> &[T] {
        &self.rows[self.transition[state][action]]
    }

    pub fn row_id(&self, state: usize, action: usize) -> usize {
        self.transition[state][action]
    }

    /// Distinct transition rows; `(s, a)` pairs may share a row.
    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    fn row_expectations(&self, values: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(values)
                    .filter(|(p, _)| **p != T::zero())
                    .fold(T::zero(), |acc, (&p, &v)| acc + p * v)
            })
            .collect()
    }

    /// `R(s,a) + γ E[V(s') | s, a]` for every action of every state.
    pub fn q_values(&self, values: &[T], discount: T) -> Vec<Vec<T>> {
        let expect = self.row_expectations(values);
        (0..self.num_states)
            .map(|s| {
                self.transition[s]
                    .iter()
                    .zip(&self.reward[s])
                    .map(|(&row, &r)| r + discount * expect[row])
                    .collect()
            })
            .collect()
    }
}

/// Value function over the states of some model, with the discount it was
/// computed under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueVector<T> {
    pub values: Vec<T>,
    pub discount: T,
}

impl<T: Scalar> ValueVector<T> {
    pub fn new(values: Vec<T>, discount: T) -> Self {
        Self { values, discount }
    }

    pub fn zeros(len: usize, discount: T) -> Self {
        Self::new(vec![T::zero(); len], discount)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Values relative to a reference state, plus the average reward per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RelativeValueVector<T> {
    pub values: Vec<T>,
    pub reference: usize,
    pub gain: T,
}

impl<T: Scalar> RelativeValueVector<T> {
    /// `ΔW_σ(σ')`: value of `to` relative to `from`.
    pub fn difference(&self, from: usize, to: usize) -> T {
        self.values[to] - self.values[from]
    }
}

/// Deterministic policy; `choice[s]` is an action index into `A(s)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub choice: Vec<usize>,
}

/// Result of an iterative solver. Unconverged runs are returned, not raised,
/// so callers can time fixed sweep counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Solve<V, T> {
    pub value: V,
    pub iterations: usize,
    /// Sup-norm distance between the last two iterates.
    pub residual: T,
    pub converged: bool,
}

impl<V, T: Scalar> Solve<V, T> {
    /// Unwraps a converged value or reports the diagnostics as an error.
    pub fn into_converged(self) -> Result<V> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::Unconverged {
                iterations: self.iterations,
                residual: self.residual.to_f64_lossy(),
            })
        }
    }
}

pub(crate) fn check_discount<T: Scalar>(discount: T) -> Result<()> {
    if !(discount >= T::zero() && discount < T::one()) {
        return Err(invalid(format!("discount must lie in [0, 1), got {discount}")));
    }
    Ok(())
}

pub(crate) fn check_epsilon<T: Scalar>(epsilon: T) -> Result<()> {
    if !(epsilon > T::zero()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// One application of the Bellman optimality operator.
pub fn bellman_operator<T: Scalar>(mdp: &FiniteMdp<T>, values: &[T], discount: T) -> Vec<T> {
    mdp.q_values(values, discount)
        .into_iter()
        .map(|q| q.into_iter().fold(T::neg_infinity(), T::max))
        .collect()
}

/// Standard value iteration from `V = 0`.
pub fn value_iteration<T: Scalar>(
    mdp: &FiniteMdp<T>,
    discount: T,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<ValueVector<T>, T>> {
    check_discount(discount)?;
    check_epsilon(epsilon)?;
    let mut values = vec![T::zero(); mdp.num_states()];
    let mut residual = T::infinity();
    let mut iterations = 0;
    while iterations < max_iters {
        let next = bellman_operator(mdp, &values, discount);
        residual = sup_distance(&next, &values);
        values = next;
        iterations += 1;
        if residual <= epsilon {
            break;
        }
    }
    Ok(Solve {
        value: ValueVector::new(values, discount),
        iterations,
        converged: residual <= epsilon,
        residual,
    })
}

/// Greedy policy with respect to `values`; ties go to the lowest action index.
pub fn extract_policy<T: Scalar>(mdp: &FiniteMdp<T>, values: &ValueVector<T>) -> Result<Policy> {
    if values.len() != mdp.num_states() {
        return Err(invalid("value vector length does not match the state count"));
    }
    if values.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("value vector has non-finite entries"));
    }
    let choice = mdp
        .q_values(&values.values, values.discount)
        .into_iter()
        .map(|q| argmax_first(q).map(|(a, _)| a).unwrap_or(0))
        .collect();
    Ok(Policy { choice })
}

/// Discount-free relative value iteration centred at `reference`.
///
/// Assumes the MDP is unichain under every policy. Uses the default
/// aperiodicity damping so that periodic chains converge as well.
pub fn relative_value_iteration<T: Scalar>(
    mdp: &FiniteMdp<T>,
    reference: usize,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<RelativeValueVector<T>, T>> {
    relative_value_iteration_damped(mdp, reference, T::lit(DEFAULT_APERIODICITY_DAMPING), epsilon, max_iters)
}

/// Relative value iteration with update `ΔV ← (1-τ)ΔV + τ T ΔV`, recentred at
/// `reference` after every sweep. The gain is the recentring offset divided
/// by `τ`; with `τ = 1` this is the plain recentred operator.
pub fn relative_value_iteration_damped<T: Scalar>(
    mdp: &FiniteMdp<T>,
    reference: usize,
    damping: T,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<RelativeValueVector<T>, T>> {
    check_epsilon(epsilon)?;
    if reference >= mdp.num_states() {
        return Err(invalid(format!("reference state {reference} out of range")));
    }
    if !(damping > T::zero() && damping <= T::one()) {
        return Err(invalid(format!("damping must lie in (0, 1], got {damping}")));
    }
    let keep = T::one() - damping;
    let mut values = vec![T::zero(); mdp.num_states()];
    let mut gain = T::zero();
    let mut residual = T::infinity();
    let mut iterations = 0;
    while iterations < max_iters {
        let raw = bellman_operator(mdp, &values, T::one());
        let mut next: Vec<T> = raw
            .iter()
            .zip(&values)
            .map(|(&t, &v)| keep * v + damping * t)
            .collect();
        let offset = next[reference];
        for v in &mut next {
            *v = *v - offset;
        }
        next[reference] = T::zero();
        gain = offset / damping;
        residual = sup_distance(&next, &values);
        values = next;
        iterations += 1;
        if residual <= epsilon {
            break;
        }
    }
    Ok(Solve {
        value: RelativeValueVector { values, reference, gain },
        iterations,
        converged: residual <= epsilon,
        residual,
    })
}

/// On-disk form: `{"states", "actions", "transition", "reward"}` with dense
/// `transition[s][a][s']`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct MdpDocument<T> {
    states: usize,
    actions: Vec<Vec<u64>>,
    transition: Vec<Vec<Vec<T>>>,
    reward: Vec<Vec<T>>,
}

impl<T: Scalar> TryFrom<MdpDocument<T>> for FiniteMdp<T> {
    type Error = Error;

    fn try_from(doc: MdpDocument<T>) -> Result<Self> {
        if doc.actions.len() != doc.states || doc.transition.len() != doc.states || doc.reward.len() != doc.states {
            return Err(invalid("per-state arrays must have `states` entries"));
        }
        let mut builder = FiniteMdpBuilder::new(doc.states);
        for (s, ((labels, rows), rewards)) in doc.actions.into_iter().zip(doc.transition).zip(doc.reward).enumerate() {
            if labels.len() != rows.len() || labels.len() != rewards.len() {
                return Err(invalid(format!("state {s}: actions/transition/reward lengths differ")));
            }
            for ((label, row), r) in labels.into_iter().zip(rows).zip(rewards) {
                let id = builder.add_row(row);
                builder.add_action(s, label, id, r);
            }
        }
        builder.build()
    }
}

impl<T: Scalar> From<FiniteMdp<T>> for MdpDocument<T> {
    fn from(mdp: FiniteMdp<T>) -> Self {
        let transition = mdp
            .transition
            .iter()
            .map(|ids| ids.iter().map(|&id| mdp.rows[id].clone()).collect())
            .collect();
        MdpDocument {
            states: mdp.num_states,
            actions: mdp.labels,
            transition,
            reward: mdp.reward,
        }
    }
}
