//! Change of variable to the best-draw utility `u = max_a [r_a - c(a) + γ W(σ'_a)]`.
//!
//! `T*W(σ) = E[u | σ]`, so the Bellman operator only needs the distribution
//! of `u` over a small grid. For `d = 2^k` draws that distribution follows
//! from the single-draw one by `k` doublings
//! `F_{2m}(υ) = F_m(υ) · F_m(υ + shift_m)`, the second factor being the upper
//! half of the draws, whose costs are the lower half's translated by `shift_m`.
//!
//! Cdfs are held as logarithms: `ln F` while `F <= 1/2`, `ln(1 - tail)` above,
//! so that tails far below machine epsilon survive `2^k`-fold powers. A
//! doubling is then one addition per grid point.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exact::best_draw;
use crate::mdp::{check_epsilon, RelativeValueVector, Solve, ValueVector};
use crate::pmdp::{for_each_tuple, Draws, PseudoMdp, ShiftDescriptor};
use crate::scalar::{sup_distance, Scalar};

/// Sorted, deduplicated set of achievable utilities `r - c(a) + γ W(σ')`.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityGrid<T> {
    points: Vec<T>,
    tol: T,
}

impl<T: Scalar> UtilityGrid<T> {
    /// Sorts `candidates` and merges points closer than the dedup tolerance.
    pub fn from_candidates(mut candidates: Vec<T>) -> Self {
        let tol = T::dedup_tol();
        candidates.retain(|u| u.is_finite());
        candidates.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut points: Vec<T> = Vec::with_capacity(candidates.len());
        for u in candidates {
            if points.last().is_none_or(|&last| u > last + tol) {
                points.push(u);
            }
        }
        Self { points, tol }
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the largest grid point `<= u` (within tolerance).
    pub fn locate(&self, u: T) -> Option<usize> {
        self.slot(u).checked_sub(1)
    }

    /// `locate(u) + 1`, with 0 meaning "below the grid".
    #[inline]
    fn slot(&self, u: T) -> usize {
        let bound = u + self.tol;
        self.points.partition_point(|&p| p <= bound)
    }

    /// Slot of `point + offset` for every slot; slot 0 maps to itself.
    /// Queries above the grid saturate at the top point.
    fn shift_map(&self, offset: T) -> Vec<u32> {
        let n = self.points.len();
        let mut map = Vec::with_capacity(n + 1);
        map.push(0);
        let mut count = 0;
        for &p in &self.points {
            let bound = p + offset + self.tol;
            while count < n && self.points[count] <= bound {
                count += 1;
            }
            map.push(count as u32);
        }
        map
    }
}

/// `ln P(u <= υ | σ)` on a grid, for a given number of draws.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfRow<T> {
    pub state: usize,
    pub draws: Draws,
    /// Natural log of the cdf at each grid point; `-inf` where it is 0.
    pub log_cdf: Vec<T>,
}

impl<T: Scalar> CdfRow<T> {
    pub fn cdf(&self) -> Vec<T> {
        self.log_cdf.iter().map(|l| l.exp()).collect()
    }

    /// Point masses by first differencing.
    pub fn pmf(&self) -> Vec<T> {
        let mut prev = T::neg_infinity();
        self.log_cdf
            .iter()
            .map(|&l| {
                let mass = mass_between(prev, l);
                prev = l;
                mass
            })
            .collect()
    }

    /// Step-function value at an arbitrary `υ`: 0 below the grid.
    pub fn evaluate(&self, grid: &UtilityGrid<T>, upsilon: T) -> T {
        grid.locate(upsilon).map_or(T::zero(), |i| self.log_cdf[i].exp())
    }

    pub fn expected_utility(&self, grid: &UtilityGrid<T>) -> T {
        expectation(&self.log_cdf, &grid.points)
    }
}

/// Cdfs of the best-draw utility for some ex-ante states, on a shared grid.
#[derive(Clone, Debug)]
pub struct CumulativeUtilityDistribution<T> {
    pub grid: Arc<UtilityGrid<T>>,
    pub rows: Vec<CdfRow<T>>,
}

impl<T: Scalar> CumulativeUtilityDistribution<T> {
    pub fn row(&self, state: usize) -> Option<&CdfRow<T>> {
        self.rows.iter().find(|r| r.state == state)
    }

    pub fn evaluate(&self, state: usize, upsilon: T) -> Option<T> {
        self.row(state).map(|r| r.evaluate(&self.grid, upsilon))
    }

    pub fn expected_utility(&self, state: usize) -> Option<T> {
        self.row(state).map(|r| r.expected_utility(&self.grid))
    }
}

/// `F(b) - F(a)` from logs `a <= b`.
#[inline]
fn mass_between<T: Scalar>(log_a: T, log_b: T) -> T {
    if log_b == T::neg_infinity() {
        T::zero()
    } else {
        -log_b.exp() * (log_a - log_b).exp_m1()
    }
}

/// `Σ_j u_j (F_j - F_{j-1})`.
fn expectation<T: Scalar>(log_cdf: &[T], points: &[T]) -> T {
    let mut prev = T::neg_infinity();
    let mut acc = T::zero();
    for (&l, &u) in log_cdf.iter().zip(points) {
        let mass = mass_between(prev, l);
        if mass != T::zero() {
            acc = acc + u * mass;
        }
        prev = l;
    }
    acc
}

/// Overwrites `buf` (point masses) with the log-cdf: prefix sums below 1/2,
/// `ln(1 - suffix)` above, so the top entry is exactly 0.
fn masses_to_log_cdf<T: Scalar>(buf: &mut [T]) {
    let mut tail = T::zero();
    let half = T::lit(0.5);
    let mut prefix = T::zero();
    // First pass: tail strictly above each point, stashed in place.
    for x in buf.iter_mut().rev() {
        let mass = *x;
        *x = tail;
        tail = tail + mass;
    }
    for x in buf.iter_mut() {
        let above = *x;
        let mass = (tail - above) - prefix;
        prefix = prefix + mass;
        *x = if prefix <= half { prefix.ln() } else { (-above).ln_1p() };
    }
}

/// One doubling `L(υ) += L(υ + shift)` in slot form (slot 0 is `-inf`).
/// In place: a non-negative shift only reads slots not yet updated when
/// sweeping upward, a negative one when sweeping downward.
fn double_in_place<T: Scalar>(buf: &mut [T], map: &[u32], ascending: bool) {
    assert_eq!(buf.len(), map.len());
    if ascending {
        for j in 1..buf.len() {
            buf[j] = buf[j] + buf[map[j] as usize];
        }
    } else {
        for j in (1..buf.len()).rev() {
            buf[j] = buf[j] + buf[map[j] as usize];
        }
    }
}

/// Work and wall time of one fast Bellman sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SweepStats {
    pub grid_len: usize,
    /// Grid construction plus shift maps.
    pub grid_time: Duration,
    pub single_draw_time: Duration,
    pub doubling_time: Duration,
    /// Grid-point updates over all doublings: `Σ_σ log2 d(σ) · |grid|`.
    pub doubling_updates: u64,
}

impl SweepStats {
    pub fn total_time(&self) -> Duration {
        self.grid_time + self.single_draw_time + self.doubling_time
    }
}

/// Precomputed, W-independent structure for fast sweeps on one pMDP.
struct Kernel<'a, T> {
    pmdp: &'a PseudoMdp<T>,
    /// Pairs with positive probability in some joint row.
    support: Vec<usize>,
    /// Sorted distinct `r - c` over supported rewards and distinct costs.
    deltas: Vec<T>,
    /// Per `σ'`, the slice of `deltas` spanning its supported rewards.
    delta_range: Vec<(usize, usize)>,
}

/// Per-sweep tables derived from `W`.
struct SweepTables<T> {
    grid: Arc<UtilityGrid<T>>,
    /// Slot of `r - c(1) + γ W(σ')` per pair index.
    pair_slot: Vec<u32>,
    /// Shift maps per doubling step (`[0]` only for constant shifts).
    maps: Vec<Vec<u32>>,
    ascending: Vec<bool>,
}

impl<T: Scalar> SweepTables<T> {
    fn map(&self, step: u32) -> (&[u32], bool) {
        let i = (step as usize).min(self.maps.len() - 1);
        (&self.maps[i], self.ascending[i])
    }
}

fn sort_dedup<T: Scalar>(v: &mut Vec<T>) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
}

impl<'a, T: Scalar> Kernel<'a, T> {
    fn new(pmdp: &'a PseudoMdp<T>) -> Result<Self> {
        pmdp.ensure_well_formed()?;
        let mut present = vec![false; pmdp.num_pairs()];
        let rows = pmdp.joint_rows();
        for (s, row) in rows.iter().enumerate() {
            if rows[..s].iter().any(|prev| Arc::ptr_eq(prev, row)) {
                continue;
            }
            for (flag, &p) in present.iter_mut().zip(row.iter()) {
                *flag |= p > T::zero();
            }
        }
        let support: Vec<usize> = (0..present.len()).filter(|&i| present[i]).collect();
        let costs = pmdp.cost_function().distinct_costs(pmdp.max_draws())?;
        let mut rewards: Vec<T> = support.iter().map(|&pair| pmdp.pair_reward(pair)).collect();
        sort_dedup(&mut rewards);
        let mut deltas: Vec<T> = rewards.iter().flat_map(|&r| costs.iter().map(move |&c| r - c)).collect();
        sort_dedup(&mut deltas);
        let (c_lo, c_hi) = (costs[0], costs[costs.len() - 1]);
        let mut bounds: Vec<Option<(T, T)>> = vec![None; pmdp.num_states()];
        for &pair in &support {
            let r = pmdp.pair_reward(pair);
            let b = &mut bounds[pmdp.pair_next(pair)];
            *b = Some(b.map_or((r, r), |(lo, hi)| (lo.min(r), hi.max(r))));
        }
        let delta_range = bounds
            .into_iter()
            .map(|b| match b {
                Some((lo, hi)) => {
                    let (lo, hi) = (lo - c_hi, hi - c_lo);
                    (deltas.partition_point(|&d| d < lo), deltas.partition_point(|&d| d <= hi))
                }
                None => (0, 0),
            })
            .collect();
        Ok(Self { pmdp, support, deltas, delta_range })
    }

    /// `{δ + γ W(σ')}` for every `σ'` reachable with positive probability and
    /// every `δ = r - c` its rewards can produce.
    fn grid(&self, w: &[T], discount: T) -> UtilityGrid<T> {
        let total = self.delta_range.iter().map(|(a, b)| b - a).sum();
        let mut candidates = Vec::with_capacity(total);
        for (next, &(a, b)) in self.delta_range.iter().enumerate() {
            let future = discount * w[next];
            candidates.extend(self.deltas[a..b].iter().map(|&d| d + future));
        }
        UtilityGrid::from_candidates(candidates)
    }

    fn tables(&self, w: &[T], discount: T, shift: Option<&ShiftDescriptor<T>>) -> SweepTables<T> {
        let p = self.pmdp;
        let grid = self.grid(w, discount);
        let c1 = p.cost(1);
        let mut pair_slot = vec![0u32; p.num_pairs()];
        for &pair in &self.support {
            pair_slot[pair] = grid.slot((p.pair_reward(pair) - c1) + discount * w[p.pair_next(pair)]) as u32;
        }
        let mut maps = Vec::new();
        let mut ascending = Vec::new();
        if let Some(shift) = shift {
            let steps = match shift.kind {
                crate::pmdp::ShiftKind::Constant => 1,
                crate::pmdp::ShiftKind::Linear => p.max_draws().log2().unwrap_or(0).max(1),
            };
            for k in 0..steps {
                let offset = shift.offset(k);
                maps.push(grid.shift_map(offset));
                ascending.push(offset >= T::zero());
            }
        }
        SweepTables { grid: Arc::new(grid), pair_slot, maps, ascending }
    }

    /// Single-draw log-cdf of `σ` in slot form.
    fn single_draw(&self, tables: &SweepTables<T>, sigma: usize, buf: &mut Vec<T>) {
        buf.clear();
        buf.resize(tables.grid.len() + 1, T::zero());
        for (pair, &prob) in self.pmdp.joint(sigma).iter().enumerate() {
            if prob > T::zero() {
                let slot = tables.pair_slot[pair] as usize;
                buf[slot] = buf[slot] + prob;
            }
        }
        buf[0] = T::neg_infinity();
        masses_to_log_cdf(&mut buf[1..]);
    }

    /// Applies `log2 d(σ)` doublings; returns the number of point updates.
    fn doublings(&self, tables: &SweepTables<T>, sigma: usize, buf: &mut [T]) -> u64 {
        let steps = self.pmdp.draws(sigma).log2().expect("checked power of two");
        for k in 0..steps {
            let (map, ascending) = tables.map(k);
            double_in_place(buf, map, ascending);
        }
        steps as u64 * (buf.len() as u64 - 1)
    }

    /// `(E[u|σ], single-draw time, doubling time, updates)`.
    fn state_value(&self, tables: &SweepTables<T>, sigma: usize, buf: &mut Vec<T>) -> (T, Duration, Duration, u64) {
        let t0 = Instant::now();
        self.single_draw(tables, sigma, buf);
        let t1 = Instant::now();
        let updates = self.doublings(tables, sigma, buf);
        let value = expectation(&buf[1..], tables.grid.points());
        (value, t1 - t0, t1.elapsed(), updates)
    }

    fn sweep(&self, w: &[T], discount: T, parallel: bool, keep_cdfs: bool) -> (Vec<T>, SweepStats, Option<Vec<Vec<T>>>) {
        let shift = self.pmdp.shift().expect("checked shift");
        let t0 = Instant::now();
        let tables = self.tables(w, discount, Some(shift));
        let mut stats = SweepStats { grid_len: tables.grid.len(), grid_time: t0.elapsed(), ..Default::default() };
        let run = |buf: &mut Vec<T>, sigma: usize| {
            let out = self.state_value(&tables, sigma, buf);
            let cdf = keep_cdfs.then(|| buf[1..].iter().map(|l| l.exp()).collect::<Vec<T>>());
            (out, cdf)
        };
        let results: Vec<_> = if parallel {
            (0..self.pmdp.num_states()).into_par_iter().map_init(Vec::new, run).collect()
        } else {
            let mut buf = Vec::new();
            (0..self.pmdp.num_states()).map(|s| run(&mut buf, s)).collect()
        };
        let mut values = Vec::with_capacity(results.len());
        let mut cdfs = keep_cdfs.then(Vec::new);
        for ((v, single, doubling, updates), cdf) in results {
            values.push(v);
            stats.single_draw_time += single;
            stats.doubling_time += doubling;
            stats.doubling_updates += updates;
            if let (Some(all), Some(cdf)) = (cdfs.as_mut(), cdf) {
                all.push(cdf);
            }
        }
        (values, stats, cdfs)
    }
}

fn check_values<T: Scalar>(pmdp: &PseudoMdp<T>, values: &[T], discount: T) -> Result<()> {
    if values.len() != pmdp.num_states() {
        return Err(invalid("value vector length does not match |Sigma|"));
    }
    if values.iter().any(|v| !v.is_finite()) || !discount.is_finite() {
        return Err(invalid("values and discount must be finite"));
    }
    Ok(())
}

/// The grid `{r - c(a) + γ W(σ')}` over supported `(σ', r)` and distinct costs.
pub fn build_utility_grid<T: Scalar>(pmdp: &PseudoMdp<T>, values: &[T], discount: T) -> Result<UtilityGrid<T>> {
    check_values(pmdp, values, discount)?;
    Ok(Kernel::new(pmdp)?.grid(values, discount))
}

/// Cdf of the single-draw utility `r - c(1) + γ W(σ')` for every `σ`.
pub fn single_draw_cdf<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    values: &[T],
    discount: T,
) -> Result<CumulativeUtilityDistribution<T>> {
    check_values(pmdp, values, discount)?;
    let kernel = Kernel::new(pmdp)?;
    let tables = kernel.tables(values, discount, None);
    let mut buf = Vec::new();
    let rows = (0..pmdp.num_states())
        .map(|sigma| {
            kernel.single_draw(&tables, sigma, &mut buf);
            CdfRow { state: sigma, draws: Draws::ONE, log_cdf: buf[1..].to_vec() }
        })
        .collect();
    Ok(CumulativeUtilityDistribution { grid: tables.grid, rows })
}

/// Cdf over all `d(σ)` draws by repeated doubling of the single-draw cdf.
pub fn dichotomy_cdf<T: Scalar>(
    single: &CumulativeUtilityDistribution<T>,
    pmdp: &PseudoMdp<T>,
    sigma: usize,
) -> Result<CumulativeUtilityDistribution<T>> {
    let shift = pmdp.shift().ok_or(Error::MissingShift)?;
    let draws = *pmdp.all_draws().get(sigma).ok_or_else(|| invalid(format!("state {sigma} out of range")))?;
    let steps = draws.log2().ok_or_else(|| Error::NotPowerOfTwo { state: sigma, draws: draws.to_string() })?;
    let row = single
        .row(sigma)
        .filter(|r| r.draws == Draws::ONE)
        .ok_or_else(|| invalid(format!("no single-draw cdf for state {sigma}")))?;
    let mut buf = Vec::with_capacity(row.log_cdf.len() + 1);
    buf.push(T::neg_infinity());
    buf.extend_from_slice(&row.log_cdf);
    let mut cached: Option<(T, Vec<u32>)> = None;
    for k in 0..steps {
        let offset = shift.offset(k);
        if cached.as_ref().is_none_or(|(o, _)| *o != offset) {
            cached = Some((offset, single.grid.shift_map(offset)));
        }
        double_in_place(&mut buf, &cached.as_ref().unwrap().1, offset >= T::zero());
    }
    Ok(CumulativeUtilityDistribution {
        grid: single.grid.clone(),
        rows: vec![CdfRow { state: sigma, draws, log_cdf: buf[1..].to_vec() }],
    })
}

/// Exact cdf of `u*_W(s)` for `s ~ P(·|σ)` by enumerating every draw tuple.
pub fn naive_utility_distribution<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    values: &[T],
    discount: T,
    sigma: usize,
    size_limit: u128,
) -> Result<CumulativeUtilityDistribution<T>> {
    check_values(pmdp, values, discount)?;
    if sigma >= pmdp.num_states() {
        return Err(invalid(format!("state {sigma} out of range")));
    }
    let draws = pmdp.draws(sigma);
    let size = draws
        .exact()
        .and_then(|d| u32::try_from(d).ok())
        .and_then(|d| (pmdp.num_pairs() as u128).checked_pow(d));
    let d = match size {
        Some(s) if s <= size_limit => draws.exact().unwrap() as usize,
        _ => {
            return Err(Error::TooLarge {
                what: "draw tuples",
                formula: "(|Sigma|*|R|)^d(sigma)",
                size: size.map_or_else(|| "more than 2^128".into(), |s| s.to_string()),
                limit: size_limit,
            })
        }
    };
    let grid = Kernel::new(pmdp)?.grid(values, discount);
    let mut masses = vec![T::zero(); grid.len()];
    for_each_tuple(&pmdp.support(sigma), d, |tuple, p| {
        let u = best_draw(pmdp, values, discount, tuple).1;
        let i = grid.locate(u).expect("realized utility lies on the grid");
        masses[i] = masses[i] + p;
    });
    masses_to_log_cdf(&mut masses);
    Ok(CumulativeUtilityDistribution {
        grid: Arc::new(grid),
        rows: vec![CdfRow { state: sigma, draws, log_cdf: masses }],
    })
}

/// `T*W(σ) = E[u | σ]` for every `σ` through the dichotomy.
pub fn fast_bellman<T: Scalar>(pmdp: &PseudoMdp<T>, values: &[T], discount: T) -> Result<Vec<T>> {
    FastBellman::new(pmdp)?.apply(values, discount, false).map(|(v, _)| v)
}

/// Validated fast Bellman operator, reusable across sweeps.
pub struct FastBellman<'a, T> {
    kernel: Kernel<'a, T>,
}

impl<'a, T: Scalar> FastBellman<'a, T> {
    pub fn new(pmdp: &'a PseudoMdp<T>) -> Result<Self> {
        pmdp.ensure_fast_ready()?;
        Ok(Self { kernel: Kernel::new(pmdp)? })
    }

    /// One sweep; `parallel` spreads states over the rayon pool.
    pub fn apply(&self, values: &[T], discount: T, parallel: bool) -> Result<(Vec<T>, SweepStats)> {
        check_values(self.kernel.pmdp, values, discount)?;
        let (v, stats, _) = self.kernel.sweep(values, discount, parallel, false);
        Ok((v, stats))
    }
}

/// Discounted or relative (recentred) iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FastMode<T> {
    Discounted { discount: T },
    /// `ΔW ← T*ΔW - T*ΔW(σ₀)`; `discount` may be 1.
    Relative { reference: usize, discount: T },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TraceLevel {
    #[default]
    Off,
    /// Grid size, residual and values per sweep.
    Summary,
    /// Also the final cdf of every state per sweep.
    Full,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FastOptions {
    pub parallel: bool,
    pub trace: TraceLevel,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTrace {
    pub sweep: usize,
    pub grid_len: usize,
    pub residual: f64,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cdfs: Option<Vec<Vec<f64>>>,
}

/// Outcome of [`fast_iterate`].
#[derive(Clone, Debug)]
pub struct FastRun<T> {
    pub values: Vec<T>,
    /// Recentring offset of the last sweep (relative mode only).
    pub gain: Option<T>,
    pub iterations: usize,
    pub residual: T,
    pub converged: bool,
    pub stats: Vec<SweepStats>,
    pub trace: Vec<SweepTrace>,
}

/// Fast value iteration from `W = 0`; grid and single-draw cdfs are rebuilt
/// every sweep.
pub fn fast_iterate<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    mode: FastMode<T>,
    epsilon: T,
    max_iters: usize,
    options: FastOptions,
) -> Result<FastRun<T>> {
    check_epsilon(epsilon)?;
    let (discount, reference) = match mode {
        FastMode::Discounted { discount } => {
            crate::mdp::check_discount(discount)?;
            (discount, None)
        }
        FastMode::Relative { reference, discount } => {
            if !(discount >= T::zero() && discount <= T::one()) {
                return Err(invalid(format!("relative discount must lie in [0, 1], got {discount}")));
            }
            if reference >= pmdp.num_states() {
                return Err(invalid(format!("reference state {reference} out of range")));
            }
            (discount, Some(reference))
        }
    };
    let op = FastBellman::new(pmdp)?;
    let mut w = vec![T::zero(); pmdp.num_states()];
    let mut run = FastRun {
        values: Vec::new(),
        gain: None,
        iterations: 0,
        residual: T::infinity(),
        converged: false,
        stats: Vec::new(),
        trace: Vec::new(),
    };
    while run.iterations < max_iters {
        let keep = options.trace == TraceLevel::Full;
        let (mut next, stats, cdfs) = op.kernel.sweep(&w, discount, options.parallel, keep);
        if let Some(r) = reference {
            let offset = next[r];
            next.iter_mut().for_each(|v| *v = *v - offset);
            next[r] = T::zero();
            run.gain = Some(offset);
        }
        run.residual = sup_distance(&next, &w);
        w = next;
        run.iterations += 1;
        run.stats.push(stats);
        if options.trace != TraceLevel::Off {
            run.trace.push(SweepTrace {
                sweep: run.iterations,
                grid_len: stats.grid_len,
                residual: run.residual.to_f64_lossy(),
                values: w.iter().map(|v| v.to_f64_lossy()).collect(),
                cdfs: cdfs.map(|c| c.into_iter().map(|row| row.into_iter().map(|x| x.to_f64_lossy()).collect()).collect()),
            });
        }
        if run.residual <= epsilon {
            break;
        }
    }
    run.converged = run.residual <= epsilon;
    run.values = w;
    Ok(run)
}

/// Discounted fast value iteration.
pub fn fast_value_iteration<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    discount: T,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<ValueVector<T>, T>> {
    let run = fast_iterate(pmdp, FastMode::Discounted { discount }, epsilon, max_iters, FastOptions::default())?;
    Ok(Solve {
        value: ValueVector::new(run.values, discount),
        iterations: run.iterations,
        residual: run.residual,
        converged: run.converged,
    })
}

/// Relative fast value iteration centred at `reference`; the gain is the
/// recentring offset of the last sweep.
pub fn fast_relative_value_iteration<T: Scalar>(
    pmdp: &PseudoMdp<T>,
    reference: usize,
    discount: T,
    epsilon: T,
    max_iters: usize,
) -> Result<Solve<RelativeValueVector<T>, T>> {
    let mode = FastMode::Relative { reference, discount };
    let run = fast_iterate(pmdp, mode, epsilon, max_iters, FastOptions::default())?;
    Ok(Solve {
        value: RelativeValueVector { values: run.values, reference, gain: run.gain.unwrap_or_else(T::nan) },
        iterations: run.iterations,
        residual: run.residual,
        converged: run.converged,
    })
}
