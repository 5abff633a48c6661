//! Orderedness of a weight matrix: one minus the smallest achievable share of
//! absolute weight mass lying strictly below the diagonal, minimised over
//! orderings of the hidden units.
//!
//! Only hidden units move. Outputs keep positions `0..o` and inputs stay as
//! the trailing columns, so three parts of the lower-triangle mass are fixed:
//! the strict lower triangle of the output block, and every hidden row's
//! entries in output columns. Input columns never count as lower. What varies
//! is the hidden×hidden block: with hidden unit `u` at position `pos(u)`,
//! entry `(row u, col p)` is lower exactly when `pos(p) < pos(u)`. Appending
//! `u` behind an already placed set `P` therefore adds `Σ_{p∈P} |W[u][p]|`,
//! which is what makes the subset DP below exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerShape;
use crate::numerics::{exact_sum, ExactSum, Matrix, SeededRng};

pub const EXHAUSTIVE_MAX_HIDDEN: usize = 9;
pub const DP_MAX_HIDDEN: usize = 24;

/// Largest hidden count the dispatcher hands to each exact solver.
const DISPATCH_EXHAUSTIVE: usize = 7;
const DISPATCH_DP: usize = 20;
const DISPATCH_RESTARTS: usize = 20;
const DISPATCH_SEED: u64 = 0x0DE7_ED00_5EED_0001;

/// Which entries make up the denominator `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassScope {
    /// Only the leading `(o+h)×(o+h)` neuron-to-neuron block.
    #[default]
    Recurrent,
    /// Every entry, input columns included.
    Full,
}

impl std::str::FromStr for MassScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "recurrent" => Ok(MassScope::Recurrent),
            "full" => Ok(MassScope::Full),
            other => Err(Error::Config(format!(
                "unknown mass scope {other:?} (expected recurrent or full)"
            ))),
        }
    }
}

impl std::fmt::Display for MassScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MassScope::Recurrent => "recurrent",
            MassScope::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Solver {
    Exhaustive,
    SubsetDP,
    LocalSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderednessResult {
    pub orderedness: f64,
    /// `permutation[k]` is the original hidden unit placed at hidden position `k`.
    pub permutation: Vec<usize>,
    pub lower_mass: f64,
    pub total_mass: f64,
    pub solver: Solver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderednessProblem {
    wabs: Matrix,
    outputs: usize,
    hidden: usize,
    scope: MassScope,
    fixed_lower: f64,
    total: f64,
    /// `h×h`, `block[u*h + p] = |W[o+u][o+p]|`.
    block: Vec<f64>,
}

impl OrderednessProblem {
    pub fn new(weights: &Matrix, outputs: usize, hidden: usize, inputs: usize) -> Result<Self> {
        Self::with_scope(weights, outputs, hidden, inputs, MassScope::default())
    }

    pub fn with_scope(
        weights: &Matrix,
        outputs: usize,
        hidden: usize,
        inputs: usize,
        scope: MassScope,
    ) -> Result<Self> {
        let n = outputs + hidden;
        if weights.shape() != (n, n + inputs) {
            return Err(Error::Dimension(format!(
                "weights are {:?}, expected {:?} for o={outputs} h={hidden} i={inputs}",
                weights.shape(),
                (n, n + inputs)
            )));
        }
        let wabs = weights.abs();
        if !wabs.is_finite() {
            return Err(Error::Contract("weights contain non-finite values".into()));
        }
        let fixed_lower =
            exact_sum((0..n).flat_map(|r| wabs.row(r)[..r.min(outputs)].iter().copied()));
        let total = match scope {
            MassScope::Full => exact_sum(wabs.as_slice().iter().copied()),
            MassScope::Recurrent => exact_sum((0..n).flat_map(|r| wabs.row(r)[..n].iter().copied())),
        };
        let mut block = Vec::with_capacity(hidden * hidden);
        for u in 0..hidden {
            block.extend_from_slice(&wabs.row(outputs + u)[outputs..n]);
        }
        Ok(Self {
            wabs,
            outputs,
            hidden,
            scope,
            fixed_lower,
            total,
            block,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn scope(&self) -> MassScope {
        self.scope
    }

    pub fn abs_weights(&self) -> &Matrix {
        &self.wabs
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Lower-triangle mass that no hidden ordering can move.
    pub fn fixed_lower_mass(&self) -> f64 {
        self.fixed_lower
    }

    #[inline]
    fn b(&self, u: usize, p: usize) -> f64 {
        self.block[u * self.hidden + p]
    }

    /// `L` of the matrix with hidden units arranged as `perm`. Every solver
    /// scores its witness through this one function.
    pub fn lower_mass_for(&self, perm: &[usize]) -> f64 {
        let mut l = ExactSum::new();
        l.add(self.fixed_lower);
        for (k, &u) in perm.iter().enumerate() {
            for &p in &perm[..k] {
                l.add(self.b(u, p));
            }
        }
        l.value()
    }

    fn result(&self, perm: Vec<usize>, solver: Solver) -> OrderednessResult {
        let lower = self.lower_mass_for(&perm);
        let orderedness = if self.total > 0.0 {
            1.0 - lower / self.total
        } else {
            1.0
        };
        OrderednessResult {
            orderedness,
            permutation: perm,
            lower_mass: lower,
            total_mass: self.total,
            solver,
        }
    }
}

fn check_perm(perm: &[usize], h: usize) -> Result<()> {
    let mut seen = vec![false; h];
    if perm.len() != h {
        return Err(Error::Contract(format!(
            "permutation has {} entries for {h} hidden units",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= h || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Contract(format!(
                "{perm:?} is not a permutation of 0..{h}"
            )));
        }
    }
    Ok(())
}

/// Moves hidden unit `perm[k]` to hidden position `k`, permuting its row and
/// its column together. Output rows/columns and input columns stay in place.
pub fn apply_hidden_permutation(
    weights: &Matrix,
    perm: &[usize],
    outputs: usize,
    hidden: usize,
) -> Result<Matrix> {
    check_perm(perm, hidden)?;
    let n = outputs + hidden;
    if weights.rows() != n || weights.cols() < n {
        return Err(Error::Dimension(format!(
            "weights {:?} too small for {n} neurons",
            weights.shape()
        )));
    }
    let global = |k: usize| if k < outputs { k } else { outputs + perm[k - outputs] };
    let mut out = weights.clone();
    for r in 0..n {
        for c in 0..weights.cols() {
            let src_c = if c < n { global(c) } else { c };
            out[(r, c)] = weights[(global(r), src_c)];
        }
    }
    Ok(out)
}

/// Inverse of a permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Strict lower triangle of the leading square block.
pub fn lower_sum(weights: &Matrix) -> f64 {
    (0..weights.rows())
        .map(|r| weights.row(r)[..r.min(weights.cols())].iter().sum::<f64>())
        .sum()
}

/// Every entry.
pub fn total_sum(weights: &Matrix) -> f64 {
    weights.sum()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Enumerates all `h!` hidden orderings in lexicographic order; the first
/// optimum found is reported.
pub fn orderedness_exhaustive(prob: &OrderednessProblem) -> Result<OrderednessResult> {
    let h = prob.hidden;
    if h > EXHAUSTIVE_MAX_HIDDEN {
        return Err(Error::Capacity(format!(
            "exhaustive search is limited to {EXHAUSTIVE_MAX_HIDDEN} hidden units \
             (got {h}); use the subset DP"
        )));
    }
    let mut perm: Vec<usize> = (0..h).collect();
    let mut best = perm.clone();
    let mut best_l = prob.lower_mass_for(&perm);
    while next_permutation(&mut perm) {
        let l = prob.lower_mass_for(&perm);
        if l < best_l {
            best_l = l;
            best.copy_from_slice(&perm);
        }
    }
    Ok(prob.result(best, Solver::Exhaustive))
}

/// Exact minimum over hidden orderings by dynamic programming over the set of
/// already placed units, `O(h² 2^h)` time and `2^h` memory.
pub fn orderedness_dp(prob: &OrderednessProblem) -> Result<OrderednessResult> {
    let h = prob.hidden;
    if h > DP_MAX_HIDDEN {
        return Err(Error::Capacity(format!(
            "subset DP is limited to {DP_MAX_HIDDEN} hidden units (got {h}); \
             use local search"
        )));
    }
    let full: usize = (1usize << h) - 1;
    let append_cost = |u: usize, placed: usize| -> f64 {
        let mut acc = 0.0;
        let mut bits = placed;
        while bits != 0 {
            let p = bits.trailing_zeros() as usize;
            acc += prob.b(u, p);
            bits &= bits - 1;
        }
        acc
    };
    // rest[P] = cheapest way to place every unit not in P after P.
    let mut rest = vec![f64::INFINITY; full + 1];
    rest[full] = 0.0;
    for placed in (0..full).rev() {
        let mut best = f64::INFINITY;
        for u in 0..h {
            if placed & (1 << u) == 0 {
                let cand = append_cost(u, placed) + rest[placed | (1 << u)];
                if cand < best {
                    best = cand;
                }
            }
        }
        rest[placed] = best;
    }
    let mut perm = Vec::with_capacity(h);
    let mut placed = 0usize;
    while placed != full {
        let target = rest[placed];
        let u = (0..h)
            .find(|&u| {
                placed & (1 << u) == 0 && append_cost(u, placed) + rest[placed | (1 << u)] == target
            })
            .expect("optimal successor exists");
        perm.push(u);
        placed |= 1 << u;
    }
    Ok(prob.result(perm, Solver::SubsetDP))
}

/// Change in hidden-block lower mass from moving the unit at position `from`
/// to position `to` (all units in between shift by one).
fn insertion_delta(prob: &OrderednessProblem, order: &[usize], from: usize, to: usize) -> f64 {
    let u = order[from];
    let mut delta = 0.0;
    if to > from {
        for &w in &order[from + 1..=to] {
            delta += prob.b(u, w) - prob.b(w, u);
        }
    } else {
        for &w in &order[to..from] {
            delta += prob.b(w, u) - prob.b(u, w);
        }
    }
    delta
}

fn improve_by_insertion(prob: &OrderednessProblem, order: &mut Vec<usize>, tol: f64) {
    let h = order.len();
    loop {
        let mut best = (-tol, None);
        for from in 0..h {
            let u = order[from];
            // Scan right and left incrementally.
            let mut acc = 0.0;
            for (to, &w) in order.iter().enumerate().skip(from + 1) {
                acc += prob.b(u, w) - prob.b(w, u);
                if acc < best.0 {
                    best = (acc, Some((from, to)));
                }
            }
            let mut acc = 0.0;
            for to in (0..from).rev() {
                let w = order[to];
                acc += prob.b(w, u) - prob.b(u, w);
                if acc < best.0 {
                    best = (acc, Some((from, to)));
                }
            }
        }
        match best.1 {
            Some((from, to)) => {
                debug_assert!((insertion_delta(prob, order, from, to) - best.0).abs() < 1e-9);
                let u = order.remove(from);
                order.insert(to, u);
            }
            None => return,
        }
    }
}

/// Best of `restarts` insertion local searches. The first restart begins from
/// the identity ordering, the rest from random shuffles.
pub fn orderedness_local_search(
    prob: &OrderednessProblem,
    rng: &mut SeededRng,
    restarts: usize,
) -> Result<OrderednessResult> {
    let h = prob.hidden;
    let restarts = restarts.max(1);
    let tol = 1e-12 * prob.block.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts {
        let mut order: Vec<usize> = (0..h).collect();
        if r > 0 {
            rng.shuffle(&mut order);
        }
        improve_by_insertion(prob, &mut order, tol);
        let l = prob.lower_mass_for(&order);
        let better = match &best {
            None => true,
            Some((bl, bp)) => l < *bl || (l == *bl && order < *bp),
        };
        if better {
            best = Some((l, order));
        }
    }
    let (_, perm) = best.expect("at least one restart");
    Ok(prob.result(perm, Solver::LocalSearch))
}

/// Orderedness of `weights` under the default mass scope, picking the solver
/// by hidden-unit count.
pub fn orderedness(weights: &Matrix, shape: &LayerShape) -> Result<OrderednessResult> {
    orderedness_with_scope(weights, shape, MassScope::default())
}

pub fn orderedness_with_scope(
    weights: &Matrix,
    shape: &LayerShape,
    scope: MassScope,
) -> Result<OrderednessResult> {
    let prob =
        OrderednessProblem::with_scope(weights, shape.outputs, shape.hidden, shape.inputs, scope)?;
    solve(&prob)
}

pub fn solve(prob: &OrderednessProblem) -> Result<OrderednessResult> {
    if prob.total <= 0.0 {
        return Ok(prob.result((0..prob.hidden).collect(), Solver::Exhaustive));
    }
    match prob.hidden {
        h if h <= DISPATCH_EXHAUSTIVE => orderedness_exhaustive(prob),
        h if h <= DISPATCH_DP => orderedness_dp(prob),
        _ => orderedness_local_search(prob, &mut SeededRng::new(DISPATCH_SEED), DISPATCH_RESTARTS),
    }
}
