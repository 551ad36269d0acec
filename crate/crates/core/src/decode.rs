//! Secure estimation: the stacked observation system, the l1 decoding
//! objective, three decoders (closed-form weighted median for m = 1, exact
//! enumeration at desk scale, and a subgradient solver), and the
//! recoverability condition that certifies exact recovery under at most `q`
//! corrupted rows.

use std::collections::BTreeMap;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::ActivationUniverse;

/// Row/feature bounds for the exact enumeration decoder.
pub const ENUMERATE_MAX_ROWS: usize = 64;
pub const ENUMERATE_MAX_M: usize = 7;

/// Pivot threshold below which a candidate subsystem is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Subgradient convention: sign(0) = 0, so exact fits are stationary.
pub fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The stacked matrix `A1`: one block per universe member, block `b` being
/// `A` with row `i` zeroed whenever member `b` leaves node `i` inactive.
/// Flattened row `b * n + i` corresponds to `(block b, node i)`.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    a1: DMatrix<f64>,
    universe: ActivationUniverse,
    a: DMatrix<f64>,
    nonzero_rows: Vec<usize>,
}

impl StackedSystem {
    pub fn a1(&self) -> &DMatrix<f64> {
        &self.a1
    }

    pub fn universe(&self) -> &ActivationUniverse {
        &self.universe
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    /// Total row count `|U| * n`.
    pub fn rows(&self) -> usize {
        self.a1.nrows()
    }

    /// Flattened index of `(block, node)`.
    pub fn row_of(&self, block: usize, node: usize) -> usize {
        block * self.n() + node
    }

    /// Inverse of [`Self::row_of`].
    pub fn block_node_of(&self, row: usize) -> (usize, usize) {
        (row / self.n(), row % self.n())
    }

    /// Rows whose `A1` entries are not all zero. Corruption on the other
    /// rows shifts the objective by a constant and cannot move the argmin,
    /// so every recoverability count ranges over these.
    pub fn nonzero_rows(&self) -> &[usize] {
        &self.nonzero_rows
    }

    /// Count of nonzero rows per block, informative blocks only.
    fn block_row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.universe.len()];
        for &r in &self.nonzero_rows {
            counts[r / self.n()] += 1;
        }
        counts.retain(|&c| c > 0);
        counts
    }
}

/// Stacks `A(u) = u (x) A` over the universe in member order.
pub fn build_a1(universe: &ActivationUniverse, a: &DMatrix<f64>) -> Result<StackedSystem> {
    let n = universe.n();
    if a.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "A row count",
            expected: n,
            got: a.nrows(),
        });
    }
    let m = a.ncols();
    let mut a1 = DMatrix::zeros(universe.len() * n, m);
    for (b, u) in universe.members().iter().enumerate() {
        for i in u.active_nodes() {
            for j in 0..m {
                a1[(b * n + i, j)] = a[(i, j)];
            }
        }
    }
    let nonzero_rows = (0..a1.nrows())
        .filter(|&r| (0..m).any(|j| a1[(r, j)] != 0.0))
        .collect();
    Ok(StackedSystem {
        a1,
        universe: universe.clone(),
        a: a.clone(),
        nonzero_rows,
    })
}

/// Block-level corruption: one error value per corrupted universe member,
/// replicated across the block's rows. This is the structure the decoder's
/// theory assumes for Byzantine-touched blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionModel {
    per_block_error: BTreeMap<usize, f64>,
}

impl CorruptionModel {
    /// `(block index, error)` pairs; later duplicates overwrite.
    pub fn new(errors: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            per_block_error: errors.into_iter().collect(),
        }
    }

    pub fn corrupted_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_block_error.keys().copied()
    }

    /// The stacked error vector `e`: `e_u` on every entry of a corrupted
    /// block, zero elsewhere.
    pub fn stacked_error(&self, sys: &StackedSystem) -> Result<DVector<f64>> {
        let mut e = DVector::zeros(sys.rows());
        let n = sys.n();
        for (&block, &value) in &self.per_block_error {
            if block >= sys.universe().len() {
                return Err(Error::DimensionMismatch {
                    context: "corrupted block index",
                    expected: sys.universe().len(),
                    got: block,
                });
            }
            e.rows_mut(block * n, n).fill(value);
        }
        Ok(e)
    }

    /// Number of *informative* rows the corruption touches, which is what
    /// the recoverability budget counts.
    pub fn corrupted_nonzero_rows(&self, sys: &StackedSystem) -> usize {
        sys.nonzero_rows()
            .iter()
            .filter(|&&r| self.per_block_error.contains_key(&(r / sys.n())))
            .count()
    }
}

fn check_zbar(sys: &StackedSystem, zbar: &DVector<f64>) -> Result<()> {
    if zbar.len() != sys.rows() {
        return Err(Error::DimensionMismatch {
            context: "stacked observation vector",
            expected: sys.rows(),
            got: zbar.len(),
        });
    }
    Ok(())
}

/// The l1 residual `J(v) = sum_r |zbar_r - A1_r v|`.
pub fn objective_j(sys: &StackedSystem, zbar: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (zbar - sys.a1() * v).abs().sum()
}

/// Exact minimizer of `J` for m = 1: the weighted median of the per-row
/// ratios `zbar_r / a_r` with weights `|a_r|`, lower median on ties.
pub fn decode_weighted_median(sys: &StackedSystem, zbar: &DVector<f64>) -> Result<DVector<f64>> {
    check_zbar(sys, zbar)?;
    if sys.m() != 1 {
        return Err(Error::DimensionMismatch {
            context: "weighted-median feature dimension",
            expected: 1,
            got: sys.m(),
        });
    }
    let mut points: Vec<(f64, f64)> = sys
        .nonzero_rows()
        .iter()
        .map(|&r| {
            let a = sys.a1()[(r, 0)];
            (zbar[r] / a, a.abs())
        })
        .collect();
    if points.is_empty() {
        return Err(Error::Underdetermined(
            "every row of A1 is zero".to_string(),
        ));
    }
    points.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = points.iter().map(|&(_, w)| w).sum();
    let mut acc = 0.0;
    for &(ratio, w) in &points {
        acc += w;
        if acc >= total / 2.0 {
            return Ok(DVector::from_element(1, ratio));
        }
    }
    // Reachable only through rounding on the final accumulation.
    Ok(DVector::from_element(1, points[points.len() - 1].0))
}

/// Solves `a v = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot falls below [`PIVOT_TOL`].
fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let m = a.nrows();
    let mut work = a.clone();
    let mut rhs = b.clone();
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&i, &j| work[(i, col)].abs().total_cmp(&work[(j, col)].abs()))
            .unwrap();
        if work[(pivot_row, col)].abs() <= PIVOT_TOL {
            return None;
        }
        if pivot_row != col {
            work.swap_rows(pivot_row, col);
            rhs.swap_rows(pivot_row, col);
        }
        for row in col + 1..m {
            let factor = work[(row, col)] / work[(col, col)];
            for j in col..m {
                work[(row, j)] -= factor * work[(col, j)];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = DVector::zeros(m);
    for row in (0..m).rev() {
        let mut acc = rhs[row];
        for j in row + 1..m {
            acc -= work[(row, j)] * x[j];
        }
        x[row] = acc / work[(row, row)];
    }
    Some(x)
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for i in 0..a.len() {
        match a[i].total_cmp(&b[i]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Brute-force exact decoder: the minimizer of the piecewise-linear convex
/// `J` lies where `m` residuals vanish, so every nonsingular m-subset of
/// rows yields a candidate vertex. Evaluates `J` at each candidate plus the
/// origin; ties break toward the lexicographically smallest `v`.
pub fn decode_enumerate(sys: &StackedSystem, zbar: &DVector<f64>) -> Result<DVector<f64>> {
    check_zbar(sys, zbar)?;
    let m = sys.m();
    if sys.rows() > ENUMERATE_MAX_ROWS || m > ENUMERATE_MAX_M {
        return Err(Error::Underdetermined(format!(
            "enumeration limited to {ENUMERATE_MAX_ROWS} rows and m <= {ENUMERATE_MAX_M} \
             (got {} rows, m = {m}); use the subgradient decoder",
            sys.rows()
        )));
    }
    let nonzero = sys.nonzero_rows();
    let sub = sys.a1().select_rows(nonzero.iter());
    if sub.rank(PIVOT_TOL) < m {
        return Err(Error::Underdetermined(format!(
            "A1 has rank < {m} on its nonzero rows"
        )));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |v: DVector<f64>| {
        let j = objective_j(sys, zbar, &v);
        let better = match &best {
            None => true,
            Some((best_j, best_v)) => {
                j < best_j - 1e-12 || ((j - best_j).abs() <= 1e-12 && lex_less(&v, best_v))
            }
        };
        if better {
            best = Some((j, v));
        }
    };

    consider(DVector::zeros(m));
    for subset in nonzero.iter().combinations(m) {
        let a_s = DMatrix::from_fn(m, m, |i, j| sys.a1()[(*subset[i], j)]);
        let b_s = DVector::from_fn(m, |i, _| zbar[*subset[i]]);
        if let Some(v) = solve_square(&a_s, &b_s) {
            consider(v);
        }
    }
    Ok(best.expect("origin candidate always present").1)
}

/// Result of the offline subgradient solver.
#[derive(Debug, Clone)]
pub struct SubgradientResult {
    /// Iterate after the final step.
    pub last: DVector<f64>,
    /// Iterate with the smallest objective seen.
    pub best: DVector<f64>,
    pub best_j: f64,
}

/// Offline subgradient descent on `J`:
/// `v <- v + a(t) * sum_r A1_r' sign(zbar_r - A1_r v)` with
/// `a(t) = a0 / (t + 1)^step_exponent`.
pub fn decode_subgradient(
    sys: &StackedSystem,
    zbar: &DVector<f64>,
    v0: &DVector<f64>,
    a0: f64,
    step_exponent: f64,
    iters: usize,
) -> Result<SubgradientResult> {
    check_zbar(sys, zbar)?;
    if v0.len() != sys.m() {
        return Err(Error::DimensionMismatch {
            context: "subgradient start",
            expected: sys.m(),
            got: v0.len(),
        });
    }
    let mut v = v0.clone();
    let mut best = v.clone();
    let mut best_j = f64::INFINITY;
    let mut residual = DVector::zeros(sys.rows());
    let mut direction = DVector::zeros(sys.m());
    for t in 0..iters {
        // One pass: residuals give J at the current iterate, then turn into
        // the sign vector for the step.
        sys.a1().mul_to(&v, &mut residual);
        let mut j = 0.0;
        residual.zip_apply(zbar, |r, z| {
            let d = z - *r;
            j += d.abs();
            *r = l1_sign(d);
        });
        if j < best_j {
            best_j = j;
            best.copy_from(&v);
        }
        sys.a1().tr_mul_to(&residual, &mut direction);
        let step = a0 / ((t + 1) as f64).powf(step_exponent);
        v.axpy(step, &direction, 1.0);
    }
    let final_j = objective_j(sys, zbar, &v);
    if final_j < best_j {
        best_j = final_j;
        best.copy_from(&v);
    }
    Ok(SubgradientResult {
        last: v,
        best,
        best_j,
    })
}

/// Outcome of a recoverability check. `exact` is true only for the m = 1
/// closed form; for m > 1 the condition is tested over sampled directions
/// and a `true` verdict is a non-exhaustive certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recoverability {
    pub holds: bool,
    pub exact: bool,
}

/// Direction sampling for the m > 1 heuristic certificate.
#[derive(Debug, Clone, Copy)]
pub struct RecoverabilityOptions {
    pub n_dir: usize,
    pub seed: u64,
}

impl Default for RecoverabilityOptions {
    fn default() -> Self {
        Self {
            n_dir: 4096,
            seed: 0x42d1_5ec0,
        }
    }
}

/// Checks whether every `q`-subset of nonzero rows is dominated: for each
/// tested direction `z`, the `q` largest values of `|A1_r z|` must not
/// exceed the sum of the remaining ones (non-strict inequality).
pub fn check_recoverability(sys: &StackedSystem, q: usize) -> Result<Recoverability> {
    check_recoverability_with(sys, q, &RecoverabilityOptions::default())
}

pub fn check_recoverability_with(
    sys: &StackedSystem,
    q: usize,
    options: &RecoverabilityOptions,
) -> Result<Recoverability> {
    let rows = sys.nonzero_rows().len();
    if q > rows {
        return Err(Error::InvalidQ { q, rows });
    }
    if sys.m() == 1 {
        // |A1_r z| = |a_r| |z|, so the direction cancels and the sorted-sum
        // test is exact.
        let mut mags: Vec<f64> = sys
            .nonzero_rows()
            .iter()
            .map(|&r| sys.a1()[(r, 0)].abs())
            .collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let top: f64 = mags[..q].iter().sum();
        let rest: f64 = mags[q..].iter().sum();
        return Ok(Recoverability {
            holds: top <= rest,
            exact: true,
        });
    }
    let holds = directions(sys, options).all(|z| direction_dominated(sys, &z, q));
    Ok(Recoverability {
        holds,
        exact: false,
    })
}

fn direction_dominated(sys: &StackedSystem, z: &DVector<f64>, q: usize) -> bool {
    let mut vals: Vec<f64> = sys
        .nonzero_rows()
        .iter()
        .map(|&r| (sys.a1().row(r) * z)[(0, 0)].abs())
        .collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = vals[..q].iter().sum();
    let rest: f64 = vals[q..].iter().sum();
    top <= rest
}

/// Coordinate axes, normalized nonzero rows of `A1`, and seeded random unit
/// directions.
fn directions<'a>(
    sys: &'a StackedSystem,
    options: &RecoverabilityOptions,
) -> impl Iterator<Item = DVector<f64>> + 'a {
    let m = sys.m();
    let coords = (0..m).map(move |j| {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        e
    });
    let rows = sys.nonzero_rows().iter().filter_map(move |&r| {
        let row = sys.a1().row(r).transpose();
        let norm = row.norm();
        (norm > 0.0).then(|| row / norm)
    });
    let mut rng = ChaCha12Rng::seed_from_u64(options.seed);
    let n_dir = options.n_dir;
    let sampled = std::iter::repeat_with(move || loop {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let norm = z.norm();
        if norm > 1e-12 {
            return z / norm;
        }
    })
    .take(n_dir);
    coords.chain(rows).chain(sampled)
}

/// The largest tolerable corruption budget and its block-level readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxTolerableQ {
    /// Largest `q` for which the recoverability condition holds.
    pub q_max: usize,
    /// Literal block bound `floor(q_max / n)`, which charges `n` rows per
    /// corrupted block even when a block has fewer informative rows.
    pub block_bound: usize,
    /// Number of corrupted blocks tolerable when each block is charged only
    /// its nonzero rows (worst case: fewest-row blocks corrupted first).
    pub effective_block_bound: usize,
    pub exact: bool,
}

/// Largest `q` satisfying the condition (monotone in `q`, so binary search),
/// plus the literal and masked-row block bounds.
pub fn max_tolerable_q(sys: &StackedSystem) -> Result<MaxTolerableQ> {
    max_tolerable_q_with(sys, &RecoverabilityOptions::default())
}

pub fn max_tolerable_q_with(
    sys: &StackedSystem,
    options: &RecoverabilityOptions,
) -> Result<MaxTolerableQ> {
    let rows = sys.nonzero_rows().len();
    let mut lo = 0usize; // q = 0 always holds: an empty sum is dominated.
    let mut hi = rows + 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if check_recoverability_with(sys, mid, options)?.holds {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q_max = lo;
    let mut counts = sys.block_row_counts();
    counts.sort_unstable();
    let mut budget = q_max;
    let mut effective = 0usize;
    for c in counts {
        if c > budget {
            break;
        }
        budget -= c;
        effective += 1;
    }
    Ok(MaxTolerableQ {
        q_max,
        block_bound: q_max / sys.n(),
        effective_block_bound: effective,
        exact: sys.m() == 1,
    })
}
