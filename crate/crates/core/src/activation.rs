//! The activation Markov chain `Y(k)` over the universe: construction,
//! seeded sampling, and stationary-distribution computation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActivationUniverse;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const POWER_ITER_CAP: usize = 200_000;

/// Transition structure for the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    /// Independent uniform draws over the universe each step (every row of
    /// `P` is the uniform distribution).
    IidUniform,
    /// Explicit row-stochastic transition matrix, row-major.
    Custom(Vec<Vec<f64>>),
}

/// An irreducible Markov chain over universe indices, owning its RNG stream.
/// Single-owner: distinct replications use distinct instances and seeds.
#[derive(Debug, Clone)]
pub struct ActivationChain {
    universe: ActivationUniverse,
    p: DMatrix<f64>,
    state: usize,
    rng: ChaCha12Rng,
}

/// Validates row sums, nonnegativity, and irreducibility.
fn validate_transition(p: &DMatrix<f64>) -> Result<()> {
    let s = p.nrows();
    for row in 0..s {
        let mut sum = 0.0;
        for col in 0..s {
            if p[(row, col)] < 0.0 {
                return Err(Error::NonStochasticRow {
                    row,
                    sum: p[(row, col)],
                });
            }
            sum += p[(row, col)];
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochasticRow { row, sum });
        }
    }
    if !strongly_connected(p) {
        return Err(Error::ReducibleChain);
    }
    Ok(())
}

/// Strong connectivity of the positive-entry digraph: every state reachable
/// from state 0 and state 0 reachable from every state.
fn strongly_connected(p: &DMatrix<f64>) -> bool {
    let s = p.nrows();
    let reach = |transpose: bool| {
        let mut seen = vec![false; s];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..s {
                let w = if transpose { p[(j, i)] } else { p[(i, j)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(false) && reach(true)
}

/// Builds the chain with a deterministic seeded sampling stream. The initial
/// state is universe index 0.
pub fn make_chain(
    universe: ActivationUniverse,
    mode: &ChainMode,
    seed: u64,
) -> Result<ActivationChain> {
    let s = universe.len();
    let p = match mode {
        ChainMode::IidUniform => DMatrix::from_element(s, s, 1.0 / s as f64),
        ChainMode::Custom(rows) => {
            if rows.len() != s || rows.iter().any(|r| r.len() != s) {
                return Err(Error::DimensionMismatch {
                    context: "transition matrix",
                    expected: s,
                    got: rows.len(),
                });
            }
            DMatrix::from_fn(s, s, |i, j| rows[i][j])
        }
    };
    validate_transition(&p)?;
    Ok(ActivationChain {
        universe,
        p,
        state: 0,
        rng: ChaCha12Rng::seed_from_u64(seed),
    })
}

impl ActivationChain {
    pub fn universe(&self) -> &ActivationUniverse {
        &self.universe
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Advances one transition sampled from the current row; returns the new
    /// universe index.
    pub fn step(&mut self) -> usize {
        let draw: f64 = self.rng.random();
        let row = self.p.row(self.state);
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (j, &w) in row.iter().enumerate() {
            acc += w;
            if draw < acc {
                next = j;
                break;
            }
        }
        self.state = next;
        next
    }
}

/// Stationary distribution of an irreducible `P` by power iteration, with a
/// lazy-chain pass (iterate averaging) when the plain iteration stalls on a
/// periodic chain.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_transition(p)?;
    let s = p.nrows();
    let uniform = DVector::from_element(s, 1.0 / s as f64);

    if let Some(pi) = power_iterate(p, &uniform) {
        return Ok(pi);
    }
    // Periodic chains: (P + I)/2 is aperiodic with the same stationary
    // distribution, so iterating it averages consecutive iterates.
    let lazy = (p + DMatrix::<f64>::identity(s, s)).scale(0.5);
    let pi = power_iterate(&lazy, &uniform).ok_or(Error::StationaryDivergence)?;
    let residual = (pi.transpose() * p - pi.transpose()).abs().sum();
    if residual > 1e-9 {
        return Err(Error::StationaryDivergence);
    }
    Ok(pi)
}

fn power_iterate(p: &DMatrix<f64>, start: &DVector<f64>) -> Option<DVector<f64>> {
    let mut pi = start.clone();
    for _ in 0..POWER_ITER_CAP {
        let mut next = (pi.transpose() * p).transpose();
        next /= next.sum();
        let delta = (&next - &pi).abs().sum();
        pi = next;
        if delta <= STATIONARY_TOL {
            return Some(pi);
        }
    }
    None
}

/// Empirical occupation frequencies of `chain` over `steps` transitions.
pub fn occupation_frequencies(chain: &mut ActivationChain, steps: usize) -> DVector<f64> {
    let mut counts = vec![0u64; chain.universe.len()];
    for _ in 0..steps {
        counts[chain.step()] += 1;
    }
    DVector::from_iterator(
        counts.len(),
        counts.into_iter().map(|c| c as f64 / steps as f64),
    )
}

/// Total-variation distance between two distributions.
pub fn total_variation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    0.5 * (a - b).abs().sum()
}
