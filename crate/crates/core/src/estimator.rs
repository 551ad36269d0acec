//! The online two-timescale estimator: a fast timescale tracks the mean
//! observation of each (node, activation-set) pair, a slow timescale runs
//! online subgradient descent on the l1 decoding objective against the
//! tracked table. `A v^k` is the gradient estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::{make_chain, ChainMode};
use crate::decode::{build_a1, l1_sign, objective_j, StackedSystem};
use crate::error::{Error, Result};
use crate::model::{ActivationUniverse, NodePartition};
use crate::oracle::{analytic_gradient, factorize, BlackBoxFunction};
use crate::perturb::{
    expected_observation, run_round, ByzantineSpec, PerturbSettings, PerturbationRound,
    RoundStreams,
};

/// Step sizes `a(k) = a0 / (k+1)^alpha` (slow) and `b(k) = b0 / (k+1)^beta`
/// (fast). The exponent window `0.5 < beta < alpha <= 1` gives divergent
/// sums, square-summable steps, and `a(k)/b(k) -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a0: f64,
    pub b0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StepSchedule {
    pub fn new(a0: f64, b0: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(a0 > 0.0 && b0 > 0.0 && 0.5 < beta && beta < alpha && alpha <= 1.0) {
            return Err(Error::InvalidSchedule { alpha, beta });
        }
        Ok(Self { a0, b0, alpha, beta })
    }

    /// Revalidates after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.a0, self.b0, self.alpha, self.beta).map(|_| ())
    }

    /// `(a(k), b(k))`.
    pub fn values(&self, k: u64) -> (f64, f64) {
        let t = (k + 1) as f64;
        (self.a0 / t.powf(self.alpha), self.b0 / t.powf(self.beta))
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a0: 1.0,
            b0: 1.0,
            alpha: 0.9,
            beta: 0.6,
        }
    }
}

/// Decoder state shared (by the consistent-broadcast assumption) by every
/// good node: the tracked observation table, flattened in `A1` row order,
/// and the feature iterate.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    zhat: DVector<f64>,
    v: DVector<f64>,
    k: u64,
    visited: Vec<bool>,
    /// Restrict the slow update to blocks already visited, instead of the
    /// literal sum over every pair.
    visited_only: bool,
}

impl EstimatorState {
    /// Fresh state: `zhat = 0`, `v = 0`.
    pub fn new(sys: &StackedSystem) -> Self {
        Self::with_options(sys, false)
    }

    pub fn with_options(sys: &StackedSystem, visited_only: bool) -> Self {
        Self {
            zhat: DVector::zeros(sys.rows()),
            v: DVector::zeros(sys.m()),
            k: 0,
            visited: vec![false; sys.universe().len()],
            visited_only,
        }
    }

    /// Tracked observation table, flattened in `A1` row order.
    pub fn zhat(&self) -> &DVector<f64> {
        &self.zhat
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn visited_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.visited
            .iter()
            .enumerate()
            .filter_map(|(b, &v)| v.then_some(b))
    }

    /// Fast-timescale update: only the block matching the round's pattern
    /// moves, by `step * (z_i - zhat_i)` per node.
    pub fn fast_update(
        &mut self,
        round: &PerturbationRound,
        sys: &StackedSystem,
        step: f64,
    ) -> Result<()> {
        let block = sys
            .universe()
            .index_of(&round.u)
            .ok_or(Error::UnknownActivation)?;
        let n = sys.n();
        for i in 0..n {
            let r = block * n + i;
            self.zhat[r] += step * (round.z[i] - self.zhat[r]);
        }
        self.visited[block] = true;
        Ok(())
    }

    /// Slow-timescale update:
    /// `v += step * sum_{u,i} A_i(u)' sign(zhat_{i,u} - A_i(u) v)`.
    pub fn slow_update(&mut self, sys: &StackedSystem, step: f64) {
        let mut residual = sys.a1() * &self.v;
        residual.zip_apply(&self.zhat, |r, z| *r = l1_sign(z - *r));
        if self.visited_only {
            let n = sys.n();
            for (b, &seen) in self.visited.iter().enumerate() {
                if !seen {
                    residual.rows_mut(b * n, n).fill(0.0);
                }
            }
        }
        let direction = sys.a1().tr_mul(&residual);
        self.v.axpy(step, &direction, 1.0);
    }

    /// One full decoding step at the current iteration count: fast update
    /// with `b(k)`, then the slow update against the post-update table with
    /// `a(k)`, then `k + 1`.
    pub fn step(
        &mut self,
        round: &PerturbationRound,
        sys: &StackedSystem,
        schedule: &StepSchedule,
    ) -> Result<()> {
        let (a, b) = schedule.values(self.k);
        self.fast_update(round, sys, b)?;
        self.slow_update(sys, a);
        self.k += 1;
        Ok(())
    }

    /// The gradient estimate `A v^k`.
    pub fn gradient_estimate(&self, a: &DMatrix<f64>) -> DVector<f64> {
        a * &self.v
    }

    /// The literal stacked form `A1 v^k` (one copy of the estimate per
    /// universe member, masked rows zero).
    pub fn stacked_estimate(&self, sys: &StackedSystem) -> DVector<f64> {
        sys.a1() * &self.v
    }

    /// Max over visited blocks of the sup-norm gap between the tracked
    /// table and a reference stacked observation vector.
    pub fn tracking_error(&self, sys: &StackedSystem, reference: &DVector<f64>) -> f64 {
        let n = sys.n();
        self.visited_blocks()
            .map(|b| {
                (0..n)
                    .map(|i| (self.zhat[b * n + i] - reference[b * n + i]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// One trajectory row: gradient-estimate errors against the analytic
/// gradient, the l1 objective against the exact mean observations, and the
/// fast-timescale tracking error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub k: u64,
    pub err_l2: f64,
    pub err_linf: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub zhat_err: f64,
}

/// Everything one replication needs.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub function: BlackBoxFunction,
    pub x: DVector<f64>,
    pub universe: ActivationUniverse,
    pub partition: NodePartition,
    pub byzantine: ByzantineSpec,
    pub chain_mode: ChainMode,
    pub perturb: PerturbSettings,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub metrics_stride: u64,
    pub visited_only: bool,
    /// Key for the perturbation streams.
    pub seed: u64,
    /// Key for the activation chain (defaults to `seed` at the config layer;
    /// chain and perturbation draws live on disjoint ChaCha streams).
    pub chain_seed: u64,
}

/// Result of one replication.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub state: EstimatorState,
    pub system: StackedSystem,
    /// Exact mean observations per block, flattened in `A1` row order.
    pub zbar_exact: DVector<f64>,
    /// Analytic gradient at the working point.
    pub gradient: DVector<f64>,
}

impl RunOutcome {
    pub fn final_estimate(&self) -> DVector<f64> {
        self.state.gradient_estimate(self.system.a())
    }

    pub fn final_error_linf(&self) -> f64 {
        (self.final_estimate() - &self.gradient).amax()
    }
}

/// Exact mean observation table for a fixed working point, flattened in
/// `A1` row order.
pub fn exact_observation_table(
    setup: &RunSetup,
    universe: &ActivationUniverse,
) -> Result<DVector<f64>> {
    let n = universe.n();
    let mut zbar = DVector::zeros(universe.len() * n);
    for (b, u) in universe.members().iter().enumerate() {
        let mean = expected_observation(
            &setup.x,
            u,
            &setup.perturb,
            &setup.partition,
            &setup.byzantine,
            &setup.function,
        )?;
        zbar.rows_mut(b * n, n).copy_from(&mean);
    }
    Ok(zbar)
}

/// Runs the full loop for `iterations` rounds: chain step, perturbation
/// round, decoding step, metrics every `metrics_stride` iterations (plus the
/// final one). Deterministic given the setup's seeds.
pub fn run_estimation(setup: &RunSetup) -> Result<RunOutcome> {
    run_estimation_observed(setup, |_| {})
}

/// [`run_estimation`] with a per-round observer (used by the harness for
/// baseline accumulators); the estimator itself is unaffected.
pub fn run_estimation_observed(
    setup: &RunSetup,
    mut observer: impl FnMut(&PerturbationRound),
) -> Result<RunOutcome> {
    setup.schedule.validate()?;
    let factorization = factorize(&setup.function)?;
    let sys = build_a1(&setup.universe, factorization.a())?;
    let zbar_exact = exact_observation_table(setup, &setup.universe)?;
    let gradient = analytic_gradient(&setup.function, &setup.x)?;
    let mut chain = make_chain(setup.universe.clone(), &setup.chain_mode, setup.chain_seed)?;
    let streams = RoundStreams::new(setup.seed);
    let mut state = EstimatorState::with_options(&sys, setup.visited_only);
    let stride = setup.metrics_stride.max(1);
    let mut records = Vec::new();

    for k in 0..setup.iterations {
        let block = chain.step();
        let u = setup.universe.member(block).clone();
        let round = run_round(
            k,
            &setup.x,
            &u,
            &setup.perturb,
            &setup.partition,
            &setup.byzantine,
            &setup.function,
            &streams,
        )?;
        observer(&round);
        state.step(&round, &sys, &setup.schedule)?;

        let done = k + 1;
        if done % stride == 0 || done == setup.iterations {
            let estimate = state.gradient_estimate(sys.a());
            let diff = &estimate - &gradient;
            records.push(MetricsRecord {
                k: done,
                err_l2: diff.norm(),
                err_linf: diff.amax(),
                j: objective_j(&sys, &zbar_exact, state.v()),
                zhat_err: state.tracking_error(&sys, &zbar_exact),
            });
        }
    }

    Ok(RunOutcome {
        records,
        state,
        system: sys,
        zbar_exact,
        gradient,
    })
}
