//! Byzantine-robust decentralized gradient estimation.
//!
//! A simulator and library for estimating the gradient of a black-box
//! function with a set of asynchronously activated nodes, some of which may
//! be Byzantine. Honest nodes run a simultaneous-perturbation scheme; the
//! broadcast observations feed an l1 secure-estimation decoder whose online
//! two-timescale form produces the gradient estimate.
//!
//! - [`model`]: nodes, Byzantine partition, activation vectors and universes.
//! - [`oracle`]: builtin black-box functions with exact gradients and
//!   `grad f = A v(x)` factorizations (validation side).
//! - [`activation`]: the irreducible activation Markov chain.
//! - [`perturb`]: one perturbation round, honest and Byzantine.
//! - [`decode`]: the stacked system, l1 objective, decoders, and the
//!   recoverability condition.
//! - [`estimator`]: the two-timescale online algorithm.
//! - [`harness`]: experiment configs, replications, CSV emission.

pub mod activation;
pub mod decode;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod perturb;

pub use activation::{
    make_chain, occupation_frequencies, stationary_distribution, total_variation,
    ActivationChain, ChainMode,
};
pub use decode::{
    build_a1, check_recoverability, decode_enumerate, decode_subgradient,
    decode_weighted_median, max_tolerable_q, objective_j, MaxTolerableQ, Recoverability,
    StackedSystem,
};
pub use error::{Error, Result};
pub use estimator::{
    run_estimation, run_estimation_observed, EstimatorState, MetricsRecord, RunOutcome,
    RunSetup, StepSchedule,
};
pub use harness::{
    fig1_scenarios, naive_estimate, run_experiment, run_fig1, write_experiment,
    ExperimentConfig, ExperimentResult,
};
pub use model::{
    build_universe, byzantine_blocks, ActivationUniverse, ActivationVector, NodePartition,
    UniverseMode,
};
pub use oracle::{
    analytic_gradient, evaluate, factorize, finite_diff_gradient, BlackBoxFunction,
    GradientFactorization,
};
pub use perturb::{
    expected_observation, run_round, ByzantineSpec, ByzantineStrategy, PerturbSettings,
    PerturbationRound, RoundStreams,
};
