//! One simultaneous-perturbation round.
//!
//! Active honest nodes draw a Bernoulli sign, play `x_i + delta * sign`, and
//! broadcast the difference quotient; active Byzantine nodes substitute an
//! arbitrary perturbation for the sign and may corrupt their reported value.
//! Every good node receives the identical broadcast vector, so one shared
//! observation per round is produced.
//!
//! All randomness is indexed by `(round, node)` on dedicated ChaCha streams:
//! the draw a node makes at round `k` never depends on the activation
//! history, which keeps replications and strategy variants comparable under
//! a fixed seed.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationVector, NodePartition};
use crate::oracle::{evaluate, BlackBoxFunction};

/// Exact expectation is enumerated over at most this many sign coins.
pub const MAX_ENUMERATED_COINS: usize = 20;

/// How an active Byzantine node deviates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "params", rename_all = "snake_case")]
pub enum ByzantineStrategy {
    /// Follows the honest protocol exactly (its draws match what a good
    /// node would have drawn).
    Obedient,
    /// Perturbs by the constant `M` instead of a unit sign.
    ConstantOffset {
        #[serde(rename = "M")]
        offset: f64,
    },
    /// Perturbs by a centered normal with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Perturbs by `-s` times the sign it would have drawn honestly.
    SignFlipScaled {
        #[serde(rename = "s")]
        scale: f64,
    },
}

/// Full Byzantine behavior: strategy plus where it applies.
///
/// By default the strategy value replaces the node's perturbation (entering
/// everyone's difference quotient) and its own report uses the same value as
/// divisor. With `report_only` the node perturbs honestly and only its
/// reported value is corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByzantineSpec {
    #[serde(flatten)]
    pub strategy: ByzantineStrategy,
    #[serde(default)]
    pub report_only: bool,
    /// Additive term on the node's reported value.
    #[serde(default)]
    pub report_offset: f64,
}

impl ByzantineSpec {
    pub fn obedient() -> Self {
        Self {
            strategy: ByzantineStrategy::Obedient,
            report_only: false,
            report_offset: 0.0,
        }
    }

    pub fn constant_offset(offset: f64) -> Self {
        Self {
            strategy: ByzantineStrategy::ConstantOffset { offset },
            report_only: false,
            report_offset: 0.0,
        }
    }

    /// Whether this spec's perturbation depends on a Bernoulli coin.
    fn uses_coin(&self) -> bool {
        self.report_only
            || matches!(
                self.strategy,
                ByzantineStrategy::Obedient | ByzantineStrategy::SignFlipScaled { .. }
            )
    }
}

/// Perturbation-scheme parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSettings {
    /// Perturbation magnitude `delta`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Divisor substituted when a Byzantine perturbation is exactly zero,
    /// for the node's own report only; its effect on `f`'s argument stays 0.
    #[serde(default = "default_floor")]
    pub zero_divisor_floor: f64,
}

fn default_delta() -> f64 {
    0.01
}

fn default_floor() -> f64 {
    1e-6
}

impl Default for PerturbSettings {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            zero_divisor_floor: default_floor(),
        }
    }
}

/// Per-replication random source, indexed by `(round, node)`.
///
/// Streams 0 and 1 of the key are reserved for sequential consumers (the
/// activation chain uses 0); round `k` owns streams `2k + 2` (signs) and
/// `2k + 3` (Byzantine noise).
#[derive(Debug, Clone, Copy)]
pub struct RoundStreams {
    key: u64,
}

impl RoundStreams {
    pub fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    fn rng_at(&self, stream: u64, word: u128) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.key);
        rng.set_stream(stream);
        rng.set_word_pos(word);
        rng
    }

    /// The Bernoulli(1/2) sign node `node` draws at round `k`.
    pub fn sign(&self, k: u64, node: usize) -> f64 {
        let mut rng = self.rng_at(k.wrapping_mul(2).wrapping_add(2), node as u128);
        if rng.next_u32() & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Standard normal draw for Byzantine noise at `(k, node)`. Nodes are
    /// spaced 256 words apart, far beyond any rejection-sampling appetite.
    pub fn normal(&self, k: u64, node: usize) -> f64 {
        let mut rng = self.rng_at(k.wrapping_mul(2).wrapping_add(3), (node as u128) << 8);
        rng.sample(StandardNormal)
    }
}

/// One executed round: the activation pattern, the realized perturbation
/// vector, and the broadcast observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRound {
    pub k: u64,
    pub u: ActivationVector,
    /// Realized perturbation per node: the good sign, the Byzantine action,
    /// or 0 when inactive.
    pub delta_tilde: DVector<f64>,
    /// Broadcast observation per node; exactly 0 for inactive nodes.
    pub z: DVector<f64>,
    pub f_base: f64,
    pub f_perturbed: f64,
}

fn check_dims(
    x: &DVector<f64>,
    u: &ActivationVector,
    partition: &NodePartition,
    f: &BlackBoxFunction,
) -> Result<usize> {
    let n = partition.n();
    for (len, context) in [
        (x.len(), "round input x"),
        (u.len(), "round activation vector"),
        (f.n(), "round function dimension"),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got: len,
            });
        }
    }
    Ok(n)
}

/// The Byzantine perturbation entering `f`'s argument, given the node's coin.
fn byz_perturbation(spec: &ByzantineSpec, coin: f64, gauss: f64) -> f64 {
    if spec.report_only {
        return coin;
    }
    match spec.strategy {
        ByzantineStrategy::Obedient => coin,
        ByzantineStrategy::ConstantOffset { offset } => offset,
        ByzantineStrategy::Gaussian { sigma } => sigma * gauss,
        ByzantineStrategy::SignFlipScaled { scale } => -scale * coin,
    }
}

/// The Byzantine node's reported value given the shared difference and its
/// own perturbation.
fn byz_report(
    spec: &ByzantineSpec,
    settings: &PerturbSettings,
    diff: f64,
    perturbation: f64,
    gauss: f64,
) -> f64 {
    let quotient = |e: f64| {
        let divisor = if e == 0.0 {
            settings.zero_divisor_floor
        } else {
            e
        };
        diff / (settings.delta * divisor)
    };
    let base = if spec.report_only {
        let honest = quotient(perturbation);
        match spec.strategy {
            ByzantineStrategy::Obedient => honest,
            ByzantineStrategy::ConstantOffset { offset } => honest + offset,
            ByzantineStrategy::Gaussian { sigma } => honest + sigma * gauss,
            ByzantineStrategy::SignFlipScaled { scale } => -scale * honest,
        }
    } else {
        quotient(perturbation)
    };
    base + spec.report_offset
}

/// Assembles one round from explicit coin and noise values. `signs[i]` and
/// `gauss[i]` are read only for nodes whose strategy consumes them.
#[allow(clippy::too_many_arguments)]
fn compose_round(
    k: u64,
    x: &DVector<f64>,
    u: &ActivationVector,
    settings: &PerturbSettings,
    partition: &NodePartition,
    byz: &ByzantineSpec,
    f: &BlackBoxFunction,
    signs: &[f64],
    gauss: &[f64],
) -> Result<PerturbationRound> {
    let n = check_dims(x, u, partition, f)?;
    let mut delta_tilde = DVector::zeros(n);
    for i in u.active_nodes() {
        delta_tilde[i] = if partition.is_byzantine(i) {
            byz_perturbation(byz, signs[i], gauss[i])
        } else {
            signs[i]
        };
    }
    let f_base = evaluate(f, x)?;
    let perturbed_x = x + settings.delta * &delta_tilde;
    let f_perturbed = evaluate(f, &perturbed_x)?;
    let diff = f_perturbed - f_base;

    let mut z = DVector::zeros(n);
    for i in u.active_nodes() {
        z[i] = if partition.is_byzantine(i) {
            byz_report(byz, settings, diff, delta_tilde[i], gauss[i])
        } else {
            diff / (settings.delta * delta_tilde[i])
        };
    }
    Ok(PerturbationRound {
        k,
        u: u.clone(),
        delta_tilde,
        z,
        f_base,
        f_perturbed,
    })
}

/// Executes round `k` at working point `x` with activation pattern `u`.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    k: u64,
    x: &DVector<f64>,
    u: &ActivationVector,
    settings: &PerturbSettings,
    partition: &NodePartition,
    byz: &ByzantineSpec,
    f: &BlackBoxFunction,
    streams: &RoundStreams,
) -> Result<PerturbationRound> {
    let n = check_dims(x, u, partition, f)?;
    let mut signs = vec![0.0; n];
    let mut gauss = vec![0.0; n];
    for i in u.active_nodes() {
        let is_byzantine = partition.is_byzantine(i);
        if !is_byzantine || byz.uses_coin() {
            signs[i] = streams.sign(k, i);
        }
        if is_byzantine && matches!(byz.strategy, ByzantineStrategy::Gaussian { .. }) {
            gauss[i] = streams.normal(k, i);
        }
    }
    compose_round(k, x, u, settings, partition, byz, f, &signs, &gauss)
}

/// Exact mean observation vector for pattern `u` at `x`: the expectation of
/// the broadcast over every Bernoulli coin in play, with stochastic
/// Byzantine noise replaced by its mean (zero). This is the `zbar` the fast
/// timescale tracks.
///
/// Enumerates all `2^c` sign patterns where `c` counts coin-consuming active
/// nodes; errors beyond [`MAX_ENUMERATED_COINS`].
pub fn expected_observation(
    x: &DVector<f64>,
    u: &ActivationVector,
    settings: &PerturbSettings,
    partition: &NodePartition,
    byz: &ByzantineSpec,
    f: &BlackBoxFunction,
) -> Result<DVector<f64>> {
    let n = check_dims(x, u, partition, f)?;
    let coin_nodes: Vec<usize> = u
        .active_nodes()
        .filter(|&i| !partition.is_byzantine(i) || byz.uses_coin())
        .collect();
    if coin_nodes.len() > MAX_ENUMERATED_COINS {
        return Err(Error::EnumerationTooLarge {
            active: coin_nodes.len(),
            max: MAX_ENUMERATED_COINS,
        });
    }
    let gauss = vec![0.0; n];
    let mut signs = vec![0.0; n];
    let mut mean = DVector::zeros(n);
    let patterns = 1u64 << coin_nodes.len();
    for bitmask in 0..patterns {
        for (b, &node) in coin_nodes.iter().enumerate() {
            signs[node] = if bitmask >> b & 1 == 1 { 1.0 } else { -1.0 };
        }
        let round = compose_round(0, x, u, settings, partition, byz, f, &signs, &gauss)?;
        mean += round.z;
    }
    Ok(mean / patterns as f64)
}
