//! The JSON experiment config and its translation into run setups.
//!
//! Node ids are 1-based here; everything downstream is 0-based. Validation
//! errors carry the offending key path.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::ChainMode;
use crate::error::{Error, Result};
use crate::estimator::{RunSetup, StepSchedule};
use crate::model::{build_universe, ActivationUniverse, ActivationVector, NodePartition, UniverseMode};
use crate::oracle::{evaluate, BlackBoxFunction};
use crate::perturb::{ByzantineSpec, PerturbSettings};

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// `function` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    Capacity {
        #[serde(rename = "C")]
        capacity: f64,
    },
    Linear {
        c: Vec<f64>,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
}

impl FunctionConfig {
    fn to_function(&self, n: usize) -> Result<BlackBoxFunction> {
        let f = match self {
            FunctionConfig::Capacity { capacity } => BlackBoxFunction::capacity(*capacity, n),
            FunctionConfig::Linear { c } => {
                if c.len() != n {
                    return Err(config_err(
                        "function.c",
                        format!("expected {n} coefficients, got {}", c.len()),
                    ));
                }
                BlackBoxFunction::linear(c.clone())
            }
            FunctionConfig::Quadratic { q, c } => {
                if c.len() != n {
                    return Err(config_err(
                        "function.c",
                        format!("expected {n} coefficients, got {}", c.len()),
                    ));
                }
                BlackBoxFunction::quadratic(q.clone(), c.clone())
            }
        };
        f.validate().map_err(|e| config_err("function", e.to_string()))?;
        Ok(f)
    }
}

/// `universe` section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum UniverseConfig {
    #[default]
    Singletons,
    AllNonemptySubsets,
    Custom { custom: Vec<ActivationVector> },
    RandomSubsets { count: usize, size: usize, seed: u64 },
}

impl UniverseConfig {
    fn to_mode(&self) -> UniverseMode {
        match self {
            Self::Singletons => UniverseMode::Singletons,
            Self::AllNonemptySubsets => UniverseMode::AllNonemptySubsets,
            Self::Custom { custom } => UniverseMode::Custom(custom.clone()),
            Self::RandomSubsets { count, size, seed } => UniverseMode::RandomSubsets {
                count: *count,
                size: *size,
                seed: *seed,
            },
        }
    }
}

/// `chain.mode` / `chain.P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChainModeConfig {
    IidUniform,
    Custom {
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
    },
}

/// `chain` section. `seed` pins the chain RNG across replications; when
/// absent each replication derives it from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(flatten)]
    pub mode: ChainModeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            mode: ChainModeConfig::IidUniform,
            seed: None,
        }
    }
}

/// `byzantine` section; omit it (or leave `ids` empty) for an all-good run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByzantineConfig {
    /// 1-based node ids.
    #[serde(default)]
    pub ids: Vec<usize>,
    #[serde(flatten)]
    pub spec: ByzantineSpec,
}

impl Default for ByzantineConfig {
    fn default() -> Self {
        Self {
            ids: Vec::new(),
            spec: ByzantineSpec::obedient(),
        }
    }
}

/// `run` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub metrics_stride: u64,
    pub replications: u32,
    pub visited_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            metrics_stride: 1,
            replications: 1,
            visited_only: false,
        }
    }
}

/// A full experiment description. Serializable both ways; the sha-256 of its
/// canonical JSON is embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub function: FunctionConfig,
    /// Working point at which the gradient is estimated.
    pub x: Vec<f64>,
    #[serde(default)]
    pub universe: UniverseConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub byzantine: ByzantineConfig,
    #[serde(default)]
    pub perturb: PerturbSettings,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub run: RunConfig,
    /// Base seed; replication `r` uses `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err(&path.display().to_string(), format!("cannot read config: {e}"))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err("<config>", e.to_string()))
    }

    /// Hex sha-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Validates everything and resolves the domain objects.
    pub fn build(&self) -> Result<ExperimentPlan> {
        if self.n == 0 {
            return Err(config_err("n", "node count must be >= 1"));
        }
        let function = self.function.to_function(self.n)?;
        if self.x.len() != self.n {
            return Err(config_err(
                "x",
                format!("expected length {}, got {}", self.n, self.x.len()),
            ));
        }
        let x = DVector::from_column_slice(&self.x);
        evaluate(&function, &x).map_err(|e| config_err("x", e.to_string()))?;

        let universe = build_universe(&self.universe.to_mode(), self.n)
            .map_err(|e| config_err("universe", e.to_string()))?;

        let chain_mode = match &self.chain.mode {
            ChainModeConfig::IidUniform => ChainMode::IidUniform,
            ChainModeConfig::Custom { p } => {
                if p.len() != universe.len() {
                    return Err(config_err(
                        "chain.P",
                        format!(
                            "expected a {s} x {s} matrix over the universe, got {} rows",
                            p.len(),
                            s = universe.len()
                        ),
                    ));
                }
                ChainMode::Custom(p.clone())
            }
        };

        let partition = NodePartition::from_one_based(self.n, &self.byzantine.ids)
            .map_err(|e| config_err("byzantine.ids", e.to_string()))?;

        // NaN must be rejected along with nonpositive values.
        if !self.perturb.delta.is_finite() || self.perturb.delta <= 0.0 {
            return Err(config_err("perturb.delta", "must be a positive number"));
        }
        if !self.perturb.zero_divisor_floor.is_finite() || self.perturb.zero_divisor_floor <= 0.0 {
            return Err(config_err(
                "perturb.zero_divisor_floor",
                "must be a positive number",
            ));
        }
        self.schedule
            .validate()
            .map_err(|e| config_err("schedule", e.to_string()))?;
        if self.run.replications == 0 {
            return Err(config_err("run.replications", "must be >= 1"));
        }

        Ok(ExperimentPlan {
            function,
            x,
            universe,
            partition,
            byzantine: self.byzantine.spec.clone(),
            chain_mode,
            chain_seed: self.chain.seed,
            perturb: self.perturb.clone(),
            schedule: self.schedule,
            run: self.run.clone(),
            base_seed: self.seed,
            config_hash: self.hash(),
        })
    }
}

/// A validated config with domain objects resolved.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub function: BlackBoxFunction,
    pub x: DVector<f64>,
    pub universe: ActivationUniverse,
    pub partition: NodePartition,
    pub byzantine: ByzantineSpec,
    pub chain_mode: ChainMode,
    pub chain_seed: Option<u64>,
    pub perturb: PerturbSettings,
    pub schedule: StepSchedule,
    pub run: RunConfig,
    pub base_seed: u64,
    pub config_hash: String,
}

impl ExperimentPlan {
    /// Setup for replication `r`.
    pub fn setup(&self, replication: u32) -> RunSetup {
        let seed = self.base_seed.wrapping_add(replication as u64);
        RunSetup {
            function: self.function.clone(),
            x: self.x.clone(),
            universe: self.universe.clone(),
            partition: self.partition.clone(),
            byzantine: self.byzantine.clone(),
            chain_mode: self.chain_mode.clone(),
            perturb: self.perturb.clone(),
            schedule: self.schedule,
            iterations: self.run.iterations,
            metrics_stride: self.run.metrics_stride,
            visited_only: self.run.visited_only,
            seed,
            chain_seed: self.chain_seed.unwrap_or(seed),
        }
    }
}
