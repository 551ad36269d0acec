//! The `byzgrad` command line: simulate experiments, report recoverability,
//! decode instances, run the four-panel scenario set, and sweep one config
//! key over several values.
//!
//! Exit codes: 0 success, 2 config errors (with the offending key path on
//! stderr), 1 runtime errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use byzgrad_core::decode::{
    check_recoverability, decode_enumerate, decode_subgradient, decode_weighted_median,
    max_tolerable_q, objective_j, StackedSystem,
};
use byzgrad_core::harness::{run_experiment, run_fig1, write_experiment, ExperimentConfig};
use byzgrad_core::model::{build_universe, ActivationVector, UniverseMode};
use byzgrad_core::oracle::factorize;
use byzgrad_core::{build_a1, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser)]
#[command(
    name = "byzgrad",
    version,
    about = "Byzantine-robust decentralized gradient estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment: seeded replications, per-replication
    /// CSVs, and a hash-checked aggregate CSV.
    Simulate {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the recoverability report for the configured system: q_max,
    /// both block bounds, and the per-q condition table as CSV.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode a JSON instance {A, universe, zbar} and print the minimizer.
    Decode {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run the four-panel scenario set (single/simultaneous activation,
    /// with/without two Byzantine nodes), ten replications each.
    Fig1 {
        #[arg(long, default_value = "fig1_out")]
        out: PathBuf,
    },
    /// Re-run the experiment once per value of one config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dot-separated key path, e.g. `perturb.delta` or `schedule.alpha`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values for the key.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<String>,
    },
}

/// Entry point used by `main` and by tests; writes results to `out`.
pub fn run_with<I, S, W>(argv: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit 0.
            let code = if e.exit_code() == 0 { EXIT_OK } else { EXIT_CONFIG };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    run_with(argv, &mut stdout)
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<(), Error> {
    match command {
        Command::Simulate { config, out: dir, seed } => simulate(&config, dir, seed, out),
        Command::Check { config } => check(&config, out),
        Command::Decode { instance } => decode(&instance, out),
        Command::Fig1 { out: dir } => fig1(&dir, out),
        Command::Sweep {
            config,
            param,
            values,
        } => sweep(&config, &param, &values, out),
    }
}

fn simulate(
    config_path: &Path,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    out: &mut impl Write,
) -> Result<(), Error> {
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let dir = out_dir
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = run_experiment(&config)?;
    write_experiment(&dir, &config, &result)?;
    let summary = serde_json::json!({
        "out_dir": dir,
        "config_hash": result.config_hash,
        "replications": result.replications.len(),
        "final_err_linf_mean": result.aggregate.last().map(|a| a.err_linf_mean),
    });
    writeln!(out, "{summary}")?;
    Ok(())
}

fn system_from_config(config: &ExperimentConfig) -> Result<StackedSystem, Error> {
    let plan = config.build()?;
    let factorization = factorize(&plan.function)?;
    build_a1(&plan.universe, factorization.a())
}

fn check(config_path: &Path, out: &mut impl Write) -> Result<(), Error> {
    let config = ExperimentConfig::from_path(config_path)?;
    let sys = system_from_config(&config)?;
    let max = max_tolerable_q(&sys)?;
    writeln!(out, "# config_hash: {}", config.hash())?;
    writeln!(out, "# q_max: {}", max.q_max)?;
    writeln!(out, "# block_bound: {}", max.block_bound)?;
    writeln!(out, "# effective_block_bound: {}", max.effective_block_bound)?;
    writeln!(out, "# exact: {}", max.exact)?;
    writeln!(out, "q,holds,exact")?;
    for q in 0..=sys.nonzero_rows().len() {
        let r = check_recoverability(&sys, q)?;
        writeln!(out, "{q},{},{}", r.holds, r.exact)?;
    }
    Ok(())
}

/// On-disk decoding instance.
#[derive(Debug, Deserialize)]
struct DecodingInstance {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    universe: Vec<ActivationVector>,
    zbar: Vec<f64>,
}

fn decode(instance_path: &Path, out: &mut impl Write) -> Result<(), Error> {
    let path = instance_path.display().to_string();
    let text = std::fs::read_to_string(instance_path).map_err(|e| Error::Config {
        path: path.clone(),
        message: format!("cannot read instance: {e}"),
    })?;
    let instance: DecodingInstance =
        serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.clone(),
            message: e.to_string(),
        })?;

    let n = instance.a.len();
    let m = instance.a.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || instance.a.iter().any(|row| row.len() != m) {
        return Err(Error::Config {
            path,
            message: "A must be a nonempty rectangular matrix".to_string(),
        });
    }
    let a = DMatrix::from_fn(n, m, |i, j| instance.a[i][j]);
    let universe = build_universe(&UniverseMode::Custom(instance.universe), n)
        .map_err(|e| Error::Config {
            path: path.clone(),
            message: format!("universe: {e}"),
        })?;
    let sys = build_a1(&universe, &a)?;
    if instance.zbar.len() != sys.rows() {
        return Err(Error::Config {
            path,
            message: format!(
                "zbar must have |universe| * n = {} entries, got {}",
                sys.rows(),
                instance.zbar.len()
            ),
        });
    }
    let zbar = DVector::from_column_slice(&instance.zbar);

    let (v, decoder) = if sys.m() == 1 {
        (decode_weighted_median(&sys, &zbar)?, "weighted_median")
    } else {
        match decode_enumerate(&sys, &zbar) {
            Ok(v) => (v, "enumerate"),
            // Enumeration bails out on size; fall back to the iterative
            // solver. Genuine rank deficiency still errors.
            Err(Error::Underdetermined(msg)) if msg.contains("enumeration limited") => {
                let res =
                    decode_subgradient(&sys, &zbar, &DVector::zeros(sys.m()), 1.0, 0.9, 100_000)?;
                (res.best, "subgradient")
            }
            Err(e) => return Err(e),
        }
    };
    let summary = serde_json::json!({
        "v": v.as_slice(),
        "objective": objective_j(&sys, &zbar, &v),
        "decoder": decoder,
    });
    writeln!(out, "{summary}")?;
    Ok(())
}

fn fig1(dir: &Path, out: &mut impl Write) -> Result<(), Error> {
    for (scenario, result) in run_fig1(dir)? {
        let summary = serde_json::json!({
            "scenario": scenario.name,
            "out_dir": dir.join(scenario.name),
            "config_hash": result.config_hash,
            "final_err_linf_mean": result.aggregate.last().map(|a| a.err_linf_mean),
        });
        writeln!(out, "{summary}")?;
    }
    Ok(())
}

fn set_json_path(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<(), Error> {
    let err = |message: String| Error::Config {
        path: path.to_string(),
        message,
    };
    let mut parts = path.split('.').peekable();
    let mut cursor = root;
    while let Some(part) = parts.next() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| err(format!("`{part}` is not inside a JSON object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Err(err("empty key path".to_string()))
}

fn sweep(
    config_path: &Path,
    param: &str,
    values: &[String],
    out: &mut impl Write,
) -> Result<(), Error> {
    let base_config = ExperimentConfig::from_path(config_path)?;
    let out_root = base_config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let base_json = serde_json::to_value(&base_config)?;

    for raw in values {
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut tree = base_json.clone();
        set_json_path(&mut tree, param, value)?;
        let config: ExperimentConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config {
                path: param.to_string(),
                message: format!("value {raw:?} does not fit the config: {e}"),
            })?;
        let slug: String = raw
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        let dir = out_root.join(format!("sweep_{}_{slug}", param.replace('.', "_")));
        let result = run_experiment(&config)?;
        write_experiment(&dir, &config, &result)?;
        let summary = serde_json::json!({
            "param": param,
            "value": raw,
            "out_dir": dir,
            "config_hash": result.config_hash,
            "final_err_linf_mean": result.aggregate.last().map(|a| a.err_linf_mean),
        });
        writeln!(out, "{summary}")?;
    }
    Ok(())
}
