//! The four-panel scenario set: 6 capacity-sharing nodes, single vs
//! simultaneous activation, with and without two Byzantine nodes.

use std::path::Path;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{run_experiment, write_experiment, ExperimentResult};

/// Base seed shared by the four panels; replication `r` runs at `seed + r`.
pub const FIG1_BASE_SEED: u64 = 11;

#[derive(Debug, Clone)]
pub struct Fig1Scenario {
    pub name: &'static str,
    pub config: ExperimentConfig,
}

fn panel(name: &'static str, universe_mode: &str, byzantine: bool) -> Fig1Scenario {
    let byz_section = if byzantine {
        r#""byzantine": {"ids": [5, 6], "strategy": "constant_offset", "params": {"M": 10.0}},"#
    } else {
        ""
    };
    let json = format!(
        r#"{{
            "n": 6,
            "function": {{"kind": "capacity", "C": 10.0}},
            "x": [1, 1, 1, 1, 1, 1],
            "universe": {{"mode": "{universe_mode}"}},
            {byz_section}
            "perturb": {{"delta": 0.01}},
            "run": {{"iterations": 200000, "metrics_stride": 200, "replications": 10}},
            "seed": {FIG1_BASE_SEED}
        }}"#
    );
    Fig1Scenario {
        name,
        config: ExperimentConfig::from_json(&json).expect("builtin scenario parses"),
    }
}

/// The four panels: no Byzantine nodes vs two Byzantine nodes, one node
/// active at a time vs every nonempty subset.
pub fn fig1_scenarios() -> Vec<Fig1Scenario> {
    vec![
        panel("single_no_byzantine", "singletons", false),
        panel("simultaneous_no_byzantine", "all_nonempty_subsets", false),
        panel("single_two_byzantine", "singletons", true),
        panel("simultaneous_two_byzantine", "all_nonempty_subsets", true),
    ]
}

/// Runs all four panels, writing each scenario's replication CSVs,
/// aggregate CSV, and config JSON under `out/<scenario name>/`.
pub fn run_fig1(out: &Path) -> Result<Vec<(Fig1Scenario, ExperimentResult)>> {
    let mut results = Vec::new();
    for scenario in fig1_scenarios() {
        let result = run_experiment(&scenario.config)?;
        write_experiment(&out.join(scenario.name), &scenario.config, &result)?;
        results.push((scenario, result));
    }
    Ok(results)
}
