//! Non-robust baseline: trust every broadcast and average it per node.

use crate::error::{Error, Result};
use crate::perturb::PerturbationRound;

/// Streaming per-node average of reported observations over the rounds in
/// which the node was active.
#[derive(Debug, Clone)]
pub struct PerNodeAverages {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl PerNodeAverages {
    pub fn new(n: usize) -> Self {
        Self {
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    pub fn update(&mut self, round: &PerturbationRound) {
        for i in round.u.active_nodes() {
            self.sums[i] += round.z[i];
            self.counts[i] += 1;
        }
    }

    /// Per-node averages; `None` flags a node that was never active.
    pub fn estimate(&self) -> Vec<Option<f64>> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }
}

/// Per-node running average of `z_i` over the rounds where node `i` was
/// active. Trusts Byzantine reports, which is the point of the baseline.
pub fn naive_estimate(rounds: &[PerturbationRound]) -> Result<Vec<Option<f64>>> {
    let first = rounds.first().ok_or(Error::EmptyRounds)?;
    let mut acc = PerNodeAverages::new(first.u.len());
    for round in rounds {
        acc.update(round);
    }
    Ok(acc.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActivationVector, NodePartition};
    use crate::oracle::BlackBoxFunction;
    use crate::perturb::{run_round, ByzantineSpec, PerturbSettings, RoundStreams};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn empty_rounds_is_an_error() {
        assert!(matches!(naive_estimate(&[]), Err(Error::EmptyRounds)));
    }

    #[test]
    fn averages_converge_to_linear_gradient() {
        let f = BlackBoxFunction::linear(vec![1.0, -2.0]);
        let x = DVector::zeros(2);
        let u = ActivationVector::from_ints(&[1, 1]).unwrap();
        let p = NodePartition::all_good(2);
        let byz = ByzantineSpec::obedient();
        let streams = RoundStreams::new(17);
        let settings = PerturbSettings::default();
        let rounds: Vec<_> = (0..20_000)
            .map(|k| run_round(k, &x, &u, &settings, &p, &byz, &f, &streams).unwrap())
            .collect();
        let est = naive_estimate(&rounds).unwrap();
        // Cross terms average out at the Monte Carlo rate.
        assert_abs_diff_eq!(est[0].unwrap(), 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(est[1].unwrap(), -2.0, epsilon = 0.05);
    }

    #[test]
    fn never_active_nodes_are_flagged() {
        let f = BlackBoxFunction::linear(vec![1.0, -2.0, 0.5]);
        let x = DVector::zeros(3);
        let u = ActivationVector::from_ints(&[1, 1, 0]).unwrap();
        let p = NodePartition::all_good(3);
        let streams = RoundStreams::new(1);
        let round = run_round(
            0,
            &x,
            &u,
            &PerturbSettings::default(),
            &p,
            &ByzantineSpec::obedient(),
            &f,
            &streams,
        )
        .unwrap();
        let est = naive_estimate(&[round]).unwrap();
        assert!(est[0].is_some() && est[1].is_some());
        assert!(est[2].is_none());
    }

    #[test]
    fn streaming_matches_batch() {
        let f = BlackBoxFunction::linear(vec![0.3, 1.0]);
        let x = DVector::zeros(2);
        let u = ActivationVector::from_ints(&[1, 1]).unwrap();
        let p = NodePartition::from_one_based(2, &[1]).unwrap();
        let byz = ByzantineSpec::constant_offset(4.0);
        let streams = RoundStreams::new(5);
        let settings = PerturbSettings::default();
        let rounds: Vec<_> = (0..64)
            .map(|k| run_round(k, &x, &u, &settings, &p, &byz, &f, &streams).unwrap())
            .collect();
        let mut acc = PerNodeAverages::new(2);
        for r in &rounds {
            acc.update(r);
        }
        assert_eq!(acc.estimate(), naive_estimate(&rounds).unwrap());
    }
}
