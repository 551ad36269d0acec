//! Shared instance builders for the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use byzgrad_core::decode::{build_a1, StackedSystem};
use byzgrad_core::model::{build_universe, ActivationVector, UniverseMode};

/// Random m-column stacked system over `blocks` random activation patterns.
pub fn random_system(seed: u64, n: usize, blocks: usize, m: usize) -> StackedSystem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let members: Vec<ActivationVector> = (0..blocks)
        .map(|_| loop {
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if let Ok(v) = ActivationVector::new(bits) {
                break v;
            }
        })
        .collect();
    let universe = build_universe(&UniverseMode::Custom(members), n).expect("nonempty");
    let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.2..2.0));
    build_a1(&universe, &a).expect("dimensions agree")
}

/// Planted observations with a few corrupted rows.
pub fn corrupted_observations(sys: &StackedSystem, seed: u64, outliers: usize) -> DVector<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let v_star = DVector::from_fn(sys.m(), |_, _| rng.random_range(-3.0..3.0));
    let mut zbar = sys.a1() * &v_star;
    for _ in 0..outliers {
        let row = sys.nonzero_rows()[rng.random_range(0..sys.nonzero_rows().len())];
        zbar[row] += rng.random_range(5.0..50.0);
    }
    zbar
}
