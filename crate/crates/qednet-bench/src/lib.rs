//! Shared fixtures for the benchmark targets: deterministic networks of
//! several sizes, already validated.

use qednet::network::{NetworkSpec, ValidatedNetwork};

/// The two-class, two-pool demo network.
pub fn small() -> ValidatedNetwork {
    qednet::network::n_network_demo().validate().unwrap()
}

/// A seeded random tree with the generator's full size range (up to
/// eight classes and pools).
pub fn seeded(seed: u64) -> ValidatedNetwork {
    qednet::random_network(seed).validate().unwrap()
}

/// The first seeded network with exactly the requested node counts, so
/// size sweeps measure topology growth and not seed luck.
pub fn sized(classes: usize, pools: usize) -> ValidatedNetwork {
    for seed in 0..10_000 {
        let spec: NetworkSpec = qednet::random_network(seed);
        if spec.classes.len() == classes && spec.pools.len() == pools {
            return spec.validate().unwrap();
        }
    }
    panic!("no generated network with {classes} classes and {pools} pools in 10000 seeds");
}
