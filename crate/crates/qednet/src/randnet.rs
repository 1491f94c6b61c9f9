//! Seeded random generation of admissible networks.
//!
//! Trees are grown by random attachment (each new node picks a uniform
//! parent of the other kind), rates are log-uniform, and the arrival
//! vector is backed out of a randomly chosen positive flow split, so
//! every generated network is critically loaded with complete resource
//! pooling by construction. Everything is deterministic in the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

use crate::network::{EdgeSpec, NetworkSpec};

/// Log-uniform draw on [0.5, 4].
fn rate<R: Rng>(rng: &mut R) -> f64 {
    (rng.random_range(0.5f64.ln()..4f64.ln())).exp()
}

/// A positive vector on the simplex with entries bounded away from zero
/// (each raw weight is uniform on [0.1, 1] before normalization).
pub fn random_simplex_with<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// A random critically loaded tree network with 1..=8 classes and pools,
/// second-order perturbations uniform on [-1, 1], and no concrete nth
/// system attached.
pub fn random_network(seed: u64) -> NetworkSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    random_network_with(&mut rng)
}

/// As `random_network`, drawing from a caller-owned generator.
pub fn random_network_with<R: Rng>(rng: &mut R) -> NetworkSpec {
    let n_classes = rng.random_range(1..=8usize);
    let n_pools = rng.random_range(1..=8usize);

    // Random attachment order: class 0, then pool 0, then the rest
    // shuffled; every later node can attach to either kind.
    #[derive(Clone, Copy)]
    enum Pending {
        Class(usize),
        Pool(usize),
    }
    let mut pending: Vec<Pending> = (1..n_classes)
        .map(Pending::Class)
        .chain((1..n_pools).map(Pending::Pool))
        .collect();
    for k in (1..pending.len()).rev() {
        let swap = rng.random_range(0..=k);
        pending.swap(k, swap);
    }

    let mut classes_in = vec![0usize];
    let mut pools_in = vec![0usize];
    let mut edges: Vec<(usize, usize)> = vec![(0, 0)];
    for node in pending {
        match node {
            Pending::Class(i) => {
                let j = pools_in[rng.random_range(0..pools_in.len())];
                edges.push((i, j));
                classes_in.push(i);
            }
            Pending::Pool(j) => {
                let i = classes_in[rng.random_range(0..classes_in.len())];
                edges.push((i, j));
                pools_in.push(j);
            }
        }
    }
    edges.sort_unstable();

    let mu: Vec<f64> = edges.iter().map(|_| rate(rng)).collect();
    let nu: Vec<f64> = (0..n_pools).map(|_| rate(rng)).collect();

    // Choose the flow split per pool, then back the arrival rates out of
    // the balance equations, which makes the split optimal.
    let mut xi = vec![0.0; edges.len()];
    for j in 0..n_pools {
        let members: Vec<usize> = edges
            .iter()
            .enumerate()
            .filter(|(_, &(_, ej))| ej == j)
            .map(|(e, _)| e)
            .collect();
        let split = random_simplex_with(rng, members.len());
        for (k, &e) in members.iter().enumerate() {
            xi[e] = split[k];
        }
    }
    let mut lambda = vec![0.0; n_classes];
    for (e, &(i, j)) in edges.iter().enumerate() {
        lambda[i] += mu[e] * nu[j] * xi[e];
    }

    let class_id = |i: usize| format!("c{i}");
    let pool_id = |j: usize| format!("p{j}");
    NetworkSpec {
        classes: (0..n_classes).map(class_id).collect(),
        pools: (0..n_pools).map(pool_id).collect(),
        edges: edges
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| EdgeSpec {
                class: class_id(i),
                pool: pool_id(j),
                mu: mu[e],
                mu_hat: rng.random_range(-1.0..1.0),
            })
            .collect(),
        lambda: (0..n_classes)
            .map(|i| (class_id(i), lambda[i]))
            .collect::<BTreeMap<_, _>>(),
        lambda_hat: (0..n_classes)
            .map(|i| (class_id(i), rng.random_range(-1.0..1.0)))
            .collect(),
        nu: (0..n_pools).map(|j| (pool_id(j), nu[j])).collect(),
        nu_hat: (0..n_pools)
            .map(|j| (pool_id(j), rng.random_range(-1.0..1.0)))
            .collect(),
        nth: None,
    }
}
