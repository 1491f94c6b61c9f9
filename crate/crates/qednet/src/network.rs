//! Network representation, validation, fluid solve, and Halfin-Whitt
//! second-order (hat) parameters.
//!
//! A network is a bipartite tree of job classes and server pools. First-
//! order (fluid) data are the arrival rates lambda_i, service rates mu_ij,
//! and capacities nu_j; second-order data are the square-root-order
//! perturbations lambda_hat, mu_hat, nu_hat. A concrete finite system of
//! order n can be attached and is normalized to the same hat form.
//!
//! The fluid allocation xi* is the unique solution of
//!
//! ```text
//! sum_j mu_ij nu_j xi_ij = lambda_i   for every class i
//! sum_i xi_ij            = 1          for every pool j
//! ```
//!
//! on the tree (critical load makes exactly one of these I + J equations
//! redundant). Complete resource pooling requires every xi*_ij > 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Node, Topology};

/// One service edge of the spec file: pool can serve class at rate `mu`,
/// with square-root-order rate perturbation `mu_hat`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub class: String,
    pub pool: String,
    pub mu: f64,
    #[serde(default)]
    pub mu_hat: f64,
}

/// Service rate of one edge in a concrete nth system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NthEdgeRate {
    pub class: String,
    pub pool: String,
    pub mu: f64,
}

/// Concrete finite system attached to a spec: arrival rates, service
/// rates, and integer server counts for one system order n.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NthSpec {
    pub n: u64,
    pub lambda_n: BTreeMap<String, f64>,
    pub mu_n: Vec<NthEdgeRate>,
    #[serde(rename = "N_n")]
    pub cap_n: BTreeMap<String, u64>,
}

/// On-disk network description. Identifiers are strings; all rates are
/// plain numbers. `lambda_hat` and `nu_hat` default to zero maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub classes: Vec<String>,
    pub pools: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub lambda: BTreeMap<String, f64>,
    #[serde(default)]
    pub lambda_hat: BTreeMap<String, f64>,
    pub nu: BTreeMap<String, f64>,
    #[serde(default)]
    pub nu_hat: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nth: Option<NthSpec>,
}

/// Parameters of a concrete nth system, indexed like the validated
/// network (per-class, per-edge, per-pool vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct NthSystemParams {
    pub n: u64,
    pub lambda_n: Vec<f64>,
    pub mu_n: Vec<f64>,
    pub cap_n: Vec<u64>,
}

/// Hat (square-root-order) parameters of an nth system, recovered from
/// its concrete rates, plus the per-pool theta driving the staffing
/// program.
#[derive(Debug, Clone, PartialEq)]
pub struct HatParams {
    pub lambda_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub theta: Vec<f64>,
}

/// A validated network: tree topology plus densely indexed parameters.
#[derive(Debug, Clone)]
pub struct ValidatedNetwork {
    class_ids: Vec<String>,
    pool_ids: Vec<String>,
    topo: Topology,
    lambda: Vec<f64>,
    lambda_hat: Vec<f64>,
    nu: Vec<f64>,
    nu_hat: Vec<f64>,
    mu: Vec<f64>,
    mu_hat: Vec<f64>,
    nth: Option<NthSystemParams>,
}

/// The fluid allocation and derived steady-state fluid quantities.
#[derive(Debug, Clone)]
pub struct FluidSolution {
    /// Per-edge allocation fraction xi*_ij in (0, 1].
    pub xi_star: Vec<f64>,
    /// Per-edge fluid occupancy z*_ij = xi*_ij nu_j.
    pub z_star: Vec<f64>,
    /// Per-class fluid headcount x*_i = sum_j xi*_ij nu_j.
    pub x_star: Vec<f64>,
    /// Residual of the redundant equation, surfaced in reports.
    pub criticality_residual: f64,
}

impl NetworkSpec {
    /// Parses a spec from JSON.
    pub fn from_json(text: &str) -> Result<NetworkSpec> {
        serde_json::from_str(text).map_err(|e| Error::SpecParse(e.to_string()))
    }

    /// Serializes the spec to pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Checks identifiers, positivity, and the tree property, producing a
    /// densely indexed network.
    pub fn validate(&self) -> Result<ValidatedNetwork> {
        let class_index: BTreeMap<&str, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        let pool_index: BTreeMap<&str, usize> = self
            .pools
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        if class_index.len() != self.classes.len() {
            return Err(Error::SpecParse("duplicate class identifier".into()));
        }
        if pool_index.len() != self.pools.len() {
            return Err(Error::SpecParse("duplicate pool identifier".into()));
        }

        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let &i = class_index
                .get(e.class.as_str())
                .ok_or_else(|| Error::SpecParse(format!("edge names unknown class '{}'", e.class)))?;
            let &j = pool_index
                .get(e.pool.as_str())
                .ok_or_else(|| Error::SpecParse(format!("edge names unknown pool '{}'", e.pool)))?;
            edges.push((i, j));
        }
        {
            let mut sorted = edges.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != edges.len() {
                return Err(Error::SpecParse("duplicate edge declaration".into()));
            }
        }
        let topo = Topology::new(self.classes.len(), self.pools.len(), edges)?;

        // Edge rates land in the topology's lexicographic edge order.
        let mut mu = vec![f64::NAN; topo.n_edges()];
        let mut mu_hat = vec![0.0; topo.n_edges()];
        for e in &self.edges {
            let i = class_index[e.class.as_str()];
            let j = pool_index[e.pool.as_str()];
            let idx = topo.edge_index(i, j).expect("edge was inserted above");
            if !(e.mu > 0.0) {
                return Err(Error::NonPositiveParameter(format!(
                    "mu[{}, {}] = {}",
                    e.class, e.pool, e.mu
                )));
            }
            mu[idx] = e.mu;
            mu_hat[idx] = e.mu_hat;
        }
        if mu.iter().any(|m| m.is_nan()) {
            return Err(Error::EdgeRateMissing("an edge has no mu".into()));
        }

        let lambda = gather(&self.lambda, &self.classes, "lambda", true)?;
        let lambda_hat = gather_or_zero(&self.lambda_hat, &self.classes, "lambda_hat")?;
        let nu = gather(&self.nu, &self.pools, "nu", true)?;
        let nu_hat = gather_or_zero(&self.nu_hat, &self.pools, "nu_hat")?;

        let nth = match &self.nth {
            None => None,
            Some(raw) => {
                if raw.n == 0 {
                    return Err(Error::NonPositiveParameter("nth.n = 0".into()));
                }
                let lambda_n = gather(&raw.lambda_n, &self.classes, "nth.lambda_n", true)?;
                let mut mu_n = vec![f64::NAN; topo.n_edges()];
                for r in &raw.mu_n {
                    let &i = class_index.get(r.class.as_str()).ok_or_else(|| {
                        Error::SpecParse(format!("nth.mu_n names unknown class '{}'", r.class))
                    })?;
                    let &j = pool_index.get(r.pool.as_str()).ok_or_else(|| {
                        Error::SpecParse(format!("nth.mu_n names unknown pool '{}'", r.pool))
                    })?;
                    let idx = topo.edge_index(i, j).ok_or_else(|| {
                        Error::EdgeRateMissing(format!("nth.mu_n rate on non-edge ({}, {})", r.class, r.pool))
                    })?;
                    if !(r.mu > 0.0) {
                        return Err(Error::NonPositiveParameter(format!(
                            "nth.mu_n[{}, {}] = {}",
                            r.class, r.pool, r.mu
                        )));
                    }
                    mu_n[idx] = r.mu;
                }
                if mu_n.iter().any(|m| m.is_nan()) {
                    return Err(Error::EdgeRateMissing("nth.mu_n misses an edge".into()));
                }
                let mut cap_n = Vec::with_capacity(self.pools.len());
                for p in &self.pools {
                    let c = *raw
                        .cap_n
                        .get(p)
                        .ok_or_else(|| Error::SpecParse(format!("nth.N_n misses pool '{p}'")))?;
                    if c == 0 {
                        return Err(Error::NonPositiveParameter(format!("nth.N_n[{p}] = 0")));
                    }
                    cap_n.push(c);
                }
                Some(NthSystemParams {
                    n: raw.n,
                    lambda_n,
                    mu_n,
                    cap_n,
                })
            }
        };

        Ok(ValidatedNetwork {
            class_ids: self.classes.clone(),
            pool_ids: self.pools.clone(),
            topo,
            lambda,
            lambda_hat,
            nu,
            nu_hat,
            mu,
            mu_hat,
            nth,
        })
    }
}

fn gather(
    map: &BTreeMap<String, f64>,
    ids: &[String],
    what: &str,
    require_positive: bool,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let v = *map
            .get(id)
            .ok_or_else(|| Error::SpecParse(format!("{what} misses '{id}'")))?;
        if require_positive && !(v > 0.0) {
            return Err(Error::NonPositiveParameter(format!("{what}[{id}] = {v}")));
        }
        if !v.is_finite() {
            return Err(Error::SpecParse(format!("{what}[{id}] is not finite")));
        }
        out.push(v);
    }
    if map.keys().any(|k| !ids.contains(k)) {
        return Err(Error::SpecParse(format!("{what} names an unknown identifier")));
    }
    Ok(out)
}

fn gather_or_zero(map: &BTreeMap<String, f64>, ids: &[String], what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let v = map.get(id).copied().unwrap_or(0.0);
        if !v.is_finite() {
            return Err(Error::SpecParse(format!("{what}[{id}] is not finite")));
        }
        out.push(v);
    }
    if map.keys().any(|k| !ids.contains(k)) {
        return Err(Error::SpecParse(format!("{what} names an unknown identifier")));
    }
    Ok(out)
}

impl ValidatedNetwork {
    pub fn n_classes(&self) -> usize {
        self.topo.n_classes()
    }

    pub fn n_pools(&self) -> usize {
        self.topo.n_pools()
    }

    pub fn n_edges(&self) -> usize {
        self.topo.n_edges()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn pool_ids(&self) -> &[String] {
        &self.pool_ids
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn nu_hat(&self) -> &[f64] {
        &self.nu_hat
    }

    /// Per-edge service rates in topology edge order.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_hat(&self) -> &[f64] {
        &self.mu_hat
    }

    pub fn nth(&self) -> Option<&NthSystemParams> {
        self.nth.as_ref()
    }

    /// Reconstructs the on-disk spec form (inverse of `validate`).
    pub fn to_spec(&self) -> NetworkSpec {
        let zip_map = |ids: &[String], vals: &[f64]| -> BTreeMap<String, f64> {
            ids.iter().cloned().zip(vals.iter().copied()).collect()
        };
        let edges = self
            .topo
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| EdgeSpec {
                class: self.class_ids[i].clone(),
                pool: self.pool_ids[j].clone(),
                mu: self.mu[e],
                mu_hat: self.mu_hat[e],
            })
            .collect();
        let nth = self.nth.as_ref().map(|nth| NthSpec {
            n: nth.n,
            lambda_n: zip_map(&self.class_ids, &nth.lambda_n),
            mu_n: self
                .topo
                .edges()
                .iter()
                .enumerate()
                .map(|(e, &(i, j))| NthEdgeRate {
                    class: self.class_ids[i].clone(),
                    pool: self.pool_ids[j].clone(),
                    mu: nth.mu_n[e],
                })
                .collect(),
            cap_n: self
                .pool_ids
                .iter()
                .cloned()
                .zip(nth.cap_n.iter().copied())
                .collect(),
        });
        NetworkSpec {
            classes: self.class_ids.clone(),
            pools: self.pool_ids.clone(),
            edges,
            lambda: zip_map(&self.class_ids, &self.lambda),
            lambda_hat: zip_map(&self.class_ids, &self.lambda_hat),
            nu: zip_map(&self.pool_ids, &self.nu),
            nu_hat: zip_map(&self.pool_ids, &self.nu_hat),
            nth,
        }
    }

    /// Copy with replaced second-order capacities (used by reallocation).
    pub fn with_nu_hat(&self, nu_hat: Vec<f64>) -> ValidatedNetwork {
        assert_eq!(nu_hat.len(), self.n_pools());
        ValidatedNetwork {
            nu_hat,
            ..self.clone()
        }
    }

    /// Copy with a different attached nth system.
    pub fn with_nth(&self, nth: Option<NthSystemParams>) -> ValidatedNetwork {
        ValidatedNetwork {
            nth,
            ..self.clone()
        }
    }

    /// Synthesizes a concrete nth system from the limiting parameters:
    /// `lambda^n = n lambda + sqrt(n) lambda_hat`, `mu^n = mu +
    /// mu_hat/sqrt(n)`, `N^n_j = floor(n nu_j + sqrt(n) nu_hat_j)`.
    pub fn nth_from_order(&self, n: u64) -> Result<NthSystemParams> {
        if n == 0 {
            return Err(Error::NonPositiveParameter("system order n = 0".into()));
        }
        let s = (n as f64).sqrt();
        let lambda_n: Vec<f64> = self
            .lambda
            .iter()
            .zip(&self.lambda_hat)
            .map(|(l, lh)| n as f64 * l + s * lh)
            .collect();
        if let Some(i) = lambda_n.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::NTooSmall(format!(
                "lambda^n[{}] = {} is not positive at n = {n}",
                self.class_ids[i], lambda_n[i]
            )));
        }
        let mu_n: Vec<f64> = self
            .mu
            .iter()
            .zip(&self.mu_hat)
            .map(|(m, mh)| m + mh / s)
            .collect();
        if let Some(e) = mu_n.iter().position(|&m| !(m > 0.0)) {
            let (i, j) = self.topo.edges()[e];
            return Err(Error::NTooSmall(format!(
                "mu^n[{}, {}] = {} is not positive at n = {n}",
                self.class_ids[i], self.pool_ids[j], mu_n[e]
            )));
        }
        let mut cap_n = Vec::with_capacity(self.n_pools());
        for j in 0..self.n_pools() {
            let target = n as f64 * self.nu[j] + s * self.nu_hat[j];
            if target < 1.0 {
                return Err(Error::NTooSmall(format!(
                    "N^n[{}] would be {target:.3} at n = {n}",
                    self.pool_ids[j]
                )));
            }
            cap_n.push(target.floor() as u64);
        }
        Ok(NthSystemParams {
            n,
            lambda_n,
            mu_n,
            cap_n,
        })
    }

    /// Solves the fluid allocation by leaf elimination and verifies the
    /// critical-load and complete-resource-pooling conditions.
    pub fn solve_fluid(&self) -> Result<FluidSolution> {
        let topo = &self.topo;
        let w: Vec<f64> = topo
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(_, j))| self.mu[e] * self.nu[j])
            .collect();
        let ones = vec![1.0; self.n_pools()];
        let (xi, residual) = topo.solve_tree_system(&w, &self.lambda, &ones);

        // The redundant equation's scale: class equations are in lambda
        // units, pool equations in allocation (order one) units.
        let scale = match topo.residual_root() {
            Node::Class(_) => 1.0 + self.lambda.iter().sum::<f64>(),
            Node::Pool(_) => 2.0,
        };
        let tol = 1e-9 * scale;
        if residual.abs() > tol {
            return Err(Error::NotCriticallyLoaded {
                residual: residual.abs(),
                tol,
            });
        }
        for (e, &x) in xi.iter().enumerate() {
            if !(x > 0.0) {
                let (i, j) = topo.edges()[e];
                return Err(Error::CrpViolated {
                    class: i,
                    pool: j,
                    xi: x,
                });
            }
        }

        let z_star: Vec<f64> = xi
            .iter()
            .enumerate()
            .map(|(e, &x)| x * self.nu[topo.edges()[e].1])
            .collect();
        let mut x_star = vec![0.0; self.n_classes()];
        for (e, &(i, _)) in topo.edges().iter().enumerate() {
            x_star[i] += z_star[e];
        }
        let fluid = FluidSolution {
            xi_star: xi,
            z_star,
            x_star,
            criticality_residual: residual.abs(),
        };
        self.check_fluid_invariants(&fluid)?;
        Ok(fluid)
    }

    /// Verifies the four fluid-solution invariants at 1e-9 tolerances.
    fn check_fluid_invariants(&self, fluid: &FluidSolution) -> Result<()> {
        let topo = &self.topo;
        for j in 0..self.n_pools() {
            let col: f64 = topo.pool_edges(j).iter().map(|&e| fluid.xi_star[e]).sum();
            if (col - 1.0).abs() > 1e-9 {
                return Err(Error::NotCriticallyLoaded {
                    residual: (col - 1.0).abs(),
                    tol: 1e-9,
                });
            }
        }
        for i in 0..self.n_classes() {
            let row: f64 = topo
                .class_edges(i)
                .iter()
                .map(|&e| self.mu[e] * self.nu[topo.edges()[e].1] * fluid.xi_star[e])
                .sum();
            if (row - self.lambda[i]).abs() > 1e-9 * (1.0 + self.lambda[i].abs()) {
                return Err(Error::NotCriticallyLoaded {
                    residual: (row - self.lambda[i]).abs(),
                    tol: 1e-9 * (1.0 + self.lambda[i].abs()),
                });
            }
        }
        let total_x: f64 = fluid.x_star.iter().sum();
        let total_nu: f64 = self.nu.iter().sum();
        if (total_x - total_nu).abs() > 1e-9 * (1.0 + total_nu) {
            return Err(Error::NotCriticallyLoaded {
                residual: (total_x - total_nu).abs(),
                tol: 1e-9 * (1.0 + total_nu),
            });
        }
        Ok(())
    }

    /// Per-pool theta for the limiting program:
    /// `theta_j = nu_hat_j + sum_i (mu_hat_ij / mu_ij) z*_ij`.
    pub fn theta(&self, fluid: &FluidSolution) -> Vec<f64> {
        let mut theta = self.nu_hat.clone();
        for (e, &(_, j)) in self.topo.edges().iter().enumerate() {
            theta[j] += self.mu_hat[e] / self.mu[e] * fluid.z_star[e];
        }
        theta
    }

    /// Hat parameters of the attached nth system:
    /// `lambda_hat^n = (lambda^n - n lambda)/sqrt(n)`, `nu_hat^n =
    /// sqrt(n)(N^n/n - nu)`, `mu_hat^n = sqrt(n)(mu^n - mu)`, and
    /// `theta^n_j = nu_hat^n_j + sum_i (mu_hat^n_ij/mu^n_ij) z*_ij`.
    pub fn derive_hat_params(&self, nth: &NthSystemParams, fluid: &FluidSolution) -> HatParams {
        let n = nth.n as f64;
        let s = n.sqrt();
        let lambda_hat: Vec<f64> = nth
            .lambda_n
            .iter()
            .zip(&self.lambda)
            .map(|(ln, l)| (ln - n * l) / s)
            .collect();
        let mu_hat: Vec<f64> = nth
            .mu_n
            .iter()
            .zip(&self.mu)
            .map(|(mn, m)| s * (mn - m))
            .collect();
        let nu_hat: Vec<f64> = nth
            .cap_n
            .iter()
            .zip(&self.nu)
            .map(|(&c, v)| s * (c as f64 / n - v))
            .collect();
        let mut theta = nu_hat.clone();
        for (e, &(_, j)) in self.topo.edges().iter().enumerate() {
            theta[j] += mu_hat[e] / nth.mu_n[e] * fluid.z_star[e];
        }
        HatParams {
            lambda_hat,
            mu_hat,
            nu_hat,
            theta,
        }
    }
}

/// The canonical small demo network: an N-shaped system with two classes
/// and two pools where pool 2 helps class 1, critically loaded with one
/// unit of square-root safety capacity at each pool.
pub fn n_network_demo() -> NetworkSpec {
    NetworkSpec {
        classes: vec!["1".into(), "2".into()],
        pools: vec!["1".into(), "2".into()],
        edges: vec![
            EdgeSpec {
                class: "1".into(),
                pool: "1".into(),
                mu: 1.0,
                mu_hat: 0.0,
            },
            EdgeSpec {
                class: "1".into(),
                pool: "2".into(),
                mu: 2.0,
                mu_hat: 0.0,
            },
            EdgeSpec {
                class: "2".into(),
                pool: "2".into(),
                mu: 1.0,
                mu_hat: 0.0,
            },
        ],
        lambda: BTreeMap::from([("1".into(), 2.0), ("2".into(), 0.5)]),
        lambda_hat: BTreeMap::from([("1".into(), 0.0), ("2".into(), 0.0)]),
        nu: BTreeMap::from([("1".into(), 1.0), ("2".into(), 1.0)]),
        nu_hat: BTreeMap::from([("1".into(), 1.0), ("2".into(), 1.0)]),
        nth: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture() -> ValidatedNetwork {
        n_network_demo().validate().unwrap()
    }

    #[test]
    fn validates_the_demo_network() {
        let net = fixture();
        assert_eq!(net.n_classes(), 2);
        assert_eq!(net.n_pools(), 2);
        assert_eq!(
            net.topology().pools_of(0).collect::<Vec<_>>(),
            vec![0, 1],
            "class 1 is served by both pools"
        );
        assert_eq!(
            net.topology().classes_of(1).collect::<Vec<_>>(),
            vec![0, 1],
            "pool 2 serves both classes"
        );
    }

    #[test]
    fn fluid_solution_matches_hand_solve() {
        let net = fixture();
        let fluid = net.solve_fluid().unwrap();
        let expect_xi = [1.0, 0.5, 0.5];
        for (e, &xi) in fluid.xi_star.iter().enumerate() {
            assert!((xi - expect_xi[e]).abs() < 1e-12);
        }
        assert!((fluid.x_star[0] - 1.5).abs() < 1e-12);
        assert!((fluid.x_star[1] - 0.5).abs() < 1e-12);
        assert_eq!(net.theta(&fluid), vec![1.0, 1.0]);
    }

    #[test]
    fn single_edge_network_is_forced() {
        let spec = NetworkSpec {
            classes: vec!["a".into()],
            pools: vec!["p".into()],
            edges: vec![EdgeSpec {
                class: "a".into(),
                pool: "p".into(),
                mu: 3.0,
                mu_hat: 0.0,
            }],
            lambda: BTreeMap::from([("a".into(), 6.0)]),
            lambda_hat: BTreeMap::new(),
            nu: BTreeMap::from([("p".into(), 2.0)]),
            nu_hat: BTreeMap::new(),
            nth: None,
        };
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        assert!((fluid.xi_star[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overloaded_network_is_rejected() {
        let mut spec = n_network_demo();
        spec.lambda.insert("1".into(), 3.0);
        let net = spec.validate().unwrap();
        let err = net.solve_fluid().unwrap_err();
        assert!(matches!(err, Error::NotCriticallyLoaded { .. }));
    }

    #[test]
    fn hat_params_match_definition_arithmetic() {
        let mut spec = n_network_demo();
        spec.nth = Some(NthSpec {
            n: 100,
            lambda_n: BTreeMap::from([("1".into(), 200.0), ("2".into(), 50.0)]),
            mu_n: vec![
                NthEdgeRate {
                    class: "1".into(),
                    pool: "1".into(),
                    mu: 1.0,
                },
                NthEdgeRate {
                    class: "1".into(),
                    pool: "2".into(),
                    mu: 2.0,
                },
                NthEdgeRate {
                    class: "2".into(),
                    pool: "2".into(),
                    mu: 1.0,
                },
            ],
            cap_n: BTreeMap::from([("1".into(), 110), ("2".into(), 110)]),
        });
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let hats = net.derive_hat_params(net.nth().unwrap(), &fluid);
        assert_eq!(hats.lambda_hat, vec![0.0, 0.0]);
        assert_eq!(hats.mu_hat, vec![0.0, 0.0, 0.0]);
        for j in 0..2 {
            assert!((hats.nu_hat[j] - 1.0).abs() < 1e-12);
            assert!((hats.theta[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_scaling_gives_zero_hats() {
        let net = fixture();
        let fluid = net.solve_fluid().unwrap();
        let nth = NthSystemParams {
            n: 49,
            lambda_n: vec![49.0 * 2.0, 49.0 * 0.5],
            mu_n: net.mu().to_vec(),
            cap_n: vec![49, 49],
        };
        let hats = net.derive_hat_params(&nth, &fluid);
        assert!(hats.lambda_hat.iter().all(|&x| x.abs() < 1e-12));
        assert!(hats.nu_hat.iter().all(|&x| x.abs() < 1e-12));
        assert!(hats.theta.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn hat_derivation_inverts_reconstruction() {
        let net = fixture();
        let fluid = net.solve_fluid().unwrap();
        let nth = net.nth_from_order(400).unwrap();
        let hats = net.derive_hat_params(&nth, &fluid);
        let n = 400.0f64;
        let s = n.sqrt();
        for i in 0..net.n_classes() {
            let rebuilt = n * net.lambda()[i] + s * hats.lambda_hat[i];
            assert!((rebuilt - nth.lambda_n[i]).abs() < 1e-9 * (1.0 + rebuilt.abs()));
        }
        for e in 0..net.n_edges() {
            let rebuilt = net.mu()[e] + hats.mu_hat[e] / s;
            assert!((rebuilt - nth.mu_n[e]).abs() < 1e-12);
        }
        for j in 0..net.n_pools() {
            let rebuilt = n * net.nu()[j] + s * hats.nu_hat[j];
            assert!((rebuilt - nth.cap_n[j] as f64).abs() < 1e-9 * (1.0 + rebuilt));
        }
    }

    #[test]
    fn rejects_malformed_spec_json() {
        assert!(matches!(
            NetworkSpec::from_json("{ not json"),
            Err(Error::SpecParse(_))
        ));
        // Unknown field.
        assert!(matches!(
            NetworkSpec::from_json(r#"{"classes":["1"],"pools":["1"],"edges":[],"lambda":{},"nu":{},"bogus":1}"#),
            Err(Error::SpecParse(_))
        ));
    }
}
