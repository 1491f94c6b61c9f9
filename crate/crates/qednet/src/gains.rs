//! Path gains, the system-wide safety staffing (SWSS) parameter, and the
//! square-root-order capacity reallocation kappa.
//!
//! The gain d(a, b) between two nodes of the service tree is the product
//! of service-rate ratios along the unique path from a to b: traversing
//! an edge from its class side to its pool side contributes a factor
//! mu_ij, traversing it from pool to class contributes 1/mu_ij. Gains
//! convert safety capacity at one location of the tree into its
//! equivalent at another.
//!
//! With theta_j = nu_hat_j + sum_i (mu_hat_ij/mu_ij) z*_ij and a positive
//! probability vector p over classes, the SWSS parameter has the closed
//! form (independent of the anchor class i)
//!
//! ```text
//! vartheta_p = ( sum_j d(i,j) theta_j - sum_l d(i,l) lambda_hat_l )
//!              / sum_l d(i,l) p_l
//! ```
//!
//! and the per-edge reallocation kappa is the unique solution of
//!
//! ```text
//! sum_j mu_ij kappa_ij = lambda_hat_i + vartheta_p p_i   for every class
//! sum_i kappa_ij       = theta_j                         for every pool
//! ```
//!
//! which is again a tree system solvable by leaf elimination.

use crate::error::{Error, Result};
use crate::graph::{Node, Topology};
use crate::linalg;
use crate::network::{FluidSolution, NetworkSpec, NthSystemParams, ValidatedNetwork};

/// Dense tables of pairwise path gains.
#[derive(Debug, Clone)]
pub struct GainTable {
    n_classes: usize,
    n_pools: usize,
    class_to_pool: Vec<f64>,
    class_to_class: Vec<f64>,
    pool_to_pool: Vec<f64>,
}

impl GainTable {
    /// Gain d(class i, pool j).
    pub fn class_to_pool(&self, i: usize, j: usize) -> f64 {
        self.class_to_pool[i * self.n_pools + j]
    }

    /// Gain d(class i, class l).
    pub fn class_to_class(&self, i: usize, l: usize) -> f64 {
        self.class_to_class[i * self.n_classes + l]
    }

    /// Gain d(pool j, pool j').
    pub fn pool_to_pool(&self, j: usize, jp: usize) -> f64 {
        self.pool_to_pool[j * self.n_pools + jp]
    }
}

/// The SWSS parameter and everything recovered alongside it.
#[derive(Debug, Clone)]
pub struct SwssResult {
    /// System-wide safety staffing parameter, in sqrt(n) capacity units.
    pub vartheta_p: f64,
    /// Per-edge second-order allocation kappa_ij, topology edge order.
    pub kappa: Vec<f64>,
    /// Per-pool theta_j used by the program.
    pub theta: Vec<f64>,
    /// The probability vector the result was computed for.
    pub p: Vec<f64>,
    /// Per-class headroom R_i (capacity the system can spare for class i).
    pub r: Vec<f64>,
    /// Per-class Gamma_i = R_i / vartheta_p; the 1/Gamma_i sum to one.
    pub gamma: Vec<f64>,
}

/// Product of rate ratios along the tree path between two nodes.
fn path_gain(topo: &Topology, mu: &[f64], from: Node, to: Node) -> f64 {
    let (nodes, edges) = topo.path(from, to);
    let mut gain = 1.0;
    for (step, &e) in edges.iter().enumerate() {
        match nodes[step] {
            Node::Class(_) => gain *= mu[e],
            Node::Pool(_) => gain /= mu[e],
        }
    }
    gain
}

fn gains_from_rates(topo: &Topology, mu: &[f64]) -> GainTable {
    let ni = topo.n_classes();
    let nj = topo.n_pools();
    let mut class_to_pool = vec![0.0; ni * nj];
    let mut class_to_class = vec![0.0; ni * ni];
    let mut pool_to_pool = vec![0.0; nj * nj];
    for i in 0..ni {
        for j in 0..nj {
            class_to_pool[i * nj + j] = path_gain(topo, mu, Node::Class(i), Node::Pool(j));
        }
        for l in 0..ni {
            class_to_class[i * ni + l] = path_gain(topo, mu, Node::Class(i), Node::Class(l));
        }
    }
    for j in 0..nj {
        for jp in 0..nj {
            pool_to_pool[j * nj + jp] = path_gain(topo, mu, Node::Pool(j), Node::Pool(jp));
        }
    }
    GainTable {
        n_classes: ni,
        n_pools: nj,
        class_to_pool,
        class_to_class,
        pool_to_pool,
    }
}

/// Evaluates all pairwise gains of the network at its limiting rates.
pub fn compute_gains(net: &ValidatedNetwork) -> GainTable {
    gains_from_rates(net.topology(), net.mu())
}

fn check_p(p: &[f64], n_classes: usize, allow_zero: bool) -> Result<()> {
    if p.len() != n_classes {
        return Err(Error::InvalidP(format!(
            "p has {} entries for {} classes",
            p.len(),
            n_classes
        )));
    }
    for (i, &v) in p.iter().enumerate() {
        let ok = if allow_zero { v >= 0.0 } else { v > 0.0 };
        if !ok || !v.is_finite() {
            return Err(Error::InvalidP(format!("p[{i}] = {v}")));
        }
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidP(format!("sum of p is {total}, not 1")));
    }
    Ok(())
}

/// The closed form evaluated at one anchor class: numerator, denominator.
fn anchor_terms(
    gains: &GainTable,
    theta: &[f64],
    lambda_hat: &[f64],
    p: &[f64],
    anchor: usize,
) -> (f64, f64) {
    let mut num = 0.0;
    for (j, &t) in theta.iter().enumerate() {
        num += gains.class_to_pool(anchor, j) * t;
    }
    for (l, &lh) in lambda_hat.iter().enumerate() {
        num -= gains.class_to_class(anchor, l) * lh;
    }
    let den: f64 = p
        .iter()
        .enumerate()
        .map(|(l, &w)| gains.class_to_class(anchor, l) * w)
        .sum();
    (num, den)
}

/// Full pipeline shared by the limiting and nth variants: closed-form
/// vartheta from every anchor, kappa by leaf elimination, headrooms.
fn swss_pipeline(
    topo: &Topology,
    mu: &[f64],
    lambda_hat: &[f64],
    theta: &[f64],
    p: &[f64],
    allow_zero_p: bool,
) -> Result<SwssResult> {
    check_p(p, topo.n_classes(), allow_zero_p)?;
    let gains = gains_from_rates(topo, mu);

    let mut per_anchor = Vec::with_capacity(topo.n_classes());
    let mut nums = Vec::with_capacity(topo.n_classes());
    let mut dens = Vec::with_capacity(topo.n_classes());
    for i in 0..topo.n_classes() {
        let (num, den) = anchor_terms(&gains, theta, lambda_hat, p, i);
        per_anchor.push(num / den);
        nums.push(num);
        dens.push(den);
    }
    let hi = per_anchor.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = per_anchor.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = per_anchor.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if hi - lo > 1e-9 * (1.0 + scale) {
        return Err(Error::SingularSystem(format!(
            "anchor classes disagree on vartheta: spread {} at scale {}",
            hi - lo,
            scale
        )));
    }
    let vartheta_p = per_anchor[0];

    // kappa: same tree system as the fluid allocation, with weights mu,
    // class requirements lambda_hat + vartheta p, pool requirements theta.
    let rhs: Vec<f64> = lambda_hat
        .iter()
        .zip(p)
        .map(|(lh, w)| lh + vartheta_p * w)
        .collect();
    let (kappa, residual) = topo.solve_tree_system(mu, &rhs, theta);
    let kappa_scale = 1.0
        + theta.iter().map(|t| t.abs()).sum::<f64>()
        + rhs.iter().map(|r| r.abs()).sum::<f64>();
    if residual.abs() > 1e-9 * kappa_scale {
        return Err(Error::SingularSystem(format!(
            "kappa system inconsistent: residual {residual} at scale {kappa_scale}"
        )));
    }

    // Headrooms follow from the per-anchor terms; R_i is meaningful only
    // for p_i > 0 and is +/- infinity otherwise.
    let r: Vec<f64> = nums.iter().zip(p).map(|(n, w)| n / w).collect();
    let gamma: Vec<f64> = dens.iter().zip(p).map(|(d, w)| d / w).collect();

    Ok(SwssResult {
        vartheta_p,
        kappa,
        theta: theta.to_vec(),
        p: p.to_vec(),
        r,
        gamma,
    })
}

/// Computes the SWSS parameter and kappa of the limiting system.
pub fn compute_swss(net: &ValidatedNetwork, fluid: &FluidSolution, p: &[f64]) -> Result<SwssResult> {
    let theta = net.theta(fluid);
    swss_pipeline(net.topology(), net.mu(), net.lambda_hat(), &theta, p, false)
}

/// Computes the nth-system SWSS parameter: identical algorithm with the
/// nth system's hat parameters, rates, and theta.
pub fn compute_swss_nth(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    nth: &NthSystemParams,
    p: &[f64],
) -> Result<SwssResult> {
    let hats = net.derive_hat_params(nth, fluid);
    swss_pipeline(
        net.topology(),
        &nth.mu_n,
        &hats.lambda_hat,
        &hats.theta,
        p,
        false,
    )
}

/// The closed form evaluated at each anchor class separately, exposed for
/// the anchor-independence check of the verification suite.
pub fn swss_per_anchor(net: &ValidatedNetwork, fluid: &FluidSolution, p: &[f64]) -> Result<Vec<f64>> {
    check_p(p, net.n_classes(), false)?;
    let gains = compute_gains(net);
    let theta = net.theta(fluid);
    Ok((0..net.n_classes())
        .map(|i| {
            let (num, den) = anchor_terms(&gains, &theta, net.lambda_hat(), p, i);
            num / den
        })
        .collect())
}

/// Per-class headrooms: R_i is the SWSS the system would have if all of p
/// were concentrated on class i, divided by p_i; Gamma_i = R_i/vartheta.
/// Cross-checked against rerunning the closed form with p = e_i.
pub fn class_headroom(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    p: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let result = compute_swss(net, fluid, p)?;
    let theta = net.theta(fluid);
    for i in 0..net.n_classes() {
        let mut unit = vec![0.0; net.n_classes()];
        unit[i] = 1.0;
        let concentrated = swss_pipeline(
            net.topology(),
            net.mu(),
            net.lambda_hat(),
            &theta,
            &unit,
            true,
        )?;
        // vartheta_{e_i} equals p_i R_i.
        let expect = p[i] * result.r[i];
        if (concentrated.vartheta_p - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
            return Err(Error::SingularSystem(format!(
                "headroom cross-check failed for class {i}: {} vs {}",
                concentrated.vartheta_p, expect
            )));
        }
    }
    Ok((result.r, result.gamma))
}

/// Moves square-root-order capacity between pools without changing the
/// SWSS parameter: nu_hat[from] loses delta, nu_hat[to] gains delta times
/// the gain ratio d(i,from)/d(i,to) (anchor independent).
pub fn reallocate(
    net: &ValidatedNetwork,
    from_pool: usize,
    to_pool: usize,
    delta: f64,
) -> Result<NetworkSpec> {
    if from_pool == to_pool {
        return Err(Error::SamePool);
    }
    if from_pool >= net.n_pools() || to_pool >= net.n_pools() {
        return Err(Error::SpecParse(format!(
            "pool index out of range: {} or {} with {} pools",
            from_pool,
            to_pool,
            net.n_pools()
        )));
    }
    let gains = compute_gains(net);
    let ratio = gains.class_to_pool(0, from_pool) / gains.class_to_pool(0, to_pool);
    let mut nu_hat = net.nu_hat().to_vec();
    nu_hat[from_pool] -= delta;
    nu_hat[to_pool] += delta * ratio;
    Ok(net.with_nu_hat(nu_hat).to_spec())
}

/// Independent oracle: assembles the full (I+J) x (|E|+1) equality system
/// in the unknowns (kappa, vartheta) and solves it by least squares. One
/// equation is redundant on a consistent tree; the residual must vanish.
/// Headrooms are recovered by re-solving with p concentrated on each
/// class, keeping the oracle free of the gain-table code paths.
pub fn lp_oracle(net: &ValidatedNetwork, fluid: &FluidSolution, p: &[f64]) -> Result<SwssResult> {
    check_p(p, net.n_classes(), false)?;
    let theta = net.theta(fluid);
    let (vartheta_p, kappa) = lp_oracle_core(net, &theta, p)?;
    let mut r = Vec::with_capacity(net.n_classes());
    let mut gamma = Vec::with_capacity(net.n_classes());
    for i in 0..net.n_classes() {
        let mut unit = vec![0.0; net.n_classes()];
        unit[i] = 1.0;
        let (vt_unit, _) = lp_oracle_core(net, &theta, &unit)?;
        r.push(vt_unit / p[i]);
        gamma.push(vt_unit / p[i] / vartheta_p);
    }
    Ok(SwssResult {
        vartheta_p,
        kappa,
        theta,
        p: p.to_vec(),
        r,
        gamma,
    })
}

fn lp_oracle_core(net: &ValidatedNetwork, theta: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>)> {
    let topo = net.topology();
    let ni = topo.n_classes();
    let nj = topo.n_pools();
    let ne = topo.n_edges();
    let rows = ni + nj;
    let cols = ne + 1;
    let mut m = nalgebra::DMatrix::zeros(rows, cols);
    let mut rhs = nalgebra::DVector::zeros(rows);
    for i in 0..ni {
        for &e in topo.class_edges(i) {
            m[(i, e)] = net.mu()[e];
        }
        m[(i, ne)] = -p[i];
        rhs[i] = net.lambda_hat()[i];
    }
    for j in 0..nj {
        for &e in topo.pool_edges(j) {
            m[(ni + j, e)] = 1.0;
        }
        rhs[ni + j] = theta[j];
    }
    let sol = linalg::lstsq(&m, &rhs)
        .map_err(|e| Error::SingularSystem(format!("oracle system defective: {e}")))?;
    let residual = (&m * &sol - &rhs).norm();
    let scale = 1.0 + rhs.norm();
    if residual > 1e-9 * scale {
        return Err(Error::SingularSystem(format!(
            "oracle residual {residual} at scale {scale}"
        )));
    }
    let kappa = sol.as_slice()[..ne].to_vec();
    Ok((sol[ne], kappa))
}
