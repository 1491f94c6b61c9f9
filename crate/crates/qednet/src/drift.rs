//! The tree flow map Psi and the drift data (h, B1, B2, Sigma) of the
//! diffusion-scale state process.
//!
//! For balanced totals (<e, alpha> = <e, beta>) the flow map Psi(alpha,
//! beta) is the unique per-edge assignment with row sums alpha and column
//! sums beta; on a tree it is a linear map computed by leaf elimination.
//! Writing M(psi)_i = sum_j mu_ij psi_ij, the matrices B1 (I x I) and B2
//! (I x J) represent M composed with Psi on the constrained domain after
//! eliminating the anchor pool's coordinate:
//!
//! ```text
//! M(Psi(alpha, beta)) = B1 alpha + B2 beta,    B2 e_jhat = 0.
//! ```
//!
//! The diffusion-scale drift at state x under a control u = (u^c, u^s)
//! (queueing and idleness distributions) is
//!
//! ```text
//! b(x, u) = h - B1 (x - <e,x>+ u^c) + <e,x>- B2 u^s
//! ```
//!
//! with h_i = lambda_hat_i - sum_j (mu_ij xi*_ij nu_hat_j + mu_hat_ij
//! z*_ij), and Sigma = diag(sqrt(2 lambda_i)) the diffusion coefficient.
//! Key consequences computed here: the safety staffing parameter via
//! vartheta_p = -<e, B1^-1 h>/<e, B1^-1 p>, the class gains as ratios of
//! the positive row vector e' B1^-1, and the uniform-idleness margin
//! min_j (1 + (e' B1^-1 B2)_j) > 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg;
use crate::network::{FluidSolution, NthSystemParams, ValidatedNetwork};

/// A per-edge flow with prescribed row and column sums.
#[derive(Debug, Clone)]
pub struct FlowAssignment {
    /// Edge values in topology edge order; entries may be negative.
    pub psi: Vec<f64>,
}

/// Drift data of the diffusion-scale state equation.
#[derive(Debug, Clone)]
pub struct DriftModel {
    /// Constant drift h (or h^n for a model built from an nth system).
    pub h: DVector<f64>,
    /// I x I state-feedback matrix.
    pub b1: DMatrix<f64>,
    /// I x J idleness-feedback matrix; column `anchor.1` is zero.
    pub b2: DMatrix<f64>,
    /// The designated edge (class, pool) whose pool coordinate was
    /// eliminated from the constrained domain.
    pub anchor: (usize, usize),
    /// Diagonal of the diffusion coefficient, sqrt(2 lambda_i).
    pub sigma: DVector<f64>,
    topo: Topology,
    mu: Vec<f64>,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn psi_on_topo(topo: &Topology, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let imbalance = alpha.iter().sum::<f64>() - beta.iter().sum::<f64>();
    let tol = 1e-10 * (1.0 + l1(alpha) + l1(beta));
    if imbalance.abs() > tol {
        return Err(Error::BalanceViolated {
            imbalance: imbalance.abs(),
            tol,
        });
    }
    let w = vec![1.0; topo.n_edges()];
    let (psi, _) = topo.solve_tree_system(&w, alpha, beta);
    Ok(psi)
}

/// Solves for the unique tree flow with row sums `alpha` and column sums
/// `beta`; the totals must agree.
pub fn solve_psi(net: &ValidatedNetwork, alpha: &[f64], beta: &[f64]) -> Result<FlowAssignment> {
    Ok(FlowAssignment {
        psi: psi_on_topo(net.topology(), alpha, beta)?,
    })
}

/// M(psi)_i = sum over edges of class i of mu_e psi_e.
fn m_of_psi(topo: &Topology, mu: &[f64], psi: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(topo.n_classes());
    for (e, &(i, _)) in topo.edges().iter().enumerate() {
        m[i] += mu[e] * psi[e];
    }
    m
}

/// Builds B1 and B2 by column probes: B1 column k is M(Psi(e_k, e_jhat)),
/// B2 column j (j != jhat) is M(Psi(0, e_j - e_jhat)).
fn probe_matrices(topo: &Topology, mu: &[f64], jhat: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ni = topo.n_classes();
    let nj = topo.n_pools();
    let mut b1 = DMatrix::zeros(ni, ni);
    let mut b2 = DMatrix::zeros(ni, nj);
    let mut alpha = vec![0.0; ni];
    let mut beta = vec![0.0; nj];
    for k in 0..ni {
        alpha[k] = 1.0;
        beta[jhat] = 1.0;
        let psi = psi_on_topo(topo, &alpha, &beta)?;
        b1.set_column(k, &m_of_psi(topo, mu, &psi));
        alpha[k] = 0.0;
        beta[jhat] = 0.0;
    }
    for j in 0..nj {
        if j == jhat {
            continue;
        }
        beta[j] = 1.0;
        beta[jhat] = -1.0;
        let psi = psi_on_topo(topo, &alpha, &beta)?;
        b2.set_column(j, &m_of_psi(topo, mu, &psi));
        beta[j] = 0.0;
        beta[jhat] = 0.0;
    }
    Ok((b1, b2))
}

fn build_with(
    net: &ValidatedNetwork,
    anchor: (usize, usize),
    h: DVector<f64>,
    mu: Vec<f64>,
) -> Result<DriftModel> {
    let (ihat, jhat) = anchor;
    if net.topology().edge_index(ihat, jhat).is_none() {
        return Err(Error::AnchorNotEdge {
            class: ihat,
            pool: jhat,
        });
    }
    let (b1, b2) = probe_matrices(net.topology(), &mu, jhat)?;
    let sigma = DVector::from_iterator(
        net.n_classes(),
        net.lambda().iter().map(|&l| (2.0 * l).sqrt()),
    );
    Ok(DriftModel {
        h,
        b1,
        b2,
        anchor,
        sigma,
        topo: net.topology().clone(),
        mu,
    })
}

/// Builds the limiting drift model at the given anchor edge.
pub fn build_drift(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    anchor: (usize, usize),
) -> Result<DriftModel> {
    let mut h = DVector::from_column_slice(net.lambda_hat());
    for (e, &(i, j)) in net.topology().edges().iter().enumerate() {
        h[i] -= net.mu()[e] * fluid.xi_star[e] * net.nu_hat()[j] + net.mu_hat()[e] * fluid.z_star[e];
    }
    build_with(net, anchor, h, net.mu().to_vec())
}

/// Builds the drift model of a concrete nth system: rates mu^n and
/// `h^n_i = (lambda^n_i - sum_j mu^n_ij xi*_ij N^n_j)/sqrt(n)`.
pub fn build_drift_nth(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    nth: &NthSystemParams,
    anchor: (usize, usize),
) -> Result<DriftModel> {
    let s = (nth.n as f64).sqrt();
    let mut h = DVector::from_column_slice(&nth.lambda_n);
    for (e, &(i, j)) in net.topology().edges().iter().enumerate() {
        h[i] -= nth.mu_n[e] * fluid.xi_star[e] * nth.cap_n[j] as f64;
    }
    h /= s;
    build_with(net, anchor, h, nth.mu_n.clone())
}

fn check_simplex(u: &[f64], len: usize, what: &str) -> Result<()> {
    if u.len() != len {
        return Err(Error::NotASimplexPoint(format!(
            "{what} has {} entries, expected {len}",
            u.len()
        )));
    }
    if u.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::NotASimplexPoint(format!("{what} has a negative entry")));
    }
    let total: f64 = u.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::NotASimplexPoint(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl DriftModel {
    pub fn n_classes(&self) -> usize {
        self.b1.nrows()
    }

    pub fn n_pools(&self) -> usize {
        self.b2.ncols()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// The per-edge service rates the model was built with (mu or mu^n).
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Copy with the constant drift replaced by -vartheta p, the centered
    /// form in which the state equation has equilibrium drift exactly
    /// -vartheta p at the origin.
    pub fn recentered(&self, vartheta_p: f64, p: &[f64]) -> DriftModel {
        let mut out = self.clone();
        out.h = -vartheta_p * DVector::from_column_slice(p);
        out
    }

    /// The positive row vector e' B1^-1 (as a column), the common source
    /// of gains, margins, and the drift form of the staffing parameter.
    pub fn e_b1_inv(&self) -> DVector<f64> {
        let e = DVector::from_element(self.n_classes(), 1.0);
        linalg::solve(&self.b1.transpose(), &e)
            .expect("B1 of a valid tree model is nonsingular")
    }
}

/// Evaluates the drift b(x, u) = h - B1(x - <e,x>+ u^c) + <e,x>- B2 u^s.
pub fn eval_drift(
    model: &DriftModel,
    x: &DVector<f64>,
    u_c: &[f64],
    u_s: &[f64],
) -> Result<DVector<f64>> {
    check_simplex(u_c, model.n_classes(), "u^c")?;
    check_simplex(u_s, model.n_pools(), "u^s")?;
    let total = linalg::total(x);
    let pos = total.max(0.0);
    let neg = (-total).max(0.0);
    let centered = x - pos * DVector::from_column_slice(u_c);
    Ok(&model.h - &model.b1 * centered + neg * (&model.b2 * DVector::from_column_slice(u_s)))
}

/// Evaluates the drift through the primitive flow form: b_i = h_i -
/// sum_j mu_ij psi_ij with psi = Psi(x - <e,x>+ u^c, -<e,x>- u^s).
/// Agrees with `eval_drift` and exists as its independent oracle.
pub fn eval_drift_primitive(
    model: &DriftModel,
    x: &DVector<f64>,
    u_c: &[f64],
    u_s: &[f64],
) -> Result<DVector<f64>> {
    check_simplex(u_c, model.n_classes(), "u^c")?;
    check_simplex(u_s, model.n_pools(), "u^s")?;
    let total = linalg::total(x);
    let pos = total.max(0.0);
    let neg = (-total).max(0.0);
    let alpha: Vec<f64> = (0..model.n_classes())
        .map(|i| x[i] - pos * u_c[i])
        .collect();
    let beta: Vec<f64> = u_s.iter().map(|&v| -neg * v).collect();
    let psi = psi_on_topo(&model.topo, &alpha, &beta)?;
    Ok(&model.h - m_of_psi(&model.topo, &model.mu, &psi))
}

/// Drift of the scaled finite system under a scaled action z_breve:
/// b^n_i = h^n_i - sum_j mu^n_ij z_breve_ij.
pub fn eval_drift_scaled(model: &DriftModel, z_breve: &[f64]) -> DVector<f64> {
    &model.h - m_of_psi(&model.topo, &model.mu, z_breve)
}

/// The same scaled drift assembled through the matrix decomposition: the
/// action is reduced to queue lengths q = x - row sums, idleness y =
/// -column sums, the work-conservation gap zeta = <e,q> min <e,y>, and
/// normalized distributions u^c, u^s; then
///
/// ```text
/// b = h - B1 (x - <e,x>+ u^c) + <e,x>- B2 u^s + zeta (B1 u^c + B2 u^s).
/// ```
///
/// Used as the oracle for `eval_drift_scaled`; requires a feasible action
/// (q >= 0 and y >= 0 up to rounding).
pub fn eval_drift_scaled_decomposed(
    model: &DriftModel,
    x_breve: &DVector<f64>,
    z_breve: &[f64],
) -> DVector<f64> {
    let ni = model.n_classes();
    let nj = model.n_pools();
    let mut q = x_breve.clone();
    let mut y = vec![0.0; nj];
    for (e, &(i, j)) in model.topo.edges().iter().enumerate() {
        q[i] -= z_breve[e];
        y[j] -= z_breve[e];
    }
    let total = linalg::total(x_breve);
    let pos = total.max(0.0);
    let neg = (-total).max(0.0);
    let q_total: f64 = q.iter().sum();
    let y_total: f64 = y.iter().sum();
    let zeta = q_total.min(y_total);

    let u_c = if q_total.abs() > 1e-300 {
        DVector::from_iterator(ni, q.iter().map(|&v| v / q_total))
    } else {
        DVector::from_element(ni, 1.0 / ni as f64)
    };
    let u_s = if y_total.abs() > 1e-300 {
        DVector::from_iterator(nj, y.iter().map(|&v| v / y_total))
    } else {
        DVector::from_element(nj, 1.0 / nj as f64)
    };

    let b1uc = &model.b1 * &u_c;
    let b2us = &model.b2 * &u_s;
    &model.h - &model.b1 * (x_breve - pos * &u_c) + neg * &b2us + zeta * (b1uc + b2us)
}

/// The staffing parameter from the drift data: -<e,B1^-1 h>/<e,B1^-1 p>.
pub fn swss_from_drift(model: &DriftModel, p: &[f64]) -> f64 {
    let w = model.e_b1_inv();
    let num: f64 = w.iter().zip(model.h.iter()).map(|(a, b)| a * b).sum();
    let den: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
    -num / den
}

/// Class-to-class gains recovered from B1 alone:
/// d(i, l) = (e' B1^-1)_l / (e' B1^-1)_i.
pub fn gains_from_b1(model: &DriftModel) -> DMatrix<f64> {
    let w = model.e_b1_inv();
    let ni = model.n_classes();
    DMatrix::from_fn(ni, ni, |i, l| w[l] / w[i])
}

/// The uniform-idleness drift margin min_j (1 + (e' B1^-1 B2)_j) and the
/// pool attaining it; positive on every valid model.
pub fn lemma2_margin(model: &DriftModel) -> (f64, usize) {
    let w = model.e_b1_inv();
    let row = model.b2.transpose() * w;
    let mut best = (f64::INFINITY, 0);
    for (j, &v) in row.iter().enumerate() {
        let margin = 1.0 + v;
        if margin < best.0 {
            best = (margin, j);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{compute_gains, compute_swss};
    use crate::network::{n_network_demo, EdgeSpec, NetworkSpec};
    use std::collections::BTreeMap;

    fn fixture() -> (ValidatedNetwork, FluidSolution) {
        let net = n_network_demo().validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        (net, fluid)
    }

    fn fixture_model() -> DriftModel {
        let (net, fluid) = fixture();
        build_drift(&net, &fluid, (1, 1)).unwrap()
    }

    #[test]
    fn psi_matches_hand_elimination() {
        let (net, _) = fixture();
        let flow = solve_psi(&net, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(flow.psi, vec![0.0, 1.0, 0.0]);
        let zero = solve_psi(&net, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(zero.psi, vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            solve_psi(&net, &[1.0, 0.0], &[0.0, 0.0]),
            Err(Error::BalanceViolated { .. })
        ));
    }

    #[test]
    fn psi_is_linear() {
        let (net, _) = fixture();
        let a = solve_psi(&net, &[1.0, 2.0], &[2.5, 0.5]).unwrap();
        let b = solve_psi(&net, &[-0.5, 1.0], &[0.25, 0.25]).unwrap();
        let combo = solve_psi(&net, &[2.0 * 1.0 - 0.5, 2.0 * 2.0 + 1.0], &[
            2.0 * 2.5 + 0.25,
            2.0 * 0.5 + 0.25,
        ])
        .unwrap();
        for e in 0..3 {
            let want = 2.0 * a.psi[e] + b.psi[e];
            assert!((combo.psi[e] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn drift_matrices_of_the_demo_network() {
        let m = fixture_model();
        assert_eq!(m.b1, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(m.b2, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]));
        assert_eq!(m.h, DVector::from_column_slice(&[-2.0, -0.5]));
        assert_eq!(m.sigma[0], 2.0);
        assert!((m.sigma[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn anchor_must_be_an_edge() {
        let (net, fluid) = fixture();
        assert!(matches!(
            build_drift(&net, &fluid, (1, 0)),
            Err(Error::AnchorNotEdge { class: 1, pool: 0 })
        ));
    }

    #[test]
    fn w_network_b1_matches_published_form() {
        // Three classes over two pools; with the anchor pool on the
        // right, B1 is lower triangular with the published entries.
        let (m11, m21, m22, m32) = (1.2, 0.8, 1.5, 0.9);
        let spec = NetworkSpec {
            classes: vec!["1".into(), "2".into(), "3".into()],
            pools: vec!["1".into(), "2".into()],
            edges: vec![
                EdgeSpec { class: "1".into(), pool: "1".into(), mu: m11, mu_hat: 0.0 },
                EdgeSpec { class: "2".into(), pool: "1".into(), mu: m21, mu_hat: 0.0 },
                EdgeSpec { class: "2".into(), pool: "2".into(), mu: m22, mu_hat: 0.0 },
                EdgeSpec { class: "3".into(), pool: "2".into(), mu: m32, mu_hat: 0.0 },
            ],
            lambda: BTreeMap::from([
                ("1".into(), m11 * 0.6),
                ("2".into(), m21 * 0.4 + m22 * 0.5),
                ("3".into(), m32 * 0.5),
            ]),
            lambda_hat: BTreeMap::new(),
            nu: BTreeMap::from([("1".into(), 1.0), ("2".into(), 1.0)]),
            nu_hat: BTreeMap::from([("1".into(), 1.0), ("2".into(), 1.0)]),
            nth: None,
        };
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let model = build_drift(&net, &fluid, (2, 1)).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[
            m11, 0.0, 0.0,
            m22 - m21, m22, 0.0,
            0.0, 0.0, m32,
        ]);
        assert!((model.b1.clone() - want).norm() < 1e-12);
        assert_eq!(model.b2.column(1).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn single_edge_drift_model() {
        let spec = NetworkSpec {
            classes: vec!["a".into()],
            pools: vec!["p".into()],
            edges: vec![EdgeSpec { class: "a".into(), pool: "p".into(), mu: 3.0, mu_hat: 0.0 }],
            lambda: BTreeMap::from([("a".into(), 6.0)]),
            lambda_hat: BTreeMap::from([("a".into(), 0.25)]),
            nu: BTreeMap::from([("p".into(), 2.0)]),
            nu_hat: BTreeMap::from([("p".into(), 0.5)]),
            nth: None,
        };
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let model = build_drift(&net, &fluid, (0, 0)).unwrap();
        assert_eq!(model.b1[(0, 0)], 3.0);
        assert_eq!(model.b2[(0, 0)], 0.0);
        assert!((model.h[0] - (0.25 - 3.0 * 0.5)).abs() < 1e-12);
        assert_eq!(lemma2_margin(&model), (1.0, 0));
    }

    #[test]
    fn nth_model_reduces_to_the_limit_under_exact_scaling() {
        let (net, fluid) = fixture();
        let limit = build_drift(&net, &fluid, (1, 1)).unwrap();
        let nth = net.nth_from_order(400).unwrap();
        let scaled = build_drift_nth(&net, &fluid, &nth, (1, 1)).unwrap();
        assert!((scaled.b1.clone() - limit.b1.clone()).norm() < 1e-12);
        assert!((scaled.h.clone() - limit.h.clone()).norm() < 1e-9);
    }

    #[test]
    fn nth_constant_drift_converges_at_root_n_rate() {
        let mut spec = n_network_demo();
        spec.nu_hat.insert("1".into(), 0.7351);
        spec.nu_hat.insert("2".into(), 1.2643);
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let limit = build_drift(&net, &fluid, (1, 1)).unwrap();
        let mut errs = Vec::new();
        for n in [100u64, 10_000] {
            let nth = net.nth_from_order(n).unwrap();
            let model = build_drift_nth(&net, &fluid, &nth, (1, 1)).unwrap();
            errs.push((model.h - limit.h.clone()).norm());
        }
        assert!(errs[1] < errs[0]);
        assert!(errs[1] < 0.05);
    }

    #[test]
    fn drift_evaluation_fixture_points() {
        let m = fixture_model();
        let at_zero = eval_drift(&m, &DVector::zeros(2), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(at_zero, m.h);

        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let b = eval_drift(&m, &x, &[0.0, 1.0], &[0.3, 0.7]).unwrap();
        assert_eq!(b, DVector::from_column_slice(&[-4.0, 0.5]));

        // Negative total mass, idleness on the anchor pool: B2 column is
        // zero so b = h - B1 x.
        let xneg = DVector::from_column_slice(&[-1.0, -1.0]);
        let b = eval_drift(&m, &xneg, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let want = &m.h - &m.b1 * &xneg;
        assert_eq!(b, want);
    }

    #[test]
    fn drift_rejects_non_simplex_controls() {
        let m = fixture_model();
        let x = DVector::zeros(2);
        assert!(matches!(
            eval_drift(&m, &x, &[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::NotASimplexPoint(_))
        ));
        assert!(matches!(
            eval_drift(&m, &x, &[1.5, -0.5], &[0.5, 0.5]),
            Err(Error::NotASimplexPoint(_))
        ));
    }

    #[test]
    fn matrix_and_primitive_forms_agree() {
        let m = fixture_model();
        let points = [
            (vec![1.0, 1.0], vec![0.0, 1.0], vec![0.3, 0.7]),
            (vec![-2.0, 0.5], vec![0.25, 0.75], vec![1.0, 0.0]),
            (vec![0.3, -0.3], vec![1.0, 0.0], vec![0.0, 1.0]),
        ];
        for (x, uc, us) in points {
            let x = DVector::from_vec(x);
            let a = eval_drift(&m, &x, &uc, &us).unwrap();
            let b = eval_drift_primitive(&m, &x, &uc, &us).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn scaled_drift_matches_decomposition() {
        let (net, fluid) = fixture();
        let nth = net.nth_from_order(400).unwrap();
        let m = build_drift_nth(&net, &fluid, &nth, (1, 1)).unwrap();

        // z_breve = 0 is the balanced action: drift is h^n.
        assert_eq!(eval_drift_scaled(&m, &[0.0, 0.0, 0.0]), m.h);

        // All excess queued in the anchor class, no idleness: the action
        // is Psi(x - <e,x> e_ihat, 0) with ihat = class 2.
        let x = DVector::from_column_slice(&[1.5, -0.5]);
        let total = 1.0f64;
        let shifted = [1.5, -0.5 - total];
        let psi = psi_on_topo(net.topology(), &shifted, &[0.0, 0.0]).unwrap();
        let direct = eval_drift_scaled(&m, &psi);
        let want = &m.h - &m.b1 * (&x - total * DVector::from_column_slice(&[0.0, 1.0]));
        assert!((direct.clone() - want).norm() < 1e-10);
        let oracle = eval_drift_scaled_decomposed(&m, &x, &psi);
        assert!((direct - oracle).norm() < 1e-10);

        // A non-work-conserving feasible action: queue and idleness
        // both positive.
        let z = [-0.25, -0.5, 0.1];
        let xb = DVector::from_column_slice(&[0.4, 0.2]);
        let a = eval_drift_scaled(&m, &z);
        let b = eval_drift_scaled_decomposed(&m, &xb, &z);
        assert!((a - b).norm() < 1e-10, "decomposition oracle diverges");
    }

    #[test]
    fn swss_from_drift_matches_closed_form() {
        let (net, fluid) = fixture();
        let m = fixture_model();
        let p = [0.5, 0.5];
        let from_drift = swss_from_drift(&m, &p);
        assert!((from_drift - 2.0).abs() < 1e-12);
        let closed = compute_swss(&net, &fluid, &p).unwrap().vartheta_p;
        assert!((from_drift - closed).abs() < 1e-9 * (1.0 + closed.abs()));

        let centered = m.recentered(2.0, &p);
        assert!((swss_from_drift(&centered, &p) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gains_from_b1_match_path_products() {
        let (net, _) = fixture();
        let m = fixture_model();
        let g = compute_gains(&net);
        let from_b1 = gains_from_b1(&m);
        for i in 0..2 {
            for l in 0..2 {
                let want = g.class_to_class(i, l);
                assert!(
                    (from_b1[(i, l)] - want).abs() < 1e-10 * (1.0 + want.abs()),
                    "gain ({i},{l})"
                );
            }
        }
        assert_eq!(from_b1[(0, 0)], 1.0);
    }

    #[test]
    fn margin_of_the_demo_network() {
        let m = fixture_model();
        let (margin, pool) = lemma2_margin(&m);
        assert!((margin - 0.5).abs() < 1e-12);
        assert_eq!(pool, 0);
        let w = m.e_b1_inv();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observables_are_anchor_invariant() {
        // vartheta, gains, and the drift itself do not depend on the
        // anchor. The margin scales exactly like e'B1^-1 (which is
        // anchor dependent up to a positive factor), so the invariant
        // object is the margin normalized by any fixed entry of that
        // vector; it is positive for every anchor either way.
        let (net, fluid) = fixture();
        let anchors = [(0usize, 0usize), (0, 1), (1, 1)];
        let p = [0.4, 0.6];
        let mut varthetas = Vec::new();
        let mut scaled_margins = Vec::new();
        let mut gains = Vec::new();
        let mut drifts = Vec::new();
        for &a in &anchors {
            let m = build_drift(&net, &fluid, a).unwrap();
            varthetas.push(swss_from_drift(&m, &p));
            let (margin, _) = lemma2_margin(&m);
            assert!(margin > 0.0);
            scaled_margins.push(margin / m.e_b1_inv()[0]);
            gains.push(gains_from_b1(&m));
            let x = DVector::from_column_slice(&[0.7, -0.2]);
            drifts.push(eval_drift(&m, &x, &[0.2, 0.8], &[0.9, 0.1]).unwrap());
        }
        for k in 1..anchors.len() {
            assert!((varthetas[k] - varthetas[0]).abs() < 1e-9);
            assert!((scaled_margins[k] - scaled_margins[0]).abs() < 1e-9);
            assert!((gains[k].clone() - gains[0].clone()).norm() < 1e-9);
            assert!((drifts[k].clone() - drifts[0].clone()).norm() < 1e-9);
        }
    }
}
