//! Cross-validation pipeline: runs every independent route to the safety
//! staffing parameter and its companion identities over a seeded corpus
//! of random networks, reporting the worst residual per identity.
//! Failures are collected, never thrown, so a report always comes back.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::drift::{build_drift, gains_from_b1, lemma2_margin, swss_from_drift};
use crate::gains::{class_headroom, compute_gains, compute_swss, lp_oracle, reallocate};
use crate::network::{n_network_demo, NetworkSpec};
use crate::randnet::{random_network_with, random_simplex_with};

/// One identity checked across the corpus.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst residual observed (largest error, or smallest margin for
    /// positivity checks).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

/// Outcome of the whole suite.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

/// Error scale for comparisons quoted as relative: exact for magnitudes
/// above one, absolute below (guards against accidental near-zero
/// parameters in random corpora).
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

const ID_TOL: f64 = 1e-8;

struct Accumulator {
    name: &'static str,
    tolerance: f64,
    /// true: worst is a max that must stay below tolerance;
    /// false: worst is a min that must stay above tolerance.
    upper: bool,
    worst: f64,
    detail: String,
}

impl Accumulator {
    fn upper(name: &'static str, tolerance: f64) -> Self {
        Accumulator {
            name,
            tolerance,
            upper: true,
            worst: 0.0,
            detail: String::new(),
        }
    }

    fn lower(name: &'static str, tolerance: f64) -> Self {
        Accumulator {
            name,
            tolerance,
            upper: false,
            worst: f64::INFINITY,
            detail: String::new(),
        }
    }

    fn observe(&mut self, value: f64, context: &str) {
        let is_worse = if self.upper {
            value > self.worst
        } else {
            value < self.worst
        };
        if is_worse || !value.is_finite() {
            self.worst = value;
            self.detail = context.to_string();
        }
    }

    fn fail(&mut self, context: &str) {
        let value = if self.upper { f64::INFINITY } else { f64::NEG_INFINITY };
        self.worst = value;
        self.detail = context.to_string();
    }

    fn finish(self) -> CheckResult {
        let passed = if self.upper {
            self.worst.is_finite() && self.worst <= self.tolerance
        } else {
            self.worst > self.tolerance
        };
        CheckResult {
            name: self.name,
            passed,
            worst: self.worst,
            tolerance: self.tolerance,
            detail: self.detail,
        }
    }
}

/// Runs the full identity suite on `trials` random networks (optionally
/// prefixed by the demo fixture and caller-provided specs). Checks:
///
/// * triangle: closed form, dense least-squares oracle, and the drift
///   route agree on the parameter;
/// * gain-ratios: path-product gains match the inverse-matrix ratios,
///   whose entries are all positive;
/// * corollary: harmonic decomposition and normalized share identities;
/// * headroom: concentrating the cost on one class scales its share;
/// * margin: the idleness-feedback margin is strictly positive;
/// * anchor-invariance: the drift route is independent of the anchor;
/// * reallocation: moving square-root capacity along the gains keeps the
///   parameter fixed;
/// * p-sign: the parameter's sign does not depend on the cost direction.
pub fn verify_corpus(
    seed: u64,
    trials: usize,
    include_fixture: bool,
    extra: &[NetworkSpec],
) -> VerifyReport {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut specs: Vec<(String, NetworkSpec)> = Vec::new();
    if include_fixture {
        specs.push(("fixture".into(), n_network_demo()));
    }
    for (k, spec) in extra.iter().enumerate() {
        specs.push((format!("extra {k}"), spec.clone()));
    }
    for k in 0..trials {
        specs.push((format!("trial {k}"), random_network_with(&mut rng)));
    }

    let mut triangle = Accumulator::upper("identity-triangle", ID_TOL);
    let mut gains_check = Accumulator::upper("gain-ratios", ID_TOL);
    let mut gain_positivity = Accumulator::lower("inverse-row-positivity", 0.0);
    let mut corollary = Accumulator::upper("corollary-identities", ID_TOL);
    let mut headroom = Accumulator::upper("class-headroom", 1e-9);
    let mut margin = Accumulator::lower("idleness-margin", 0.0);
    let mut anchor_inv = Accumulator::upper("anchor-invariance", ID_TOL);
    let mut realloc = Accumulator::upper("reallocation-invariance", ID_TOL);
    let mut sign_inv = Accumulator::upper("p-sign-invariance", 0.5);

    let instances = specs.len();
    for (label, spec) in &specs {
        let net = match spec.validate() {
            Ok(net) => net,
            Err(e) => {
                triangle.fail(&format!("{label}: invalid network: {e}"));
                continue;
            }
        };
        let fluid = match net.solve_fluid() {
            Ok(f) => f,
            Err(e) => {
                triangle.fail(&format!("{label}: no pooled fluid solution: {e}"));
                continue;
            }
        };
        let p = random_simplex_with(&mut rng, net.n_classes());

        let closed = match compute_swss(&net, &fluid, &p) {
            Ok(r) => r,
            Err(e) => {
                triangle.fail(&format!("{label}: closed form failed: {e}"));
                continue;
            }
        };
        let oracle = match lp_oracle(&net, &fluid, &p) {
            Ok(r) => r,
            Err(e) => {
                triangle.fail(&format!("{label}: oracle failed: {e}"));
                continue;
            }
        };
        let first_edge = net.topology().edges()[0];
        let model = match build_drift(&net, &fluid, first_edge) {
            Ok(m) => m,
            Err(e) => {
                triangle.fail(&format!("{label}: drift build failed: {e}"));
                continue;
            }
        };
        let via_drift = swss_from_drift(&model, &p);

        let tri = rel(closed.vartheta_p, oracle.vartheta_p)
            .max(rel(closed.vartheta_p, via_drift))
            .max(rel(oracle.vartheta_p, via_drift));
        triangle.observe(tri, &format!("{label}: vartheta_p = {}", closed.vartheta_p));

        // Gains against the inverse-row ratios.
        let table = compute_gains(&net);
        let from_b1 = gains_from_b1(&model);
        let mut worst_gain = 0.0f64;
        for i in 0..net.n_classes() {
            for l in 0..net.n_classes() {
                worst_gain = worst_gain.max(rel(table.class_to_class(i, l), from_b1[(i, l)]));
            }
        }
        gains_check.observe(worst_gain, label);
        let w = model.e_b1_inv();
        gain_positivity.observe(
            w.iter().fold(f64::INFINITY, |m, &v| m.min(v)),
            &format!("{label}: e' B1^-1 = {:?}", w.as_slice()),
        );

        // Harmonic identities of the share decomposition.
        let harmonic: f64 = closed.r.iter().map(|&r| 1.0 / r).sum();
        let shares: f64 = closed.gamma.iter().map(|&g| 1.0 / g).sum();
        let mut cor = rel(1.0 / closed.vartheta_p, harmonic).max((shares - 1.0).abs());
        for i in 0..net.n_classes() {
            cor = cor.max(rel(closed.r[i], closed.vartheta_p * closed.gamma[i]));
        }
        corollary.observe(cor, label);

        match class_headroom(&net, &fluid, &p) {
            Ok(_) => headroom.observe(0.0, label),
            Err(e) => headroom.fail(&format!("{label}: {e}")),
        }

        let (m, at) = lemma2_margin(&model);
        margin.observe(m, &format!("{label}: argmin pool {at}"));

        let last_edge = *net.topology().edges().last().expect("tree has edges");
        if last_edge != first_edge {
            match build_drift(&net, &fluid, last_edge) {
                Ok(other) => {
                    anchor_inv
                        .observe(rel(via_drift, swss_from_drift(&other, &p)), label);
                    let (m2, at2) = lemma2_margin(&other);
                    margin.observe(m2, &format!("{label}: anchor {last_edge:?}, pool {at2}"));
                }
                Err(e) => anchor_inv.fail(&format!("{label}: {e}")),
            }
        }

        if net.n_pools() >= 2 {
            match reallocate(&net, 0, 1, 0.37)
                .and_then(|spec2| spec2.validate())
                .and_then(|net2| {
                    let fluid2 = net2.solve_fluid()?;
                    compute_swss(&net2, &fluid2, &p)
                })
            {
                Ok(moved) => {
                    realloc.observe(rel(closed.vartheta_p, moved.vartheta_p), label)
                }
                Err(e) => realloc.fail(&format!("{label}: {e}")),
            }
        }

        // The sign of the parameter is a property of the network, not of
        // the cost direction; skip instances too close to the boundary
        // for a sign to be meaningful.
        if closed.vartheta_p.abs() > 1e-6 {
            let mut mismatches = 0.0;
            for _ in 0..3 {
                let q = random_simplex_with(&mut rng, net.n_classes());
                match compute_swss(&net, &fluid, &q) {
                    Ok(other) => {
                        if other.vartheta_p.signum() != closed.vartheta_p.signum()
                            && other.vartheta_p.abs() > 1e-9
                        {
                            mismatches += 1.0;
                        }
                    }
                    Err(e) => sign_inv.fail(&format!("{label}: {e}")),
                }
            }
            sign_inv.observe(mismatches, label);
        }
    }

    let checks = vec![
        triangle.finish(),
        gains_check.finish(),
        gain_positivity.finish(),
        corollary.finish(),
        headroom.finish(),
        margin.finish(),
        anchor_inv.finish(),
        realloc.finish(),
        sign_inv.finish(),
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    VerifyReport {
        seed,
        trials,
        instances,
        checks,
        all_passed,
    }
}

/// Negative control: corrupts one gain-table entry by a relative 1e-4
/// and confirms the ratio comparison flags it (while the honest table
/// passes). Returns true when the corruption is detected.
pub fn gain_corruption_detected(seed: u64) -> bool {
    let spec = n_network_demo();
    let net = spec.validate().expect("fixture is valid");
    let fluid = net.solve_fluid().expect("fixture is pooled");
    let model = build_drift(&net, &fluid, net.topology().edges()[0]).expect("fixture drift");
    let table = compute_gains(&net);
    let from_b1 = gains_from_b1(&model);

    // Deterministically pick the corrupted entry off the seed.
    let ni = net.n_classes();
    let pick = (seed as usize) % (ni * ni);
    let (ci, cl) = (pick / ni, pick % ni);

    let mut honest = 0.0f64;
    let mut corrupted = 0.0f64;
    for i in 0..ni {
        for l in 0..ni {
            let g = table.class_to_class(i, l);
            honest = honest.max(rel(g, from_b1[(i, l)]));
            let g = if (i, l) == (ci, cl) { g * (1.0 + 1e-4) } else { g };
            corrupted = corrupted.max(rel(g, from_b1[(i, l)]));
        }
    }
    honest <= ID_TOL && corrupted > ID_TOL
}
