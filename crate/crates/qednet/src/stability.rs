//! Stability classification and checkable certificates.
//!
//! The sign of the safety staffing parameter decides the regime:
//! positive means some policy makes the diffusion-scaled system
//! positive recurrent, negative means every work-conserving policy is
//! transient, zero sits on the boundary. Beyond the sign, this module
//! produces finite, machine-checkable evidence:
//!
//! * a transience certificate: a bounded function H = tanh(beta <e, B1^-1 x>)
//!   whose generator drift is positive under every control, so the total
//!   headcount escapes;
//! * a positive-recurrence certificate: a quadratic shape S and scale
//!   epsilon for which V(x) = exp(epsilon phi (1 + phi)^(-1/2)),
//!   phi = x' S x, satisfies L V <= kappa0 - kappa1 V with kappa1 > 0 on
//!   a sampled grid, both for the limiting diffusion and for the exact
//!   prelimit generator.
//!
//! All sampling is seeded and deterministic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::ctmc::{SchedulingPolicy, StaffingPlan};
use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::gains::SwssResult;
use crate::linalg;
use crate::network::{NthSystemParams, ValidatedNetwork};

/// Regime of the network for a given cost direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Positive parameter: some policy is diffusion-scale stable.
    Stabilizable,
    /// Zero parameter: no policy is positive recurrent.
    NotPositiveRecurrent,
    /// Negative parameter: every work-conserving policy is transient.
    Transient,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stabilizable => "stabilizable",
            Classification::NotPositiveRecurrent => "not-positive-recurrent",
            Classification::Transient => "transient",
        }
    }
}

/// Classification together with the parameter values it was read from.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub classification: Classification,
    pub vartheta_p: f64,
    /// Present when a concrete nth system was classified as well:
    /// (vartheta^n_p, its classification).
    pub nth: Option<(f64, Classification)>,
}

const SIGN_TOL: f64 = 1e-9;

fn classify_value(vartheta: f64) -> Classification {
    if vartheta > SIGN_TOL {
        Classification::Stabilizable
    } else if vartheta < -SIGN_TOL {
        Classification::Transient
    } else {
        Classification::NotPositiveRecurrent
    }
}

/// Reads the regime off the sign of the safety staffing parameter,
/// attaching the nth-system classification when available.
pub fn classify(swss: &SwssResult, swss_nth: Option<&SwssResult>) -> StabilityReport {
    StabilityReport {
        classification: classify_value(swss.vartheta_p),
        vartheta_p: swss.vartheta_p,
        nth: swss_nth.map(|s| (s.vartheta_p, classify_value(s.vartheta_p))),
    }
}

/// How a certificate sampled the state space.
#[derive(Debug, Clone)]
pub struct GridDescription {
    pub radii: Vec<f64>,
    pub directions: usize,
    pub seed: u64,
}

/// Evidence that the total headcount diverges under every control.
#[derive(Debug, Clone)]
pub struct TransienceCertificate {
    /// Scale of the bounded test function H = tanh(beta <e, B1^-1 x>).
    pub beta: f64,
    /// Smallest sampled value of the positive prefactor-normalized drift
    /// bracket; positive means L H > 0 everywhere on the grid.
    pub min_margin: f64,
    /// Generator drift of H at the origin, beta <e, B1^-1 h>.
    pub lh_at_origin: f64,
    pub grid: GridDescription,
}

/// Evidence of positive recurrence under the constant anchor control.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    /// Shape of the quadratic phi = x' S x.
    pub s: DMatrix<f64>,
    pub epsilon: f64,
    /// L V <= kappa0 - kappa1 V on the grid.
    pub kappa0: f64,
    pub kappa1: f64,
    /// Half the smallest eigenvalue of S B1 + B1' S.
    pub kappa_circ: f64,
    /// Stationary idleness pairing vartheta_p <p, S e_ihat>; positive.
    pub eta: f64,
    pub grid: GridDescription,
}

fn sphere_direction(rng: &mut ChaCha12Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

/// Certifies transience when the parameter regime allows it: with
/// w = (B1')^-1 e and c = <w, h> > 0, the bounded function
/// H(x) = tanh(beta <w, x>) with beta = c / (2 |Sigma' w|^2) has
///
/// ```text
/// L_u H(x) = beta sech^2(beta <w, x>) g(x, u^s)
/// g(x, u^s) = -beta tanh(beta <w, x>) |Sigma' w|^2 + c
///             + <e, x>^- (1 + <w, B2 u^s>)
/// ```
///
/// The bracket g is affine in u^s and free of u^c, so checking the pool
/// vertices covers every control. The certificate samples `sample_count`
/// points with log-uniform radius up to 1e3 and records the smallest
/// bracket value.
pub fn transience_certificate(
    model: &DriftModel,
    sample_count: usize,
    seed: u64,
) -> Result<TransienceCertificate> {
    let w = model.e_b1_inv();
    let c = w.dot(&model.h);
    if c <= 0.0 {
        return Err(Error::NotTransientRegime { value: c });
    }
    let sigma_w_sq: f64 = model
        .sigma
        .iter()
        .zip(w.iter())
        .map(|(s, wi)| (s * wi) * (s * wi))
        .sum();
    let beta = 0.5 * c / sigma_w_sq;
    let w_b2 = model.b2.transpose() * &w;

    let dim = model.n_classes();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    let mut at = String::from("origin");
    let mut consider = |x: &DVector<f64>, label: &str| {
        let s = w.dot(x);
        let neg = (-linalg::total(x)).max(0.0);
        for j in 0..model.n_pools() {
            let g = -beta * (beta * s).tanh() * sigma_w_sq + c + neg * (1.0 + w_b2[j]);
            if g < min_margin {
                min_margin = g;
                at = format!("{label}, idleness on pool {j}");
            }
        }
    };
    consider(&DVector::zeros(dim), "origin");
    for k in 0..sample_count {
        let radius = 10f64.powf(rng.random_range(-1.0..3.0));
        let x = radius * sphere_direction(&mut rng, dim);
        consider(&x, &format!("sample {k} radius {radius:.3}"));
    }
    if min_margin <= 0.0 {
        return Err(Error::MarginNonPositive {
            margin: min_margin,
            at,
        });
    }
    Ok(TransienceCertificate {
        beta,
        min_margin,
        lh_at_origin: beta * c,
        grid: GridDescription {
            radii: vec![0.1, 1e3],
            directions: sample_count,
            seed,
        },
    })
}

/// Orthonormal basis of the hyperplane { x : <e, x> = 0 } as the columns
/// of an n x (n - 1) matrix, read off a QR factorization whose first
/// column is e / sqrt(n).
fn e_perp_basis(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(n, n);
    let inv = 1.0 / (n as f64).sqrt();
    for r in 0..n {
        m[(r, 0)] = inv;
    }
    let q = m.qr().q();
    q.columns(1, n - 1).into_owned()
}

/// Builds the quadratic shape for the Lyapunov function and the decay
/// rate kappa_circ = min eig(S B1 + B1' S) / 2.
///
/// Construction: with w = (B1')^-1 e (componentwise positive on the
/// admissible networks) and P = I - e_ihat e', the 1-d escape direction
/// is handled by the rank-one part w w' and the zero-sum hyperplane by a
/// Lyapunov solve of the reduced matrix U' P B1 U:
///
/// ```text
/// S = (w w' + P' U Gbar U' P) / w_ihat,   A' Gbar + Gbar A = I
/// ```
///
/// The returned S is validated: symmetric positive definite,
/// Phi(S) = S B1 (I - e_ihat e') + (I - e e_ihat') B1' S positive
/// semidefinite, and kappa_circ positive, all at tolerance 1e-9; any
/// failure reports `NotFound`.
pub fn find_s(model: &DriftModel) -> Result<(DMatrix<f64>, f64)> {
    let ni = model.n_classes();
    let ihat = model.anchor.0;
    let w = model.e_b1_inv();
    if w.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotFound(format!(
            "e' B1^-1 must be componentwise positive, got {:?}",
            w.as_slice()
        )));
    }

    let mut p = DMatrix::<f64>::identity(ni, ni);
    for col in 0..ni {
        p[(ihat, col)] -= 1.0;
    }

    let mut s = &w * w.transpose() / w[ihat];
    if ni > 1 {
        let u = e_perp_basis(ni);
        let a = u.transpose() * &p * &model.b1 * &u;
        let gbar = linalg::lyapunov_solve(&a, &DMatrix::identity(ni - 1, ni - 1))
            .map_err(|e| Error::NotFound(format!("reduced Lyapunov solve failed: {e}")))?;
        if linalg::min_symmetric_eigenvalue(&gbar) <= 1e-12 {
            return Err(Error::NotFound(
                "reduced Lyapunov solution is not positive definite".into(),
            ));
        }
        let pu = p.transpose() * u;
        s += &pu * gbar * pu.transpose();
    }
    // Normalize so the designated diagonal entry is one (the rank-one
    // part alone pins S[ihat][ihat] = w_ihat; the correction vanishes
    // there because P e_ihat = 0).
    s /= w[ihat];
    s = (&s + s.transpose()) * 0.5;

    if linalg::min_symmetric_eigenvalue(&s) <= 1e-9 {
        return Err(Error::NotFound("S is not positive definite".into()));
    }
    let phi = &s * &model.b1 * &p;
    let phi = &phi + phi.transpose();
    if linalg::min_symmetric_eigenvalue(&phi) < -1e-9 {
        return Err(Error::NotFound(
            "S B1 (I - e_ihat e') + transpose is not positive semidefinite".into(),
        ));
    }
    let decay = &s * &model.b1;
    let decay = &decay + decay.transpose();
    let kappa_circ = 0.5 * linalg::min_symmetric_eigenvalue(&decay);
    if kappa_circ <= 1e-9 {
        return Err(Error::NotFound(format!(
            "S B1 + B1' S is not positive definite (kappa_circ = {kappa_circ:.3e})"
        )));
    }
    Ok((s, kappa_circ))
}

/// The Lyapunov function V(x) = exp(epsilon phi (1 + phi)^(-1/2)) with
/// phi = x' S x, together with its exact gradient and Hessian.
#[derive(Debug, Clone)]
pub struct LyapunovFunction {
    pub s: DMatrix<f64>,
    pub epsilon: f64,
}

impl LyapunovFunction {
    pub fn new(s: DMatrix<f64>, epsilon: f64) -> Self {
        LyapunovFunction { s, epsilon }
    }

    pub fn identity(dim: usize, epsilon: f64) -> Self {
        LyapunovFunction {
            s: DMatrix::identity(dim, dim),
            epsilon,
        }
    }

    fn phi(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.s * x)[(0, 0)]
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let phi = self.phi(x);
        (self.epsilon * phi / (1.0 + phi).sqrt()).exp()
    }

    /// grad V = epsilon V phi_S S x with phi_S = (2 + phi)(1 + phi)^(-3/2).
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let phi = self.phi(x);
        let v = (self.epsilon * phi / (1.0 + phi).sqrt()).exp();
        let phi_s = (2.0 + phi) * (1.0 + phi).powf(-1.5);
        self.epsilon * v * phi_s * (&self.s * x)
    }

    /// hess V = epsilon^2 V phi_S^2 (Sx)(Sx)' + epsilon V [phi_S S
    ///          - (4 + phi)(1 + phi)^(-5/2) (Sx)(Sx)'].
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let phi = self.phi(x);
        let v = (self.epsilon * phi / (1.0 + phi).sqrt()).exp();
        let phi_s = (2.0 + phi) * (1.0 + phi).powf(-1.5);
        let sx = &self.s * x;
        let outer = &sx * sx.transpose();
        self.epsilon * self.epsilon * v * phi_s * phi_s * &outer
            + self.epsilon
                * v
                * (phi_s * &self.s - (4.0 + phi) * (1.0 + phi).powf(-2.5) * &outer)
    }
}

/// Drift of the recentered diffusion under the constant anchor control:
/// all queue on class ihat when the total is positive, all idleness on
/// pool jhat otherwise (where the B2 column vanishes).
fn anchored_drift(model: &DriftModel, x: &DVector<f64>) -> DVector<f64> {
    let total = linalg::total(x);
    if total >= 0.0 {
        let mut centered = x.clone();
        centered[model.anchor.0] -= total;
        &model.h - &model.b1 * centered
    } else {
        &model.h - &model.b1 * x
    }
}

/// Diffusion generator of V applied at x under the constant anchor
/// control: L V = tr(Sigma Sigma' hess V) / 2 + <b(x), grad V>.
pub fn sde_generator(model: &DriftModel, lyap: &LyapunovFunction, x: &DVector<f64>) -> f64 {
    let hess = lyap.hessian(x);
    let grad = lyap.gradient(x);
    let b = anchored_drift(model, x);
    let mut trace = 0.0;
    for i in 0..model.n_classes() {
        trace += model.sigma[i] * model.sigma[i] * hess[(i, i)];
    }
    0.5 * trace + grad.dot(&b)
}

const SDE_GRID_RADII: [f64; 8] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
const SDE_GRID_DIRECTIONS: usize = 64;

/// Checks the drift inequality L V <= kappa0 - kappa1 V for the
/// recentered diffusion on a radial grid (radii 0.5 to 64, 64 seeded
/// directions). kappa1 is set to half the smallest value of -L V / V on
/// the outermost shell and kappa0 to the largest remainder, so the
/// inequality holds with margin at every grid point. epsilon starts at
/// `epsilon0` and halves on failure down to 1e-6; if no scale works the
/// worst violation is reported.
pub fn check_drift_inequality_sde(
    model: &DriftModel,
    s: &DMatrix<f64>,
    epsilon0: f64,
    seed: u64,
) -> Result<LyapunovCertificate> {
    let vartheta = -linalg::total(&model.h);
    if vartheta <= SIGN_TOL {
        return Err(Error::InequalityFailed(format!(
            "positive recurrence needs vartheta_p > 0; recentered drift gives {vartheta:.3e}"
        )));
    }
    let p: Vec<f64> = model.h.iter().map(|&hi| -hi / vartheta).collect();
    if p.iter().any(|&pi| pi < -1e-9) {
        return Err(Error::InvalidP(
            "model is not in recentered form h = -vartheta_p p".into(),
        ));
    }

    let decay = s * &model.b1;
    let decay = &decay + decay.transpose();
    let kappa_circ = 0.5 * linalg::min_symmetric_eigenvalue(&decay);
    let s_col = s.column(model.anchor.0);
    let eta = vartheta
        * p.iter()
            .zip(s_col.iter())
            .map(|(&pi, &si)| pi * si)
            .sum::<f64>();
    if eta <= 0.0 {
        return Err(Error::NotFound(format!(
            "idleness pairing eta = {eta:.3e} is not positive"
        )));
    }

    let dim = model.n_classes();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dirs: Vec<DVector<f64>> = (0..SDE_GRID_DIRECTIONS)
        .map(|_| sphere_direction(&mut rng, dim))
        .collect();

    let mut epsilon = epsilon0;
    let mut worst = String::new();
    while epsilon >= 1e-6 {
        let lyap = LyapunovFunction::new(s.clone(), epsilon);
        let mut shell_min = f64::INFINITY;
        let mut kappa0 = f64::NEG_INFINITY;
        let mut rows: Vec<(f64, f64, f64, usize)> = Vec::new();
        let mut finite = true;
        'grid: for (d, dir) in dirs.iter().enumerate() {
            for &r in &SDE_GRID_RADII {
                let x = r * dir;
                let v = lyap.value(&x);
                let lv = sde_generator(model, &lyap, &x);
                if !v.is_finite() || !lv.is_finite() {
                    finite = false;
                    worst = format!("non-finite value at radius {r}, epsilon {epsilon:.1e}");
                    break 'grid;
                }
                rows.push((r, v, lv, d));
                if r == SDE_GRID_RADII[SDE_GRID_RADII.len() - 1] {
                    shell_min = shell_min.min(-lv / v);
                }
            }
        }
        if finite && shell_min > 0.0 {
            let kappa1 = 0.5 * shell_min;
            for &(_, v, lv, _) in &rows {
                kappa0 = kappa0.max(lv + kappa1 * v);
            }
            return Ok(LyapunovCertificate {
                s: s.clone(),
                epsilon,
                kappa0,
                kappa1,
                kappa_circ,
                eta,
                grid: GridDescription {
                    radii: SDE_GRID_RADII.to_vec(),
                    directions: SDE_GRID_DIRECTIONS,
                    seed,
                },
            });
        }
        if finite {
            let bad = rows
                .iter()
                .filter(|r| r.0 == SDE_GRID_RADII[SDE_GRID_RADII.len() - 1])
                .min_by(|a, b| (-a.2 / a.1).total_cmp(&(-b.2 / b.1)))
                .expect("outer shell is nonempty");
            worst = format!(
                "L V / V = {:.3e} >= 0 at radius {} direction {} with epsilon {:.1e}",
                bad.2 / bad.1,
                bad.0,
                bad.3,
                epsilon
            );
        }
        epsilon *= 0.5;
    }
    Err(Error::InequalityFailed(format!(
        "no epsilon in [1e-6, {epsilon0}] satisfies the drift inequality; worst: {worst}"
    )))
}

const CTMC_GRID_RADII: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0];

/// Checks the exact prelimit drift inequality L^n f <= C0 - C1 f for
/// f = V_epsilon of the tilde-scaled state (identity shape), using the
/// full generator
///
/// ```text
/// L^n_z f(x) = sum_i lambda^n_i (f(x + e_i) - f(x))
///            + sum_(i,j) mu^n_ij z_ij (f(x - e_i) - f(x))
/// ```
///
/// with z the policy action at x. States are sampled on rays from the
/// staffing center out to 40 sqrt(n) in the max norm (the inner radii
/// cover the 20 sqrt(n) box, the outer two are the rays); C1 is half the
/// smallest -L^n f / f on the rays and C0 the largest remainder over all
/// samples. Small systems may need a smaller epsilon.
pub fn check_drift_inequality_ctmc(
    net: &ValidatedNetwork,
    nth: &NthSystemParams,
    plan: &StaffingPlan,
    policy: &dyn SchedulingPolicy,
    epsilon: f64,
    directions: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let topo = net.topology();
    let ni = topo.n_classes();
    let sqrt_n = (nth.n as f64).sqrt();
    let center: Vec<f64> = plan.n_tilde_class.iter().map(|&v| v as f64).collect();
    let lyap = LyapunovFunction::identity(ni, epsilon);

    let scaled = |x: &[u64]| {
        DVector::from_fn(ni, |i, _| (x[i] as f64 - center[i]) / sqrt_n)
    };
    let f_of = |x: &[u64]| lyap.value(&scaled(x));

    let gen_at = |x: &[u64]| -> f64 {
        let z = policy.assign(x);
        let fx = f_of(x);
        let mut out = 0.0;
        let mut up = x.to_vec();
        for i in 0..ni {
            up[i] += 1;
            out += nth.lambda_n[i] * (f_of(&up) - fx);
            up[i] -= 1;
        }
        let mut down = x.to_vec();
        for (e, &(i, _)) in topo.edges().iter().enumerate() {
            if z[e] == 0 {
                continue;
            }
            down[i] -= 1;
            out += nth.mu_n[e] * z[e] as f64 * (f_of(&down) - fx);
            down[i] += 1;
        }
        out
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut ray_min = f64::INFINITY;
    let mut ray_worst = String::new();
    let mut states: Vec<(Vec<u64>, bool)> = vec![(
        plan.n_tilde_class.clone(),
        false,
    )];
    for _ in 0..directions {
        let dir = sphere_direction(&mut rng, ni);
        let max_abs = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dir = dir / max_abs; // unit in the max norm
        for &r in &CTMC_GRID_RADII {
            let x: Vec<u64> = (0..ni)
                .map(|i| (center[i] + r * sqrt_n * dir[i]).round().max(0.0) as u64)
                .collect();
            states.push((x, r > 20.0));
        }
    }
    let mut evaluated: Vec<(f64, f64)> = Vec::with_capacity(states.len());
    for (x, on_ray) in &states {
        let f = f_of(x);
        let lf = gen_at(x);
        if !f.is_finite() || !lf.is_finite() {
            return Err(Error::InequalityFailed(format!(
                "non-finite generator value at {x:?} with epsilon {epsilon:.1e}"
            )));
        }
        if *on_ray {
            let ratio = -lf / f;
            if ratio < ray_min {
                ray_min = ratio;
                ray_worst = format!("{x:?}");
            }
        }
        evaluated.push((f, lf));
    }
    if ray_min <= 0.0 {
        return Err(Error::InequalityFailed(format!(
            "generator drift is not negative on the rays: -L f / f = {ray_min:.3e} at {ray_worst} (epsilon {epsilon:.1e})"
        )));
    }
    let c1 = 0.5 * ray_min;
    let c0 = evaluated
        .iter()
        .map(|&(f, lf)| lf + c1 * f)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((c0, c1))
}

/// Predicted stationary mean of the total idleness <e, X>^- under the
/// constant anchor control: <e' B1^-1 p> vartheta_p.
pub fn remark7_target(model: &DriftModel, p: &[f64]) -> f64 {
    let w = model.e_b1_inv();
    let pairing: f64 = w.iter().zip(p).map(|(&wi, &pi)| wi * pi).sum();
    pairing * crate::drift::swss_from_drift(model, p)
}
