//! Euler-Maruyama simulation of the limiting diffusion
//!
//! ```text
//! X_(k+1) = X_k + b(X_k) dt + Sigma sqrt(dt) xi_k
//! ```
//!
//! with b the drift of a recentered model under a (possibly
//! state-dependent) placement control and Sigma = diag(sqrt(2 lambda_i)).
//! Paths are recorded with thinning; replications run on independent
//! seeded streams, so results are reproducible and independent of the
//! thread schedule.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::network::ValidatedNetwork;
use crate::stats::batch_means;

/// A placement rule for the diffusion: where the positive part of the
/// total queues (over classes) and where the negative part idles (over
/// pools).
pub trait DiffusionControl: Sync + Send {
    /// Returns (u^c, u^s) at state x; both must be simplex points.
    fn at(&self, x: &DVector<f64>) -> (&[f64], &[f64]);

    fn name(&self) -> &'static str;
}

/// The constant control: all queue on one class, all idleness on one
/// pool, independent of the state.
pub struct BarVControl {
    u_c: Vec<f64>,
    u_s: Vec<f64>,
    anchor: (usize, usize),
}

impl BarVControl {
    pub fn anchor(&self) -> (usize, usize) {
        self.anchor
    }
}

/// Builds the constant control placing queue on class `anchor.0` and
/// idleness on pool `anchor.1`; the pair must be an edge of the network.
pub fn barv_control(net: &ValidatedNetwork, anchor: (usize, usize)) -> Result<BarVControl> {
    let topo = net.topology();
    if topo.edge_index(anchor.0, anchor.1).is_none() {
        return Err(Error::AnchorNotEdge {
            class: anchor.0,
            pool: anchor.1,
        });
    }
    let mut u_c = vec![0.0; topo.n_classes()];
    u_c[anchor.0] = 1.0;
    let mut u_s = vec![0.0; topo.n_pools()];
    u_s[anchor.1] = 1.0;
    Ok(BarVControl { u_c, u_s, anchor })
}

impl DiffusionControl for BarVControl {
    fn at(&self, _x: &DVector<f64>) -> (&[f64], &[f64]) {
        (&self.u_c, &self.u_s)
    }

    fn name(&self) -> &'static str {
        "barv"
    }
}

/// A thinned Euler-Maruyama path.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub dim: usize,
    pub dt: f64,
    pub thin: usize,
    pub horizon: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    states: Vec<f64>,
}

impl SdePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
}

/// Drift at x under the control's placement:
/// b = h - B1 (x - <e, x>^+ u^c) + <e, x>^- B2 u^s.
fn drift_at(
    model: &DriftModel,
    x: &DVector<f64>,
    u_c: &[f64],
    u_s: &[f64],
    centered: &mut DVector<f64>,
    out: &mut DVector<f64>,
) {
    let total: f64 = x.iter().sum();
    let pos = total.max(0.0);
    let neg = (-total).max(0.0);
    centered.copy_from(x);
    for (c, &u) in centered.iter_mut().zip(u_c) {
        *c -= pos * u;
    }
    out.copy_from(&model.h);
    out.gemv(-1.0, &model.b1, centered, 1.0);
    if neg > 0.0 {
        let us = DVector::from_column_slice(u_s);
        out.gemv(neg, &model.b2, &us, 1.0);
    }
}

/// Simulates one path from `x0` to the horizon with step `dt`, recording
/// every `thin`-th step (the initial state always, the state after the
/// last step as well). Fails with the step index if the state leaves the
/// finite range.
pub fn simulate_sde(
    model: &DriftModel,
    control: &dyn DiffusionControl,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    thin: usize,
    seed: u64,
) -> Result<SdePath> {
    simulate_sde_stream(model, control, x0, dt, horizon, thin, seed, 0)
}

/// As `simulate_sde` with an explicit substream for replications.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sde_stream(
    model: &DriftModel,
    control: &dyn DiffusionControl,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    thin: usize,
    seed: u64,
    stream: u64,
) -> Result<SdePath> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::SpecParse(format!(
            "time step {dt} and horizon {horizon} must be positive"
        )));
    }
    let thin = thin.max(1);
    let dim = model.n_classes();
    if x0.len() != dim {
        return Err(Error::SpecParse(format!(
            "initial state has {} coordinates, model has {dim}",
            x0.len()
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut x = DVector::from_column_slice(x0);
    let mut b = DVector::zeros(dim);
    let mut centered = DVector::zeros(dim);
    let sqrt_dt = dt.sqrt();

    let mut times = Vec::with_capacity(steps / thin + 2);
    let mut states = Vec::with_capacity((steps / thin + 2) * dim);
    let mut record = |t: f64, x: &DVector<f64>| {
        times.push(t);
        states.extend_from_slice(x.as_slice());
    };
    record(0.0, &x);

    for k in 0..steps {
        let (u_c, u_s) = control.at(&x);
        drift_at(model, &x, u_c, u_s, &mut centered, &mut b);
        for i in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            x[i] += b[i] * dt + model.sigma[i] * sqrt_dt * noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        if (k + 1) % thin == 0 || k + 1 == steps {
            record((k + 1) as f64 * dt, &x);
        }
    }

    Ok(SdePath {
        dim,
        dt,
        thin,
        horizon,
        seed,
        times,
        states,
    })
}

/// Runs independent replications in parallel, one substream each.
#[allow(clippy::too_many_arguments)]
pub fn run_sde_replications(
    model: &DriftModel,
    control: &dyn DiffusionControl,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    thin: usize,
    seed: u64,
    reps: usize,
) -> Result<Vec<SdePath>> {
    (0..reps)
        .into_par_iter()
        .map(|r| simulate_sde_stream(model, control, x0, dt, horizon, thin, seed, r as u64))
        .collect()
}

/// Time average of the total idleness <e, X>^- over the recorded samples
/// past the burn-in fraction, pooled across paths; the standard error
/// comes from 32 batch means.
pub fn estimate_idleness(paths: &[SdePath], burn_in: f64) -> Result<(f64, f64)> {
    if !(0.0..=0.9).contains(&burn_in) {
        return Err(Error::SpecParse(format!("burn-in {burn_in} outside [0, 0.9]")));
    }
    let mut series: Vec<(f64, f64)> = Vec::new();
    for path in paths {
        let start = burn_in * path.horizon;
        for k in 0..path.len() {
            if path.times[k] < start {
                continue;
            }
            let total: f64 = path.state_at(k).iter().sum();
            series.push(((-total).max(0.0), 1.0));
        }
    }
    if series.len() < 64 {
        return Err(Error::EmptyTrajectory);
    }
    Ok(batch_means(&series, 32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{build_drift, eval_drift};
    use crate::gains::compute_swss;
    use crate::network::{n_network_demo, EdgeSpec, NetworkSpec};
    use crate::stability::remark7_target;
    use std::collections::BTreeMap;

    fn demo() -> (ValidatedNetwork, DriftModel) {
        let net = n_network_demo().validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let swss = compute_swss(&net, &fluid, &[0.5, 0.5]).unwrap();
        let model = build_drift(&net, &fluid, (1, 1))
            .unwrap()
            .recentered(swss.vartheta_p, &swss.p);
        (net, model)
    }

    #[test]
    fn control_requires_an_edge_anchor() {
        let (net, _) = demo();
        assert!(barv_control(&net, (1, 1)).is_ok());
        assert!(matches!(
            barv_control(&net, (1, 0)),
            Err(Error::AnchorNotEdge { class: 1, pool: 0 })
        ));
    }

    #[test]
    fn stepping_drift_matches_the_model_evaluation() {
        let (net, model) = demo();
        let control = barv_control(&net, (1, 1)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut b = DVector::zeros(2);
        let mut centered = DVector::zeros(2);
        for _ in 0..50 {
            let x = DVector::from_fn(2, |_, _| 6.0 * (rng.random::<f64>() - 0.5));
            let (u_c, u_s) = control.at(&x);
            drift_at(&model, &x, u_c, u_s, &mut centered, &mut b);
            let want = eval_drift(&model, &x, u_c, u_s).unwrap();
            assert!((&b - want).norm() < 1e-12);
        }
    }

    #[test]
    fn paths_are_seed_deterministic_and_streams_differ() {
        let (net, model) = demo();
        let control = barv_control(&net, (1, 1)).unwrap();
        let a = simulate_sde(&model, &control, &[0.0, 0.0], 1e-3, 1.0, 10, 7).unwrap();
        let b = simulate_sde(&model, &control, &[0.0, 0.0], 1e-3, 1.0, 10, 7).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.states, b.states);
        let c =
            simulate_sde_stream(&model, &control, &[0.0, 0.0], 1e-3, 1.0, 10, 7, 1).unwrap();
        assert!(a.states != c.states);
        // Thinning: 1000 steps, every 10th, plus the initial state.
        assert_eq!(a.len(), 101);
        assert!((a.times[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn replications_are_schedule_independent() {
        let (net, model) = demo();
        let control = barv_control(&net, (1, 1)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool
            .install(|| run_sde_replications(&model, &control, &[0.0, 0.0], 1e-3, 0.5, 5, 9, 4))
            .unwrap();
        let multi =
            run_sde_replications(&model, &control, &[0.0, 0.0], 1e-3, 0.5, 5, 9, 4).unwrap();
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn non_finite_states_are_reported_with_their_step() {
        let (net, model) = demo();
        let control = barv_control(&net, (1, 1)).unwrap();
        let err = simulate_sde(&model, &control, &[f64::NAN, 0.0], 1e-3, 0.1, 1, 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 1 }));
        // A coarse step under stiff feedback blows Euler up quickly.
        let err =
            simulate_sde(&model, &control, &[0.0, 1.0], 1e6, 1e9, 1, 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn idleness_estimate_needs_enough_samples() {
        let (net, model) = demo();
        let control = barv_control(&net, (1, 1)).unwrap();
        let path = simulate_sde(&model, &control, &[0.0, 0.0], 1e-3, 0.0, 1, 1).unwrap();
        assert_eq!(path.len(), 1);
        assert!(matches!(
            estimate_idleness(&[path], 0.0),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn single_station_idleness_matches_the_predicted_mean() {
        // One class, one pool, mu = 1: the predicted stationary idleness
        // under the constant control is <e' B1^-1, p> vartheta_p = 1.
        let spec = NetworkSpec {
            classes: vec!["a".into()],
            pools: vec!["p".into()],
            edges: vec![EdgeSpec {
                class: "a".into(),
                pool: "p".into(),
                mu: 1.0,
                mu_hat: 0.0,
            }],
            lambda: BTreeMap::from([("a".into(), 1.0)]),
            lambda_hat: BTreeMap::new(),
            nu: BTreeMap::from([("p".into(), 1.0)]),
            nu_hat: BTreeMap::from([("p".into(), 1.0)]),
            nth: None,
        };
        let net = spec.validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let swss = compute_swss(&net, &fluid, &[1.0]).unwrap();
        assert!((swss.vartheta_p - 1.0).abs() < 1e-12);
        let model = build_drift(&net, &fluid, (0, 0))
            .unwrap()
            .recentered(swss.vartheta_p, &swss.p);
        let target = remark7_target(&model, &swss.p);
        assert!((target - 1.0).abs() < 1e-12);

        let control = barv_control(&net, (0, 0)).unwrap();
        let paths =
            run_sde_replications(&model, &control, &[0.0], 1e-3, 2000.0, 20, 2718, 4).unwrap();
        let (mean, se) = estimate_idleness(&paths, 0.2).unwrap();
        assert!(
            (mean - target).abs() < 0.1,
            "idleness {mean} (se {se}) vs predicted {target}"
        );
    }
}
