//! Discrete-event simulation of the nth Markovian system, integer
//! staffing synthesis, scheduling policies, diffusion scaling, and
//! stationary statistics.
//!
//! The state is the per-class headcount x; a scheduling policy maps x to
//! a feasible in-service assignment z (per edge) with
//!
//! ```text
//! q_i = x_i - sum_j z_ij >= 0      (queue of class i)
//! y_j = N^n_j - sum_i z_ij >= 0    (idle servers of pool j)
//! ```
//!
//! Transitions: class-i arrivals at rate lambda^n_i, edge (i, j) service
//! completions at rate mu^n_ij z_ij; the policy is recomputed after every
//! transition.
//!
//! Staffing synthesis splits each pool's N^n_j servers across its classes
//! so that the per-edge counts track n z*_ij + sqrt(n) kappa_ij corrected
//! for rate perturbations; one designated class per pool absorbs the
//! rounding remainder so pool totals are exact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gains::SwssResult;
use crate::graph::Topology;
use crate::network::{FluidSolution, NthSystemParams, ValidatedNetwork};
use crate::stats::{linear_fit, Running};

/// Integer per-edge staffing tracking the second-order allocation.
#[derive(Debug, Clone)]
pub struct StaffingPlan {
    pub n: u64,
    /// Per-edge staffing N-tilde, topology edge order.
    pub n_tilde: Vec<u64>,
    /// Per-class totals N-tilde_i.
    pub n_tilde_class: Vec<u64>,
    /// Per-pool capacities N^n_j (pool sums of `n_tilde`, exactly).
    pub cap_n: Vec<u64>,
    /// Reference first-order staffing: xi*_ij N^n_j rounded within pools.
    pub reference: Vec<u64>,
    /// max_edge |reference - n_tilde| / sqrt(n).
    pub c0: f64,
    /// The SWSS parameter the plan was synthesized for (echoed so
    /// callers can warn when it is not positive).
    pub vartheta_p: f64,
}

/// One recorded simulation sample.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<u64>,
    pub q: Vec<u64>,
    pub y: Vec<u64>,
}

/// A jump trajectory: piecewise-constant state, one sample per
/// transition (plus the initial state). Arrays are flattened row-major.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: u64,
    pub n_classes: usize,
    pub n_pools: usize,
    pub horizon: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    x: Vec<u32>,
    q: Vec<u32>,
    y: Vec<u32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, k: usize) -> &[u32] {
        &self.x[k * self.n_classes..(k + 1) * self.n_classes]
    }

    pub fn q_at(&self, k: usize) -> &[u32] {
        &self.q[k * self.n_classes..(k + 1) * self.n_classes]
    }

    pub fn y_at(&self, k: usize) -> &[u32] {
        &self.y[k * self.n_pools..(k + 1) * self.n_pools]
    }

    pub fn state_at(&self, k: usize) -> SimState {
        SimState {
            t: self.times[k],
            x: self.x_at(k).iter().map(|&v| v as u64).collect(),
            q: self.q_at(k).iter().map(|&v| v as u64).collect(),
            y: self.y_at(k).iter().map(|&v| v as u64).collect(),
        }
    }

    /// Duration the k-th sample is in effect (last one runs to horizon).
    pub fn hold_time(&self, k: usize) -> f64 {
        let end = if k + 1 < self.times.len() {
            self.times[k + 1]
        } else {
            self.horizon
        };
        (end - self.times[k]).max(0.0)
    }
}

/// Scaled trajectory produced by `diffusion_scale`.
#[derive(Debug, Clone)]
pub struct ScaledTrajectory {
    pub times: Vec<f64>,
    pub horizon: f64,
    pub n_classes: usize,
    /// Flattened scaled states, row-major per sample.
    pub x: Vec<f64>,
}

/// Which centering the diffusion scaling subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// x-breve: center at the fluid occupancy xbar^n = sum_j xi* N^n_j.
    Breve,
    /// x-tilde: center at the plan's class staffing N-tilde_i.
    Tilde,
}

/// Stationary summary over replications.
#[derive(Debug, Clone)]
pub struct TrajectoryStats {
    pub quantile_levels: Vec<f64>,
    /// Time-weighted quantiles of |x-tilde| at the levels above.
    pub quantiles: Vec<f64>,
    /// Time average of total idleness divided by sqrt(n).
    pub idleness_avg: f64,
    /// Exponential tail exponent of <e, x-tilde>^+ by log-survival fit.
    pub tail_exponent: f64,
    /// Goodness of the log-survival line.
    pub tail_r2: f64,
    pub replications: usize,
    pub seed: u64,
}

/// A deterministic map from headcounts to a feasible service assignment.
pub trait SchedulingPolicy: Sync + Send {
    /// Per-edge in-service counts for state x; must satisfy q >= 0 and
    /// y >= 0.
    fn assign(&self, x: &[u64]) -> Vec<u64>;

    fn name(&self) -> &'static str;
}

/// Largest-remainder rounding of the targets to integers summing to
/// `total` (targets must be nonnegative and sum to about `total`).
fn largest_remainder(targets: &[f64], total: u64) -> Vec<u64> {
    let floors: Vec<u64> = targets.iter().map(|&t| t.max(0.0).floor() as u64).collect();
    let assigned: u64 = floors.iter().sum();
    let mut remainder = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut out = floors;
    for &k in order.iter().cycle().take(targets.len().max(1) * 64) {
        if remainder == 0 {
            break;
        }
        out[k] += 1;
        remainder -= 1;
    }
    out
}

/// Splits every pool's servers across its classes so that per-edge counts
/// track the second-order program: non-designated edges get
/// floor(n z*_ij + sqrt(n)(kappa_ij - (mu_hat_ij/mu_ij) z*_ij)) and the
/// designated class (smallest index in the pool) absorbs the remainder.
pub fn synthesize_staffing(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    nth: &NthSystemParams,
    swss: &SwssResult,
) -> Result<StaffingPlan> {
    let topo = net.topology();
    let n = nth.n;
    let s = (n as f64).sqrt();
    let mut n_tilde = vec![0u64; topo.n_edges()];
    for j in 0..topo.n_pools() {
        let pool_edges = topo.pool_edges(j);
        let designated = pool_edges[0]; // smallest class index first
        let mut others = 0u64;
        for &e in &pool_edges[1..] {
            let correction = swss.kappa[e] - net.mu_hat()[e] / net.mu()[e] * fluid.z_star[e];
            let target = n as f64 * fluid.z_star[e] + s * correction;
            if target < 0.0 {
                let (i, _) = topo.edges()[e];
                return Err(Error::NTooSmall(format!(
                    "edge ({i}, {j}) staffing target {target:.3} is negative at n = {n}"
                )));
            }
            n_tilde[e] = target.floor() as u64;
            others += n_tilde[e];
        }
        if others > nth.cap_n[j] {
            return Err(Error::NTooSmall(format!(
                "pool {j} has {} servers but non-designated edges need {others} at n = {n}",
                nth.cap_n[j]
            )));
        }
        n_tilde[designated] = nth.cap_n[j] - others;
    }

    let mut n_tilde_class = vec![0u64; topo.n_classes()];
    for (e, &(i, _)) in topo.edges().iter().enumerate() {
        n_tilde_class[i] += n_tilde[e];
    }

    // Reference first-order staffing: xi*_ij N^n_j rounded per pool.
    let mut reference = vec![0u64; topo.n_edges()];
    for j in 0..topo.n_pools() {
        let pool_edges = topo.pool_edges(j);
        let targets: Vec<f64> = pool_edges
            .iter()
            .map(|&e| fluid.xi_star[e] * nth.cap_n[j] as f64)
            .collect();
        let rounded = largest_remainder(&targets, nth.cap_n[j]);
        for (k, &e) in pool_edges.iter().enumerate() {
            reference[e] = rounded[k];
        }
    }
    let c0 = n_tilde
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a as f64 - b as f64).abs() / s)
        .fold(0.0f64, f64::max);

    Ok(StaffingPlan {
        n,
        n_tilde,
        n_tilde_class,
        cap_n: nth.cap_n.clone(),
        reference,
        c0,
        vartheta_p: swss.vartheta_p,
    })
}

fn row_sums(topo: &Topology, z: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; topo.n_classes()];
    for (e, &(i, _)) in topo.edges().iter().enumerate() {
        out[i] += z[e];
    }
    out
}

fn col_sums(topo: &Topology, z: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; topo.n_pools()];
    for (e, &(_, j)) in topo.edges().iter().enumerate() {
        out[j] += z[e];
    }
    out
}

/// Greedy lexicographic fill to joint work conservation: one pass over
/// edges in increasing (class, pool) order moving min(q_i, y_j) into
/// service. Both q and y only shrink, so a single pass leaves
/// q_i min y_j = 0 on every edge.
fn fill_to_work_conservation(topo: &Topology, x: &[u64], cap: &[u64], z: &mut [u64]) {
    let mut q: Vec<u64> = row_sums(topo, z)
        .iter()
        .zip(x)
        .map(|(&r, &xi)| xi - r)
        .collect();
    let mut y: Vec<u64> = col_sums(topo, z)
        .iter()
        .zip(cap)
        .map(|(&c, &nj)| nj - c)
        .collect();
    for (e, &(i, j)) in topo.edges().iter().enumerate() {
        let add = q[i].min(y[j]);
        z[e] += add;
        q[i] -= add;
        y[j] -= add;
    }
}

fn assert_feasible(topo: &Topology, x: &[u64], cap: &[u64], z: &[u64]) {
    let rows = row_sums(topo, z);
    let cols = col_sums(topo, z);
    for i in 0..topo.n_classes() {
        debug_assert!(rows[i] <= x[i], "class {i} over-assigned");
    }
    for j in 0..topo.n_pools() {
        debug_assert!(cols[j] <= cap[j], "pool {j} over-assigned");
    }
    let _ = (rows, cols, x, cap, z);
}

/// Balanced saturation policy: saturated classes (x_i > N-tilde_i) pin
/// every edge at N-tilde_ij; others spread x_i over their edges in
/// increasing pool order capped at N-tilde_ij; then residual capacity is
/// filled greedily to joint work conservation.
pub struct BspPolicy {
    topo: Topology,
    plan: StaffingPlan,
}

/// Builds the balanced saturation policy for a staffing plan.
pub fn bsp_policy(net: &ValidatedNetwork, plan: &StaffingPlan) -> BspPolicy {
    BspPolicy {
        topo: net.topology().clone(),
        plan: plan.clone(),
    }
}

impl SchedulingPolicy for BspPolicy {
    fn assign(&self, x: &[u64]) -> Vec<u64> {
        let topo = &self.topo;
        let plan = &self.plan;
        let mut z = vec![0u64; topo.n_edges()];
        for (i, &xi) in x.iter().enumerate() {
            if xi > plan.n_tilde_class[i] {
                for &e in topo.class_edges(i) {
                    z[e] = plan.n_tilde[e];
                }
            } else {
                let mut remaining = xi;
                for &e in topo.class_edges(i) {
                    let take = remaining.min(plan.n_tilde[e]);
                    z[e] = take;
                    remaining -= take;
                }
            }
        }
        fill_to_work_conservation(topo, x, &plan.cap_n, &mut z);
        assert_feasible(topo, x, &plan.cap_n, &z);
        z
    }

    fn name(&self) -> &'static str {
        "bsp"
    }
}

/// Inside the joint-work-conservation region, mimics the constant
/// diffusion control (all queue on class ihat, all idleness on pool
/// jhat) by rounding the tree flow z = zbar^n + sqrt(n) Psi(...); falls
/// back to the saturation policy outside.
pub struct ConstantControlPolicy {
    topo: Topology,
    plan: StaffingPlan,
    bsp: BspPolicy,
    anchor: (usize, usize),
    /// Real-valued fluid staffing zbar^n_ij = xi*_ij N^n_j.
    z_bar: Vec<f64>,
    /// Row sums of z_bar.
    x_bar: Vec<f64>,
    sqrt_n: f64,
    /// JWC region radius: |x-breve|_1 <= m0 sqrt(n).
    m0: f64,
}

/// Builds the constant-control policy; `m0` scales the region where the
/// diffusion control is mimicked (default 1.0).
pub fn constant_control_policy(
    net: &ValidatedNetwork,
    fluid: &FluidSolution,
    plan: &StaffingPlan,
    anchor: (usize, usize),
    m0: f64,
) -> Result<ConstantControlPolicy> {
    let topo = net.topology();
    if topo.edge_index(anchor.0, anchor.1).is_none() {
        return Err(Error::AnchorNotEdge {
            class: anchor.0,
            pool: anchor.1,
        });
    }
    let z_bar: Vec<f64> = topo
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(_, j))| fluid.xi_star[e] * plan.cap_n[j] as f64)
        .collect();
    let mut x_bar = vec![0.0; topo.n_classes()];
    for (e, &(i, _)) in topo.edges().iter().enumerate() {
        x_bar[i] += z_bar[e];
    }
    Ok(ConstantControlPolicy {
        topo: topo.clone(),
        plan: plan.clone(),
        bsp: BspPolicy {
            topo: topo.clone(),
            plan: plan.clone(),
        },
        anchor,
        z_bar,
        x_bar,
        sqrt_n: (plan.n as f64).sqrt(),
        m0,
    })
}

impl SchedulingPolicy for ConstantControlPolicy {
    fn assign(&self, x: &[u64]) -> Vec<u64> {
        let topo = &self.topo;
        let ni = topo.n_classes();
        let nj = topo.n_pools();
        let x_breve: Vec<f64> = (0..ni)
            .map(|i| (x[i] as f64 - self.x_bar[i]) / self.sqrt_n)
            .collect();
        let radius: f64 = x_breve.iter().map(|v| v.abs()).sum();
        if radius > self.m0 * self.sqrt_n {
            return self.bsp.assign(x);
        }

        // Queue the positive excess on class ihat, idle the deficit on
        // pool jhat, and spread the remainder with the tree flow map.
        let total: f64 = x_breve.iter().sum();
        let pos = total.max(0.0);
        let neg = (-total).max(0.0);
        let mut alpha = x_breve.clone();
        alpha[self.anchor.0] -= pos;
        let mut beta = vec![0.0; nj];
        beta[self.anchor.1] = -neg;
        let w = vec![1.0; topo.n_edges()];
        let (psi, _) = topo.solve_tree_system(&w, &alpha, &beta);

        let mut z: Vec<u64> = (0..topo.n_edges())
            .map(|e| (self.z_bar[e] + self.sqrt_n * psi[e]).floor().max(0.0) as u64)
            .collect();
        // Repair to feasibility: trim rows to x_i and columns to N_j in
        // decreasing edge order, then fill back to work conservation.
        let mut rows = row_sums(topo, &z);
        for i in 0..ni {
            for &e in topo.class_edges(i).iter().rev() {
                if rows[i] <= x[i] {
                    break;
                }
                let cut = z[e].min(rows[i] - x[i]);
                z[e] -= cut;
                rows[i] -= cut;
            }
        }
        let mut cols = col_sums(topo, &z);
        for (j, cap) in self.plan.cap_n.iter().enumerate() {
            for &e in topo.pool_edges(j).iter().rev() {
                if cols[j] <= *cap {
                    break;
                }
                let cut = z[e].min(cols[j] - cap);
                z[e] -= cut;
                cols[j] -= cut;
                let (i, _) = topo.edges()[e];
                rows[i] -= cut;
            }
        }
        fill_to_work_conservation(topo, x, &self.plan.cap_n, &mut z);
        assert_feasible(topo, x, &self.plan.cap_n, &z);
        z
    }

    fn name(&self) -> &'static str {
        "constant"
    }
}

/// Exact continuous-time simulation by competing exponential clocks. The
/// policy is recomputed after every transition; the trajectory records
/// one sample per transition plus the initial state. Deterministic for a
/// fixed seed.
pub fn simulate_ctmc(
    net: &ValidatedNetwork,
    nth: &NthSystemParams,
    policy: &dyn SchedulingPolicy,
    x0: &[u64],
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    simulate_ctmc_stream(net, nth, policy, x0, horizon, seed, 0)
}

/// As `simulate_ctmc` with an explicit substream, used to give each
/// replication an independent stream of the same seed.
pub fn simulate_ctmc_stream(
    net: &ValidatedNetwork,
    nth: &NthSystemParams,
    policy: &dyn SchedulingPolicy,
    x0: &[u64],
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    if !(horizon >= 0.0) {
        return Err(Error::SpecParse(format!("horizon {horizon} is negative")));
    }
    let topo = net.topology();
    let ni = topo.n_classes();
    let nj = topo.n_pools();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut x: Vec<u64> = x0.to_vec();
    let mut t = 0.0f64;
    let mut times = Vec::new();
    let mut xs: Vec<u32> = Vec::new();
    let mut qs: Vec<u32> = Vec::new();
    let mut ys: Vec<u32> = Vec::new();

    loop {
        let z = policy.assign(&x);
        let rows = row_sums(topo, &z);
        let cols = col_sums(topo, &z);
        times.push(t);
        for (&xi, &row) in x.iter().zip(&rows) {
            xs.push(xi as u32);
            qs.push((xi - row) as u32);
        }
        for (&cap, &col) in nth.cap_n.iter().zip(&cols) {
            ys.push((cap - col) as u32);
        }

        let service: f64 = z
            .iter()
            .zip(&nth.mu_n)
            .map(|(&ze, &mu)| mu * ze as f64)
            .sum();
        let total_rate: f64 = nth.lambda_n.iter().sum::<f64>() + service;
        let dt: f64 = rng.sample::<f64, _>(Exp1) / total_rate;
        if t + dt > horizon {
            break;
        }
        t += dt;

        let mut pick = rng.random::<f64>() * total_rate;
        let mut applied = false;
        for (xi, &rate) in x.iter_mut().zip(&nth.lambda_n) {
            pick -= rate;
            if pick < 0.0 {
                *xi += 1;
                applied = true;
                break;
            }
        }
        if !applied {
            let mut done = false;
            for (e, &(i, _)) in topo.edges().iter().enumerate() {
                pick -= nth.mu_n[e] * z[e] as f64;
                if pick < 0.0 {
                    x[i] -= 1;
                    done = true;
                    break;
                }
            }
            if !done {
                // Floating-point leftover: attribute to the last active
                // service edge, or the last arrival class if none.
                if let Some((e, _)) = topo
                    .edges()
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|&(e, _)| z[e] > 0)
                {
                    x[topo.edges()[e].0] -= 1;
                } else {
                    x[ni - 1] += 1;
                }
            }
        }
    }

    Ok(Trajectory {
        n: nth.n,
        n_classes: ni,
        n_pools: nj,
        horizon,
        seed,
        times,
        x: xs,
        q: qs,
        y: ys,
    })
}

/// Runs independent replications in parallel; replication r uses stream
/// r of the seed, so results do not depend on the thread schedule.
pub fn run_replications(
    net: &ValidatedNetwork,
    nth: &NthSystemParams,
    policy: &dyn SchedulingPolicy,
    x0: &[u64],
    horizon: f64,
    seed: u64,
    reps: usize,
) -> Result<Vec<Trajectory>> {
    (0..reps)
        .into_par_iter()
        .map(|r| simulate_ctmc_stream(net, nth, policy, x0, horizon, seed, r as u64))
        .collect()
}

/// Fluid-level class occupancy xbar^n of a concrete system.
pub fn x_bar_n(net: &ValidatedNetwork, fluid: &FluidSolution, nth: &NthSystemParams) -> Vec<f64> {
    let mut out = vec![0.0; net.n_classes()];
    for (e, &(i, j)) in net.topology().edges().iter().enumerate() {
        out[i] += fluid.xi_star[e] * nth.cap_n[j] as f64;
    }
    out
}

/// Applies diffusion scaling pointwise: breve mode centers at the fluid
/// occupancy (`x_bar`), tilde mode at the plan's class staffing.
pub fn diffusion_scale(
    traj: &Trajectory,
    mode: ScaleMode,
    plan: Option<&StaffingPlan>,
    x_bar: Option<&[f64]>,
) -> Result<ScaledTrajectory> {
    let center: Vec<f64> = match mode {
        ScaleMode::Tilde => {
            let plan = plan.ok_or_else(|| {
                Error::ModeMismatch("tilde scaling needs a staffing plan".into())
            })?;
            if plan.n != traj.n {
                return Err(Error::ModeMismatch(format!(
                    "plan is for n = {} but trajectory has n = {}",
                    plan.n, traj.n
                )));
            }
            plan.n_tilde_class.iter().map(|&v| v as f64).collect()
        }
        ScaleMode::Breve => x_bar
            .ok_or_else(|| Error::ModeMismatch("breve scaling needs the fluid centering".into()))?
            .to_vec(),
    };
    if center.len() != traj.n_classes {
        return Err(Error::ModeMismatch(format!(
            "centering has {} classes, trajectory {}",
            center.len(),
            traj.n_classes
        )));
    }
    let s = (traj.n as f64).sqrt();
    let mut x = Vec::with_capacity(traj.x.len());
    for k in 0..traj.len() {
        for (i, &c) in center.iter().enumerate() {
            x.push((traj.x_at(k)[i] as f64 - c) / s);
        }
    }
    Ok(ScaledTrajectory {
        times: traj.times.clone(),
        horizon: traj.horizon,
        n_classes: traj.n_classes,
        x,
    })
}

/// Fixed-width histogram over [0, max]; used for time-weighted quantiles
/// without retaining every sample.
struct WeightedHistogram {
    width: f64,
    bins: Vec<f64>,
    total: f64,
}

impl WeightedHistogram {
    fn new(max: f64, bins: usize) -> Self {
        WeightedHistogram {
            width: max / bins as f64,
            bins: vec![0.0; bins + 1],
            total: 0.0,
        }
    }

    fn add(&mut self, value: f64, weight: f64) {
        let k = ((value / self.width) as usize).min(self.bins.len() - 1);
        self.bins[k] += weight;
        self.total += weight;
    }

    /// Smallest bin upper edge with cumulative weight >= level * total.
    fn quantile(&self, level: f64) -> f64 {
        let target = level * self.total;
        let mut acc = 0.0;
        for (k, &w) in self.bins.iter().enumerate() {
            acc += w;
            if acc >= target {
                return (k as f64 + 1.0) * self.width;
            }
        }
        self.bins.len() as f64 * self.width
    }

    /// Weight fraction strictly above the bin containing `value`.
    fn survival(&self, value: f64) -> f64 {
        let k = ((value / self.width) as usize).min(self.bins.len() - 1);
        let above: f64 = self.bins[k + 1..].iter().sum();
        above / self.total
    }
}

/// Time-weighted stationary statistics of the tilde-scaled state over
/// replications, skipping a burn-in fraction of each trajectory.
pub fn stationary_stats(
    trajs: &[Trajectory],
    plan: &StaffingPlan,
    burn_in: f64,
) -> Result<TrajectoryStats> {
    if trajs.is_empty() || trajs.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyTrajectory);
    }
    if !(0.0..=0.9).contains(&burn_in) {
        return Err(Error::SpecParse(format!("burn-in {burn_in} outside [0, 0.9]")));
    }
    let center: Vec<f64> = plan.n_tilde_class.iter().map(|&v| v as f64).collect();
    let s = (plan.n as f64).sqrt();

    // Histogram range: |x-tilde| beyond 100 would mean an excursion of
    // 100 sqrt(n) servers; cap there and let the top bin absorb it.
    let mut norm_hist = WeightedHistogram::new(100.0, 20_000);
    let mut pos_hist = WeightedHistogram::new(100.0, 20_000);
    let mut idle = Running::default();
    let mut idle_weight = 0.0f64;
    let mut idle_sum = 0.0f64;

    for traj in trajs {
        if traj.n != plan.n {
            return Err(Error::ModeMismatch(format!(
                "plan is for n = {} but a trajectory has n = {}",
                plan.n, traj.n
            )));
        }
        let start = burn_in * traj.horizon;
        for k in 0..traj.len() {
            let t0 = traj.times[k];
            let t1 = t0 + traj.hold_time(k);
            let w = (t1.min(traj.horizon) - t0.max(start)).max(0.0);
            if w == 0.0 {
                continue;
            }
            let xt: Vec<f64> = traj
                .x_at(k)
                .iter()
                .zip(&center)
                .map(|(&v, &c)| (v as f64 - c) / s)
                .collect();
            let norm = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
            let pos_total = xt.iter().sum::<f64>().max(0.0);
            norm_hist.add(norm, w);
            pos_hist.add(pos_total, w);
            let y_total: f64 = traj.y_at(k).iter().map(|&v| v as f64).sum();
            idle_sum += w * y_total / s;
            idle_weight += w;
            idle.push(y_total / s);
        }
    }
    if idle_weight == 0.0 {
        return Err(Error::EmptyTrajectory);
    }

    let levels = vec![0.5, 0.9, 0.99];
    let quantiles: Vec<f64> = levels.iter().map(|&l| norm_hist.quantile(l)).collect();

    // Tail exponent: fit log-survival of the positive part between its
    // median and 99.5 percent points.
    let lo = pos_hist.quantile(0.5);
    let hi = pos_hist.quantile(0.995);
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let grid = 24;
    for g in 0..grid {
        let t = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let sv = pos_hist.survival(t);
        if sv > 0.0 {
            ts.push(t);
            logs.push(sv.ln());
        }
    }
    let (slope, _, r2) = if ts.len() >= 4 {
        linear_fit(&ts, &logs)
    } else {
        (f64::NAN, f64::NAN, 0.0)
    };

    Ok(TrajectoryStats {
        quantile_levels: levels,
        quantiles,
        idleness_avg: idle_sum / idle_weight,
        tail_exponent: -slope,
        tail_r2: r2,
        replications: trajs.len(),
        seed: trajs[0].seed,
    })
}

/// Time-weighted median of |x-tilde| over successive equal time windows
/// (after no burn-in); used to observe transient growth.
pub fn windowed_medians(traj: &Trajectory, plan: &StaffingPlan, windows: usize) -> Vec<f64> {
    let center: Vec<f64> = plan.n_tilde_class.iter().map(|&v| v as f64).collect();
    let s = (plan.n as f64).sqrt();
    let mut hists: Vec<WeightedHistogram> = (0..windows)
        .map(|_| WeightedHistogram::new(200.0, 40_000))
        .collect();
    let wlen = traj.horizon / windows as f64;
    for k in 0..traj.len() {
        let t0 = traj.times[k];
        let t1 = t0 + traj.hold_time(k);
        let norm = traj
            .x_at(k)
            .iter()
            .zip(&center)
            .map(|(&v, &c)| ((v as f64 - c) / s).powi(2))
            .sum::<f64>()
            .sqrt();
        // Spread the hold time across the windows it overlaps.
        let first = ((t0 / wlen) as usize).min(windows - 1);
        let last = ((t1 / wlen) as usize).min(windows - 1);
        for (w, hist) in hists.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = (w as f64 * wlen).max(t0);
            let hi = ((w + 1) as f64 * wlen).min(t1);
            if hi > lo {
                hist.add(norm, hi - lo);
            }
        }
    }
    hists
        .iter()
        .map(|h| if h.total > 0.0 { h.quantile(0.5) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::compute_swss;
    use crate::network::{n_network_demo, EdgeSpec, NetworkSpec};
    use std::collections::BTreeMap;

    fn fixture() -> (ValidatedNetwork, FluidSolution, SwssResult) {
        let net = n_network_demo().validate().unwrap();
        let fluid = net.solve_fluid().unwrap();
        let swss = compute_swss(&net, &fluid, &[0.5, 0.5]).unwrap();
        (net, fluid, swss)
    }

    fn fixture_plan(n: u64) -> (ValidatedNetwork, NthSystemParams, StaffingPlan) {
        let (net, fluid, swss) = fixture();
        let nth = net.nth_from_order(n).unwrap();
        let plan = synthesize_staffing(&net, &fluid, &nth, &swss).unwrap();
        (net, nth, plan)
    }

    #[test]
    fn staffing_plan_matches_hand_arithmetic() {
        let (_, nth, plan) = fixture_plan(400);
        assert_eq!(nth.cap_n, vec![420, 420]);
        // Edges (1,1), (1,2), (2,2): pool 1 designates class 1; pool 2
        // designates class 1, so edge (2,2) rounds to floor(200 + 20) and
        // edge (1,2) absorbs 420 - 220.
        assert_eq!(plan.n_tilde, vec![420, 200, 220]);
        assert_eq!(plan.n_tilde_class, vec![620, 220]);
        for j in 0..2 {
            let total: u64 = [0usize, 1, 2]
                .iter()
                .filter(|&&e| [(0, 0), (0, 1), (1, 1)][e].1 == j)
                .map(|&e| plan.n_tilde[e])
                .sum();
            assert_eq!(total, plan.cap_n[j]);
        }
        // Reference staffing is xi* N^n rounded: (420, 210, 210).
        assert_eq!(plan.reference, vec![420, 210, 210]);
        assert!((plan.c0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn staffing_detects_too_small_systems() {
        let (net, fluid, _) = fixture();
        // A strongly negative kappa on the non-designated edge drives its
        // target negative for small n.
        let mut swss = compute_swss(&net, &fluid, &[0.5, 0.5]).unwrap();
        swss.kappa = vec![1.0, 0.0, -30.0];
        let nth = net.nth_from_order(4).unwrap();
        let err = synthesize_staffing(&net, &fluid, &nth, &swss).unwrap_err();
        assert!(matches!(err, Error::NTooSmall(_)));
    }

    #[test]
    fn bsp_reproduces_the_published_closed_form() {
        let (net, _, plan) = fixture_plan(400);
        let policy = bsp_policy(&net, &plan);
        // States hand-evaluated against the explicit two-pool policy.
        let cases: [(&[u64; 2], [u64; 3]); 6] = [
            (&[500, 100], [420, 80, 100]),
            (&[700, 100], [420, 280, 100]),
            (&[700, 300], [420, 200, 220]),
            (&[650, 250], [420, 200, 220]),
            (&[100, 500], [100, 0, 420]),
            (&[500, 400], [420, 80, 340]),
        ];
        for (x, want) in cases {
            assert_eq!(policy.assign(x), want.to_vec(), "state {x:?}");
        }
        assert_eq!(policy.assign(&[0, 0]), vec![0, 0, 0]);
        // Saturation: every pool busy.
        let z = policy.assign(&[5000, 5000]);
        assert_eq!(z[0], 420);
        assert_eq!(z[1] + z[2], 420);
    }

    #[test]
    fn bsp_respects_threshold_branches_everywhere() {
        let (net, _, plan) = fixture_plan(100);
        let policy = bsp_policy(&net, &plan);
        let topo = net.topology();
        for x1 in (0..=300).step_by(17) {
            for x2 in (0..=300).step_by(13) {
                let x = [x1 as u64, x2 as u64];
                let z = policy.assign(&x);
                let rows = row_sums(topo, &z);
                let cols = col_sums(topo, &z);
                for i in 0..2 {
                    assert!(rows[i] <= x[i]);
                    // Branch conditions of the saturation policy.
                    for &e in topo.class_edges(i) {
                        if x[i] <= plan.n_tilde_class[i] {
                            assert!(z[e] <= plan.n_tilde[e]);
                        } else {
                            assert!(z[e] >= plan.n_tilde[e]);
                        }
                    }
                }
                for (&col, &cap) in cols.iter().zip(&plan.cap_n) {
                    assert!(col <= cap);
                }
                // Joint work conservation.
                for &(i, j) in topo.edges() {
                    let q = x[i] - rows[i];
                    let y = plan.cap_n[j] - cols[j];
                    assert!(q == 0 || y == 0, "edge ({i},{j}) at {x:?}");
                }
            }
        }
    }

    #[test]
    fn constant_control_is_feasible_and_falls_back() {
        let (net, fluid, swss) = fixture();
        let nth = net.nth_from_order(400).unwrap();
        let plan = synthesize_staffing(&net, &fluid, &nth, &swss).unwrap();
        let policy = constant_control_policy(&net, &fluid, &plan, (1, 1), 1.0).unwrap();
        let bsp = bsp_policy(&net, &plan);
        let topo = net.topology();

        // Balanced state: row sums equal x, no queue, no idleness.
        let x = [630u64, 210];
        let z = policy.assign(&x);
        let rows = row_sums(topo, &z);
        assert_eq!(rows, vec![630, 210]);
        let cols = col_sums(topo, &z);
        assert_eq!(cols, vec![420, 420]);

        // One excess job: queued, all servers busy.
        let x = [631u64, 210];
        let z = policy.assign(&x);
        let rows = row_sums(topo, &z);
        assert_eq!(rows[0] + rows[1], 840);
        assert_eq!(col_sums(topo, &z), vec![420, 420]);

        // Far outside the region the fallback applies verbatim.
        let x = [5000u64, 5000];
        assert_eq!(policy.assign(&x), bsp.assign(&x));

        assert!(matches!(
            constant_control_policy(&net, &fluid, &plan, (1, 0), 1.0),
            Err(Error::AnchorNotEdge { .. })
        ));
    }

    #[test]
    fn zero_horizon_records_the_initial_state_only() {
        let (net, nth, plan) = fixture_plan(100);
        let policy = bsp_policy(&net, &plan);
        let x0 = plan.n_tilde_class.clone();
        let traj = simulate_ctmc(&net, &nth, &policy, &x0, 0.0, 7).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.x_at(0), &[x0[0] as u32, x0[1] as u32][..]);
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let (net, nth, plan) = fixture_plan(100);
        let policy = bsp_policy(&net, &plan);
        let x0 = plan.n_tilde_class.clone();
        let a = simulate_ctmc(&net, &nth, &policy, &x0, 5.0, 42).unwrap();
        let b = simulate_ctmc(&net, &nth, &policy, &x0, 5.0, 42).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.x, b.x);
        let c = simulate_ctmc(&net, &nth, &policy, &x0, 5.0, 43).unwrap();
        assert!(a.times != c.times || a.x != c.x);
    }

    #[test]
    fn replications_are_schedule_independent() {
        let (net, nth, plan) = fixture_plan(100);
        let policy = bsp_policy(&net, &plan);
        let x0 = plan.n_tilde_class.clone();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool
            .install(|| run_replications(&net, &nth, &policy, &x0, 3.0, 5, 4))
            .unwrap();
        let multi = run_replications(&net, &nth, &policy, &x0, 3.0, 5, 4).unwrap();
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.times, b.times);
            assert_eq!(a.x, b.x);
        }
        // Distinct streams actually differ.
        assert!(multi[0].times != multi[1].times);
    }

    #[test]
    fn headcount_accounting_balances() {
        let (net, nth, plan) = fixture_plan(100);
        let policy = bsp_policy(&net, &plan);
        let x0 = plan.n_tilde_class.clone();
        let traj = simulate_ctmc(&net, &nth, &policy, &x0, 10.0, 11).unwrap();
        for k in 1..traj.len() {
            let prev: i64 = traj.x_at(k - 1).iter().map(|&v| v as i64).sum();
            let cur: i64 = traj.x_at(k).iter().map(|&v| v as i64).sum();
            assert_eq!((cur - prev).abs(), 1, "each transition moves one job");
        }
        for k in 0..traj.len() {
            let x = traj.x_at(k);
            let q = traj.q_at(k);
            for i in 0..2 {
                assert!(q[i] <= x[i]);
            }
        }
    }

    #[test]
    fn single_station_matches_erlang_oracle() {
        // M/M/N at critical load with square-root slack: lambda^n = 400,
        // N = 420, mu = 1. The busy-server average is exactly lambda/mu
        // in steady state; the delay probability follows the classic
        // recursion.
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
        let nth = net.nth_from_order(400).unwrap();
        assert_eq!(nth.cap_n, vec![420]);
        let plan = synthesize_staffing(&net, &fluid, &nth, &swss).unwrap();
        let policy = bsp_policy(&net, &plan);

        let servers = 420u64;
        let offered = 400.0f64;
        // Erlang loss recursion, then the delay formula.
        let mut b = 1.0f64;
        for k in 1..=servers {
            b = offered * b / (k as f64 + offered * b);
        }
        let rho = offered / servers as f64;
        let delay_prob = b / (1.0 - rho * (1.0 - b));

        let trajs =
            run_replications(&net, &nth, &policy, &[servers], 60.0, 2024, 8).unwrap();
        let mut busy = Running::default();
        let mut delayed = 0.0f64;
        let mut total = 0.0f64;
        for traj in &trajs {
            let start = 0.25 * traj.horizon;
            for k in 0..traj.len() {
                let t0 = traj.times[k];
                let w = (t0 + traj.hold_time(k)).min(traj.horizon) - t0.max(start);
                if w <= 0.0 {
                    continue;
                }
                let y = traj.y_at(k)[0] as f64;
                busy.push(servers as f64 - y);
                total += w;
                if traj.q_at(k)[0] > 0 {
                    delayed += w;
                }
            }
        }
        // Throughput identity: E[busy] = lambda/mu = 400.
        assert!(
            (busy.mean() - offered).abs() < 2.0,
            "mean busy {} vs {offered}",
            busy.mean()
        );
        let empirical_delay = delayed / total;
        assert!(
            (empirical_delay - delay_prob).abs() < 0.05,
            "delay prob {empirical_delay} vs Erlang {delay_prob}"
        );
    }

    #[test]
    fn scaling_modes_center_correctly() {
        let (net, nth, plan) = fixture_plan(400);
        let policy = bsp_policy(&net, &plan);
        let x0 = plan.n_tilde_class.clone();
        let traj = simulate_ctmc(&net, &nth, &policy, &x0, 0.0, 1).unwrap();

        let tilde = diffusion_scale(&traj, ScaleMode::Tilde, Some(&plan), None).unwrap();
        assert!(tilde.x.iter().all(|&v| v == 0.0), "start at the plan center");

        let fluid = net.solve_fluid().unwrap();
        let xb = x_bar_n(&net, &fluid, &nth);
        let breve = diffusion_scale(&traj, ScaleMode::Breve, None, Some(&xb)).unwrap();
        // The two modes differ by the constant (xbar - N-tilde)/sqrt(n).
        for (i, &xbi) in xb.iter().enumerate() {
            let want = (xbi - plan.n_tilde_class[i] as f64) / 20.0;
            assert!((tilde.x[i] - breve.x[i] - want).abs() < 1e-12);
        }

        assert!(matches!(
            diffusion_scale(&traj, ScaleMode::Tilde, None, None),
            Err(Error::ModeMismatch(_))
        ));
        assert!(matches!(
            diffusion_scale(&traj, ScaleMode::Breve, None, None),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn stationary_stats_of_a_constant_trajectory() {
        let (_, _, plan) = fixture_plan(400);
        // A hand-built trajectory pinned at the plan center for one time
        // unit: no queue, no idleness, zero scaled norm.
        let traj = Trajectory {
            n: 400,
            n_classes: 2,
            n_pools: 2,
            horizon: 1.0,
            seed: 0,
            times: vec![0.0],
            x: vec![620, 220],
            q: vec![0, 0],
            y: vec![0, 0],
        };
        let stats = stationary_stats(&[traj], &plan, 0.0).unwrap();
        // All mass at |x-tilde| = 0; quantiles land in the first bin.
        for q in &stats.quantiles {
            assert!(*q < 0.01);
        }
        assert!(stats.idleness_avg.abs() < 1e-12);
        assert!(stats.quantiles[0] <= stats.quantiles[1]);
        assert!(stats.quantiles[1] <= stats.quantiles[2]);
    }

    #[test]
    fn stats_reject_empty_input() {
        let (_, _, plan) = fixture_plan(400);
        assert!(matches!(
            stationary_stats(&[], &plan, 0.2),
            Err(Error::EmptyTrajectory)
        ));
    }
}
