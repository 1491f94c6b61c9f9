//! Safety staffing, stability certificates, and simulation for
//! tree-structured multiclass multi-pool parallel server networks in the
//! Halfin-Whitt (quality-and-efficiency-driven) regime.

// Validation guards are written accept-form-negated (`!(x > 0.0)`) so a
// NaN parameter fails them; the positive rewrite `x <= 0.0` would let
// NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Vector and matrix types appearing in this crate's public API.
pub use nalgebra;

pub mod ctmc;
pub mod drift;
pub mod error;
pub mod gains;
pub mod graph;
pub mod linalg;
pub mod network;
pub mod randnet;
pub mod sde;
pub mod stability;
pub mod stats;
pub mod verify;

pub use ctmc::{
    bsp_policy, constant_control_policy, diffusion_scale, run_replications, simulate_ctmc,
    simulate_ctmc_stream, stationary_stats, synthesize_staffing, windowed_medians, x_bar_n,
    BspPolicy, ConstantControlPolicy, ScaleMode, ScaledTrajectory, SchedulingPolicy, SimState,
    StaffingPlan, Trajectory, TrajectoryStats,
};
pub use drift::{
    build_drift, build_drift_nth, eval_drift, eval_drift_primitive, eval_drift_scaled,
    eval_drift_scaled_decomposed, gains_from_b1, lemma2_margin, solve_psi, swss_from_drift,
    DriftModel, FlowAssignment,
};
pub use error::{Error, Result};
pub use gains::{
    class_headroom, compute_gains, compute_swss, compute_swss_nth, lp_oracle, reallocate,
    swss_per_anchor, GainTable, SwssResult,
};
pub use graph::{Node, Topology};
pub use network::{
    n_network_demo, EdgeSpec, FluidSolution, HatParams, NetworkSpec, NthSpec, NthSystemParams,
    ValidatedNetwork,
};
pub use randnet::{random_network, random_network_with, random_simplex_with};
pub use sde::{
    barv_control, estimate_idleness, run_sde_replications, simulate_sde, simulate_sde_stream,
    BarVControl, DiffusionControl, SdePath,
};
pub use stability::{
    check_drift_inequality_ctmc, check_drift_inequality_sde, classify, find_s, remark7_target,
    sde_generator, transience_certificate, Classification, GridDescription, LyapunovCertificate,
    LyapunovFunction, StabilityReport, TransienceCertificate,
};
pub use verify::{gain_corruption_detected, verify_corpus, CheckResult, VerifyReport};
