//! Report assembly: JSON documents with sorted keys and floats rounded
//! to 12 significant digits, plus CSV trajectory writers. Everything here
//! is deterministic for fixed inputs, so repeated runs produce identical
//! bytes.

use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::Path;

use qednet::ctmc::{StaffingPlan, Trajectory, TrajectoryStats};
use qednet::drift::DriftModel;
use qednet::gains::{GainTable, SwssResult};
use qednet::network::{FluidSolution, NetworkSpec, NthSystemParams, ValidatedNetwork};
use qednet::sde::SdePath;
use qednet::stability::{LyapunovCertificate, StabilityReport, TransienceCertificate};
use qednet::verify::VerifyReport;
use qednet::Result;

/// A float as a JSON number rounded to 12 significant digits (negative
/// zero normalized, non-finite values mapped to null).
pub fn number(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    if x == 0.0 {
        return json!(0.0);
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("rounded float reparses");
    json!(rounded)
}

pub fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| number(x)).collect())
}

fn matrix(m: &qednet::nalgebra::DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|r| Value::Array((0..m.ncols()).map(|c| number(m[(r, c)])).collect()))
            .collect(),
    )
}

/// Map keyed by identifier with numeric values.
fn keyed(ids: &[String], values: &[f64]) -> Value {
    let mut map = Map::new();
    for (id, &v) in ids.iter().zip(values) {
        map.insert(id.clone(), number(v));
    }
    Value::Object(map)
}

/// Map keyed by "class->pool" edge labels.
fn edge_keyed(net: &ValidatedNetwork, values: &[f64]) -> Value {
    let mut map = Map::new();
    for (e, &(i, j)) in net.topology().edges().iter().enumerate() {
        let key = format!("{}->{}", net.class_ids()[i], net.pool_ids()[j]);
        map.insert(key, number(values[e]));
    }
    Value::Object(map)
}

fn edge_keyed_u64(net: &ValidatedNetwork, values: &[u64]) -> Value {
    let mut map = Map::new();
    for (e, &(i, j)) in net.topology().edges().iter().enumerate() {
        let key = format!("{}->{}", net.class_ids()[i], net.pool_ids()[j]);
        map.insert(key, json!(values[e]));
    }
    Value::Object(map)
}

fn swss_block(net: &ValidatedNetwork, swss: &SwssResult) -> Value {
    json!({
        "vartheta_p": number(swss.vartheta_p),
        "p": keyed(net.class_ids(), &swss.p),
        "kappa": edge_keyed(net, &swss.kappa),
        "theta": keyed(net.pool_ids(), &swss.theta),
        "per_class_surplus": keyed(net.class_ids(), &swss.r),
        "per_class_share": keyed(net.class_ids(), &swss.gamma),
    })
}

fn fluid_block(net: &ValidatedNetwork, fluid: &FluidSolution) -> Value {
    json!({
        "xi_star": edge_keyed(net, &fluid.xi_star),
        "z_star": edge_keyed(net, &fluid.z_star),
        "x_star": keyed(net.class_ids(), &fluid.x_star),
        "criticality_residual": number(fluid.criticality_residual),
    })
}

fn gains_block(net: &ValidatedNetwork, gains: &GainTable) -> Value {
    let ni = net.n_classes();
    let nj = net.n_pools();
    let mut class_to_pool = Map::new();
    let mut class_to_class = Map::new();
    let mut pool_to_pool = Map::new();
    for i in 0..ni {
        let mut row = Map::new();
        for j in 0..nj {
            row.insert(net.pool_ids()[j].clone(), number(gains.class_to_pool(i, j)));
        }
        class_to_pool.insert(net.class_ids()[i].clone(), Value::Object(row));
        let mut row = Map::new();
        for l in 0..ni {
            row.insert(net.class_ids()[l].clone(), number(gains.class_to_class(i, l)));
        }
        class_to_class.insert(net.class_ids()[i].clone(), Value::Object(row));
    }
    for j in 0..nj {
        let mut row = Map::new();
        for jp in 0..nj {
            row.insert(net.pool_ids()[jp].clone(), number(gains.pool_to_pool(j, jp)));
        }
        pool_to_pool.insert(net.pool_ids()[j].clone(), Value::Object(row));
    }
    json!({
        "class_to_pool": class_to_pool,
        "class_to_class": class_to_class,
        "pool_to_pool": pool_to_pool,
    })
}

fn drift_block(net: &ValidatedNetwork, model: &DriftModel, margin: (f64, usize)) -> Value {
    json!({
        "anchor": {
            "class": net.class_ids()[model.anchor.0],
            "pool": net.pool_ids()[model.anchor.1],
        },
        "h": keyed(net.class_ids(), model.h.as_slice()),
        "b1": matrix(&model.b1),
        "b2": matrix(&model.b2),
        "sigma": keyed(net.class_ids(), model.sigma.as_slice()),
        "idleness_margin": number(margin.0),
        "idleness_margin_argmin_pool": net.pool_ids()[margin.1],
    })
}

fn stability_block(report: &StabilityReport) -> Value {
    json!({
        "classification": report.classification.as_str(),
        "vartheta_p": number(report.vartheta_p),
        "nth": report.nth.map(|(v, c)| json!({
            "classification": c.as_str(),
            "vartheta_p": number(v),
        })).unwrap_or(Value::Null),
    })
}

pub fn transience_block(cert: &TransienceCertificate) -> Value {
    json!({
        "kind": "transience",
        "beta": number(cert.beta),
        "min_margin": number(cert.min_margin),
        "generator_at_origin": number(cert.lh_at_origin),
        "grid": {
            "radii": numbers(&cert.grid.radii),
            "directions": cert.grid.directions,
            "seed": cert.grid.seed,
        },
    })
}

pub fn lyapunov_block(cert: &LyapunovCertificate) -> Value {
    json!({
        "kind": "positive-recurrence",
        "s": matrix(&cert.s),
        "epsilon": number(cert.epsilon),
        "kappa0": number(cert.kappa0),
        "kappa1": number(cert.kappa1),
        "kappa_circ": number(cert.kappa_circ),
        "eta": number(cert.eta),
        "grid": {
            "radii": numbers(&cert.grid.radii),
            "directions": cert.grid.directions,
            "seed": cert.grid.seed,
        },
    })
}

/// Relative difference scaled by max(1, |a|, |b|).
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

struct CrossCheck {
    name: &'static str,
    residual: f64,
    tolerance: f64,
}

fn cross_check_json(checks: &[CrossCheck]) -> (Value, bool) {
    let mut any_failed = false;
    let rows: Vec<Value> = checks
        .iter()
        .map(|c| {
            let passed = c.residual.is_finite() && c.residual <= c.tolerance;
            any_failed |= !passed;
            json!({
                "name": c.name,
                "residual": number(c.residual),
                "tolerance": number(c.tolerance),
                "passed": passed,
            })
        })
        .collect();
    (Value::Array(rows), any_failed)
}

/// Full analysis: fluid, gains, the parameter by all three routes, drift
/// summary, classification, and (optionally) a stability certificate.
/// Returns the JSON document and whether any check failed.
pub fn analyze_report(
    spec: &NetworkSpec,
    p: Option<Vec<f64>>,
    anchor: Option<(usize, usize)>,
    certify: bool,
    seed: u64,
) -> Result<(Value, bool)> {
    let net = spec.validate()?;
    let fluid = net.solve_fluid()?;
    let gains = qednet::gains::compute_gains(&net);
    let p = p.unwrap_or_else(|| vec![1.0 / net.n_classes() as f64; net.n_classes()]);

    let closed = qednet::gains::compute_swss(&net, &fluid, &p)?;
    let oracle = qednet::gains::lp_oracle(&net, &fluid, &p)?;
    let anchor = anchor.unwrap_or(net.topology().edges()[0]);
    let model = qednet::drift::build_drift(&net, &fluid, anchor)?;
    let via_drift = qednet::drift::swss_from_drift(&model, &p);
    let margin = qednet::drift::lemma2_margin(&model);

    let swss_nth = match net.nth() {
        Some(nth) => Some(qednet::gains::compute_swss_nth(&net, &fluid, nth, &p)?),
        None => None,
    };
    let stability = qednet::stability::classify(&closed, swss_nth.as_ref());

    let mut checks = vec![
        CrossCheck {
            name: "closed-form-vs-oracle",
            residual: rel(closed.vartheta_p, oracle.vartheta_p),
            tolerance: 1e-9,
        },
        CrossCheck {
            name: "closed-form-vs-drift",
            residual: rel(closed.vartheta_p, via_drift),
            tolerance: 1e-9,
        },
        CrossCheck {
            name: "oracle-vs-drift",
            residual: rel(oracle.vartheta_p, via_drift),
            tolerance: 1e-9,
        },
        CrossCheck {
            name: "criticality-residual",
            residual: fluid.criticality_residual.abs(),
            tolerance: 1e-9 * (1.0 + net.lambda().iter().sum::<f64>()),
        },
    ];
    checks.push(CrossCheck {
        name: "idleness-margin-positive",
        residual: if margin.0 > 0.0 { 0.0 } else { f64::INFINITY },
        tolerance: 0.0,
    });

    let mut certificate = Value::Null;
    let mut certificate_failed = false;
    if certify {
        use qednet::stability::Classification;
        match stability.classification {
            Classification::Stabilizable => {
                let recentered = model.recentered(closed.vartheta_p, &closed.p);
                match qednet::stability::find_s(&recentered).and_then(|(s, _)| {
                    qednet::stability::check_drift_inequality_sde(&recentered, &s, 1e-2, seed)
                }) {
                    Ok(cert) => certificate = lyapunov_block(&cert),
                    Err(e) => {
                        certificate = json!({ "error": e.to_string() });
                        certificate_failed = true;
                    }
                }
            }
            Classification::Transient => {
                match qednet::stability::transience_certificate(&model, 512, seed) {
                    Ok(cert) => certificate = transience_block(&cert),
                    Err(e) => {
                        certificate = json!({ "error": e.to_string() });
                        certificate_failed = true;
                    }
                }
            }
            Classification::NotPositiveRecurrent => {
                certificate = json!({
                    "kind": "none",
                    "note": "parameter is zero within tolerance; no certificate applies",
                });
            }
        }
    }

    let (check_rows, checks_failed) = cross_check_json(&checks);
    let failed = checks_failed || certificate_failed;

    let report = json!({
        "command": "analyze",
        "spec": serde_json::to_value(spec).expect("spec serializes"),
        "fluid": fluid_block(&net, &fluid),
        "gains": gains_block(&net, &gains),
        "swss": swss_block(&net, &closed),
        "swss_oracle_vartheta_p": number(oracle.vartheta_p),
        "swss_drift_vartheta_p": number(via_drift),
        "swss_nth": swss_nth.map(|s| swss_block(&net, &s)).unwrap_or(Value::Null),
        "drift": drift_block(&net, &model, margin),
        "stability": stability_block(&stability),
        "certificate": certificate,
        "cross_checks": check_rows,
        "failed": failed,
    });
    Ok((report, failed))
}

/// Reallocation experiment: move `delta` of square-root capacity from
/// one pool to another along the gain ratio and report the (invariant)
/// parameter before and after.
pub fn whatif_report(
    spec: &NetworkSpec,
    from_pool: usize,
    to_pool: usize,
    delta: f64,
    p: Option<Vec<f64>>,
) -> Result<(Value, bool)> {
    let net = spec.validate()?;
    let fluid = net.solve_fluid()?;
    let p = p.unwrap_or_else(|| vec![1.0 / net.n_classes() as f64; net.n_classes()]);
    let before = qednet::gains::compute_swss(&net, &fluid, &p)?;

    let moved_spec = qednet::gains::reallocate(&net, from_pool, to_pool, delta)?;
    let moved = moved_spec.validate()?;
    let moved_fluid = moved.solve_fluid()?;
    let after = qednet::gains::compute_swss(&moved, &moved_fluid, &p)?;

    let residual = rel(before.vartheta_p, after.vartheta_p);
    let invariant_ok = residual <= 1e-9;
    let report = json!({
        "command": "whatif",
        "from": net.pool_ids()[from_pool],
        "to": net.pool_ids()[to_pool],
        "delta": number(delta),
        "before": {
            "nu_hat": keyed(net.pool_ids(), net.nu_hat()),
            "vartheta_p": number(before.vartheta_p),
        },
        "after": {
            "nu_hat": keyed(moved.pool_ids(), moved.nu_hat()),
            "vartheta_p": number(after.vartheta_p),
        },
        "vartheta_residual": number(residual),
        "invariant_ok": invariant_ok,
        "failed": !invariant_ok,
    });
    Ok((report, !invariant_ok))
}

/// The verification suite as JSON, with the corruption negative control
/// appended as its own check.
pub fn verify_report_json(report: &VerifyReport, negative_control_detected: bool) -> (Value, bool) {
    let mut rows: Vec<Value> = report
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "passed": c.passed,
                "worst": number(c.worst),
                "tolerance": number(c.tolerance),
                "detail": c.detail,
            })
        })
        .collect();
    rows.push(json!({
        "name": "gain-corruption-negative-control",
        "passed": negative_control_detected,
        "worst": Value::Null,
        "tolerance": Value::Null,
        "detail": "a deliberately corrupted gain table must be flagged",
    }));
    let all_passed = report.all_passed && negative_control_detected;
    let doc = json!({
        "command": "verify",
        "seed": report.seed,
        "trials": report.trials,
        "instances": report.instances,
        "checks": rows,
        "all_passed": all_passed,
        "failed": !all_passed,
    });
    (doc, !all_passed)
}

fn keyed_u64(ids: &[String], values: &[u64]) -> Value {
    let mut map = Map::new();
    for (id, &v) in ids.iter().zip(values) {
        map.insert(id.clone(), json!(v));
    }
    Value::Object(map)
}

fn staffing_block(net: &ValidatedNetwork, plan: &StaffingPlan) -> Value {
    let warning = if plan.vartheta_p <= 0.0 {
        json!("parameter is not positive; no staffing stabilizes the system")
    } else {
        Value::Null
    };
    json!({
        "n": plan.n,
        "n_tilde": edge_keyed_u64(net, &plan.n_tilde),
        "n_tilde_class": keyed_u64(net.class_ids(), &plan.n_tilde_class),
        "cap_n": keyed_u64(net.pool_ids(), &plan.cap_n),
        "reference": edge_keyed_u64(net, &plan.reference),
        "c0": number(plan.c0),
        "vartheta_p": number(plan.vartheta_p),
        "warning": warning,
    })
}

fn stats_block(stats: &TrajectoryStats) -> Value {
    json!({
        "norm_quantiles": {
            "q50": number(stats.quantiles[0]),
            "q90": number(stats.quantiles[1]),
            "q99": number(stats.quantiles[2]),
        },
        "idleness_avg": number(stats.idleness_avg),
        "tail_exponent": number(stats.tail_exponent),
        "tail_r2": number(stats.tail_r2),
        "replications": stats.replications,
    })
}

/// Markov-chain simulation summary plus the file names of any written
/// trajectory CSVs.
#[allow(clippy::too_many_arguments)]
pub fn ctmc_report(
    net: &ValidatedNetwork,
    nth: &NthSystemParams,
    plan: &StaffingPlan,
    policy_name: &str,
    stats: &TrajectoryStats,
    horizon: f64,
    burn_in: f64,
    seed: u64,
    csv_files: &[String],
) -> Value {
    json!({
        "command": "simulate-ctmc",
        "n": nth.n,
        "policy": policy_name,
        "horizon": number(horizon),
        "burn_in": number(burn_in),
        "seed": seed,
        "staffing": staffing_block(net, plan),
        "stats": stats_block(stats),
        "csv_files": csv_files,
        "failed": false,
    })
}

/// Diffusion simulation summary with the predicted-idleness comparison.
#[allow(clippy::too_many_arguments)]
pub fn sde_report(
    net: &ValidatedNetwork,
    anchor: (usize, usize),
    dt: f64,
    horizon: f64,
    thin: usize,
    burn_in: f64,
    seed: u64,
    reps: usize,
    target: f64,
    estimate: f64,
    stderr: f64,
    csv_files: &[String],
) -> Value {
    let relative = if target != 0.0 {
        (estimate - target).abs() / target.abs()
    } else {
        f64::NAN
    };
    json!({
        "command": "simulate-sde",
        "control": "barv",
        "anchor": {
            "class": net.class_ids()[anchor.0],
            "pool": net.pool_ids()[anchor.1],
        },
        "dt": number(dt),
        "horizon": number(horizon),
        "thin": thin,
        "burn_in": number(burn_in),
        "seed": seed,
        "replications": reps,
        "predicted_idleness": {
            "target": number(target),
            "estimate": number(estimate),
            "stderr": number(stderr),
            "relative_error": number(relative),
            "within_three_stderr": (estimate - target).abs() <= 3.0 * stderr,
        },
        "csv_files": csv_files,
        "failed": false,
    })
}

/// Writes one Markov-chain trajectory as CSV with columns
/// t, x_<class>..., q_<class>..., y_<pool>...
pub fn write_ctmc_csv(path: &Path, net: &ValidatedNetwork, traj: &Trajectory) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("t");
    for id in net.class_ids() {
        header.push_str(&format!(",x_{id}"));
    }
    for id in net.class_ids() {
        header.push_str(&format!(",q_{id}"));
    }
    for id in net.pool_ids() {
        header.push_str(&format!(",y_{id}"));
    }
    writeln!(out, "{header}")?;
    for k in 0..traj.len() {
        let mut row = format!("{}", traj.times[k]);
        for &v in traj.x_at(k) {
            row.push_str(&format!(",{v}"));
        }
        for &v in traj.q_at(k) {
            row.push_str(&format!(",{v}"));
        }
        for &v in traj.y_at(k) {
            row.push_str(&format!(",{v}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Writes one diffusion path as CSV with columns t, x_<class>...
pub fn write_sde_csv(path: &Path, net: &ValidatedNetwork, sde: &SdePath) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("t");
    for id in net.class_ids() {
        header.push_str(&format!(",x_{id}"));
    }
    writeln!(out, "{header}")?;
    for k in 0..sde.len() {
        let mut row = format!("{}", sde.times[k]);
        for &v in sde.state_at(k) {
            row.push_str(&format!(",{v}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
