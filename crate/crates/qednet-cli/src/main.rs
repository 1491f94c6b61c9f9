//! Command-line front end: analyze a network, verify the identities on a
//! random corpus, run reallocation experiments, and simulate the Markov
//! chain or its diffusion limit. Reports are JSON on stdout (and files
//! under --out when given); trajectories are CSV. Exit codes: 0 success,
//! 2 spec parse failure, 3 invalid model or arguments, 4 a check or
//! certificate failed, 64 usage.

mod report;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use qednet::network::{NetworkSpec, ValidatedNetwork};
use qednet::Error;

#[derive(Parser)]
#[command(name = "qednet", version, about = "Staffing and stability analysis for tree-shaped parallel-server networks")]
struct Cli {
    /// Path to the network spec JSON file.
    #[arg(long, global = true, value_name = "PATH")]
    spec: Option<PathBuf>,

    /// Base seed for every random draw (corpus generation, grids,
    /// simulation streams).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory to write the report and any trajectory CSVs into.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Print the report as compact single-line JSON instead of pretty.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: fluid solve, gain table, the staffing parameter by
    /// three routes, drift model, classification, optional certificate.
    Analyze {
        /// Weight vector as comma-separated values, one per class
        /// (default: uniform).
        #[arg(long)]
        p: Option<String>,
        /// Anchor edge as "class:pool" by id or 1-based position
        /// (default: first edge).
        #[arg(long)]
        anchor: Option<String>,
        /// Also run the stability or transience certificate.
        #[arg(long)]
        certify: bool,
    },
    /// Check the cross-route identities on randomly generated networks.
    Verify {
        /// Number of random networks to generate.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Include the built-in two-class demo network in the corpus.
        #[arg(long)]
        fixture: bool,
    },
    /// Move square-root capacity between two pools along the gain ratio
    /// and confirm the staffing parameter does not change.
    Whatif {
        /// Source pool, by id or 1-based position.
        #[arg(long)]
        from: String,
        /// Destination pool, by id or 1-based position.
        #[arg(long)]
        to: String,
        /// Amount of second-order capacity to move from the source.
        #[arg(long)]
        delta: f64,
        /// Weight vector (default: uniform).
        #[arg(long)]
        p: Option<String>,
    },
    /// Simulate the Markov chain of a concrete system under a scheduling
    /// policy synthesized from the staffing plan.
    SimulateCtmc {
        /// System order n (default: the nth block of the spec).
        #[arg(long)]
        n: Option<u64>,
        /// Scheduling policy.
        #[arg(long, value_enum, default_value_t = PolicyKind::Bsp)]
        policy: PolicyKind,
        /// Simulation horizon in model time units.
        #[arg(long)]
        horizon: f64,
        /// Independent replications (parallel, schedule-independent).
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Fraction of the horizon discarded before statistics.
        #[arg(long, default_value_t = 0.2)]
        burn_in: f64,
        /// Anchor edge for the constant policy, "class:pool".
        #[arg(long)]
        anchor: Option<String>,
        /// Radius multiplier of the region where the constant policy
        /// mimics the diffusion control.
        #[arg(long, default_value_t = 1.0)]
        m0: f64,
        /// Weight vector (default: uniform).
        #[arg(long)]
        p: Option<String>,
    },
    /// Simulate the diffusion limit under the constant anchor control and
    /// compare measured idleness with its predicted stationary mean.
    SimulateSde {
        /// Diffusion control.
        #[arg(long, value_enum, default_value_t = ControlKind::Barv)]
        control: ControlKind,
        /// Anchor edge, "class:pool" (default: first edge).
        #[arg(long)]
        anchor: Option<String>,
        /// Euler step size.
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Simulation horizon in model time units.
        #[arg(long)]
        horizon: f64,
        /// Independent replications.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Record every thin-th step in the CSV.
        #[arg(long, default_value_t = 100)]
        thin: usize,
        /// Fraction of the horizon discarded before statistics.
        #[arg(long, default_value_t = 0.2)]
        burn_in: f64,
        /// Weight vector (default: uniform).
        #[arg(long)]
        p: Option<String>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum PolicyKind {
    /// Saturation-aware priority fill with a work-conservation pass.
    Bsp,
    /// Constant diffusion control inside the central region, priority
    /// fill outside.
    Constant,
}

#[derive(Copy, Clone, ValueEnum)]
enum ControlKind {
    /// Queue on the anchor class, idleness on the anchor pool.
    Barv,
}

/// Terminal failure: an exit code and a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SpecParse(_) | Error::Io(_) => 2,
            Error::InequalityFailed(_)
            | Error::MarginNonPositive { .. }
            | Error::NotTransientRegime { .. }
            | Error::NotFound(_)
            | Error::EmptyTrajectory
            | Error::NonFiniteState { .. } => 4,
            _ => 3,
        };
        Failure::new(code, e.to_string())
    }
}

/// A finished command: the report document and whether any check in it
/// failed (which turns exit 0 into exit 4).
struct RunOutput {
    report: Value,
    report_file: &'static str,
    failed: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(64)
                }
            };
        }
    };

    match run(&cli) {
        Ok(out) => {
            let rendered = render(&out.report, cli.json);
            println!("{rendered}");
            if let Some(dir) = &cli.out {
                if let Err(e) = write_report(dir, out.report_file, &rendered) {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            if out.failed {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn render(report: &Value, compact: bool) -> String {
    if compact {
        serde_json::to_string(report).expect("report serializes")
    } else {
        serde_json::to_string_pretty(report).expect("report serializes")
    }
}

fn write_report(dir: &Path, name: &str, rendered: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), format!("{rendered}\n"))
}

fn load_spec(cli: &Cli) -> Result<NetworkSpec, Failure> {
    let path = cli.spec.as_ref().ok_or_else(|| {
        Failure::new(64, "--spec <PATH> is required for this command (see --help)")
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(2, format!("cannot read {}: {e}", path.display())))?;
    NetworkSpec::from_json(&text).map_err(Failure::from)
}

/// Parses a comma-separated weight vector and checks its arity; the
/// library validates positivity and normalization.
fn parse_p(text: &str, n_classes: usize) -> Result<Vec<f64>, Failure> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let p = parts.map_err(|e| Failure::new(3, format!("cannot parse --p {text:?}: {e}")))?;
    if p.len() != n_classes {
        return Err(Failure::new(
            3,
            format!("--p has {} entries but the network has {n_classes} classes", p.len()),
        ));
    }
    Ok(p)
}

/// Resolves "name" against a list of node ids, accepting 1-based
/// positions as a fallback.
fn resolve_node(name: &str, ids: &[String], kind: &str) -> Result<usize, Failure> {
    if let Some(pos) = ids.iter().position(|id| id == name) {
        return Ok(pos);
    }
    if let Ok(k) = name.parse::<usize>() {
        if (1..=ids.len()).contains(&k) {
            return Ok(k - 1);
        }
    }
    Err(Failure::new(
        3,
        format!("unknown {kind} {name:?}; known ids: {}", ids.join(", ")),
    ))
}

/// Parses an anchor flag "class:pool" and requires the pair to be an
/// edge of the graph.
fn parse_anchor(text: &str, net: &ValidatedNetwork) -> Result<(usize, usize), Failure> {
    let (class_part, pool_part) = text.split_once(':').ok_or_else(|| {
        Failure::new(3, format!("anchor {text:?} is not of the form class:pool"))
    })?;
    let i = resolve_node(class_part.trim(), net.class_ids(), "class")?;
    let j = resolve_node(pool_part.trim(), net.pool_ids(), "pool")?;
    if net.topology().edge_index(i, j).is_none() {
        return Err(Failure::from(Error::AnchorNotEdge { class: i, pool: j }));
    }
    Ok((i, j))
}

fn run(cli: &Cli) -> Result<RunOutput, Failure> {
    match &cli.command {
        Command::Analyze { p, anchor, certify } => {
            let spec = load_spec(cli)?;
            let net = spec.validate()?;
            let p = p.as_deref().map(|s| parse_p(s, net.n_classes())).transpose()?;
            let anchor = anchor.as_deref().map(|s| parse_anchor(s, &net)).transpose()?;
            let (report, failed) = report::analyze_report(&spec, p, anchor, *certify, cli.seed)?;
            Ok(RunOutput {
                report,
                report_file: "report.json",
                failed,
            })
        }
        Command::Verify { trials, fixture } => {
            let extra = match &cli.spec {
                Some(_) => vec![load_spec(cli)?],
                None => Vec::new(),
            };
            let suite = qednet::verify::verify_corpus(cli.seed, *trials, *fixture, &extra);
            let control = qednet::verify::gain_corruption_detected(cli.seed);
            let (report, failed) = report::verify_report_json(&suite, control);
            Ok(RunOutput {
                report,
                report_file: "verify.json",
                failed,
            })
        }
        Command::Whatif { from, to, delta, p } => {
            let spec = load_spec(cli)?;
            let net = spec.validate()?;
            let from = resolve_node(from, net.pool_ids(), "pool")?;
            let to = resolve_node(to, net.pool_ids(), "pool")?;
            let p = p.as_deref().map(|s| parse_p(s, net.n_classes())).transpose()?;
            let (report, failed) = report::whatif_report(&spec, from, to, *delta, p)?;
            Ok(RunOutput {
                report,
                report_file: "whatif.json",
                failed,
            })
        }
        Command::SimulateCtmc {
            n,
            policy,
            horizon,
            reps,
            burn_in,
            anchor,
            m0,
            p,
        } => simulate_ctmc(cli, *n, *policy, *horizon, *reps, *burn_in, anchor.as_deref(), *m0, p.as_deref()),
        Command::SimulateSde {
            control: _,
            anchor,
            dt,
            horizon,
            reps,
            thin,
            burn_in,
            p,
        } => simulate_sde(cli, anchor.as_deref(), *dt, *horizon, *reps, *thin, *burn_in, p.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_ctmc(
    cli: &Cli,
    n: Option<u64>,
    policy: PolicyKind,
    horizon: f64,
    reps: usize,
    burn_in: f64,
    anchor: Option<&str>,
    m0: f64,
    p: Option<&str>,
) -> Result<RunOutput, Failure> {
    let spec = load_spec(cli)?;
    let base = spec.validate()?;
    let p = match p {
        Some(s) => parse_p(s, base.n_classes())?,
        None => vec![1.0 / base.n_classes() as f64; base.n_classes()],
    };

    let nth = match n {
        Some(order) => base.nth_from_order(order)?,
        None => base
            .nth()
            .cloned()
            .ok_or_else(|| Failure::new(3, "no system order: give --n or an nth block in the spec"))?,
    };
    let net = base.with_nth(Some(nth.clone()));
    let fluid = net.solve_fluid()?;
    let swss = qednet::gains::compute_swss_nth(&net, &fluid, &nth, &p)?;
    let plan = qednet::ctmc::synthesize_staffing(&net, &fluid, &nth, &swss)?;

    let x0 = plan.n_tilde_class.clone();
    let (trajs, policy_name) = match policy {
        PolicyKind::Bsp => {
            let pol = qednet::ctmc::bsp_policy(&net, &plan);
            let trajs =
                qednet::ctmc::run_replications(&net, &nth, &pol, &x0, horizon, cli.seed, reps)?;
            (trajs, "bsp")
        }
        PolicyKind::Constant => {
            let anchor = match anchor {
                Some(s) => parse_anchor(s, &net)?,
                None => net.topology().edges()[0],
            };
            let pol = qednet::ctmc::constant_control_policy(&net, &fluid, &plan, anchor, m0)?;
            let trajs =
                qednet::ctmc::run_replications(&net, &nth, &pol, &x0, horizon, cli.seed, reps)?;
            (trajs, "constant")
        }
    };
    let stats = qednet::ctmc::stationary_stats(&trajs, &plan, burn_in)?;

    let mut csv_files = Vec::new();
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(Error::Io)?;
        for (r, traj) in trajs.iter().enumerate() {
            let name = format!("ctmc-rep{r:03}.csv");
            report::write_ctmc_csv(&dir.join(&name), &net, traj).map_err(Error::Io)?;
            csv_files.push(name);
        }
    }

    let report = report::ctmc_report(
        &net,
        &nth,
        &plan,
        policy_name,
        &stats,
        horizon,
        burn_in,
        cli.seed,
        &csv_files,
    );
    Ok(RunOutput {
        report,
        report_file: "ctmc-summary.json",
        failed: false,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_sde(
    cli: &Cli,
    anchor: Option<&str>,
    dt: f64,
    horizon: f64,
    reps: usize,
    thin: usize,
    burn_in: f64,
    p: Option<&str>,
) -> Result<RunOutput, Failure> {
    let spec = load_spec(cli)?;
    let net = spec.validate()?;
    let p = match p {
        Some(s) => parse_p(s, net.n_classes())?,
        None => vec![1.0 / net.n_classes() as f64; net.n_classes()],
    };
    let anchor = match anchor {
        Some(s) => parse_anchor(s, &net)?,
        None => net.topology().edges()[0],
    };

    let fluid = net.solve_fluid()?;
    let swss = qednet::gains::compute_swss(&net, &fluid, &p)?;
    let model = qednet::drift::build_drift(&net, &fluid, anchor)?;
    let recentered = model.recentered(swss.vartheta_p, &p);
    let control = qednet::sde::barv_control(&net, anchor)?;

    let x0 = vec![0.0; net.n_classes()];
    let paths = qednet::sde::run_sde_replications(
        &recentered,
        &control,
        &x0,
        dt,
        horizon,
        thin,
        cli.seed,
        reps,
    )?;
    let (estimate, stderr) = qednet::sde::estimate_idleness(&paths, burn_in)?;
    let target = qednet::stability::remark7_target(&model, &p);

    let mut csv_files = Vec::new();
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(Error::Io)?;
        for (r, path) in paths.iter().enumerate() {
            let name = format!("sde-rep{r:03}.csv");
            report::write_sde_csv(&dir.join(&name), &net, path).map_err(Error::Io)?;
            csv_files.push(name);
        }
    }

    let report = report::sde_report(
        &net, anchor, dt, horizon, thin, burn_in, cli.seed, reps, target, estimate, stderr,
        &csv_files,
    );
    Ok(RunOutput {
        report,
        report_file: "sde-summary.json",
        failed: false,
    })
}
