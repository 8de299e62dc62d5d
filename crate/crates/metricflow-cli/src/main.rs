//! Command-line driver: run certified gradient flows or single resolvent
//! solves on weighted graphs, write trajectory/certificate CSVs and a JSON
//! report, and audit stored runs.
//!
//! Exit codes: 0 success, 1 input or parse errors, 2 solver
//! non-convergence, 3 audit failure.

// validation guards use `!(x > 0.0)` so that NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use metricflow::certify::{
    accretivity_scale, accretivity_test, audit_weak_solution, parallel_map,
    variational_inequality_check, AuditReport, OperatorPair,
};
use metricflow::corpus::{random_test_fn, random_vertex_function};
use metricflow::energy::Integrand;
use metricflow::flow::{run_flow, FlowConfig, FlowError, Trajectory};
use metricflow::io::{
    certificates_from_csv, certificates_to_csv, load_graph, resolve_u0, trajectory_from_csv,
    trajectory_to_csv, RunReport,
};
use metricflow::resolvent::ResolventError;
use metricflow::space::{Space, VertexFunction};

#[derive(Parser)]
#[command(
    name = "metricflow",
    about = "Certified gradient flows of p- and (q,p)-growth energies on weighted graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an implicit-Euler flow and write trajectory, certificates, and report.
    Flow(FlowArgs),
    /// Solve a single implicit-Euler step and dump its certificate and duality gap.
    Resolvent(ResolventArgs),
    /// Re-verify stored flow output from scratch.
    Audit(AuditArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Graph spec JSON file.
    #[arg(long)]
    graph: PathBuf,
    /// Energy spec: p:P, qp:Q,P, or 1p:P.
    #[arg(long)]
    energy: String,
    /// Step size.
    #[arg(long, allow_negative_numbers = true)]
    tau: f64,
    /// Certificate tolerance.
    #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
    tol: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Iteration budget per solve.
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AuditMode {
    None,
    Full,
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Initial state: file path, `indicator:<ids>`, or `random:<seed>`.
    #[arg(long)]
    u0: String,
    /// Number of steps.
    #[arg(long)]
    steps: usize,
    /// Run the from-scratch audit after the flow.
    #[arg(long, value_enum, default_value_t = AuditMode::None)]
    audit: AuditMode,
    /// Seed for audit trials.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variational test trajectories in the audit.
    #[arg(long, default_value_t = 20)]
    variational_samples: usize,
    /// Accretivity trials in the audit.
    #[arg(long, default_value_t = 0)]
    accretivity_trials: usize,
}

#[derive(Args)]
struct ResolventArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Datum: file path, `indicator:<ids>`, or `random:<seed>`.
    #[arg(long)]
    u0: String,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding trajectory.csv and certificates.csv.
    #[arg(long)]
    dir: PathBuf,
    /// Seed for audit trials.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variational test trajectories (0 skips the section).
    #[arg(long, default_value_t = 20)]
    variational_samples: usize,
    /// Accretivity trials (0 skips the section).
    #[arg(long, default_value_t = 0)]
    accretivity_trials: usize,
}

enum CliError {
    Input(String),
    Solver(String),
    Audit(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Audit(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Solver(m) | CliError::Audit(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn main() -> ExitCode {
    // usage errors are input errors (exit 1); help and version exit 0
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Flow(args) => cmd_flow(args),
        Command::Resolvent(args) => cmd_resolvent(args),
        Command::Audit(args) => cmd_audit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_common(common: &CommonArgs) -> Result<(Space, Integrand), CliError> {
    let space = load_graph(&common.graph).map_err(input)?;
    let integrand: Integrand = common.energy.parse().map_err(input)?;
    if !(common.tau > 0.0) || !common.tau.is_finite() {
        return Err(CliError::Input(format!(
            "tau must be positive, got {}",
            common.tau
        )));
    }
    if !(common.tol > 0.0) {
        return Err(CliError::Input(format!(
            "tol must be positive, got {}",
            common.tol
        )));
    }
    Ok((space, integrand))
}

fn write_outputs(
    dir: &Path,
    space: &Space,
    integrand: &Integrand,
    trajectory: &Trajectory,
    report: &RunReport,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, text: String| -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    };
    write("trajectory.csv", trajectory_to_csv(space, trajectory))?;
    write(
        "certificates.csv",
        certificates_to_csv(space, integrand, trajectory),
    )?;
    write("report.json", report.to_json() + "\n")?;
    Ok(())
}

fn flow_error(e: FlowError) -> CliError {
    match e {
        FlowError::Step {
            step,
            source: ResolventError::DidNotConverge {
                iterations,
                div_residual,
                gap_residual,
                ..
            },
        } => CliError::Solver(format!(
            "step {step}: no certificate within tolerance after {iterations} iterations \
             (div residual {div_residual:.3e}, gap residual {gap_residual:.3e})"
        )),
        other => CliError::Input(other.to_string()),
    }
}

fn cmd_flow(args: FlowArgs) -> Result<(), CliError> {
    let (space, integrand) = load_common(&args.common)?;
    let u0 = resolve_u0(&args.u0, &space).map_err(input)?;
    if args.steps == 0 {
        return Err(CliError::Input("steps must be at least 1".into()));
    }
    let config = FlowConfig::uniform(args.common.tau, args.steps)
        .with_tol(args.common.tol)
        .with_max_iter(args.common.max_iter);
    let trajectory = run_flow(&space, &integrand, &u0, &config).map_err(flow_error)?;

    let mut report =
        RunReport::from_trajectory(&integrand, args.common.tau, args.common.tol, &trajectory);
    if args.audit == AuditMode::Full {
        let audit = run_full_audit(
            &space,
            &integrand,
            &trajectory,
            args.common.tau,
            args.common.tol,
            args.seed,
            args.variational_samples,
            args.accretivity_trials,
        )?;
        let passed = audit.pass();
        report.audit = Some(audit);
        report.refinement = metricflow::flow::refinement_diagnostic(
            &space,
            &integrand,
            &u0,
            args.common.tau,
            args.steps,
            args.common.tol,
        )
        .ok();
        if !passed {
            report.status = "audit failed".into();
            write_outputs(&args.common.out, &space, &integrand, &trajectory, &report)?;
            return Err(audit_failure(report.audit.as_ref().expect("just set")));
        }
    }
    write_outputs(&args.common.out, &space, &integrand, &trajectory, &report)?;
    println!(
        "flow: {} steps on {} vertices, final energy {:.6e}, outputs in {}",
        trajectory.steps(),
        space.vertex_count(),
        trajectory.energies().last().expect("nonempty"),
        args.common.out.display()
    );
    Ok(())
}

fn cmd_resolvent(args: ResolventArgs) -> Result<(), CliError> {
    let (space, integrand) = load_common(&args.common)?;
    let g = resolve_u0(&args.u0, &space).map_err(input)?;
    let config = FlowConfig::uniform(args.common.tau, 1)
        .with_tol(args.common.tol)
        .with_max_iter(args.common.max_iter);
    let trajectory = run_flow(&space, &integrand, &g, &config).map_err(flow_error)?;

    let mut report =
        RunReport::from_trajectory(&integrand, args.common.tau, args.common.tol, &trajectory);
    report.primal_dual_gap = Some(trajectory.certificates()[0].primal_dual_gap);
    write_outputs(&args.common.out, &space, &integrand, &trajectory, &report)?;
    println!(
        "resolvent: primal-dual gap {:.3e}, outputs in {}",
        trajectory.certificates()[0].primal_dual_gap,
        args.common.out.display()
    );
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<(), CliError> {
    let (space, integrand) = load_common(&args.common)?;
    let read = |name: &str| -> Result<String, CliError> {
        let path = args.dir.join(name);
        std::fs::read_to_string(&path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    };
    let (times, states) = trajectory_from_csv(&read("trajectory.csv")?, &space).map_err(input)?;
    if times.len() < 2 {
        return Err(CliError::Input("trajectory has no steps".into()));
    }
    let certificates =
        certificates_from_csv(&read("certificates.csv")?, times.len() - 1, space.edge_count())
            .map_err(input)?;
    let trajectory =
        Trajectory::from_parts(&space, &integrand, times, states, certificates).map_err(input)?;

    let audit = run_full_audit(
        &space,
        &integrand,
        &trajectory,
        args.common.tau,
        args.common.tol,
        args.seed,
        args.variational_samples,
        args.accretivity_trials,
    )?;
    let path = args.dir.join("audit.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&audit).expect("report serializes") + "\n",
    )
    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;

    if audit.pass() {
        println!("audit: {} checks passed", audit.checks.len());
        Ok(())
    } else {
        Err(audit_failure(&audit))
    }
}

fn audit_failure(audit: &AuditReport) -> CliError {
    let mut lines: Vec<String> = audit
        .failures()
        .take(5)
        .map(|c| format!("{}: residual {:.3e} > {:.3e}", c.name, c.residual, c.tolerance))
        .collect();
    let total = audit.failures().count();
    if total > lines.len() {
        lines.push(format!("... and {} more", total - lines.len()));
    }
    CliError::Audit(format!("audit failed:\n  {}", lines.join("\n  ")))
}

/// From-scratch verification of a trajectory: weak-solution audit plus
/// optional variational and accretivity trial sections. Trials are
/// deterministic in the seed and fan out over METRICFLOW_THREADS workers.
#[allow(clippy::too_many_arguments)]
fn run_full_audit(
    space: &Space,
    integrand: &Integrand,
    trajectory: &Trajectory,
    tau: f64,
    tol: f64,
    seed: u64,
    variational_samples: usize,
    accretivity_trials: usize,
) -> Result<AuditReport, CliError> {
    let mut audit = audit_weak_solution(space, integrand, trajectory, tol).map_err(input)?;

    if variational_samples > 0 {
        let grid = trajectory.times().len();
        let samples: Vec<Vec<VertexFunction>> = (0..variational_samples)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9e37));
                let base = random_vertex_function(&mut rng, space, -2.0, 2.0);
                let slope = random_vertex_function(&mut rng, space, -1.0, 1.0);
                (0..grid)
                    .map(|k| {
                        let t = trajectory.times()[k];
                        VertexFunction::new(
                            base.values()
                                .iter()
                                .zip(slope.values())
                                .map(|(b, s)| b + s * t)
                                .collect(),
                        )
                        .expect("finite test state")
                    })
                    .collect()
            })
            .collect();
        let margins: Vec<Result<AuditReport, String>> = parallel_map(samples.len(), |j| {
            variational_inequality_check(space, integrand, trajectory, &samples[j], 1e-8)
                .map_err(|e| e.to_string())
        });
        for (j, result) in margins.into_iter().enumerate() {
            let sub = result.map_err(CliError::Input)?;
            for check in sub.checks {
                audit.push(format!("variational sample {j}"), check.residual, check.tolerance);
            }
        }
    }

    if accretivity_trials > 0 {
        let trials: Vec<Result<(f64, f64), String>> = parallel_map(accretivity_trials, |j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x51_7c_c1));
            let g1 = random_vertex_function(&mut rng, space, -2.0, 2.0);
            let g2 = random_vertex_function(&mut rng, space, -2.0, 2.0);
            let t_fn = random_test_fn(&mut rng);
            let p1 = OperatorPair::from_resolvent(space, integrand, &g1, tau, tol)
                .map_err(|e| e.to_string())?;
            let p2 = OperatorPair::from_resolvent(space, integrand, &g2, tau, tol)
                .map_err(|e| e.to_string())?;
            let value =
                accretivity_test(space, &p1, &p2, &t_fn, tol * 10.0).map_err(|e| e.to_string())?;
            let scale = accretivity_scale(space, &p1, &p2, &t_fn);
            Ok((value, scale))
        });
        for (j, result) in trials.into_iter().enumerate() {
            let (value, scale) = result.map_err(CliError::Input)?;
            // residual is the scaled negative part; nonnegative values pass
            audit.push(
                format!("accretivity trial {j} (discrete analogue)"),
                (-value).max(0.0) / scale,
                1e-10,
            );
        }
    }

    Ok(audit)
}
