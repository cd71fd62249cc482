use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use regmin_cli::commands::{cmd_certify, cmd_rate, cmd_run, problems_table, trace_dir, PointSource};
use regmin_cli::options::{PreparedRun, RunOptions};
use regmin_cli::suite::cmd_suite;
use regmin_cli::{resolve_out_dir, Failure};

/// Regularized quadratic-model solvers with runtime convergence certificates.
///
/// Exit codes: 0 success, 1 usage error, 2 solver error, 3 certification failure.
#[derive(Debug, Parser)]
#[command(name = "regmin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a solver and write trace.csv, trace.json, summary.json and spec.json.
    Run(Box<RunArgs>),
    /// Check the quasi-Fejer certificate and radius bound of a saved trace.
    Certify(CertifyArgs),
    /// Check the convex rate bound of a saved trace.
    Rate(RateArgs),
    /// Run a TOML matrix of [[run]] tables and report per-criterion verdicts.
    Suite(SuiteArgs),
    /// Catalog problems.
    Problems {
        #[command(subcommand)]
        command: ProblemsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ProblemsCommand {
    /// List catalog problems with their dimension, class and L.
    List,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file of run parameters; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: RunOptions,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// Trace CSV written by `run`; its sidecar trace.json must sit next to it.
    trace: PathBuf,
    /// Reference point: `minimizer`, `final` or comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<PointSource>,
    /// Slack tolerance; defaults to 1e-8 (1 + |x0 - y|^2).
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory; defaults to the trace's directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RateArgs {
    trace: PathBuf,
    /// Optimal value; defaults to the problem's.
    #[arg(long, allow_hyphen_values = true)]
    f_star: Option<f64>,
    /// Reference point for the radius: `minimizer`, `final` or coordinates.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<PointSource>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    /// Matrix file of [[run]] tables.
    matrix: PathBuf,
    /// Output directory; falls back to $REGMIN_OUT_DIR, then ./regmin-suite.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => {
            let file = match &args.config {
                Some(path) => RunOptions::from_file(path)?,
                None => RunOptions::default(),
            };
            let opts = args.options.over(file);
            let out_dir = resolve_out_dir(opts.out_dir.clone(), "regmin-out");
            let run = PreparedRun::resolve(&opts)?;
            let (_, summary) = cmd_run(&run, &out_dir)?;
            println!(
                "{}: {} after {} iterations, f = {:.6e}, |grad f| = {:.3e} ({})",
                summary.problem,
                summary.status.as_str(),
                summary.iters,
                summary.f_final,
                summary.gnorm_final,
                out_dir.display()
            );
        }
        Command::Certify(args) => {
            let out_dir = resolve_out_dir(args.out_dir, trace_dir(&args.trace));
            let s = cmd_certify(&args.trace, args.y, args.tol, &out_dir)?;
            match s.min_slack {
                Some(slack) => println!(
                    "certified {} iterations: min slack {slack:.3e} (tolerance {:.1e}), R_hat = {:.4}",
                    s.iterations, s.tol, s.r_hat
                ),
                None => println!("empty trace: nothing to certify, R_hat = {:.4}", s.r_hat),
            }
        }
        Command::Rate(args) => {
            let out_dir = resolve_out_dir(args.out_dir, trace_dir(&args.trace));
            let s = cmd_rate(&args.trace, args.f_star, args.y, args.tol, &out_dir)?;
            println!(
                "rate bound holds over {} iterations: nu_hat = {:.3e}, R_hat = {:.4}, max k(f_k - f*) = {:.3e} <= {:.3e}",
                s.iterations, s.report.nu_hat, s.report.r_hat, s.report.max_scaled_gap, s.report.scaled_gap_bound
            );
        }
        Command::Suite(args) => {
            let out_dir = resolve_out_dir(args.out_dir, "regmin-suite");
            let report = cmd_suite(&args.matrix, &out_dir)?;
            for (id, total) in &report.criteria {
                let tag = if total.passed { "PASS" } else { "FAIL" };
                println!("criterion {id:>2} [{tag}] {} runs", total.runs);
            }
            for name in &report.failed_rows {
                println!("row {name} failed");
            }
            println!(
                "{} rows, report in {}",
                report.rows,
                out_dir.join("suite.json").display()
            );
            if !report.passed {
                return Err(Failure::Certification("suite did not pass".into()));
            }
        }
        Command::Problems {
            command: ProblemsCommand::List,
        } => print!("{}", problems_table()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
