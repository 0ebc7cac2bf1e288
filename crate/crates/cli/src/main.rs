use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use glvreduce_core::algebraic::LorenzParams;
use glvreduce_core::memory::{DEFAULT_FP_MAX_ITER, DEFAULT_FP_TOL};
use glvreduce_core::verify::{
    Method, Tolerances, DEFAULT_RECONSTRUCTED_TOL, DEFAULT_RESIDUAL_TOL, DEFAULT_RETAINED_TOL,
};

mod commands;
mod error;

use commands::{CompareArgs, RhoQuery, RunSettings, VerifyArgs};
use error::{CliError, EXIT_CODES_HELP};

#[derive(Parser)]
#[command(name = "glvreduce", version, about = "Exact species elimination for generalized Lotka-Volterra models")]
#[command(after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the detailed model and write its trajectory as CSV.
    #[command(after_help = EXIT_CODES_HELP)]
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long = "zero", value_parser = parse_pair)]
        zeros: Vec<[usize; 2]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce, solve and compare against the detailed model in one run.
    #[command(after_help = EXIT_CODES_HELP)]
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Retained species, 1-based, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        retained: Vec<usize>,
        #[arg(long, value_enum, default_value_t = MethodArg::Memory)]
        method: MethodArg,
        #[arg(long = "zero", value_parser = parse_pair)]
        zeros: Vec<[usize; 2]>,
        /// Use the greedy ordering instead of the exhaustive search.
        #[arg(long)]
        heuristic: bool,
        /// Record wall-clock runtime in the report.
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// Report the required zero set, rho, and an elimination ordering.
    #[command(after_help = EXIT_CODES_HELP)]
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        retained: Vec<usize>,
        #[arg(long = "zero", value_parser = parse_pair)]
        zeros: Vec<[usize; 2]>,
        #[arg(long)]
        heuristic: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of interaction entries that must vanish.
    #[command(after_help = EXIT_CODES_HELP)]
    Rho {
        /// Total species.
        #[arg(long = "S", requires = "retained", conflicts_with_all = ["limit", "curve"])]
        total: Option<usize>,
        /// Retained species.
        #[arg(long = "s", requires = "total")]
        retained: Option<usize>,
        /// Large-S limit at retained fraction alpha.
        #[arg(long, conflicts_with = "curve")]
        limit: Option<f64>,
        /// Sample the limit curve at this many alpha values (CSV).
        #[arg(long)]
        curve: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the reduced system and write it as JSON.
    #[command(after_help = EXIT_CODES_HELP)]
    Reduce {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        retained: Vec<usize>,
        #[arg(long = "zero", value_parser = parse_pair)]
        zeros: Vec<[usize; 2]>,
        #[arg(long)]
        heuristic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate a reduced system written by `reduce`.
    #[command(name = "solve-reduced", after_help = EXIT_CODES_HELP)]
    SolveReduced {
        #[arg(long)]
        reduced: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reduced trajectory against the detailed model.
    #[command(after_help = EXIT_CODES_HELP)]
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reduced: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long = "zero", value_parser = parse_pair)]
        zeros: Vec<[usize; 2]>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// Third-order residual of the eliminated Lorenz system along a trajectory.
    #[command(after_help = EXIT_CODES_HELP)]
    Lorenz {
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        #[arg(long, default_value_t = 28.0)]
        beta: f64,
        #[arg(long, default_value_t = 8.0 / 3.0)]
        gamma: f64,
        /// Initial state x,y,z.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the second-order equation of a two-species model for species 1.
    #[command(after_help = EXIT_CODES_HELP)]
    Algebraic {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verifications listed in a JSON manifest.
    #[command(after_help = EXIT_CODES_HELP)]
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Memory,
    Algebraic,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = DEFAULT_FP_TOL)]
    fp_tol: f64,
    #[arg(long, default_value_t = DEFAULT_FP_MAX_ITER)]
    fp_max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_RETAINED_TOL)]
    tol_retained: f64,
    #[arg(long, default_value_t = DEFAULT_RECONSTRUCTED_TOL)]
    tol_reconstructed: f64,
    #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL)]
    tol_residual: f64,
}

impl RunArgs {
    fn settings(&self) -> Result<RunSettings, CliError> {
        check_time(self.t_end, self.dt)?;
        if !(self.fp_tol > 0.0) || self.fp_max_iter == 0 {
            return Err(CliError::Usage("--fp-tol must be positive and --fp-max-iter at least 1".into()));
        }
        Ok(RunSettings {
            t_end: self.t_end,
            dt: self.dt,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            tolerances: Tolerances {
                retained: self.tol_retained,
                reconstructed: self.tol_reconstructed,
                residual: self.tol_residual,
            },
        })
    }
}

fn check_time(t_end: f64, dt: f64) -> Result<(), CliError> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(CliError::Usage(format!("--t-end must be positive, got {t_end}")));
    }
    if !(dt > 0.0) || dt > t_end {
        return Err(CliError::Usage(format!("--dt must lie in (0, t_end], got {dt}")));
    }
    Ok(())
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let (i, j) = s.split_once(',').ok_or_else(|| format!("expected i,j but got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(i)?, p(j)?])
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { model, t_end, dt, zeros, out } => {
            check_time(t_end, dt)?;
            commands::simulate(&model, t_end, dt, &zeros, &out)
        }
        Command::Verify { model, retained, method, zeros, heuristic, timing, run, report } => {
            commands::verify(&VerifyArgs {
                model: &model,
                retained: &retained,
                method: match method {
                    MethodArg::Memory => Method::Memory,
                    MethodArg::Algebraic => Method::Algebraic,
                },
                zeros: &zeros,
                heuristic,
                timing,
                settings: run.settings()?,
                report: &report,
            })
        }
        Command::Analyze { model, retained, zeros, heuristic, out } => {
            commands::analyze(&model, &retained, &zeros, heuristic, out.as_deref())
        }
        Command::Rho { total, retained, limit, curve, out } => {
            let q = match (total, retained, limit, curve) {
                (Some(total), Some(retained), None, None) => RhoQuery::Count { total, retained },
                (None, None, Some(a), None) => RhoQuery::Limit(a),
                (None, None, None, Some(n)) => RhoQuery::Curve(n),
                _ => return Err(CliError::Usage("give --S and --s, --limit, or --curve".into())),
            };
            commands::rho_cmd(q, out.as_deref())
        }
        Command::Reduce { model, retained, zeros, heuristic, out } => {
            commands::reduce(&model, &retained, &zeros, heuristic, &out)
        }
        Command::SolveReduced { reduced, run, out } => {
            commands::solve_reduced_cmd(&reduced, &run.settings()?, &out)
        }
        Command::Compare { model, reduced, trajectory, zeros, run, report } => {
            commands::compare(&CompareArgs {
                model: &model,
                reduced: &reduced,
                trajectory: &trajectory,
                zeros: &zeros,
                settings: run.settings()?,
                report: &report,
            })
        }
        Command::Lorenz { alpha, beta, gamma, x0, t_end, dt, out } => {
            check_time(t_end, dt)?;
            commands::lorenz(LorenzParams { alpha, beta, gamma }, [x0[0], x0[1], x0[2]], t_end, dt, out.as_deref())
        }
        Command::Algebraic { model, t_end, dt, out } => {
            check_time(t_end, dt)?;
            commands::solve_algebraic(&model, t_end, dt, &out)
        }
        Command::Batch { manifest, jobs, run } => {
            let codes = commands::batch(&manifest, jobs, &run.settings()?)?;
            let failed = codes.iter().filter(|&&c| c != 0).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{failed} of {} jobs failed (codes {codes:?})", codes.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLVREDUCE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE as u8 } else { error::EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glvreduce: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
