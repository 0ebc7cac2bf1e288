use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::Deserialize;

use glvreduce_core::algebraic::{lorenz_residual_report, solve_second_order, LorenzParams};
use glvreduce_core::integrate::integrate_fixed;
use glvreduce_core::memory::{build_reduced_system, solve_reduced, ReducedSystem, SolverSettings};
use glvreduce_core::model::{load_model, GlvModel};
use glvreduce_core::reducibility::{
    check_reducible, rho, rho_curve, rho_curve_csv, rho_limit, ReducibilityReport, SearchStrategy,
};
use glvreduce_core::verify::{
    compare_memory, residual_stats, Method, ReducedColumns, SettingsEcho, Tolerances,
    VerificationReport,
};

use crate::error::CliError;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

/// Loads a model and applies explicit `--zero` edits (1-based pairs).
pub fn load_with_zeros(path: &Path, zeros: &[[usize; 2]]) -> Result<GlvModel, CliError> {
    let mut model = load_model(&read(path)?)?;
    for &[i, j] in zeros {
        if i == 0 || j == 0 {
            return Err(CliError::Usage(format!("--zero {i},{j}: species are numbered from 1")));
        }
        info!("zeroing a({i},{j}) = {}", model.a(i - 1, j - 1).to_string());
        model = model.with_zeroed(i - 1, j - 1).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(model)
}

fn zero_based(retained: &[usize], total: usize) -> Result<Vec<usize>, CliError> {
    retained
        .iter()
        .map(|&r| {
            if r == 0 || r > total {
                Err(CliError::Usage(format!("species {r} outside 1..={total}")))
            } else {
                Ok(r - 1)
            }
        })
        .collect()
}

fn strategy(heuristic: bool) -> SearchStrategy {
    if heuristic {
        SearchStrategy::Greedy
    } else {
        SearchStrategy::Exhaustive
    }
}

pub fn simulate(model: &Path, t_end: f64, dt: f64, zeros: &[[usize; 2]], out: &Path) -> Result<(), CliError> {
    let m = load_with_zeros(model, zeros)?;
    let traj = integrate_fixed(&m, t_end, dt)?;
    info!("integrated {} steps of dt = {}", traj.len() - 1, traj.dt);
    write_atomic(out, traj.to_csv(&m.labels()).as_bytes())
}

/// Settings shared by `verify`, `solve-reduced` and `compare`.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub t_end: f64,
    pub dt: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub tolerances: Tolerances,
}

impl RunSettings {
    fn solver(&self) -> SolverSettings {
        SolverSettings { t_end: self.t_end, dt: self.dt, fp_tol: self.fp_tol, fp_max_iter: self.fp_max_iter }
    }

    fn echo(&self, model: &Path, retained: &[usize], zeros: &[[usize; 2]]) -> SettingsEcho {
        let mut retained = retained.to_vec();
        retained.sort_unstable();
        SettingsEcho {
            model: model.display().to_string(),
            retained,
            t_end: self.t_end,
            dt: self.dt,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            zeroed: zeros.to_vec(),
        }
    }
}

pub struct VerifyArgs<'a> {
    pub model: &'a Path,
    pub retained: &'a [usize],
    pub method: Method,
    pub zeros: &'a [[usize; 2]],
    pub heuristic: bool,
    pub timing: bool,
    pub settings: RunSettings,
    pub report: &'a Path,
}

fn finish(report: &mut VerificationReport, path: &Path, started: Option<Instant>) -> Result<(), CliError> {
    report.runtime_seconds = started.map(|s| s.elapsed().as_secs_f64());
    write_atomic(path, &report.to_json())?;
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!("see {}", path.display())))
    }
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let started = args.timing.then(Instant::now);
    let m = load_with_zeros(args.model, args.zeros)?;
    let retained = zero_based(args.retained, m.dim())?;
    let s = &args.settings;
    let mut report = VerificationReport {
        mode: args.method,
        settings: s.echo(args.model, args.retained, args.zeros),
        tolerances: s.tolerances,
        plan: None,
        species: Vec::new(),
        residual: None,
        pass: false,
        runtime_seconds: None,
    };
    match args.method {
        Method::Memory => {
            let analysis = check_reducible(&m, &retained, strategy(args.heuristic))?;
            debug!("examined {} orderings", analysis.orderings_examined);
            if !analysis.feasible {
                let msg = analysis
                    .plan
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ");
                report.plan = Some(analysis.plan);
                write_atomic(args.report, &report.to_json())?;
                return Err(CliError::Infeasible(msg));
            }
            let rs = build_reduced_system(&m, &analysis.plan)?;
            let rt = solve_reduced(&rs, &s.solver())?;
            info!("fixed point: at most {} iterations per node", rt.max_iterations);
            let detailed = integrate_fixed(&m, s.t_end, s.dt)?;
            report.plan = Some(analysis.plan);
            report.species =
                compare_memory(&m, &detailed, &ReducedColumns::from_trajectory(&rs, &rt), &s.tolerances)?;
            report.pass = report.species.iter().all(|e| e.pass);
        }
        Method::Algebraic => {
            if m.dim() != 2 || retained.len() != 1 {
                return Err(CliError::Usage(
                    "algebraic mode needs a 2-species model with one retained species".into(),
                ));
            }
            // the residual keeps species 1; swap when species 2 is retained
            let m = if retained[0] == 1 { m.permuted(&[1, 0])? } else { m };
            let detailed = integrate_fixed(&m, s.t_end, s.dt)?;
            let stats = residual_stats(&m, &detailed, s.tolerances.residual)?;
            report.pass = stats.pass;
            report.residual = Some(stats);
        }
    }
    finish(&mut report, args.report, started)
}

pub fn analyze(
    model: &Path,
    retained: &[usize],
    zeros: &[[usize; 2]],
    heuristic: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let m = load_with_zeros(model, zeros)?;
    let r: ReducibilityReport = check_reducible(&m, &zero_based(retained, m.dim())?, strategy(heuristic))?;
    let mut bytes = serde_json::to_vec_pretty(&AnalysisOutput { zeroed: zeros, report: &r })
        .map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    emit(out, &bytes)?;
    if r.feasible {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("{} violated requirements", r.plan.violations.len())))
    }
}

#[derive(serde::Serialize)]
struct AnalysisOutput<'a> {
    zeroed: &'a [[usize; 2]],
    #[serde(flatten)]
    report: &'a ReducibilityReport,
}

pub enum RhoQuery {
    Count { total: usize, retained: usize },
    Limit(f64),
    Curve(usize),
}

pub fn rho_cmd(q: RhoQuery, out: Option<&Path>) -> Result<(), CliError> {
    let text = match q {
        RhoQuery::Count { total, retained } => format!("{}\n", rho(total, retained)?),
        RhoQuery::Limit(alpha) => format!("{}\n", rho_limit(alpha)?),
        RhoQuery::Curve(n) => rho_curve_csv(&rho_curve(n)?),
    };
    emit(out, text.as_bytes())
}

pub fn reduce(
    model: &Path,
    retained: &[usize],
    zeros: &[[usize; 2]],
    heuristic: bool,
    out: &Path,
) -> Result<(), CliError> {
    let m = load_with_zeros(model, zeros)?;
    let analysis = check_reducible(&m, &zero_based(retained, m.dim())?, strategy(heuristic))?;
    let rs = build_reduced_system(&m, &analysis.plan)?;
    info!("{} elimination steps", rs.steps().len());
    write_atomic(out, &rs.to_json())
}

fn load_reduced(path: &Path) -> Result<ReducedSystem, CliError> {
    Ok(ReducedSystem::from_json(&read(path)?)?)
}

pub fn solve_reduced_cmd(reduced: &Path, settings: &RunSettings, out: &Path) -> Result<(), CliError> {
    let rs = load_reduced(reduced)?;
    let rt = solve_reduced(&rs, &settings.solver())?;
    info!("fixed point: at most {} iterations per node", rt.max_iterations);
    write_atomic(out, rt.to_csv(&rs).as_bytes())
}

pub struct CompareArgs<'a> {
    pub model: &'a Path,
    pub reduced: &'a Path,
    pub trajectory: &'a Path,
    pub zeros: &'a [[usize; 2]],
    pub settings: RunSettings,
    pub report: &'a Path,
}

/// Scores a reduced trajectory CSV against a fresh detailed run; produces the
/// same report `verify` writes for the same inputs.
pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let m = load_with_zeros(args.model, args.zeros)?;
    let rs = load_reduced(args.reduced)?;
    if rs.model() != &m {
        return Err(CliError::Integrity(format!(
            "{} does not embed the model {} (after --zero edits)",
            args.reduced.display(),
            args.model.display()
        )));
    }
    let text = String::from_utf8(read(args.trajectory)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", args.trajectory.display())))?;
    let cols = ReducedColumns::from_csv(&rs, &text)?;
    let s = &args.settings;
    let detailed = integrate_fixed(&m, s.t_end, s.dt)?;
    let retained: Vec<usize> = rs.retained().iter().map(|r| r + 1).collect();
    let mut report = VerificationReport {
        mode: Method::Memory,
        settings: s.echo(args.model, &retained, args.zeros),
        tolerances: s.tolerances,
        plan: Some(rs.plan().clone()),
        species: compare_memory(&m, &detailed, &cols, &s.tolerances)?,
        residual: None,
        pass: false,
        runtime_seconds: None,
    };
    report.pass = report.species.iter().all(|e| e.pass);
    finish(&mut report, args.report, None)
}

pub fn lorenz(params: LorenzParams, x0: [f64; 3], t_end: f64, dt: f64, out: Option<&Path>) -> Result<(), CliError> {
    let rep = lorenz_residual_report(&params, x0, t_end, dt)?;
    info!(
        "lorenz: max relative residual {:e} over {} states, {} printed/rederived disagreements",
        rep.summary.max_rel, rep.summary.n_states, rep.summary.n_disagreements
    );
    let mut bytes = serde_json::to_vec_pretty(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

pub fn solve_algebraic(model: &Path, t_end: f64, dt: f64, out: &Path) -> Result<(), CliError> {
    let m = load_model(&read(model)?)?;
    let sol = solve_second_order(&m, t_end, dt)?;
    let mut csv = format!("t,{},d{}\n", m.label(0), m.label(0));
    for k in 0..sol.t.len() {
        csv.push_str(&format!("{:?},{:?},{:?}\n", sol.t[k], sol.x1[k], sol.v[k]));
    }
    write_atomic(out, csv.as_bytes())
}

/// One verification in a batch manifest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchJob {
    pub model: PathBuf,
    pub retained: Vec<usize>,
    #[serde(default)]
    pub method: Option<String>,
    pub report: PathBuf,
    #[serde(default)]
    pub zero: Vec<[usize; 2]>,
}

/// Runs independent verifications; returns the exit code of each job in
/// manifest order.
pub fn batch(manifest: &Path, jobs: usize, settings: &RunSettings) -> Result<Vec<i32>, CliError> {
    let list: Vec<BatchJob> = serde_json::from_slice(&read(manifest)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let codes = pool.install(|| {
        list.par_iter()
            .map(|job| {
                let method = match job.method.as_deref() {
                    None | Some("memory") => Method::Memory,
                    Some("algebraic") => Method::Algebraic,
                    Some(other) => {
                        let e = CliError::Usage(format!("unknown method {other}"));
                        log::error!("{}: {e}", job.model.display());
                        return e.code();
                    }
                };
                let model = base.join(&job.model);
                let report = base.join(&job.report);
                let args = VerifyArgs {
                    model: &model,
                    retained: &job.retained,
                    method,
                    zeros: &job.zero,
                    heuristic: false,
                    timing: false,
                    settings: settings.clone(),
                    report: &report,
                };
                match verify(&args) {
                    Ok(()) => 0,
                    Err(e) => {
                        log::error!("{}: {e}", model.display());
                        e.code()
                    }
                }
            })
            .collect()
    });
    Ok(codes)
}
