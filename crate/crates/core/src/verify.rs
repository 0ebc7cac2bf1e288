//! Error norms between reduced and detailed solutions on a shared grid.

use serde::Serialize;
use thiserror::Error;

use crate::algebraic::{algebraic_residual_2, analytic_jet, AlgebraicError};
use crate::integrate::Trajectory;
use crate::memory::{ReducedSystem, ReducedTrajectory};
use crate::model::GlvModel;
use crate::reducibility::EliminationPlan;

pub const DEFAULT_RETAINED_TOL: f64 = 1e-4;
pub const DEFAULT_RECONSTRUCTED_TOL: f64 = 1e-4;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("grids differ: {0}")]
    Grid(String),
    #[error("malformed reduced trajectory: {0}")]
    Csv(String),
    #[error(transparent)]
    Algebraic(#[from] AlgebraicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Memory,
    Algebraic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Retained,
    Reconstructed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub retained: f64,
    pub reconstructed: f64,
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            retained: DEFAULT_RETAINED_TOL,
            reconstructed: DEFAULT_RECONSTRUCTED_TOL,
            residual: DEFAULT_RESIDUAL_TOL,
        }
    }
}

/// Settings echoed into the report so a run can be repeated from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingsEcho {
    pub model: String,
    pub retained: Vec<usize>,
    pub t_end: f64,
    pub dt: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Entries forced to zero before analysis, 1-based.
    pub zeroed: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesError {
    pub species: usize,
    pub label: String,
    pub role: Role,
    pub linf_abs: f64,
    /// `max |e| / max |x_detailed|`.
    pub linf_rel: f64,
    /// `||e||_2 / ||x_detailed||_2` over grid samples.
    pub l2_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub max_rel: f64,
    pub n_states: usize,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub mode: Method,
    pub settings: SettingsEcho,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<EliminationPlan>,
    pub species: Vec<SpeciesError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualStats>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

impl VerificationReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// Reduced solution as plain columns: retained species then reconstructed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedColumns {
    pub t: Vec<f64>,
    pub columns: Vec<(usize, Role, Vec<f64>)>,
}

impl ReducedColumns {
    /// Columns in the same order as [`ReducedTrajectory::to_csv`].
    pub fn from_trajectory(rs: &ReducedSystem, rt: &ReducedTrajectory) -> Self {
        let mut columns: Vec<(usize, Role, Vec<f64>)> = rs
            .retained()
            .iter()
            .enumerate()
            .map(|(k, &r)| (r, Role::Retained, rt.x.iter().map(|x| x[k]).collect()))
            .collect();
        for s in crate::memory::reconstruct_eliminated(rs, rt) {
            columns.push((s.species, Role::Reconstructed, s.values));
        }
        Self { t: rt.t.clone(), columns }
    }

    /// Parses a reduced-trajectory CSV written for `rs`.
    pub fn from_csv(rs: &ReducedSystem, text: &str) -> Result<Self, CompareError> {
        let model = rs.model();
        let mut expected: Vec<(usize, Role, String)> =
            rs.retained().iter().map(|&r| (r, Role::Retained, model.label(r))).collect();
        let mut elim = rs.eliminated();
        elim.sort_unstable();
        expected.extend(elim.iter().map(|&e| (e, Role::Reconstructed, format!("chi_{}", model.label(e)))));

        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CompareError::Csv("empty file".into()))?;
        let want: Vec<&str> =
            std::iter::once("t").chain(expected.iter().map(|(_, _, l)| l.as_str())).collect();
        if header.split(',').collect::<Vec<_>>() != want {
            return Err(CompareError::Csv(format!(
                "header `{header}` does not match `{}`",
                want.join(",")
            )));
        }
        let mut t = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); expected.len()];
        for (n, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CompareError::Csv(format!("row {}: {e}", n + 1)))?;
            if vals.len() != want.len() {
                return Err(CompareError::Csv(format!(
                    "row {} has {} fields, expected {}",
                    n + 1,
                    vals.len(),
                    want.len()
                )));
            }
            t.push(vals[0]);
            for (c, v) in cols.iter_mut().zip(&vals[1..]) {
                c.push(*v);
            }
        }
        let columns = expected.into_iter().zip(cols).map(|((sp, role, _), v)| (sp, role, v)).collect();
        Ok(Self { t, columns })
    }
}

fn norms(reduced: &[f64], detailed: &[f64]) -> (f64, f64, f64) {
    let linf_abs = reduced.iter().zip(detailed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = detailed.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let e2: f64 = reduced.iter().zip(detailed).map(|(a, b)| (a - b) * (a - b)).sum();
    let x2: f64 = detailed.iter().map(|v| v * v).sum();
    let rel = |num: f64, den: f64| if den == 0.0 { num } else { num / den };
    (linf_abs, rel(linf_abs, scale), rel(e2.sqrt(), x2.sqrt()))
}

/// Per-species error norms of a reduced solution against the detailed one.
pub fn compare_memory(
    model: &GlvModel,
    detailed: &Trajectory,
    reduced: &ReducedColumns,
    tol: &Tolerances,
) -> Result<Vec<SpeciesError>, CompareError> {
    if reduced.t.len() != detailed.t.len() {
        return Err(CompareError::Grid(format!(
            "{} reduced samples vs {} detailed samples",
            reduced.t.len(),
            detailed.t.len()
        )));
    }
    if let Some(k) = reduced.t.iter().zip(&detailed.t).position(|(a, b)| a != b) {
        return Err(CompareError::Grid(format!(
            "sample {k}: t = {} vs {}",
            reduced.t[k], detailed.t[k]
        )));
    }
    Ok(reduced
        .columns
        .iter()
        .map(|(sp, role, values)| {
            let (linf_abs, linf_rel, l2_rel) = norms(values, &detailed.series(*sp));
            let tolerance = match role {
                Role::Retained => tol.retained,
                Role::Reconstructed => tol.reconstructed,
            };
            SpeciesError {
                species: sp + 1,
                label: model.label(*sp),
                role: *role,
                linf_abs,
                linf_rel,
                l2_rel,
                tolerance,
                pass: linf_rel <= tolerance,
            }
        })
        .collect())
}

/// Algebraic residual statistics over every state of a two-species trajectory.
pub fn residual_stats(
    model: &GlvModel,
    detailed: &Trajectory,
    tolerance: f64,
) -> Result<ResidualStats, CompareError> {
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for x in &detailed.x {
        let r = algebraic_residual_2(model, &analytic_jet(model, x)?)?;
        max_abs = max_abs.max(r.residual.abs());
        max_rel = max_rel.max(r.relative());
    }
    Ok(ResidualStats { max_abs, max_rel, n_states: detailed.len(), tolerance, pass: max_rel <= tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate_fixed;
    use crate::memory::{build_reduced_system, solve_reduced, SolverSettings};
    use crate::reducibility::build_plan_canonical;

    fn setup() -> (GlvModel, ReducedSystem, ReducedTrajectory, Trajectory) {
        let m = GlvModel::new(
            vec![1.0, 0.9, 0.7],
            vec![vec![-1.0, 0.2, 0.0], vec![0.1, -1.1, 0.25], vec![-0.15, 0.1, -0.8]],
            vec![0.4, 0.5, 0.3],
            Some(vec!["a".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        let rs = build_reduced_system(&m, &build_plan_canonical(3, 1).unwrap()).unwrap();
        let rt = solve_reduced(&rs, &SolverSettings::new(2.0, 1e-2)).unwrap();
        let det = integrate_fixed(&m, 2.0, 1e-2).unwrap();
        (m, rs, rt, det)
    }

    #[test]
    fn csv_roundtrip_preserves_columns() {
        let (_, rs, rt, _) = setup();
        let csv = rt.to_csv(&rs);
        assert!(csv.starts_with("t,a,chi_b,chi_c\n"));
        let parsed = ReducedColumns::from_csv(&rs, &csv).unwrap();
        assert_eq!(parsed, ReducedColumns::from_trajectory(&rs, &rt));
    }

    #[test]
    fn csv_errors() {
        let (_, rs, _, _) = setup();
        assert!(ReducedColumns::from_csv(&rs, "").is_err());
        assert!(ReducedColumns::from_csv(&rs, "t,a,b,c\n").is_err());
        assert!(ReducedColumns::from_csv(&rs, "t,a,chi_b,chi_c\n0.0,1.0\n").is_err());
    }

    #[test]
    fn comparison_passes_and_flags_grid_mismatch() {
        let (m, rs, rt, det) = setup();
        let cols = ReducedColumns::from_trajectory(&rs, &rt);
        let errs = compare_memory(&m, &det, &cols, &Tolerances::default()).unwrap();
        assert_eq!(errs.len(), 3);
        assert!(errs.iter().all(|e| e.pass), "{errs:?}");
        let coarse = integrate_fixed(&m, 2.0, 2e-2).unwrap();
        assert!(compare_memory(&m, &coarse, &cols, &Tolerances::default()).is_err());
    }

    #[test]
    fn norms_of_known_vectors() {
        let (abs, rel, l2) = norms(&[1.0, 2.5], &[1.0, 2.0]);
        assert_eq!(abs, 0.5);
        assert_eq!(rel, 0.25);
        assert!((l2 - 0.5 / 5f64.sqrt()).abs() < 1e-15);
    }
}
