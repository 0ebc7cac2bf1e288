//! Memory-method reduction.
//!
//! Each eliminated species `m` is first solved out of its pivot row `p`
//! (the `y` term), then reconstructed as `chi_m(t) = x_m(0) + int_0^t rate_m`
//! where `rate_m = (b_m + sum_j a_mj op_j) * y_m` is the eliminated row with
//! the `y` term substituted. Retained rows see every eliminated species through
//! its `chi` value.
//!
//! Operand conventions for species `j` in the terms of the step eliminating
//! `m` (steps are numbered in elimination order):
//! - retained `j`: the retained state `x_j`;
//! - `j` eliminated by an earlier step: `chi_j` (only in rates; such entries
//!   are required zeros in pivot rows);
//! - `j == m` or `j` eliminated by a later step: `y_j`.
//!
//! When the pivot species is itself eliminated later, its derivative is taken
//! from its own rate, the derivative of its `chi` accumulator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{check_positive, grid_time, uniform_grid, IntegrationError, Rk4};
use crate::model::{GlvModel, ModelDocument, ModelError};
use crate::reducibility::{EliminationPlan, Entry, PlanViolation, ReducibilityError};

pub const DEFAULT_FP_TOL: f64 = 1e-12;
pub const DEFAULT_FP_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("plan is infeasible: {}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Infeasible(Vec<PlanViolation>),
    #[error("singular pivot: species {species} has concentration {value} <= 0")]
    Singularity { species: usize, value: f64 },
    #[error("fixed point did not converge at step {step}: last residual {residual:e}")]
    Convergence { step: usize, residual: f64 },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("reduced system integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Plan(#[from] ReducibilityError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where a constant comes from in the detailed model (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CoefSource {
    Growth(usize),
    Interaction(usize, usize),
}

impl CoefSource {
    pub fn row(&self) -> usize {
        match *self {
            Self::Growth(i) | Self::Interaction(i, _) => i,
        }
    }
}

impl fmt::Display for CoefSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Growth(i) => write!(f, "b{}", i + 1),
            Self::Interaction(i, j) => write!(f, "a{}{}", i + 1, j + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coef {
    pub value: f64,
    pub source: CoefSource,
}

impl Coef {
    fn growth(model: &GlvModel, i: usize) -> Self {
        Self { value: model.growth()[i], source: CoefSource::Growth(i) }
    }

    fn interaction(model: &GlvModel, i: usize, j: usize) -> Self {
        Self { value: model.a(i, j), source: CoefSource::Interaction(i, j) }
    }
}

/// Value slot an expression reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Operand {
    /// Retained species, by species index.
    Retained(usize),
    /// `y` term of a step.
    Y(usize),
    /// Accumulated `chi` value of a step (a state read).
    Chi(usize),
}

/// Where the pivot derivative comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    Retained(usize),
    /// Rate of an eliminated pivot's `chi` accumulator.
    Chi(usize),
}

/// `x_m` solved out of pivot row `p`:
/// `(1/a_pm) ((x_p' - b_p x_p) / x_p - sum_{j != m} a_pj op_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct YTerm {
    pub eliminated: usize,
    pub pivot: usize,
    pub pivot_coef: Coef,
    pub growth: Coef,
    pub pivot_state: Operand,
    pub pivot_rate: RateSource,
    pub terms: Vec<(Coef, Operand)>,
    /// Pivot-row entries towards species eliminated earlier; exactly zero.
    pub zero_requirements: Vec<Entry>,
}

/// `chi_m = x_m(0) + int (b_m + sum_j a_mj op_j) y_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiTerm {
    pub eliminated: usize,
    pub initial_value: f64,
    pub growth: Coef,
    pub terms: Vec<(Coef, Operand)>,
    /// The step's own `y` term.
    pub factor: Operand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub y: YTerm,
    pub chi: ChiTerm,
}

/// Retained row `x_r' = x_r (b_r + sum_j a_rj op_j)` with eliminated species
/// read through their `chi` values.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedEquation {
    pub species: usize,
    pub growth: Coef,
    pub terms: Vec<(Coef, Operand)>,
}

/// Node of the per-time-point evaluation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalNode {
    Y(usize),
    Rate(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    model: GlvModel,
    plan: EliminationPlan,
    /// Retained species, ascending.
    retained: Vec<usize>,
    steps: Vec<Step>,
    equations: Vec<RetainedEquation>,
    eval_order: Vec<EvalNode>,
}

/// Values available at one time point. `x` and `dx` are indexed by species
/// (only retained entries are read); `y`, `chi`, `rate` by step.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub y: Vec<f64>,
    pub chi: Vec<f64>,
    pub rate: Vec<f64>,
}

impl NodeValues {
    pub fn new(species: usize, steps: usize) -> Self {
        Self {
            x: vec![0.0; species],
            dx: vec![0.0; species],
            y: vec![0.0; steps],
            chi: vec![0.0; steps],
            rate: vec![0.0; steps],
        }
    }

    /// Values along the detailed flow: every `y` and `chi` slot holds the
    /// detailed concentration of its species, every rate its derivative.
    pub fn from_detailed(rs: &ReducedSystem, x: &[f64], dx: &[f64]) -> Self {
        let mut v = Self::new(x.len(), rs.steps.len());
        v.x.copy_from_slice(x);
        v.dx.copy_from_slice(dx);
        for (i, step) in rs.steps.iter().enumerate() {
            v.y[i] = x[step.y.eliminated];
            v.chi[i] = x[step.y.eliminated];
            v.rate[i] = dx[step.y.eliminated];
        }
        v
    }

    #[inline]
    pub fn operand(&self, op: Operand) -> f64 {
        match op {
            Operand::Retained(i) => self.x[i],
            Operand::Y(s) => self.y[s],
            Operand::Chi(s) => self.chi[s],
        }
    }

    #[inline]
    pub fn rate_of(&self, src: RateSource) -> f64 {
        match src {
            RateSource::Retained(i) => self.dx[i],
            RateSource::Chi(s) => self.rate[s],
        }
    }
}

#[inline]
fn dot(terms: &[(Coef, Operand)], v: &NodeValues) -> f64 {
    terms.iter().map(|(c, op)| c.value * v.operand(*op)).sum()
}

/// Evaluates a `y` term against the supplied values.
pub fn evaluate_y(term: &YTerm, v: &NodeValues) -> Result<f64, ReductionError> {
    let xp = v.operand(term.pivot_state);
    if !(xp > 0.0) {
        return Err(ReductionError::Singularity { species: term.pivot + 1, value: xp });
    }
    let dxp = v.rate_of(term.pivot_rate);
    Ok(((dxp - term.growth.value * xp) / xp - dot(&term.terms, v)) / term.pivot_coef.value)
}

/// Integrand of a `chi` term.
pub fn evaluate_rate(term: &ChiTerm, v: &NodeValues) -> f64 {
    (term.growth.value + dot(&term.terms, v)) * v.operand(term.factor)
}

impl RetainedEquation {
    pub fn evaluate(&self, v: &NodeValues) -> f64 {
        v.x[self.species] * (self.growth.value + dot(&self.terms, v))
    }

    /// Every model constant this equation consumes.
    pub fn sources(&self) -> Vec<CoefSource> {
        std::iter::once(self.growth.source).chain(self.terms.iter().map(|(c, _)| c.source)).collect()
    }
}

impl YTerm {
    fn dependencies(&self) -> Vec<EvalNode> {
        let mut deps = BTreeSet::new();
        let mut add = |op: Operand| {
            if let Operand::Y(s) = op {
                deps.insert(EvalNode::Y(s));
            }
        };
        add(self.pivot_state);
        for (_, op) in &self.terms {
            add(*op);
        }
        if let RateSource::Chi(s) = self.pivot_rate {
            deps.insert(EvalNode::Rate(s));
        }
        deps.into_iter().collect()
    }

    pub fn sources(&self) -> Vec<CoefSource> {
        [self.pivot_coef.source, self.growth.source]
            .into_iter()
            .chain(self.terms.iter().map(|(c, _)| c.source))
            .collect()
    }
}

impl ChiTerm {
    fn dependencies(&self) -> Vec<EvalNode> {
        let mut deps = BTreeSet::new();
        for op in self.terms.iter().map(|(_, op)| *op).chain([self.factor]) {
            if let Operand::Y(s) = op {
                deps.insert(EvalNode::Y(s));
            }
        }
        deps.into_iter().collect()
    }

    /// Steps whose accumulated `chi` value this integrand reads.
    fn chi_reads(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .terms
            .iter()
            .filter_map(|(_, op)| match op {
                Operand::Chi(s) => Some(*s),
                _ => None,
            })
            .collect();
        set.into_iter().collect()
    }

    pub fn sources(&self) -> Vec<CoefSource> {
        std::iter::once(self.growth.source).chain(self.terms.iter().map(|(c, _)| c.source)).collect()
    }
}

/// Kahn topological sort with the lowest-ordered ready node first.
fn topo_order(
    nodes: &[EvalNode],
    deps: impl Fn(EvalNode) -> Vec<EvalNode>,
) -> Result<Vec<EvalNode>, ReductionError> {
    let index = |n: EvalNode| nodes.iter().position(|&m| m == n);
    let mut indegree = vec![0usize; nodes.len()];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, &n) in nodes.iter().enumerate() {
        for d in deps(n) {
            let j = index(d).ok_or_else(|| {
                ReductionError::Integrity(format!("{n:?} depends on unknown node {d:?}"))
            })?;
            indegree[i] += 1;
            users[j].push(i);
        }
    }
    let mut ready: BTreeSet<(EvalNode, usize)> = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, &n)| (n, i))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some((n, i)) = ready.pop_first() {
        order.push(n);
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.insert((nodes[u], u));
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck: Vec<EvalNode> =
            nodes.iter().enumerate().filter(|(i, _)| indegree[*i] > 0).map(|(_, &n)| n).collect();
        return Err(ReductionError::Integrity(format!("cyclic dependency among {stuck:?}")));
    }
    Ok(order)
}

/// Builds the memory-method reduced system for a plan.
pub fn build_reduced_system(
    model: &GlvModel,
    plan: &EliminationPlan,
) -> Result<ReducedSystem, ReductionError> {
    if plan.total() != model.dim() {
        return Err(ReductionError::Integrity(format!(
            "plan covers {} species but the model has {}",
            plan.total(),
            model.dim()
        )));
    }
    let plan = plan.clone().assess(model);
    if plan.feasible != Some(true) {
        return Err(ReductionError::Infeasible(plan.violations));
    }
    let total = model.dim();
    let pivots = plan.pivots();
    // step index of each eliminated species
    let mut step_of = vec![None; total];
    for (i, p) in pivots.iter().enumerate() {
        step_of[plan.ordering[p.eliminated]] = Some(i);
    }
    let operand = |j: usize, current: usize| -> Operand {
        match step_of[j] {
            None => Operand::Retained(j),
            Some(t) if t < current => Operand::Chi(t),
            Some(t) => Operand::Y(t),
        }
    };

    let mut steps = Vec::with_capacity(pivots.len());
    for (i, link) in pivots.iter().enumerate() {
        let m = plan.ordering[link.eliminated];
        let p = plan.ordering[link.row];
        let mut terms = Vec::new();
        let mut zero_requirements = Vec::new();
        for j in (0..total).filter(|&j| j != m) {
            match step_of[j] {
                Some(t) if t < i => zero_requirements.push(Entry::new(p, j)),
                _ => terms.push((Coef::interaction(model, p, j), operand(j, i))),
            }
        }
        let (pivot_state, pivot_rate) = match step_of[p] {
            None => (Operand::Retained(p), RateSource::Retained(p)),
            Some(t) => (Operand::Y(t), RateSource::Chi(t)),
        };
        let y = YTerm {
            eliminated: m,
            pivot: p,
            pivot_coef: Coef::interaction(model, p, m),
            growth: Coef::growth(model, p),
            pivot_state,
            pivot_rate,
            terms,
            zero_requirements,
        };
        let chi = ChiTerm {
            eliminated: m,
            initial_value: model.initial()[m],
            growth: Coef::growth(model, m),
            terms: (0..total).map(|j| (Coef::interaction(model, m, j), operand(j, i))).collect(),
            factor: Operand::Y(i),
        };
        steps.push(Step { y, chi });
    }

    let mut retained = plan.retained_species().to_vec();
    retained.sort_unstable();
    let equations = retained
        .iter()
        .map(|&r| RetainedEquation {
            species: r,
            growth: Coef::growth(model, r),
            terms: (0..total)
                .map(|j| {
                    let op = match step_of[j] {
                        None => Operand::Retained(j),
                        Some(t) => Operand::Chi(t),
                    };
                    (Coef::interaction(model, r, j), op)
                })
                .collect(),
        })
        .collect();

    let eval_order = evaluation_order(&steps)?;
    Ok(ReducedSystem { model: model.clone(), plan, retained, steps, equations, eval_order })
}

fn evaluation_order(steps: &[Step]) -> Result<Vec<EvalNode>, ReductionError> {
    let nodes: Vec<EvalNode> =
        (0..steps.len()).flat_map(|i| [EvalNode::Y(i), EvalNode::Rate(i)]).collect();
    topo_order(&nodes, |n| match n {
        EvalNode::Y(i) => steps[i].y.dependencies(),
        EvalNode::Rate(i) => steps[i].chi.dependencies(),
    })
}

impl ReducedSystem {
    pub fn model(&self) -> &GlvModel {
        &self.model
    }

    pub fn plan(&self) -> &EliminationPlan {
        &self.plan
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn equations(&self) -> &[RetainedEquation] {
        &self.equations
    }

    pub fn evaluation_order(&self) -> &[EvalNode] {
        &self.eval_order
    }

    /// Eliminated species in step order.
    pub fn eliminated(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.y.eliminated).collect()
    }

    /// Fills retained derivatives, then every `y` and rate slot, from the
    /// retained states and `chi` values already in `v`.
    pub fn evaluate_node(&self, v: &mut NodeValues) -> Result<(), ReductionError> {
        for eq in &self.equations {
            v.dx[eq.species] = eq.evaluate(v);
        }
        for node in &self.eval_order {
            match *node {
                EvalNode::Y(i) => v.y[i] = evaluate_y(&self.steps[i].y, v)?,
                EvalNode::Rate(i) => v.rate[i] = evaluate_rate(&self.steps[i].chi, v),
            }
        }
        Ok(())
    }

    fn retained_rhs(&self, v: &mut NodeValues, stage: &[f64], chi: &[f64], out: &mut [f64]) {
        for (k, &r) in self.retained.iter().enumerate() {
            v.x[r] = stage[k];
        }
        v.chi.copy_from_slice(chi);
        for (k, eq) in self.equations.iter().enumerate() {
            out[k] = eq.evaluate(v);
        }
    }
}

/// Solver output on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub t: Vec<f64>,
    pub dt: f64,
    /// Retained states, columns follow [`ReducedSystem::retained`].
    pub x: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    /// `chi` accumulators, columns in step order.
    pub chi: Vec<Vec<f64>>,
    /// Integrand samples, columns in step order.
    pub rate: Vec<Vec<f64>>,
    /// Largest number of fixed-point iterations used at any node.
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub t_end: f64,
    pub dt: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl SolverSettings {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self { t_end, dt, fp_tol: DEFAULT_FP_TOL, fp_max_iter: DEFAULT_FP_MAX_ITER }
    }
}

/// Integrates the reduced integro-differential system.
///
/// Retained states advance by RK4; `chi` values advance by the trapezoidal
/// rule on the stored integrand history. The newest integrand sample depends
/// on the new state, so each step iterates on `chi_{n+1}` until successive
/// iterates differ by at most `fp_tol`. Within a step, RK4 stages read `chi`
/// linearly interpolated between the two node values.
pub fn solve_reduced(
    rs: &ReducedSystem,
    settings: &SolverSettings,
) -> Result<ReducedTrajectory, ReductionError> {
    if !(settings.fp_tol > 0.0) || settings.fp_max_iter == 0 {
        return Err(IntegrationError::Settings(
            "fixed-point tolerance and iteration limit must be positive".into(),
        )
        .into());
    }
    let (n, h) = uniform_grid(settings.t_end, settings.dt)?;
    let total = rs.model.dim();
    let nsteps = rs.steps.len();
    let nret = rs.retained.len();

    let mut v = NodeValues::new(total, nsteps);
    let mut x: Vec<f64> = rs.retained.iter().map(|&r| rs.model.initial()[r]).collect();
    let chi0: Vec<f64> = rs.steps.iter().map(|s| s.chi.initial_value).collect();
    check_positive(0.0, &x)?;
    for (k, &r) in rs.retained.iter().enumerate() {
        v.x[r] = x[k];
    }
    v.chi.copy_from_slice(&chi0);
    rs.evaluate_node(&mut v)?;

    let mut out = ReducedTrajectory {
        t: Vec::with_capacity(n + 1),
        dt: h,
        x: Vec::with_capacity(n + 1),
        dx: Vec::with_capacity(n + 1),
        chi: Vec::with_capacity(n + 1),
        rate: Vec::with_capacity(n + 1),
        max_iterations: 0,
    };
    let retained_dx = |v: &NodeValues| rs.retained.iter().map(|&r| v.dx[r]).collect::<Vec<_>>();
    out.t.push(0.0);
    out.x.push(x.clone());
    out.dx.push(retained_dx(&v));
    out.chi.push(chi0);
    out.rate.push(v.rate.clone());

    let mut rk = Rk4::new(nret);
    let mut stage_v = v.clone();
    let mut stage_chi = vec![0.0; nsteps];
    let mut x_new = vec![0.0; nret];
    for step in 0..n {
        let t0 = step as f64 * h;
        let t1 = grid_time(step + 1, n, h, settings.t_end);
        let x_n = x.clone();
        let dx_n = out.dx[step].clone();
        let chi_n = out.chi[step].clone();
        let rate_n = out.rate[step].clone();
        // explicit Euler predictor for chi_{n+1}
        let mut guess: Vec<f64> = chi_n.iter().zip(&rate_n).map(|(c, r)| c + h * r).collect();

        let mut converged = false;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < settings.fp_max_iter {
            iterations += 1;
            x_new.copy_from_slice(&x_n);
            rk.step(&mut x_new, &dx_n, h, |theta, stage, d| {
                check_positive(t0 + theta * h, stage)?;
                for i in 0..nsteps {
                    stage_chi[i] = chi_n[i] + theta * (guess[i] - chi_n[i]);
                }
                rs.retained_rhs(&mut stage_v, stage, &stage_chi, d);
                Ok::<_, ReductionError>(())
            })?;
            check_positive(t1, &x_new)?;
            for (k, &r) in rs.retained.iter().enumerate() {
                v.x[r] = x_new[k];
            }
            v.chi.copy_from_slice(&guess);
            rs.evaluate_node(&mut v)?;
            residual = 0.0;
            for i in 0..nsteps {
                let next = chi_n[i] + 0.5 * h * (rate_n[i] + v.rate[i]);
                residual = f64::max(residual, (next - guess[i]).abs());
                guess[i] = next;
            }
            if residual <= settings.fp_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(ReductionError::Convergence { step: step + 1, residual });
        }
        out.max_iterations = out.max_iterations.max(iterations);

        check_positive(t1, &guess).map_err(|e| match e {
            IntegrationError::Positivity { time, species, value } => IntegrationError::Positivity {
                time,
                species: rs.steps[species - 1].y.eliminated + 1,
                value,
            },
            other => other,
        })?;
        // re-evaluate so stored samples are consistent with the accepted chi
        v.chi.copy_from_slice(&guess);
        rs.evaluate_node(&mut v)?;
        x.copy_from_slice(&x_new);
        out.t.push(t1);
        out.x.push(x.clone());
        out.dx.push(retained_dx(&v));
        out.chi.push(guess);
        out.rate.push(v.rate.clone());
    }
    Ok(out)
}

/// Reconstructed concentration series of one eliminated species.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminatedSeries {
    pub species: usize,
    pub label: String,
    pub values: Vec<f64>,
}

/// `chi` series of every eliminated species, ascending by species.
pub fn reconstruct_eliminated(rs: &ReducedSystem, rt: &ReducedTrajectory) -> Vec<EliminatedSeries> {
    let mut out: Vec<EliminatedSeries> = rs
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| EliminatedSeries {
            species: s.y.eliminated,
            label: rs.model.label(s.y.eliminated),
            values: rt.chi.iter().map(|c| c[i]).collect(),
        })
        .collect();
    out.sort_by_key(|s| s.species);
    out
}

impl ReducedTrajectory {
    /// CSV with columns `t`, retained labels, then `chi_<label>` per eliminated
    /// species in ascending species order.
    pub fn to_csv(&self, rs: &ReducedSystem) -> String {
        let model = rs.model();
        let mut cols: Vec<(usize, usize)> =
            rs.steps.iter().enumerate().map(|(i, s)| (s.y.eliminated, i)).collect();
        cols.sort_unstable();
        let mut out = String::from("t");
        for &r in rs.retained() {
            out.push(',');
            out.push_str(&model.label(r));
        }
        for &(sp, _) in &cols {
            out.push_str(",chi_");
            out.push_str(&model.label(sp));
        }
        out.push('\n');
        for k in 0..self.t.len() {
            let vals = self.x[k].iter().copied().chain(cols.iter().map(|&(_, i)| self.chi[k][i]));
            crate::integrate::write_row(&mut out, self.t[k], vals);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// JSON export / import

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefDoc {
    /// `[row]` for a growth rate, `[row, col]` for an interaction; 1-based.
    pub source: Vec<usize>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operand: Option<OperandDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperandDoc {
    /// Retained species, 1-based.
    Retained(usize),
    /// `y` term of a step (0-based step index).
    Y(usize),
    /// `chi` value of a step.
    Chi(usize),
    /// `chi` rate of a step.
    Rate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub step: usize,
    pub term: TermKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Y,
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDoc {
    pub index: usize,
    /// 1-based species numbers.
    pub eliminated: usize,
    pub pivot: usize,
    pub zero_requirements: Vec<[usize; 2]>,
    pub y_coefficients: Vec<CoefDoc>,
    pub y_pivot_state: OperandDoc,
    pub y_pivot_rate: OperandDoc,
    pub chi_initial_value: f64,
    pub chi_coefficients: Vec<CoefDoc>,
    /// Evaluation dependencies of this step's `y` term.
    pub y_depends_on: Vec<EdgeDoc>,
    /// Evaluation dependencies of this step's rate.
    pub rate_depends_on: Vec<EdgeDoc>,
    /// Steps whose accumulated `chi` the rate reads (state reads, not ordering edges).
    pub rate_reads_chi: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationDoc {
    pub species: usize,
    pub coefficients: Vec<CoefDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedSystemDoc {
    pub model: ModelDocument,
    pub ordering: Vec<usize>,
    pub retained: Vec<usize>,
    pub steps: Vec<StepDoc>,
    pub equations: Vec<EquationDoc>,
}

fn source_doc(s: CoefSource) -> Vec<usize> {
    match s {
        CoefSource::Growth(i) => vec![i + 1],
        CoefSource::Interaction(i, j) => vec![i + 1, j + 1],
    }
}

fn operand_doc(op: Operand) -> OperandDoc {
    match op {
        Operand::Retained(i) => OperandDoc::Retained(i + 1),
        Operand::Y(s) => OperandDoc::Y(s),
        Operand::Chi(s) => OperandDoc::Chi(s),
    }
}

fn coef_doc(c: &Coef, op: Option<Operand>) -> CoefDoc {
    CoefDoc { source: source_doc(c.source), value: c.value, operand: op.map(operand_doc) }
}

fn edge_docs(deps: Vec<EvalNode>) -> Vec<EdgeDoc> {
    deps.into_iter()
        .map(|n| match n {
            EvalNode::Y(s) => EdgeDoc { step: s, term: TermKind::Y },
            EvalNode::Rate(s) => EdgeDoc { step: s, term: TermKind::Rate },
        })
        .collect()
}

impl ReducedSystem {
    pub fn to_document(&self) -> ReducedSystemDoc {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let mut y_coefficients =
                    vec![coef_doc(&st.y.pivot_coef, None), coef_doc(&st.y.growth, None)];
                y_coefficients.extend(st.y.terms.iter().map(|(c, op)| coef_doc(c, Some(*op))));
                let mut chi_coefficients = vec![coef_doc(&st.chi.growth, None)];
                chi_coefficients.extend(st.chi.terms.iter().map(|(c, op)| coef_doc(c, Some(*op))));
                StepDoc {
                    index: i,
                    eliminated: st.y.eliminated + 1,
                    pivot: st.y.pivot + 1,
                    zero_requirements: st
                        .y
                        .zero_requirements
                        .iter()
                        .map(|e| [e.row + 1, e.col + 1])
                        .collect(),
                    y_coefficients,
                    y_pivot_state: operand_doc(st.y.pivot_state),
                    y_pivot_rate: match st.y.pivot_rate {
                        RateSource::Retained(r) => OperandDoc::Retained(r + 1),
                        RateSource::Chi(s) => OperandDoc::Rate(s),
                    },
                    chi_initial_value: st.chi.initial_value,
                    chi_coefficients,
                    y_depends_on: edge_docs(st.y.dependencies()),
                    rate_depends_on: edge_docs(st.chi.dependencies()),
                    rate_reads_chi: st.chi.chi_reads(),
                }
            })
            .collect();
        let equations = self
            .equations
            .iter()
            .map(|eq| {
                let mut coefficients = vec![coef_doc(&eq.growth, None)];
                coefficients.extend(eq.terms.iter().map(|(c, op)| coef_doc(c, Some(*op))));
                EquationDoc { species: eq.species + 1, coefficients }
            })
            .collect();
        ReducedSystemDoc {
            model: self.model.to_document(),
            ordering: self.plan.ordering.iter().map(|i| i + 1).collect(),
            retained: self.retained.iter().map(|i| i + 1).collect(),
            steps,
            equations,
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_document()).expect("serializable");
        out.push(b'\n');
        out
    }

    /// Parses an exported reduced system and checks it against a rebuild from
    /// its embedded model and ordering.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ReductionError> {
        let doc: ReducedSystemDoc = serde_json::from_slice(bytes).map_err(|e| {
            ReductionError::Model(ModelError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })
        })?;
        check_document_graph(&doc)?;
        let model = crate::model::load_model(
            &serde_json::to_vec(&doc.model).expect("model document serializes"),
        )?;
        if doc.ordering.iter().any(|&i| i == 0) {
            return Err(ReductionError::Integrity("ordering uses 1-based species numbers".into()));
        }
        let ordering: Vec<usize> = doc.ordering.iter().map(|i| i - 1).collect();
        if doc.retained.len() > ordering.len() {
            return Err(ReductionError::Integrity("more retained species than species".into()));
        }
        let plan = EliminationPlan::with_ordering(ordering.clone(), doc.retained.len())?;
        let mut head: Vec<usize> = ordering[..doc.retained.len()].iter().map(|i| i + 1).collect();
        head.sort_unstable();
        if head != doc.retained {
            return Err(ReductionError::Integrity(format!(
                "retained list {:?} does not match the ordering",
                doc.retained
            )));
        }
        let rs = build_reduced_system(&model, &plan)?;
        let rebuilt = rs.to_document();
        if rebuilt.steps != doc.steps {
            let at = rebuilt.steps.iter().zip(&doc.steps).position(|(a, b)| a != b);
            return Err(ReductionError::Integrity(match at {
                Some(i) => format!("step {i} does not match the embedded model"),
                None => format!("expected {} steps, found {}", rebuilt.steps.len(), doc.steps.len()),
            }));
        }
        if rebuilt.equations != doc.equations {
            return Err(ReductionError::Integrity(
                "retained equations do not match the embedded model".into(),
            ));
        }
        Ok(rs)
    }
}

/// Rejects documents whose recorded dependency edges are inconsistent or cyclic.
fn check_document_graph(doc: &ReducedSystemDoc) -> Result<(), ReductionError> {
    let n = doc.steps.len();
    for (i, st) in doc.steps.iter().enumerate() {
        if st.index != i {
            return Err(ReductionError::Integrity(format!("step {i} carries index {}", st.index)));
        }
        let edges = st.y_depends_on.iter().chain(&st.rate_depends_on);
        if let Some(e) = edges.clone().find(|e| e.step >= n) {
            return Err(ReductionError::Integrity(format!(
                "step {i} depends on missing step {}",
                e.step
            )));
        }
        if let Some(&c) = st.rate_reads_chi.iter().find(|&&c| c >= n) {
            return Err(ReductionError::Integrity(format!("step {i} reads missing chi {c}")));
        }
    }
    let nodes: Vec<EvalNode> = (0..n).flat_map(|i| [EvalNode::Y(i), EvalNode::Rate(i)]).collect();
    let to_node = |e: &EdgeDoc| match e.term {
        TermKind::Y => EvalNode::Y(e.step),
        TermKind::Rate => EvalNode::Rate(e.step),
    };
    topo_order(&nodes, |node| match node {
        EvalNode::Y(i) => doc.steps[i].y_depends_on.iter().map(to_node).collect(),
        EvalNode::Rate(i) => doc.steps[i].rate_depends_on.iter().map(to_node).collect(),
    })
    .map(|_| ())
}
