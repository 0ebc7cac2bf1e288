//! Algebraic-method reduction, checked through residuals of the higher-order
//! equations along the detailed flow.
//!
//! For two species, `x2` is solved out of the first row as
//! `y = ((x1' - b1 x1) / x1 - a11 x1) / a12`, and the second row becomes a
//! single second-order equation in `x1`:
//! `y' = b2 y + (a21 x1 + a22 y) y`.

use serde::Serialize;
use thiserror::Error;

use crate::integrate::{grid_time, uniform_grid, IntegrationError, Rk4};
use crate::memory::{Coef, CoefSource};
use crate::model::GlvModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraicError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("not reducible: a12 = 0, x2 cannot be solved out of the first row")]
    NotReducible,
    #[error("singular: x = {0} must be {1}")]
    Singularity(f64, &'static str),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// State with time derivatives along the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeJet {
    pub x: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Option<Vec<f64>>,
}

/// Exact first and second derivatives of a two-species model at `x`.
pub fn analytic_jet(model: &GlvModel, x: &[f64]) -> Result<DerivativeJet, AlgebraicError> {
    if model.dim() != 2 || x.len() != 2 {
        return Err(AlgebraicError::Contract(format!(
            "two-species jet requested for a {}-species model and state of length {}",
            model.dim(),
            x.len()
        )));
    }
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(AlgebraicError::Singularity(x[0].min(x[1]), "positive"));
    }
    let d1 = model.rhs(x).map_err(|e| AlgebraicError::Contract(e.to_string()))?;
    let d2 = (0..2)
        .map(|i| {
            let g = model.per_capita(i, x);
            let dg: f64 = model.row(i).iter().zip(&d1).map(|(a, d)| a * d).sum();
            d1[i] * g + x[i] * dg
        })
        .collect();
    Ok(DerivativeJet { x: x.to_vec(), d1, d2, d3: None })
}

/// Constants consumed by the two-species algebraic reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicReduction {
    /// Row-1 constants solving `x2` out: `a12`, `b1`, `a11`.
    pub pivot: Coef,
    pub pivot_growth: Coef,
    pub pivot_self: Coef,
    /// Row-2 constants of the final equation: `b2`, `a21`, `a22`.
    pub growth: Coef,
    pub cross: Coef,
    pub own: Coef,
}

/// Residual of the second-order equation plus the terms it is made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub residual: f64,
    /// Intermediate `y`, equal to `x2` along the flow.
    pub y: f64,
    pub y_dot: f64,
    /// Largest magnitude among the additive terms.
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / self.scale
        }
    }
}

fn coef(model: &GlvModel, source: CoefSource) -> Coef {
    let value = match source {
        CoefSource::Growth(i) => model.growth()[i],
        CoefSource::Interaction(i, j) => model.a(i, j),
    };
    Coef { value, source }
}

impl AlgebraicReduction {
    pub fn new(model: &GlvModel) -> Result<Self, AlgebraicError> {
        if model.dim() != 2 {
            return Err(AlgebraicError::Contract(format!(
                "algebraic reduction needs 2 species, got {}",
                model.dim()
            )));
        }
        if model.a(0, 1) == 0.0 {
            return Err(AlgebraicError::NotReducible);
        }
        Ok(Self {
            pivot: coef(model, CoefSource::Interaction(0, 1)),
            pivot_growth: coef(model, CoefSource::Growth(0)),
            pivot_self: coef(model, CoefSource::Interaction(0, 0)),
            growth: coef(model, CoefSource::Growth(1)),
            cross: coef(model, CoefSource::Interaction(1, 0)),
            own: coef(model, CoefSource::Interaction(1, 1)),
        })
    }

    /// Sources of the constants in the final equation.
    pub fn final_equation_sources(&self) -> Vec<CoefSource> {
        vec![self.growth.source, self.cross.source, self.own.source]
    }

    /// Sources of the constants used to express `x2` through `x1`.
    pub fn substitution_sources(&self) -> Vec<CoefSource> {
        vec![self.pivot.source, self.pivot_growth.source, self.pivot_self.source]
    }

    fn y_of(&self, x1: f64, v: f64) -> f64 {
        ((v - self.pivot_growth.value * x1) / x1 - self.pivot_self.value * x1) / self.pivot.value
    }

    fn final_rhs(&self, x1: f64, y: f64) -> f64 {
        self.growth.value * y + (self.cross.value * x1 + self.own.value * y) * y
    }

    /// Residual from `x1`, `x1'`, `x1''`.
    pub fn residual(&self, x1: f64, d1: f64, d2: f64) -> Result<Residual, AlgebraicError> {
        if !(x1 > 0.0) {
            return Err(AlgebraicError::Singularity(x1, "positive"));
        }
        let (a12, b1, a11) = (self.pivot.value, self.pivot_growth.value, self.pivot_self.value);
        let y = self.y_of(x1, d1);
        let t1 = -d1 / (x1 * x1) * (d1 - b1 * x1) / a12;
        let t2 = (d2 - b1 * d1) / x1 / a12;
        let t3 = -a11 * d1 / a12;
        let y_dot = t1 + t2 + t3;
        let r1 = self.growth.value * y;
        let r2 = self.cross.value * x1 * y;
        let r3 = self.own.value * y * y;
        let residual = y_dot - (r1 + r2 + r3);
        let scale = [t1, t2, t3, r1, r2, r3].iter().fold(0.0f64, |m, t| m.max(t.abs()));
        Ok(Residual { residual, y, y_dot, scale })
    }

    /// `x1''` that zeroes the residual, given `x1` and `x1'`.
    pub fn second_derivative(&self, x1: f64, v: f64) -> f64 {
        let (a12, b1, a11) = (self.pivot.value, self.pivot_growth.value, self.pivot_self.value);
        let y = self.y_of(x1, v);
        let target = self.final_rhs(x1, y);
        b1 * v + x1 * (a12 * target + a11 * v) + v * (v - b1 * x1) / x1
    }
}

/// Residual of the two-species second-order equation for a jet.
pub fn algebraic_residual_2(model: &GlvModel, jet: &DerivativeJet) -> Result<Residual, AlgebraicError> {
    let red = AlgebraicReduction::new(model)?;
    red.residual(jet.x[0], jet.d1[0], jet.d2[0])
}

/// Solution of the second-order equation rewritten as the pair `(x1, x1')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderSolution {
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub v: Vec<f64>,
}

/// Integrates `x1'' = F(x1, x1')` by RK4, starting from `x1(0)` and the
/// `x1'(0)` implied by the detailed initial state.
pub fn solve_second_order(
    model: &GlvModel,
    t_end: f64,
    dt: f64,
) -> Result<SecondOrderSolution, AlgebraicError> {
    let red = AlgebraicReduction::new(model)?;
    let (n, h) = uniform_grid(t_end, dt)?;
    let x0 = model.initial();
    let mut z = vec![x0[0], x0[0] * model.per_capita(0, x0)];
    let field = |z: &[f64], out: &mut [f64]| {
        out[0] = z[1];
        out[1] = red.second_derivative(z[0], z[1]);
    };
    let mut d = vec![0.0; 2];
    field(&z, &mut d);
    let mut sol = SecondOrderSolution { t: vec![0.0], x1: vec![z[0]], v: vec![z[1]] };
    let mut rk = Rk4::new(2);
    for k in 0..n {
        let t0 = k as f64 * h;
        rk.step(&mut z, &d, h, |theta, stage, out| {
            if !(stage[0] > 0.0) {
                return Err(IntegrationError::Positivity {
                    time: t0 + theta * h,
                    species: 1,
                    value: stage[0],
                });
            }
            field(stage, out);
            Ok(())
        })?;
        field(&z, &mut d);
        sol.t.push(grid_time(k + 1, n, h, t_end));
        sol.x1.push(z[0]);
        sol.v.push(z[1]);
    }
    Ok(sol)
}

/// Lorenz parameters: `x' = alpha (y - x)`, `y' = x (beta - z) - y`, `z' = x y - gamma z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorenzParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LorenzParams {
    pub fn rhs(&self, s: &[f64], out: &mut [f64]) {
        out[0] = self.alpha * (s[1] - s[0]);
        out[1] = s[0] * (self.beta - s[2]) - s[1];
        out[2] = s[0] * s[1] - self.gamma * s[2];
    }
}

/// Derivatives of all three Lorenz components through third order.
pub fn lorenz_jet(p: &LorenzParams, s: &[f64; 3]) -> DerivativeJet {
    let (a, b, g) = (p.alpha, p.beta, p.gamma);
    let [x, y, z] = *s;
    let mut d1 = vec![0.0; 3];
    p.rhs(s, &mut d1);
    let (dx, dy, dz) = (d1[0], d1[1], d1[2]);
    let ddx = a * (dy - dx);
    let ddy = dx * (b - z) - x * dz - dy;
    let ddz = dx * y + x * dy - g * dz;
    let dddx = a * (ddy - ddx);
    let dddy = ddx * (b - z) - 2.0 * dx * dz - x * ddz - ddy;
    let dddz = ddx * y + 2.0 * dx * dy + x * ddy - g * ddz;
    DerivativeJet {
        x: s.to_vec(),
        d1,
        d2: vec![ddx, ddy, ddz],
        d3: Some(vec![dddx, dddy, dddz]),
    }
}

/// Both evaluations of the third-order equation in `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzResidual {
    /// From rebuilding `y` and `z` out of the jet and checking the `z` equation.
    pub rederived: f64,
    /// The published operator form, evaluated term by term.
    pub printed: f64,
    pub scale: f64,
}

impl LorenzResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.rederived.abs()
        } else {
            self.rederived.abs() / self.scale
        }
    }
}

/// Evaluates the third-order single-variable Lorenz equation on a jet.
pub fn lorenz_residual_3rd(p: &LorenzParams, jet: &DerivativeJet) -> Result<LorenzResidual, AlgebraicError> {
    let (a, b, g) = (p.alpha, p.beta, p.gamma);
    let x = jet.x[0];
    if x == 0.0 {
        return Err(AlgebraicError::Singularity(x, "nonzero"));
    }
    let (dx, ddx) = (jet.d1[0], jet.d2[0]);
    let dddx = jet
        .d3
        .as_ref()
        .map(|d| d[0])
        .ok_or_else(|| AlgebraicError::Contract("jet lacks third derivatives".into()))?;

    // x' = a (y - x)          =>  y = x + x'/a
    // y' = x (b - z) - y      =>  z = b - (y' + y)/x
    // z' = x y - g z          =>  residual
    let y = x + dx / a;
    let dy = dx + ddx / a;
    let ddy = ddx + dddx / a;
    let q = (dy + y) / x;
    let z = b - q;
    let dq_lead = (ddy + dy) / x;
    let dq_tail = (dy + y) * dx / (x * x);
    let dz = -(dq_lead - dq_tail);
    let xy = x * y;
    let rederived = dz - (xy - g * z);
    let scale = [dq_lead, dq_tail, xy, g * b, g * q].iter().fold(0.0f64, |m, t| m.max(t.abs()));

    // (d/dt + g)(b - (x'' + (1 + a) x' + a x) / (a x)) - x (x'/a + x)
    let inner = ddx + (1.0 + a) * dx + a * x;
    let d_inner = dddx + (1.0 + a) * ddx + a * dx;
    let big_p = b - inner / (a * x);
    let d_big_p = -(d_inner * a * x - inner * a * dx) / ((a * x) * (a * x));
    let printed = d_big_p + g * big_p - x * (dx / a + x);

    Ok(LorenzResidual { rederived, printed, scale })
}

/// Integrates the Lorenz system by RK4 on a uniform grid.
pub fn integrate_lorenz(
    p: &LorenzParams,
    s0: [f64; 3],
    t_end: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<[f64; 3]>), AlgebraicError> {
    let (n, h) = uniform_grid(t_end, dt)?;
    let mut s = s0.to_vec();
    let mut d = vec![0.0; 3];
    p.rhs(&s, &mut d);
    let mut t = vec![0.0];
    let mut states = vec![s0];
    let mut rk = Rk4::new(3);
    for k in 0..n {
        rk.step(&mut s, &d, h, |_, stage, out| {
            p.rhs(stage, out);
            Ok::<_, AlgebraicError>(())
        })?;
        p.rhs(&s, &mut d);
        t.push(grid_time(k + 1, n, h, t_end));
        states.push([s[0], s[1], s[2]]);
    }
    Ok((t, states))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub t: f64,
    pub state: Vec<f64>,
    pub residual_rederived: f64,
    pub residual_printed: f64,
    pub relative_scale: f64,
    /// Whether the two routes agree to within 1e-9 of the scale.
    pub routes_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub max_abs: f64,
    pub max_rel: f64,
    pub max_rel_printed: f64,
    pub n_states: usize,
    pub n_disagreements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub params: LorenzParams,
    pub entries: Vec<ResidualEntry>,
    pub summary: ResidualSummary,
}

/// Residuals at every grid state of a Lorenz trajectory with `x != 0`.
pub fn lorenz_residual_report(
    p: &LorenzParams,
    s0: [f64; 3],
    t_end: f64,
    dt: f64,
) -> Result<ResidualReport, AlgebraicError> {
    let (t, states) = integrate_lorenz(p, s0, t_end, dt)?;
    let mut entries = Vec::with_capacity(t.len());
    for (t, s) in t.iter().zip(&states) {
        if s[0] == 0.0 {
            continue;
        }
        let r = lorenz_residual_3rd(p, &lorenz_jet(p, s))?;
        let agree = (r.rederived - r.printed).abs() <= 1e-9 * r.scale.max(f64::MIN_POSITIVE);
        entries.push(ResidualEntry {
            t: *t,
            state: s.to_vec(),
            residual_rederived: r.rederived,
            residual_printed: r.printed,
            relative_scale: r.scale,
            routes_agree: agree,
        });
    }
    let rel = |e: &ResidualEntry, v: f64| if e.relative_scale == 0.0 { v.abs() } else { v.abs() / e.relative_scale };
    let summary = ResidualSummary {
        max_abs: entries.iter().map(|e| e.residual_rederived.abs()).fold(0.0, f64::max),
        max_rel: entries.iter().map(|e| rel(e, e.residual_rederived)).fold(0.0, f64::max),
        max_rel_printed: entries.iter().map(|e| rel(e, e.residual_printed)).fold(0.0, f64::max),
        n_states: entries.len(),
        n_disagreements: entries.iter().filter(|e| !e.routes_agree).count(),
    };
    Ok(ResidualReport { params: *p, entries, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate_fixed;

    fn model() -> GlvModel {
        GlvModel::new(
            vec![1.1, 0.7],
            vec![vec![-1.2, 0.25], vec![-0.2, -0.9]],
            vec![0.4, 0.8],
            None,
        )
        .unwrap()
    }

    #[test]
    fn jet_of_frozen_model_is_zero() {
        let m = GlvModel::new(vec![0.0; 2], vec![vec![0.0; 2]; 2], vec![1.0; 2], None).unwrap();
        let j = analytic_jet(&m, &[0.3, 0.9]).unwrap();
        assert_eq!(j.d1, vec![0.0, 0.0]);
        assert_eq!(j.d2, vec![0.0, 0.0]);
    }

    #[test]
    fn decoupled_component_follows_scalar_chain_rule() {
        let m = GlvModel::new(vec![1.0, 0.5], vec![vec![-2.0, 0.0], vec![0.0, -1.0]], vec![1.0; 2], None)
            .unwrap();
        let x = [0.3, 0.2];
        let j = analytic_jet(&m, &x).unwrap();
        let want = j.d1[0] * (1.0 + 2.0 * -2.0 * x[0]);
        assert!((j.d2[0] - want).abs() < 1e-15);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let m = model();
        let h = 1e-4;
        let traj = integrate_fixed(&m, 1.0, h).unwrap();
        let k = 5000;
        let j = analytic_jet(&m, &traj.x[k]).unwrap();
        for i in 0..2 {
            let fd = (traj.dx[k + 1][i] - traj.dx[k - 1][i]) / (2.0 * h);
            assert!((fd - j.d2[i]).abs() < 1e-7, "{fd} vs {}", j.d2[i]);
        }
        assert!(analytic_jet(&GlvModel::new(vec![1.0], vec![vec![-1.0]], vec![1.0], None).unwrap(), &[1.0])
            .is_err());
    }

    #[test]
    fn residual_vanishes_along_flow() {
        let m = model();
        let traj = integrate_fixed(&m, 10.0, 1e-2).unwrap();
        for x in &traj.x {
            let j = analytic_jet(&m, x).unwrap();
            let r = algebraic_residual_2(&m, &j).unwrap();
            assert!(r.relative() <= 1e-11, "{r:?}");
            assert!((r.y - x[1]).abs() <= 1e-13 * x[1]);
        }
    }

    #[test]
    fn residual_is_linear_in_second_derivative() {
        let m = model();
        let red = AlgebraicReduction::new(&m).unwrap();
        let x = [0.6, 0.3];
        let j = analytic_jet(&m, &x).unwrap();
        let base = red.residual(j.x[0], j.d1[0], j.d2[0]).unwrap().residual;
        for delta in [1e-3, 0.5, -2.0] {
            let moved = red.residual(j.x[0], j.d1[0], j.d2[0] + delta).unwrap().residual;
            let want = delta / (m.a(0, 1) * x[0]);
            assert!(((moved - base) - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn residual_errors() {
        let m = GlvModel::new(vec![1.0; 2], vec![vec![-1.0, 0.0], vec![0.1, -1.0]], vec![1.0; 2], None)
            .unwrap();
        assert_eq!(AlgebraicReduction::new(&m).unwrap_err(), AlgebraicError::NotReducible);
        let red = AlgebraicReduction::new(&model()).unwrap();
        assert!(matches!(red.residual(0.0, 1.0, 1.0), Err(AlgebraicError::Singularity(..))));
    }

    #[test]
    fn finite_difference_jets_converge_quadratically() {
        let m = model();
        let red = AlgebraicReduction::new(&m).unwrap();
        let fd_residual = |h: f64| {
            let traj = integrate_fixed(&m, 2.0, h).unwrap();
            let k = traj.len() / 2;
            let x1 = |i: usize| traj.x[i][0];
            let d1 = (x1(k + 1) - x1(k - 1)) / (2.0 * h);
            let d2 = (x1(k + 1) - 2.0 * x1(k) + x1(k - 1)) / (h * h);
            red.residual(x1(k), d1, d2).unwrap().residual.abs()
        };
        let ratio = fd_residual(2e-2) / fd_residual(1e-2);
        assert!((4.0 * 0.7..=4.0 * 1.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn provenance_separates_rows() {
        let red = AlgebraicReduction::new(&model()).unwrap();
        assert!(red.final_equation_sources().iter().all(|s| s.row() == 1));
        assert!(red.substitution_sources().iter().all(|s| s.row() == 0));
    }

    #[test]
    fn second_order_solve_reproduces_detailed_x1() {
        let m = model();
        let sol = solve_second_order(&m, 5.0, 1e-3).unwrap();
        let det = integrate_fixed(&m, 5.0, 1e-3).unwrap();
        for (a, b) in sol.x1.iter().zip(det.series(0)) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    const LORENZ: LorenzParams = LorenzParams { alpha: 10.0, beta: 28.0, gamma: 8.0 / 3.0 };

    #[test]
    fn lorenz_equilibria() {
        let j = lorenz_jet(&LORENZ, &[0.0, 0.0, 0.0]);
        assert!(j.d1.iter().chain(&j.d2).chain(j.d3.as_ref().unwrap()).all(|&v| v == 0.0));
        assert!(lorenz_residual_3rd(&LORENZ, &j).is_err());

        let c = (LORENZ.gamma * (LORENZ.beta - 1.0)).sqrt();
        for sign in [1.0, -1.0] {
            let s = [sign * c, sign * c, LORENZ.beta - 1.0];
            let j = lorenz_jet(&LORENZ, &s);
            assert!(j.d1.iter().all(|v| v.abs() < 1e-12));
            assert!(j.d2.iter().all(|v| v.abs() < 1e-10));
            let r = lorenz_residual_3rd(&LORENZ, &j).unwrap();
            assert!(r.rederived.abs() < 1e-12 && r.printed.abs() < 1e-12);
        }
    }

    #[test]
    fn lorenz_jet_matches_finite_differences() {
        let h = 1e-5;
        let (_, states) = integrate_lorenz(&LORENZ, [1.0, 1.0, 1.0], 0.5, h).unwrap();
        let k = states.len() / 2;
        let j = lorenz_jet(&LORENZ, &states[k]);
        let jm = lorenz_jet(&LORENZ, &states[k - 1]);
        let jp = lorenz_jet(&LORENZ, &states[k + 1]);
        for i in 0..3 {
            let fd2 = (jp.d1[i] - jm.d1[i]) / (2.0 * h);
            let fd3 = (jp.d2[i] - jm.d2[i]) / (2.0 * h);
            assert!((fd2 - j.d2[i]).abs() < 1e-5 * (1.0 + j.d2[i].abs()), "{fd2} vs {}", j.d2[i]);
            let d3 = j.d3.as_ref().unwrap()[i];
            assert!((fd3 - d3).abs() < 1e-5 * (1.0 + d3.abs()), "{fd3} vs {d3}");
        }
    }

    #[test]
    fn lorenz_residual_vanishes_on_chaotic_flow() {
        let rep = lorenz_residual_report(&LORENZ, [1.0, 1.0, 1.0], 5.0, 1e-3).unwrap();
        assert!(rep.summary.max_rel <= 1e-9, "{:?}", rep.summary);
        assert_eq!(rep.summary.n_disagreements, 0);
    }
}
