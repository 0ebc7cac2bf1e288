//! Fixed-step classical RK4 with cubic Hermite dense output.
//!
//! Grids are uniform: `t_k = k * dt` for `k = 0..=N`. When `t_end / dt` is not
//! an integer (to 1e-9 relative), `N` is rounded up and `dt` shrunk to
//! `t_end / N` so the last node lands on `t_end`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::GlvModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("positivity breach at t = {time}: species {species} reached {value}")]
    Positivity {
        time: f64,
        /// 1-based species number.
        species: usize,
        value: f64,
    },
    #[error("non-finite value at t = {time} in species {species}")]
    NonFinite { time: f64, species: usize },
    #[error("time {t} outside the trajectory range [0, {t_end}]")]
    Range { t: f64, t_end: f64 },
}

/// Number of uniform steps covering `[0, t_end]` and the step actually used.
pub fn uniform_grid(t_end: f64, dt: f64) -> Result<(usize, f64), IntegrationError> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(IntegrationError::Settings(format!("t_end must be positive, got {t_end}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(IntegrationError::Settings(format!("dt must be positive, got {dt}")));
    }
    if dt > t_end {
        return Err(IntegrationError::Settings(format!("dt = {dt} exceeds t_end = {t_end}")));
    }
    let ratio = t_end / dt;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio {
        ratio.round()
    } else {
        ratio.ceil()
    };
    Ok((n as usize, t_end / n))
}

/// Grid time of node `k`; the final node is pinned to `t_end`.
#[inline]
pub fn grid_time(k: usize, n: usize, dt: f64, t_end: f64) -> f64 {
    if k == n {
        t_end
    } else {
        k as f64 * dt
    }
}

/// Scratch buffers for one RK4 step of an autonomous system.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `x` by `dt`. `f(theta, state, out)` evaluates the derivative at
    /// the stage located `theta * dt` into the step (0, 1/2, 1/2, 1). `d0` is the
    /// derivative already known at the start of the step.
    pub fn step<E>(
        &mut self,
        x: &mut [f64],
        d0: &[f64],
        dt: f64,
        mut f: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        let n = x.len();
        self.k1.copy_from_slice(d0);
        for i in 0..n {
            self.stage[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        f(0.5, &self.stage, &mut self.k2)?;
        for i in 0..n {
            self.stage[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        f(0.5, &self.stage, &mut self.k3)?;
        for i in 0..n {
            self.stage[i] = x[i] + dt * self.k3[i];
        }
        f(1.0, &self.stage, &mut self.k4)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Uniform-grid solution with stored derivatives for dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub dt: f64,
}

pub(crate) fn check_positive(time: f64, x: &[f64]) -> Result<(), IntegrationError> {
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(IntegrationError::NonFinite { time, species: i + 1 });
        }
        if v <= 0.0 {
            return Err(IntegrationError::Positivity { time, species: i + 1, value: v });
        }
    }
    Ok(())
}

/// Integrates the detailed model from its initial state over `[0, t_end]`.
pub fn integrate_fixed(model: &GlvModel, t_end: f64, dt: f64) -> Result<Trajectory, IntegrationError> {
    integrate_from(model, model.initial(), t_end, dt)
}

/// Integrates the detailed model from an arbitrary positive state.
pub fn integrate_from(
    model: &GlvModel,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, IntegrationError> {
    let s = model.dim();
    if x0.len() != s {
        return Err(IntegrationError::Settings(format!(
            "initial state has length {} for {s} species",
            x0.len()
        )));
    }
    let (n, h) = uniform_grid(t_end, dt)?;
    check_positive(0.0, x0)?;

    let mut x = x0.to_vec();
    let mut d = vec![0.0; s];
    model.rhs_into(&x, &mut d);
    let mut traj = Trajectory {
        t: Vec::with_capacity(n + 1),
        x: Vec::with_capacity(n + 1),
        dx: Vec::with_capacity(n + 1),
        dt: h,
    };
    traj.t.push(0.0);
    traj.x.push(x.clone());
    traj.dx.push(d.clone());

    let mut rk = Rk4::new(s);
    for k in 0..n {
        let t0 = k as f64 * h;
        rk.step(&mut x, &d, h, |theta, stage, out| {
            check_positive(t0 + theta * h, stage)?;
            model.rhs_into(stage, out);
            Ok(())
        })?;
        let t = grid_time(k + 1, n, h, t_end);
        check_positive(t, &x)?;
        model.rhs_into(&x, &mut d);
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.dx.push(d.clone());
    }
    Ok(traj)
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("trajectory has at least one node")
    }

    pub fn last(&self) -> &[f64] {
        self.x.last().expect("trajectory has at least one node")
    }

    /// Time series of one species.
    pub fn series(&self, species: usize) -> Vec<f64> {
        self.x.iter().map(|x| x[species]).collect()
    }

    /// Cubic Hermite interpolation on the bracketing interval. Exact at nodes.
    pub fn sample(&self, t: f64) -> Result<Vec<f64>, IntegrationError> {
        hermite_sample(&self.t, &self.x, &self.dx, self.dt, t)
    }

    /// CSV with header `t,<label_1>,...`, values in shortest round-trip form.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("t");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, x) in self.t.iter().zip(&self.x) {
            write_row(&mut out, *t, x.iter().copied());
        }
        out
    }
}

pub(crate) fn write_row(out: &mut String, t: f64, values: impl Iterator<Item = f64>) {
    write!(out, "{t:?}").unwrap();
    for v in values {
        write!(out, ",{v:?}").unwrap();
    }
    out.push('\n');
}

pub(crate) fn hermite_sample(
    grid: &[f64],
    x: &[Vec<f64>],
    dx: &[Vec<f64>],
    dt: f64,
    t: f64,
) -> Result<Vec<f64>, IntegrationError> {
    let t_end = *grid.last().expect("non-empty grid");
    if !(0.0..=t_end).contains(&t) {
        return Err(IntegrationError::Range { t, t_end });
    }
    let n = grid.len() - 1;
    let k = ((t / dt).floor() as usize).min(n.saturating_sub(1));
    // guard against rounding placing t just outside [t_k, t_{k+1}]
    let k = if k < n && t > grid[k + 1] { k + 1 } else { k };
    let k = if t < grid[k] && k > 0 { k - 1 } else { k };
    if t == grid[k] || n == 0 {
        return Ok(x[k].clone());
    }
    if k < n && t == grid[k + 1] {
        return Ok(x[k + 1].clone());
    }
    let h = grid[k + 1] - grid[k];
    let s = (t - grid[k]) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    Ok((0..x[k].len())
        .map(|i| {
            h00 * x[k][i] + h10 * h * dx[k][i] + h01 * x[k + 1][i] + h11 * h * dx[k + 1][i]
        })
        .collect())
}

/// Closed-form solution of the logistic equation `x' = x (b + a x)`.
pub fn logistic_exact(b: f64, a: f64, x0: f64, t: f64) -> f64 {
    let e = (b * t).exp();
    b * x0 * e / (b - a * x0 * (e - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic(x0: f64) -> GlvModel {
        GlvModel::new(vec![1.0], vec![vec![-1.0]], vec![x0], None).unwrap()
    }

    fn max_logistic_error(dt: f64) -> f64 {
        let traj = integrate_fixed(&logistic(0.1), 10.0, dt).unwrap();
        traj.t
            .iter()
            .zip(&traj.x)
            .map(|(t, x)| (x[0] - logistic_exact(1.0, -1.0, 0.1, *t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn logistic_matches_closed_form() {
        let traj = integrate_fixed(&logistic(0.1), 10.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 10_001);
        assert_eq!(traj.t_end(), 10.0);
        let exact = logistic_exact(1.0, -1.0, 0.1, 10.0);
        assert!((traj.last()[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn convergence_order_is_four() {
        // dt large enough that truncation error dominates rounding
        let e1 = max_logistic_error(0.1);
        let e2 = max_logistic_error(0.05);
        let order = (e1 / e2).log2();
        assert!((3.5..=4.5).contains(&order), "order {order}");
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn frozen_model_is_constant() {
        let m = GlvModel::new(vec![0.0, 0.0], vec![vec![0.0; 2]; 2], vec![0.3, 2.0], None)
            .unwrap();
        let traj = integrate_fixed(&m, 1.0, 0.1).unwrap();
        for x in &traj.x {
            assert_eq!(x, &vec![0.3, 2.0]);
        }
        assert_eq!(traj.sample(0.537).unwrap(), vec![0.3, 2.0]);
    }

    #[test]
    fn logistic_exact_limits() {
        assert_eq!(logistic_exact(1.0, -1.0, 0.1, 0.0), 0.1);
        assert!((logistic_exact(2.0, -0.5, 0.1, 50.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_exact_agrees_with_fine_integration() {
        let traj = integrate_fixed(&logistic(0.1), 1.0, 1e-4).unwrap();
        assert!((traj.last()[0] - logistic_exact(1.0, -1.0, 0.1, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn sample_is_exact_at_nodes_and_accurate_between() {
        let traj = integrate_fixed(&logistic(0.1), 10.0, 1e-2).unwrap();
        for k in [0, 1, 17, 500, 1000] {
            assert_eq!(traj.sample(traj.t[k]).unwrap(), traj.x[k]);
        }
        for k in [3usize, 250, 611] {
            let t = 0.5 * (traj.t[k] + traj.t[k + 1]);
            let err = (traj.sample(t).unwrap()[0] - logistic_exact(1.0, -1.0, 0.1, t)).abs();
            assert!(err < 1e-8, "err {err} at t {t}");
        }
        assert!(matches!(traj.sample(10.5), Err(IntegrationError::Range { .. })));
        assert!(matches!(traj.sample(-1e-3), Err(IntegrationError::Range { .. })));
    }

    #[test]
    fn restart_matches_direct_run() {
        let m = GlvModel::new(
            vec![1.0, 0.7],
            vec![vec![-1.0, 0.2], vec![-0.3, -0.8]],
            vec![0.2, 0.6],
            None,
        )
        .unwrap();
        let direct = integrate_fixed(&m, 4.0, 1e-2).unwrap();
        let first = integrate_fixed(&m, 2.0, 1e-2).unwrap();
        let second = integrate_from(&m, first.last(), 2.0, 1e-2).unwrap();
        for (a, b) in second.last().iter().zip(direct.last()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn positivity_breach_is_reported() {
        // x' = x (-50 - x): a huge step overshoots below zero
        let m = GlvModel::new(vec![-50.0], vec![vec![-1.0]], vec![1.0], None).unwrap();
        match integrate_fixed(&m, 1.0, 0.5) {
            Err(IntegrationError::Positivity { species, .. }) => assert_eq!(species, 1),
            other => panic!("expected positivity failure, got {other:?}"),
        }
    }

    #[test]
    fn grid_handles_non_integral_ratio() {
        let (n, h) = uniform_grid(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert_eq!(h, 0.25);
        assert!(uniform_grid(1.0, 2.0).is_err());
        assert!(uniform_grid(1.0, 0.0).is_err());
    }

    #[test]
    fn csv_uses_labels_and_roundtrip_precision() {
        let traj = integrate_fixed(&logistic(0.1), 0.2, 0.1).unwrap();
        let csv = traj.to_csv(&["x1".to_string()]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1"));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[1], traj.x[1][0]);
    }
}
