//! Deterministic flow `dx/dt = b(x)`: trajectories, limit-cycle location by
//! Newton iteration on a Poincaré return map, and uniform cycle sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::complement_basis;
use crate::model::ModelSpec;
use crate::ode::{Dopri5, StepControl};
use crate::report::{indexed, CsvTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// Columns `t, x1..xn` and, when a model is given, `b1..bn`.
    pub fn to_csv(&self, model: Option<&ModelSpec>) -> CsvTable {
        let n = self.states[0].len();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("x", n));
        if model.is_some() {
            header.extend(indexed("b", n));
        }
        let mut table = CsvTable::new(header);
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![*t];
            row.extend(x.iter());
            if let Some(m) = model {
                row.extend(m.drift(x.as_slice()).iter());
            }
            table.push(row);
        }
        table
    }
}

fn check_state(model: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} coordinates, model dimension is {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Integrate the flow from `(t0, x0)` to `t1`, recording every accepted step.
pub fn integrate_flow(
    model: &ModelSpec,
    x0: &[f64],
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    check_state(model, x0)?;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "final time {t1} must exceed initial time {t0}"
        )));
    }
    let mut s = Dopri5::new(|_, x, f| model.drift_into(x, f), t0, x0, *ctrl)?;
    let mut times = vec![t0];
    let mut states = vec![DVector::from_column_slice(x0)];
    while s.t() < t1 {
        s.step(t1)?;
        times.push(s.t());
        states.push(DVector::from_column_slice(s.y()));
    }
    Ok(Trajectory { times, states })
}

/// Flow map `φ_t(x0)`.
pub fn flow_map(model: &ModelSpec, x0: &[f64], t: f64, ctrl: &StepControl) -> Result<DVector<f64>> {
    check_state(model, x0)?;
    if t == 0.0 {
        return Ok(DVector::from_column_slice(x0));
    }
    let mut s = Dopri5::new(|_, x, f| model.drift_into(x, f), 0.0, x0, *ctrl)?;
    s.advance_to(t)?;
    Ok(DVector::from_column_slice(s.y()))
}

/// Poincaré plane `{x : (x - point)·normal = 0}` with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub point: DVector<f64>,
    pub normal: DVector<f64>,
}

impl Section {
    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.point.iter().zip(self.normal.iter()))
            .map(|(xi, (pi, ni))| (xi - pi) * ni)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOptions {
    /// Integration time used to relax the guess onto the attractor.
    pub transient: f64,
    pub ctrl: StepControl,
    /// Absolute closure tolerance `‖φ_T(anchor) − anchor‖`.
    pub cycle_tol: f64,
    /// Forward-difference step of the return-map Jacobian.
    pub newton_fd_step: f64,
    pub max_newton_iter: usize,
    /// Give up if no return happens within this time.
    pub max_return_time: f64,
    /// `‖b‖` below this at the relaxed point signals a fixed point.
    pub fixed_point_tol: f64,
    /// Time resolution of the crossing refinement.
    pub crossing_tol: f64,
    /// Override the section normal (default: `b/‖b‖` at the relaxed point).
    pub section_normal: Option<DVector<f64>>,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            transient: 100.0,
            ctrl: StepControl::with_tolerances(1e-12, 1e-14),
            cycle_tol: 1e-9,
            newton_fd_step: 1e-7,
            max_newton_iter: 30,
            max_return_time: 1e3,
            fixed_point_tol: 1e-8,
            crossing_tol: 1e-12,
            section_normal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycle {
    pub anchor: DVector<f64>,
    pub period: f64,
    pub section: Section,
    /// Return-map residual `‖P(x) − x‖` at each Newton iterate.
    pub newton_residuals: Vec<f64>,
    pub ctrl: StepControl,
}

impl LimitCycle {
    pub fn residual(&self) -> f64 {
        *self.newton_residuals.last().unwrap_or(&f64::NAN)
    }
}

/// First upward crossing of `section` starting from a point on it.
/// Returns the crossing point and the return time.
pub fn first_return(
    model: &ModelSpec,
    section: &Section,
    x: &[f64],
    opts: &CycleOptions,
) -> Result<(DVector<f64>, f64)> {
    let mut s = Dopri5::new(|_, y, f| model.drift_into(y, f), 0.0, x, opts.ctrl)?;
    // The start lies on the plane; treat it as the non-negative side so a
    // roundoff-level negative value cannot register as a crossing.
    let mut g_prev = 0.0;
    let mut t_prev = 0.0;
    let mut y_prev = x.to_vec();
    loop {
        if s.t() >= opts.max_return_time {
            return Err(Error::NoSectionCrossing(opts.max_return_time));
        }
        s.step(opts.max_return_time)?;
        let g = section.eval(s.y());
        if g_prev < 0.0 && g >= 0.0 {
            return refine_crossing(model, section, &y_prev, t_prev, s.t(), g_prev, g, opts);
        }
        g_prev = g;
        t_prev = s.t();
        y_prev.copy_from_slice(s.y());
    }
}

/// Locate `g(y(τ)) = 0` for `τ ∈ [ta, tb]` by safeguarded Newton, where every
/// evaluation re-integrates from the accepted step start `(ta, ya)`.
#[allow(clippy::too_many_arguments)]
fn refine_crossing(
    model: &ModelSpec,
    section: &Section,
    ya: &[f64],
    ta: f64,
    tb: f64,
    ga: f64,
    gb: f64,
    opts: &CycleOptions,
) -> Result<(DVector<f64>, f64)> {
    let state_at = |tau: f64| -> Result<Vec<f64>> {
        if tau <= ta {
            return Ok(ya.to_vec());
        }
        let mut s = Dopri5::new(|_, y, f| model.drift_into(y, f), ta, ya, opts.ctrl)?;
        s.advance_to(tau)?;
        Ok(s.y().to_vec())
    };
    let (mut lo, mut hi) = (ta, tb);
    let (mut glo, mut ghi) = (ga, gb);
    let mut tau = ta + (tb - ta) * (-ga) / (gb - ga);
    let tol = opts.crossing_tol * tb.abs().max(1.0);
    let mut b = vec![0.0; model.dim()];
    for _ in 0..100 {
        let y = state_at(tau)?;
        let g = section.eval(&y);
        if g == 0.0 {
            return Ok((DVector::from_vec(y), tau));
        }
        if g < 0.0 {
            lo = tau;
            glo = g;
        } else {
            hi = tau;
            ghi = g;
        }
        model.drift_into(&y, &mut b);
        let dg: f64 = b.iter().zip(section.normal.iter()).map(|(u, v)| u * v).sum();
        let mut next = tau - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = lo + (hi - lo) * (-glo) / (ghi - glo);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
        }
        let step = (next - tau).abs();
        tau = next;
        if step < tol || hi - lo < tol {
            let y = state_at(tau)?;
            return Ok((DVector::from_vec(y), tau));
        }
    }
    let y = state_at(tau)?;
    Ok((DVector::from_vec(y), tau))
}

/// Relax `x_guess` onto its attractor and converge onto the limit cycle with
/// Newton's method on the return map of the section through the relaxed
/// point.
pub fn find_limit_cycle(
    model: &ModelSpec,
    x_guess: &[f64],
    opts: &CycleOptions,
) -> Result<LimitCycle> {
    check_state(model, x_guess)?;
    let n = model.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "limit cycles need at least two dimensions".into(),
        ));
    }
    let p = flow_map(model, x_guess, opts.transient, &opts.ctrl)?;
    let b = model.drift(p.as_slice());
    let speed = b.norm();
    if speed < opts.fixed_point_tol {
        return Err(Error::DegeneratePeriod(speed));
    }
    let normal = match &opts.section_normal {
        Some(nrm) => {
            if nrm.len() != n {
                return Err(Error::DimensionMismatch("section normal".into()));
            }
            let nrm = nrm.normalize();
            if nrm.dot(&b).abs() < 0.1 * speed {
                return Err(Error::InvalidArgument(
                    "section normal is nearly tangent to the flow".into(),
                ));
            }
            // Orient so the flow crosses upward.
            if nrm.dot(&b) < 0.0 {
                -nrm
            } else {
                nrm
            }
        }
        None => &b / speed,
    };
    let section = Section {
        point: p.clone(),
        normal,
    };
    let u_basis = complement_basis(&section.normal);
    let m = n - 1;
    let point_of = |u: &DVector<f64>| &section.point + &u_basis * u;

    let mut u = DVector::zeros(m);
    let mut residuals = Vec::new();
    for _ in 0..opts.max_newton_iter {
        let x = point_of(&u);
        let speed = model.drift(x.as_slice()).norm();
        if speed < opts.fixed_point_tol {
            return Err(Error::DegeneratePeriod(speed));
        }
        let (px, period) = first_return(model, &section, x.as_slice(), opts)?;
        let r = &px - &x;
        let res = r.norm();
        residuals.push(res);
        if !res.is_finite() {
            return Err(Error::NewtonDivergence("non-finite residual".into()));
        }
        if res < opts.cycle_tol {
            return Ok(LimitCycle {
                anchor: x,
                period,
                section,
                newton_residuals: residuals,
                ctrl: opts.ctrl,
            });
        }
        if residuals.len() > 3 && res > 1e3 * residuals[0].max(opts.cycle_tol) {
            return Err(Error::NewtonDivergence(format!("residual grew to {res:e}")));
        }
        let g = u_basis.transpose() * &r;
        let mut jac = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut uk = u.clone();
            uk[k] += opts.newton_fd_step;
            let xk = point_of(&uk);
            let (pk, _) = first_return(model, &section, xk.as_slice(), opts)?;
            let gk = u_basis.transpose() * (pk - xk);
            jac.set_column(k, &((gk - &g) / opts.newton_fd_step));
        }
        let du = jac
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| Error::NewtonDivergence("singular return-map Jacobian".into()))?;
        u += du;
    }
    Err(Error::NewtonDivergence(format!(
        "no convergence in {} iterations (last residual {:e})",
        opts.max_newton_iter,
        residuals.last().copied().unwrap_or(f64::NAN)
    )))
}

/// `N` equal-time samples of the cycle with drift, Jacobian and arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSamples {
    pub period: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub drift: Vec<DVector<f64>>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub speeds: Vec<f64>,
    /// Arclength increments `‖b_i‖·T/N`.
    pub ds: Vec<f64>,
    pub closure_error: f64,
}

impl CycleSamples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Sampling step `T/N`.
    pub fn step(&self) -> f64 {
        self.period / self.len() as f64
    }

    pub fn arclength(&self) -> f64 {
        self.ds.iter().sum()
    }

    pub fn to_csv(&self) -> CsvTable {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("x", n));
        header.extend(indexed("b", n));
        let mut table = CsvTable::new(header);
        for i in 0..self.len() {
            let mut row = vec![self.times[i]];
            row.extend(self.states[i].iter());
            row.extend(self.drift[i].iter());
            table.push(row);
        }
        table
    }
}

pub const MIN_CYCLE_SAMPLES: usize = 64;

/// Sample the cycle at `t_i = iT/N` by re-integrating from the anchor.
pub fn sample_cycle(
    cycle: &LimitCycle,
    model: &ModelSpec,
    n: usize,
    closure_tol: f64,
) -> Result<CycleSamples> {
    if n < MIN_CYCLE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_CYCLE_SAMPLES} cycle samples, got {n}"
        )));
    }
    let t_period = cycle.period;
    let mut s = Dopri5::new(
        |_, y, f| model.drift_into(y, f),
        0.0,
        cycle.anchor.as_slice(),
        cycle.ctrl,
    )?;
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let t = t_period * i as f64 / n as f64;
        s.advance_to(t)?;
        times.push(t);
        states.push(DVector::from_column_slice(s.y()));
    }
    s.advance_to(t_period)?;
    let closure_error = (DVector::from_column_slice(s.y()) - &cycle.anchor).norm();
    if !(closure_error < closure_tol) {
        return Err(Error::ClosureFailure(closure_error));
    }
    let drift: Vec<DVector<f64>> = states.iter().map(|x| model.drift(x.as_slice())).collect();
    let jacobians = states.iter().map(|x| model.jacobian(x.as_slice())).collect();
    let speeds: Vec<f64> = drift.iter().map(|b| b.norm()).collect();
    let h = t_period / n as f64;
    let ds = speeds.iter().map(|v| v * h).collect();
    Ok(CycleSamples {
        period: t_period,
        times,
        states,
        drift,
        jacobians,
        speeds,
        ds,
        closure_error,
    })
}
