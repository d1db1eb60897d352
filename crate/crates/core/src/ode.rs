//! Adaptive explicit Runge–Kutta integration (Dormand–Prince 5(4)).
//!
//! The solver is a small stateful stepper: callers drive it with
//! [`Dopri5::step`] when they need every accepted step (event detection) or
//! with [`Dopri5::advance_to`] when they only need the state at given times.

use crate::error::{Error, Result};

/// Step-size control for the embedded pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Largest step allowed.
    pub h_max: f64,
    /// Hard cap on the number of attempted steps per call.
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

impl StepControl {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument(
                "step control tolerances must be positive".into(),
            ));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::InvalidArgument("h_max must be positive".into()));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Dormand–Prince 5(4) stepper with FSAL reuse.
pub struct Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rhs: F,
    ctrl: StepControl,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fsal_valid: bool,
    accepted: usize,
    rejected: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, t0: f64, y0: &[f64], ctrl: StepControl) -> Result<Self> {
        ctrl.validate()?;
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t0 });
        }
        let n = y0.len();
        let zeros = || vec![0.0; n];
        Ok(Self {
            rhs,
            ctrl,
            t: t0,
            y: y0.to_vec(),
            h: ctrl.h_init.unwrap_or(0.0),
            k: [zeros(), zeros(), zeros(), zeros(), zeros(), zeros(), zeros()],
            ytmp: zeros(),
            ynew: zeros(),
            fsal_valid: false,
            accepted: 0,
            rejected: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Mutable access to the state; any change invalidates the cached
    /// derivative so the next step re-evaluates it.
    pub fn y_mut(&mut self) -> &mut [f64] {
        self.fsal_valid = false;
        &mut self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    fn err_norm(&self, y0: &[f64], y1: &[f64], e: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..y0.len() {
            let sc = self.ctrl.atol + self.ctrl.rtol * y0[i].abs().max(y1[i].abs());
            let r = e[i] / sc;
            acc += r * r;
        }
        (acc / y0.len().max(1) as f64).sqrt()
    }

    fn initial_step(&mut self, span: f64) -> f64 {
        let n = self.y.len();
        let f0 = self.k[0].clone();
        let scale: Vec<f64> = self
            .y
            .iter()
            .map(|v| self.ctrl.atol + self.ctrl.rtol * v.abs())
            .collect();
        let rms = |v: &[f64]| {
            (v.iter()
                .zip(&scale)
                .map(|(a, s)| (a / s) * (a / s))
                .sum::<f64>()
                / n.max(1) as f64)
                .sqrt()
        };
        let d0 = rms(&self.y);
        let d1 = rms(&f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        for ((t, y), f) in self.ytmp.iter_mut().zip(&self.y).zip(&f0) {
            *t = y + h0 * f;
        }
        let mut f1 = vec![0.0; n];
        (self.rhs)(self.t + h0, &self.ytmp, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(self.ctrl.h_max)
    }

    /// Take one accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        let n = self.y.len();
        let span = t_limit - self.t;
        if span <= 0.0 {
            return Ok(());
        }
        if !self.fsal_valid {
            let (k0, y) = (&mut self.k[0], &self.y);
            (self.rhs)(self.t, y, k0);
            if k0.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t: self.t });
            }
            self.fsal_valid = true;
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(span);
        }
        let mut attempts = 0usize;
        loop {
            attempts += 1;
            if attempts > self.ctrl.max_steps {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let mut h = self.h.min(self.ctrl.h_max);
            let mut last = false;
            if h >= span * (1.0 - 1e-12) {
                h = span;
                last = true;
            }
            let h_floor = 1e-14 * self.t.abs().max(1.0);
            if h < h_floor && !last {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let yt = &mut self.ytmp;
            for i in 0..n {
                yt[i] = y[i] + h * A21 * k1[i];
            }
            (self.rhs)(t + C2 * h, yt, k2);
            for i in 0..n {
                yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.rhs)(t + C3 * h, yt, k3);
            for i in 0..n {
                yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.rhs)(t + C4 * h, yt, k4);
            for i in 0..n {
                yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.rhs)(t + C5 * h, yt, k5);
            for i in 0..n {
                yt[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.rhs)(t + h, yt, k6);
            let yn = &mut self.ynew;
            for i in 0..n {
                yn[i] = y[i]
                    + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            (self.rhs)(t + h, yn, k7);
            for i in 0..n {
                yt[i] = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
            }
            let err = self.err_norm(&self.y, &self.ynew, &self.ytmp);
            let finite = err.is_finite()
                && self.ynew.iter().all(|v| v.is_finite())
                && self.k[6].iter().all(|v| v.is_finite());
            if finite && err <= 1.0 {
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.t = if last { t_limit } else { t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.k.swap(0, 6);
                self.accepted += 1;
                // Keep the unclamped proposal so that short final steps do
                // not shrink the next interval.
                if !last || h == self.h {
                    self.h = h * fac;
                }
                return Ok(());
            }
            self.rejected += 1;
            let fac = if finite {
                (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.25
            };
            self.h = h * fac;
            if self.h < h_floor {
                if finite {
                    return Err(Error::StepSizeUnderflow { t: self.t });
                }
                return Err(Error::NonFiniteState { t: self.t });
            }
        }
    }

    /// Integrate until exactly `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target {
            self.step(t_target)?;
        }
        Ok(())
    }
}

/// Integrate `rhs` from `(t0, y0)` to `t1` and return the terminal state.
pub fn integrate<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, ctrl: StepControl) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!(
            "final time {t1} precedes initial time {t0}"
        )));
    }
    let mut s = Dopri5::new(rhs, t0, y0, ctrl)?;
    s.advance_to(t1)?;
    Ok(s.y.clone())
}
