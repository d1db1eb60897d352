//! Gaussian tube around a deterministic trajectory.
//!
//! For `X_ε` started near `x̂(0)`, the rescaled deviation
//! `Z_ε = (X_ε − x̂)/√ε` converges to a Gaussian process with
//!
//! ```text
//! dμ/dt = A(x̂) μ
//! dΣ/dt = A(x̂) Σ + Σ A(x̂)ᵀ + 2D
//! dm/dt = A(x̂) m + ½ tr(H_i(x̂) Σ)        (first correction to the mean)
//! ```
//!
//! and `Σ(t)⁻¹` is the curvature of the rate function at the moving minimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen, symmetrize};
use crate::model::ModelSpec;
use crate::ode::{Dopri5, StepControl};
use crate::report::{indexed, CsvTable};

/// Marker for the rescaled deviation `Z_ε = (X_ε − x̂)/√ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledDeviation {
    pub epsilon: f64,
}

impl RescaledDeviation {
    pub fn apply(&self, x: &DVector<f64>, x_hat: &DVector<f64>) -> DVector<f64> {
        (x - x_hat) / self.epsilon.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTube {
    pub times: Vec<f64>,
    pub base: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub m: Vec<DVector<f64>>,
}

impl GaussianTube {
    pub fn dim(&self) -> usize {
        self.base[0].len()
    }

    /// Index of the grid time equal to `t` (to 1e-12 relative).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::GridMismatch(t))
    }

    /// Columns `t, xhat*, mu*, sigma_ij (i ≤ j, row-major), m*`.
    pub fn to_csv(&self) -> CsvTable {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("xhat", n));
        header.extend(indexed("mu", n));
        for i in 0..n {
            for j in i..n {
                header.push(format!("sigma{}{}", i + 1, j + 1));
            }
        }
        header.extend(indexed("m", n));
        let mut table = CsvTable::new(header);
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k]];
            row.extend(self.base[k].iter());
            row.extend(self.mu[k].iter());
            for i in 0..n {
                for j in i..n {
                    row.push(self.sigma[k][(i, j)]);
                }
            }
            row.extend(self.m[k].iter());
            table.push(row);
        }
        table
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty output grid".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "output times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Uniform grid `0, t1/n, …, t1`.
pub fn uniform_grid(t1: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t1 * k as f64 / n as f64).collect()
}

fn check_psd_initial(sigma0: &DMatrix<f64>) -> Result<()> {
    let (vals, _) = sym_eigen(sigma0);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = linalg::max_asymmetry(sigma0);
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::NonPsdInitial(f64::NAN));
    }
    if vals[0] < -1e-12 * scale {
        return Err(Error::NonPsdInitial(vals[0]));
    }
    Ok(())
}

/// Enforce the PSD floor `λ_min ≥ −1e−10‖Σ‖`, clipping roundoff-level
/// negative eigenvalues to zero.
fn enforce_floor(sigma: &mut DMatrix<f64>, t: f64) -> Result<()> {
    let (vals, vecs) = sym_eigen(sigma);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if vals[0] >= 0.0 {
        return Ok(());
    }
    if vals[0] < -1e-10 * scale {
        return Err(Error::IntegrationFailure(format!(
            "covariance lost positive semidefiniteness at t = {t} (λ_min = {:e})",
            vals[0]
        )));
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.max(0.0)),
    ));
    *sigma = &vecs * d * vecs.transpose();
    symmetrize(sigma);
    Ok(())
}

fn map_integration(e: Error) -> Error {
    match e {
        Error::StepSizeUnderflow { t } | Error::NonFiniteState { t } => {
            Error::IntegrationFailure(format!("{e} (t = {t})"))
        }
        other => other,
    }
}

/// `½ tr(H_i Σ)` for each component `i`.
fn hessian_source(hs: &[DMatrix<f64>], sigma: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(hs.len(), hs.iter().map(|h| 0.5 * linalg::frobenius(h, sigma)))
}

/// Propagate the Gaussian tube from `(x0, mu0, sigma0)` at `times[0]` and
/// record it at every grid time. `m` starts from zero.
pub fn propagate_gaussian(
    model: &ModelSpec,
    x0: &[f64],
    mu0: &[f64],
    sigma0: &DMatrix<f64>,
    times: &[f64],
    ctrl: &StepControl,
) -> Result<GaussianTube> {
    let n = model.dim();
    if x0.len() != n || mu0.len() != n || sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::DimensionMismatch("tube initial data".into()));
    }
    check_grid(times)?;
    check_psd_initial(sigma0)?;
    let d2 = model.diffusion() * 2.0;
    let affine = model.is_affine();
    let n2 = n * n;
    let rhs = |_t: f64, y: &[f64], f: &mut [f64]| {
        let x = &y[..n];
        let a = model.jacobian(x);
        let mu = DVector::from_column_slice(&y[n..2 * n]);
        let sigma = DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n2]);
        let m = DVector::from_column_slice(&y[2 * n + n2..]);
        model.drift_into(x, &mut f[..n]);
        f[n..2 * n].copy_from_slice((&a * mu).as_slice());
        let ds = &a * &sigma + &sigma * a.transpose() + &d2;
        f[2 * n..2 * n + n2].copy_from_slice(ds.as_slice());
        let mut dm = &a * m;
        if !affine {
            dm += hessian_source(&model.hessian(x), &sigma);
        }
        f[2 * n + n2..].copy_from_slice(dm.as_slice());
    };
    let mut y0 = Vec::with_capacity(3 * n + n2);
    y0.extend_from_slice(x0);
    y0.extend_from_slice(mu0);
    let mut s0 = sigma0.clone();
    symmetrize(&mut s0);
    y0.extend_from_slice(s0.as_slice());
    y0.extend(std::iter::repeat_n(0.0, n));

    let mut solver = Dopri5::new(rhs, times[0], &y0, *ctrl)?;
    let mut tube = GaussianTube {
        times: times.to_vec(),
        base: Vec::with_capacity(times.len()),
        mu: Vec::with_capacity(times.len()),
        sigma: Vec::with_capacity(times.len()),
        m: Vec::with_capacity(times.len()),
    };
    for &t in times {
        while solver.t() < t {
            solver.step(t).map_err(map_integration)?;
            let y = solver.y_mut();
            let mut sig = DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n2]);
            symmetrize(&mut sig);
            y[2 * n..2 * n + n2].copy_from_slice(sig.as_slice());
        }
        let y = solver.y_mut();
        let mut sig = DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n2]);
        enforce_floor(&mut sig, t)?;
        y[2 * n..2 * n + n2].copy_from_slice(sig.as_slice());
        tube.base.push(DVector::from_column_slice(&y[..n]));
        tube.mu.push(DVector::from_column_slice(&y[n..2 * n]));
        tube.sigma.push(sig);
        tube.m.push(DVector::from_column_slice(&y[2 * n + n2..]));
    }
    Ok(tube)
}

/// Re-integrate the first-correction moment `m` along the tube from `m0`.
pub fn propagate_m(
    model: &ModelSpec,
    tube: &GaussianTube,
    m0: &[f64],
    ctrl: &StepControl,
) -> Result<Vec<DVector<f64>>> {
    let n = model.dim();
    if m0.len() != n || tube.dim() != n {
        return Err(Error::DimensionMismatch("m0".into()));
    }
    let n2 = n * n;
    let d2 = model.diffusion() * 2.0;
    let rhs = |_t: f64, y: &[f64], f: &mut [f64]| {
        let x = &y[..n];
        let a = model.jacobian(x);
        let sigma = DMatrix::from_column_slice(n, n, &y[n..n + n2]);
        let m = DVector::from_column_slice(&y[n + n2..]);
        model.drift_into(x, &mut f[..n]);
        let ds = &a * &sigma + &sigma * a.transpose() + &d2;
        f[n..n + n2].copy_from_slice(ds.as_slice());
        let dm = &a * m + hessian_source(&model.hessian(x), &sigma);
        f[n + n2..].copy_from_slice(dm.as_slice());
    };
    let mut y0 = tube.base[0].as_slice().to_vec();
    y0.extend_from_slice(tube.sigma[0].as_slice());
    y0.extend_from_slice(m0);
    let mut solver = Dopri5::new(rhs, tube.times[0], &y0, *ctrl)?;
    let mut out = Vec::with_capacity(tube.times.len());
    for &t in &tube.times {
        solver.advance_to(t).map_err(map_integration)?;
        out.push(DVector::from_column_slice(&solver.y()[n + n2..]));
    }
    Ok(out)
}

/// Largest condition number accepted when inverting a covariance.
pub const MAX_COVARIANCE_CONDITION: f64 = 1e12;

/// Curvature `K = Σ⁻¹` of a symmetric positive definite covariance.
pub fn curvature_from_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(sigma);
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if vals[0] <= 0.0 || max / vals[0] > MAX_COVARIANCE_CONDITION {
        let cond = if vals[0] <= 0.0 {
            f64::INFINITY
        } else {
            max / vals[0]
        };
        return Err(Error::SingularCovariance(cond));
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v),
    ));
    let mut k = &vecs * d * vecs.transpose();
    symmetrize(&mut k);
    Ok(k)
}

/// Rate-function curvature `Σ(t)⁻¹` at a grid time of the tube.
pub fn curvature_from_tube(tube: &GaussianTube, t: f64) -> Result<DMatrix<f64>> {
    let i = tube.index_of(t)?;
    curvature_from_covariance(&tube.sigma[i])
}

/// Integrate the curvature directly, `dK/dt = −KA − AᵀK − 2KDK`, along the
/// trajectory from `x0`.
pub fn propagate_curvature(
    model: &ModelSpec,
    x0: &[f64],
    k0: &DMatrix<f64>,
    times: &[f64],
    ctrl: &StepControl,
) -> Result<Vec<DMatrix<f64>>> {
    let n = model.dim();
    check_grid(times)?;
    let n2 = n * n;
    let d = model.diffusion().clone();
    let rhs = |_t: f64, y: &[f64], f: &mut [f64]| {
        let x = &y[..n];
        let a = model.jacobian(x);
        let k = DMatrix::from_column_slice(n, n, &y[n..]);
        model.drift_into(x, &mut f[..n]);
        let dk = -(&k * &a) - a.transpose() * &k - (&k * &d * &k) * 2.0;
        f[n..].copy_from_slice(dk.as_slice());
    };
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(k0.as_slice());
    let mut solver = Dopri5::new(rhs, times[0], &y0, *ctrl)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while solver.t() < t {
            solver.step(t).map_err(map_integration)?;
            let y = solver.y_mut();
            let mut k = DMatrix::from_column_slice(n, n, &y[n..n + n2]);
            symmetrize(&mut k);
            y[n..].copy_from_slice(k.as_slice());
        }
        out.push(DMatrix::from_column_slice(n, n, &solver.y()[n..]));
    }
    Ok(out)
}

/// Stationary covariance of a stable linear system, `AΣ + ΣAᵀ + 2D = 0`.
pub fn stationary_covariance(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::solve_lyapunov(a, &(d * 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WkbCheck {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// For an affine drift the rate function is quadratic, so the first
/// correction must satisfy `m(t) = Σ(t)·∇log ω(t)`.  The moment `m` is
/// integrated from its own equation starting at `Σ(0)·g0`; the prefactor
/// gradient is transported independently by `dg/dt = −(Aᵀ + 2Σ⁻¹D) g`, the
/// linear part of the prefactor equation.  The residual is
/// `‖m(t) − Σ(t) g(t)‖` at every tube time.
pub fn wkb_first_correction_check(
    model: &ModelSpec,
    tube: &GaussianTube,
    log_prefactor_gradient: &[f64],
    ctrl: &StepControl,
) -> Result<WkbCheck> {
    if !model.is_affine() {
        return Err(Error::NotLinearModel);
    }
    let n = model.dim();
    if log_prefactor_gradient.len() != n {
        return Err(Error::DimensionMismatch("log prefactor gradient".into()));
    }
    let g0 = DVector::from_column_slice(log_prefactor_gradient);
    let sigma0 = &tube.sigma[0];
    let m0 = sigma0 * &g0;
    let track_g = g0.iter().any(|&v| v != 0.0);
    if track_g {
        curvature_from_covariance(sigma0)?;
    }
    let n2 = n * n;
    let d = model.diffusion().clone();
    let d2 = &d * 2.0;
    let rhs = |_t: f64, y: &[f64], f: &mut [f64]| {
        let x = &y[..n];
        let a = model.jacobian(x);
        let sigma = DMatrix::from_column_slice(n, n, &y[n..n + n2]);
        let m = DVector::from_column_slice(&y[n + n2..2 * n + n2]);
        let g = DVector::from_column_slice(&y[2 * n + n2..]);
        model.drift_into(x, &mut f[..n]);
        let ds = &a * &sigma + &sigma * a.transpose() + &d2;
        f[n..n + n2].copy_from_slice(ds.as_slice());
        f[n + n2..2 * n + n2].copy_from_slice((&a * m).as_slice());
        let dg = if track_g {
            let k = sigma
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
            -(a.transpose() * &g) - (&k * &d * &g) * 2.0
        } else {
            DVector::zeros(n)
        };
        f[2 * n + n2..].copy_from_slice(dg.as_slice());
    };
    let mut y0 = tube.base[0].as_slice().to_vec();
    y0.extend_from_slice(sigma0.as_slice());
    y0.extend_from_slice(m0.as_slice());
    y0.extend_from_slice(g0.as_slice());
    let mut solver = Dopri5::new(rhs, tube.times[0], &y0, *ctrl)?;
    let mut residuals = Vec::with_capacity(tube.times.len());
    for &t in &tube.times {
        solver.advance_to(t).map_err(map_integration)?;
        let y = solver.y();
        let sigma = DMatrix::from_column_slice(n, n, &y[n..n + n2]);
        let m = DVector::from_column_slice(&y[n + n2..2 * n + n2]);
        let g = DVector::from_column_slice(&y[2 * n + n2..]);
        residuals.push((m - sigma * g).norm());
    }
    let max_residual = residuals.iter().fold(0.0f64, |a, &r| a.max(r));
    Ok(WkbCheck {
        times: tube.times.clone(),
        residuals,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, linear_params, params, ModelSpec};

    fn ctrl() -> StepControl {
        StepControl::with_tolerances(1e-11, 1e-13)
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn ou() -> ModelSpec {
        builtin_model("linear", &params(&[("a11", -1.0)])).unwrap()
    }

    #[test]
    fn ou_variance_closed_form() {
        let tube =
            propagate_gaussian(&ou(), &[0.3], &[0.0], &scalar(0.0), &[0.0, 0.5, 1.0, 2.0], &ctrl())
                .unwrap();
        for (t, s) in tube.times.iter().zip(&tube.sigma) {
            assert!((s[(0, 0)] - (1.0 - (-2.0 * t).exp())).abs() < 1e-9);
        }
        assert!((tube.sigma[2][(0, 0)] - 0.8646647).abs() < 1e-7);
    }

    #[test]
    fn pure_diffusion_grows_linearly() {
        let m = builtin_model("linear", &linear_params(&DMatrix::zeros(2, 2))).unwrap();
        let tube = propagate_gaussian(
            &m,
            &[0.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::identity(2, 2),
            &uniform_grid(3.0, 6),
            &ctrl(),
        )
        .unwrap();
        for (t, s) in tube.times.iter().zip(&tube.sigma) {
            let expect = DMatrix::<f64>::identity(2, 2) * (1.0 + 2.0 * t);
            assert!(linalg::max_abs(&(s - expect)) < 1e-10);
        }
    }

    #[test]
    fn mean_follows_linearization() {
        let tube =
            propagate_gaussian(&ou(), &[0.0], &[2.0], &scalar(0.0), &[0.0, 1.0], &ctrl()).unwrap();
        assert!((tube.mu[1][0] - 2.0 * (-1.0f64).exp()).abs() < 1e-10);
    }

    fn quadratic_1d(d: f64) -> ModelSpec {
        builtin_model("cubic1d", &params(&[("c", 1.0)]))
            .unwrap()
            .with_diffusion(scalar(d))
            .unwrap()
    }

    #[test]
    fn first_correction_closed_form() {
        // m(t) = ∫_0^t e^{-(t-s)}(1 - e^{-2s}) ds, so m(1) = (1 - e^{-1})^2.
        let m = quadratic_1d(1.0);
        let tube = propagate_gaussian(&m, &[0.0], &[0.0], &scalar(0.0), &uniform_grid(1.0, 4), &ctrl())
            .unwrap();
        let expect = (1.0 - (-1.0f64).exp()).powi(2);
        assert!((tube.m[4][0] - expect).abs() < 1e-9);
        assert!((expect - 0.3995764).abs() < 1e-7);
        for (k, t) in tube.times.iter().enumerate() {
            let exact = 1.0 - 2.0 * (-t).exp() + (-2.0 * t).exp();
            assert!((tube.m[k][0] - exact).abs() < 1e-9);
        }
        let again = propagate_m(&m, &tube, &[0.0], &ctrl()).unwrap();
        assert!((again[4][0] - expect).abs() < 1e-9);
    }

    #[test]
    fn no_noise_no_correction() {
        let m = quadratic_1d(0.0);
        let tube = propagate_gaussian(&m, &[0.0], &[0.0], &scalar(0.0), &uniform_grid(2.0, 4), &ctrl())
            .unwrap();
        assert!(tube.m.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn linear_models_have_no_correction() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -0.5]);
        let m = builtin_model("linear", &linear_params(&a)).unwrap();
        let tube = propagate_gaussian(
            &m,
            &[1.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::zeros(2, 2),
            &uniform_grid(2.0, 4),
            &ctrl(),
        )
        .unwrap();
        assert!(tube.m.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn curvature_inversion() {
        assert_eq!(
            curvature_from_covariance(&DMatrix::identity(2, 2)).unwrap(),
            DMatrix::identity(2, 2)
        );
        // Stationary 1D OU: −2Σ + 2 = 0.
        let s = stationary_covariance(&scalar(-1.0), &scalar(1.0)).unwrap();
        assert!((curvature_from_covariance(&s).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
        let singular = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert!(matches!(
            curvature_from_covariance(&singular),
            Err(Error::SingularCovariance(_))
        ));
        let tube =
            propagate_gaussian(&ou(), &[0.0], &[0.0], &scalar(1.0), &[0.0, 1.0], &ctrl()).unwrap();
        assert!((curvature_from_tube(&tube, 1.0).unwrap()[(0, 0)] - 1.0).abs() < 1e-10);
        assert!(matches!(curvature_from_tube(&tube, 0.5), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn rejects_indefinite_initial_covariance() {
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let m = builtin_model("linear", &linear_params(&DMatrix::zeros(2, 2))).unwrap();
        let r = propagate_gaussian(&m, &[0.0, 0.0], &[0.0, 0.0], &s0, &[0.0, 1.0], &ctrl());
        assert!(matches!(r, Err(Error::NonPsdInitial(_))));
    }

    #[test]
    fn covariance_becomes_definite_from_zero() {
        let m = builtin_model("vdp", &params(&[("mu", 1.0)])).unwrap();
        let tube = propagate_gaussian(
            &m,
            &[2.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::zeros(2, 2),
            &uniform_grid(5.0, 50),
            &ctrl(),
        )
        .unwrap();
        for s in &tube.sigma[1..] {
            assert!(s.determinant() > 0.0);
            assert_eq!(linalg::max_asymmetry(s), 0.0);
        }
    }

    #[test]
    fn wkb_guard_and_trivial_case() {
        let m = builtin_model("vdp", &params(&[("mu", 1.0)])).unwrap();
        let tube = propagate_gaussian(
            &m,
            &[2.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::identity(2, 2),
            &[0.0, 1.0],
            &ctrl(),
        )
        .unwrap();
        assert_eq!(
            wkb_first_correction_check(&m, &tube, &[0.0, 0.0], &ctrl()).unwrap_err(),
            Error::NotLinearModel
        );
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -0.5]);
        let lin = builtin_model("linear", &linear_params(&a)).unwrap();
        let tube = propagate_gaussian(
            &lin,
            &[1.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::identity(2, 2),
            &uniform_grid(5.0, 10),
            &ctrl(),
        )
        .unwrap();
        let chk = wkb_first_correction_check(&lin, &tube, &[0.0, 0.0], &ctrl()).unwrap();
        assert_eq!(chk.max_residual, 0.0);
        let chk = wkb_first_correction_check(&lin, &tube, &[0.4, -1.1], &ctrl()).unwrap();
        assert!(chk.max_residual < 1e-8, "{}", chk.max_residual);
    }

    #[test]
    fn csv_has_upper_triangle() {
        let tube =
            propagate_gaussian(&ou(), &[0.0], &[0.0], &scalar(0.0), &[0.0, 1.0], &ctrl()).unwrap();
        let csv = tube.to_csv().to_csv();
        assert!(csv.starts_with("t,xhat1,mu1,sigma11,m1\n"));
    }
}
