//! Quantities on a stable limit cycle `Γ`.
//!
//! Along the sampled cycle a moving orthonormal frame `Q = [e₁ Q̃]` with
//! `e₁ = b/‖b‖` splits the linearized dynamics into the neutral tangent
//! direction and the transverse block. With `Ã = Q̃ᵀAQ̃`, `S̃ = Q̃ᵀ dQ̃/dt`
//! and `D̃ = Q̃ᵀDQ̃`, the periodic solution of
//!
//! ```text
//! dΣ̃/dt = (Ã − S̃)Σ̃ + Σ̃(Ã − S̃)ᵀ + 2D̃
//! ```
//!
//! gives the transverse covariance; `K̃ = Σ̃⁻¹` is the reduced curvature of
//! the rate function and `K = Q̃K̃Q̃ᵀ` the full (singular) curvature. From
//! these follow the prefactor `d log ω/dt = −∇·b − tr(DK)`, the transverse
//! variance product `v = det Σ̃`, the conserved quantity `√v·ω·‖b‖`, the
//! cycle marginal density and the local entropy balance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::CycleSamples;
use crate::linalg::{self, sym_eigen, symmetrize};
use crate::model::{require_pd_diffusion, ModelSpec};
use crate::periodic;
use crate::report::{indexed, CsvTable};

// ---------------------------------------------------------------------------
// Frame
// ---------------------------------------------------------------------------

/// Moving frame along the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FrenetFrameField {
    /// `Q_i = [e₁ … e_n]`, orthonormal with `det Q_i = +1`.
    pub q: Vec<DMatrix<f64>>,
    /// `S_i = Q_iᵀ dQ/dt` from periodic central differences.
    pub s: Vec<DMatrix<f64>>,
    /// Reference direction `c` and completion `W` (`[c W]` orthonormal,
    /// positive determinant); in three or more dimensions the frame at
    /// tangent `e₁` is `R(c→e₁)·[c W]` with `R` the minimal rotation.
    reference: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl FrenetFrameField {
    pub fn dim(&self) -> usize {
        self.q[0].nrows()
    }

    /// Frame with first column `e1` (unit tangent), built by the same rule
    /// as the sampled frames.
    pub fn frame_at(&self, e1: &DVector<f64>) -> DMatrix<f64> {
        frame_from_tangent(e1, self.reference.as_ref())
    }

    /// Largest relative skew defect `‖S + Sᵀ‖/‖S‖` over the samples.
    pub fn skew_defect(&self) -> f64 {
        self.s
            .iter()
            .map(|s| (s + s.transpose()).norm() / s.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Largest `‖QᵀQ − I‖` over the samples.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        self.q
            .iter()
            .map(|q| (q.transpose() * q - DMatrix::<f64>::identity(n, n)).norm())
            .fold(0.0, f64::max)
    }

    /// Transverse block `Q̃_i` (columns 2..n).
    pub fn transverse(&self, i: usize) -> DMatrix<f64> {
        transverse_block(&self.q[i])
    }
}

fn transverse_block(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.columns(1, q.ncols() - 1).into_owned()
}

fn frame_from_tangent(
    e1: &DVector<f64>,
    reference: Option<&(DVector<f64>, DMatrix<f64>)>,
) -> DMatrix<f64> {
    let n = e1.len();
    match reference {
        None => {
            debug_assert_eq!(n, 2);
            DMatrix::from_row_slice(2, 2, &[e1[0], -e1[1], e1[1], e1[0]])
        }
        Some((c, w)) => {
            // Minimal rotation taking c to e1:
            // R = I + K + K²/(1 + c·e1), K = e1 cᵀ − c e1ᵀ.
            let k = e1 * c.transpose() - c * e1.transpose();
            let r = DMatrix::<f64>::identity(n, n) + &k + (&k * &k) / (1.0 + c.dot(e1));
            let mut base = DMatrix::zeros(n, n);
            base.set_column(0, c);
            base.columns_mut(1, n - 1).copy_from(w);
            let mut q = r * base;
            q.set_column(0, e1);
            q
        }
    }
}

/// Pick a reference direction far from every `-e₁` so the minimal rotation
/// stays well defined along the whole cycle.
fn choose_reference(tangents: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = tangents[0].len();
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mean: DVector<f64> = tangents.iter().fold(DVector::zeros(n), |a, t| a + t);
    if mean.norm() > 1e-8 {
        candidates.push(mean.normalize());
    }
    for k in 0..n {
        for sgn in [1.0, -1.0] {
            let mut v = DVector::zeros(n);
            v[k] = sgn;
            candidates.push(v);
        }
    }
    // Differences of tangents a quarter period apart are further candidates.
    let m = tangents.len();
    for j in 0..8 {
        let d = &tangents[j * m / 8] - &tangents[(j * m / 8 + m / 4) % m];
        if d.norm() > 1e-6 {
            candidates.push(d.normalize());
        }
    }
    let score = |c: &DVector<f64>| {
        tangents
            .iter()
            .map(|t| 1.0 + c.dot(t))
            .fold(f64::INFINITY, f64::min)
    };
    let best = candidates
        .into_iter()
        .max_by(|a, b| score(a).total_cmp(&score(b)))
        .expect("candidate list is never empty");
    let mut w = linalg::complement_basis(&best);
    let mut base = DMatrix::zeros(n, n);
    base.set_column(0, &best);
    base.columns_mut(1, n - 1).copy_from(&w);
    if base.determinant() < 0.0 {
        let last = w.ncols() - 1;
        let col = -w.column(last);
        w.set_column(last, &col);
    }
    (best, w)
}

/// Build the moving frame with `e₁ = b/‖b‖` at every sample.
pub fn build_frame(samples: &CycleSamples) -> Result<FrenetFrameField> {
    let n = samples.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("cycle frames need n ≥ 2".into()));
    }
    let mut tangents = Vec::with_capacity(samples.len());
    for (i, b) in samples.drift.iter().enumerate() {
        let speed = b.norm();
        if !(speed > 0.0) {
            return Err(Error::ZeroVelocity(i));
        }
        tangents.push(b / speed);
    }
    let reference = (n > 2).then(|| choose_reference(&tangents));
    if let Some((c, _)) = &reference {
        if let Some(i) = tangents.iter().position(|t| 1.0 + c.dot(t) < 1e-3) {
            return Err(Error::FrameDiscontinuity(i));
        }
    }
    let q: Vec<DMatrix<f64>> = tangents
        .iter()
        .map(|t| frame_from_tangent(t, reference.as_ref()))
        .collect();
    let m = q.len();
    for i in 0..m {
        let (a, b) = (&q[i], &q[(i + 1) % m]);
        for k in 0..n {
            if a.column(k).dot(&b.column(k)) <= 0.0 {
                return Err(Error::FrameDiscontinuity(i));
            }
        }
    }
    let dq = periodic::derivative_matrix(&q, samples.step());
    let s = q.iter().zip(&dq).map(|(q, d)| q.transpose() * d).collect();
    Ok(FrenetFrameField { q, s, reference })
}

// ---------------------------------------------------------------------------
// Periodic covariance / curvature
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureOptions {
    /// Relative change of `Σ̃` over one period that counts as converged.
    pub periodicity_tol: f64,
    pub max_periods: usize,
    /// Relative eigenvalue threshold for the null direction of `K`.
    pub zero_eig_tol: f64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        Self {
            periodicity_tol: 1e-12,
            max_periods: 200,
            zero_eig_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleCurvature {
    /// Transverse covariance `Σ̃_i`, `(n−1)×(n−1)`.
    pub sigma_reduced: Vec<DMatrix<f64>>,
    /// Reduced curvature `K̃_i = Σ̃_i⁻¹`.
    pub k_reduced: Vec<DMatrix<f64>>,
    /// Full curvature `K_i = Q̃_i K̃_i Q̃_iᵀ`.
    pub k_full: Vec<DMatrix<f64>>,
    /// `v_i = det Σ̃_i`.
    pub v: Vec<f64>,
    /// `Ã_i − S̃_i` and `D̃_i` on the sample grid.
    pub transverse_drift: Vec<DMatrix<f64>>,
    pub transverse_diffusion: Vec<DMatrix<f64>>,
    pub periods_used: usize,
    /// Relative change of `Σ̃` over the final period.
    pub periodicity_error: f64,
    /// Relative residual of the reduced Riccati equation at each sample.
    pub riccati_residuals: Vec<f64>,
}

impl CycleCurvature {
    pub fn max_riccati_residual(&self) -> f64 {
        self.riccati_residuals.iter().fold(0.0, |a, &r| a.max(r))
    }

    /// Largest `‖K b‖/(‖K‖‖b‖)` over the samples.
    pub fn tangency_defect(&self, samples: &CycleSamples) -> f64 {
        self.k_full
            .iter()
            .zip(&samples.drift)
            .map(|(k, b)| (k * b).norm() / (k.norm() * b.norm()))
            .fold(0.0, f64::max)
    }
}

fn lyapunov_rhs(m: &DMatrix<f64>, d: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    m * s + s * m.transpose() + d * 2.0
}

/// Periodic solution of the reduced covariance equation, its inverse and
/// the reconstructed full curvature.
pub fn solve_periodic_covariance(
    model: &ModelSpec,
    samples: &CycleSamples,
    frame: &FrenetFrameField,
    opts: &CurvatureOptions,
) -> Result<CycleCurvature> {
    require_pd_diffusion(model)?;
    let d = model.diffusion();
    let n_s = samples.len();
    let h = samples.step();
    let mut mats = Vec::with_capacity(n_s);
    let mut dts = Vec::with_capacity(n_s);
    for i in 0..n_s {
        let qt = frame.transverse(i);
        let a_t = qt.transpose() * &samples.jacobians[i] * &qt;
        let s_t = frame.s[i].view((1, 1), (qt.ncols(), qt.ncols())).into_owned();
        mats.push(a_t - s_t);
        let mut dt = qt.transpose() * d * &qt;
        symmetrize(&mut dt);
        dts.push(dt);
    }
    let mids: Vec<DMatrix<f64>> = (0..n_s).map(|i| periodic::midpoint_matrix(&mats, i)).collect();
    let dmids: Vec<DMatrix<f64>> = (0..n_s)
        .map(|i| {
            let mut m = periodic::midpoint_matrix(&dts, i);
            symmetrize(&mut m);
            m
        })
        .collect();

    let k = mats[0].nrows();
    let mut sigma = DMatrix::<f64>::identity(k, k);
    let mut record = vec![DMatrix::zeros(k, k); n_s];
    let mut periods = 0;
    let mut change = f64::INFINITY;
    while periods < opts.max_periods {
        periods += 1;
        let start = sigma.clone();
        for i in 0..n_s {
            record[i] = sigma.clone();
            if sigma.clone().cholesky().is_none() {
                return Err(Error::LostPositivity(i));
            }
            let j = (i + 1) % n_s;
            let k1 = lyapunov_rhs(&mats[i], &dts[i], &sigma);
            let s2 = &sigma + &k1 * (0.5 * h);
            let k2 = lyapunov_rhs(&mids[i], &dmids[i], &s2);
            let s3 = &sigma + &k2 * (0.5 * h);
            let k3 = lyapunov_rhs(&mids[i], &dmids[i], &s3);
            let s4 = &sigma + &k3 * h;
            let k4 = lyapunov_rhs(&mats[j], &dts[j], &s4);
            sigma += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            symmetrize(&mut sigma);
        }
        if !sigma.iter().all(|v| v.is_finite()) || sigma.norm() > 1e300 {
            return Err(Error::NoConvergence(periods));
        }
        change = (&sigma - &start).norm() / sigma.norm();
        if change < opts.periodicity_tol {
            break;
        }
    }
    if !(change < opts.periodicity_tol) {
        return Err(Error::NoConvergence(periods));
    }

    let mut k_reduced = Vec::with_capacity(n_s);
    let mut k_full = Vec::with_capacity(n_s);
    let mut v = Vec::with_capacity(n_s);
    for (i, s) in record.iter().enumerate() {
        let chol = s.clone().cholesky().ok_or(Error::LostPositivity(i))?;
        let mut kr = chol.inverse();
        symmetrize(&mut kr);
        let qt = frame.transverse(i);
        let mut kf = &qt * &kr * qt.transpose();
        symmetrize(&mut kf);
        v.push(s.determinant());
        k_reduced.push(kr);
        k_full.push(kf);
    }

    let dk = periodic::derivative_matrix(&k_reduced, h);
    let riccati_residuals = (0..n_s)
        .map(|i| {
            let kr = &k_reduced[i];
            let m = &mats[i];
            let t1 = kr * m;
            let t2 = m.transpose() * kr;
            let t3 = kr * &dts[i] * kr * 2.0;
            let rhs = -(&t1) - &t2 - &t3;
            let scale = t1.norm() + t2.norm() + t3.norm();
            (&dk[i] - rhs).norm() / scale
        })
        .collect();

    Ok(CycleCurvature {
        sigma_reduced: record,
        k_reduced,
        k_full,
        v,
        transverse_drift: mats,
        transverse_diffusion: dts,
        periods_used: periods,
        periodicity_error: change,
        riccati_residuals,
    })
}

/// `v = 1/∏ λ_k` over the nonzero eigenvalues of a curvature with exactly
/// one null direction.
pub fn transverse_variance_product(k: &DMatrix<f64>, zero_eig_tol: f64) -> Result<f64> {
    let (vals, _) = sym_eigen(k);
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zeros = vals.iter().filter(|v| v.abs() < zero_eig_tol * max).count();
    if zeros != 1 || max == 0.0 {
        return Err(Error::AmbiguousNullspace(if max == 0.0 { vals.len() } else { zeros }));
    }
    let prod: f64 = vals
        .iter()
        .filter(|v| v.abs() >= zero_eig_tol * max)
        .product();
    Ok(1.0 / prod)
}

// ---------------------------------------------------------------------------
// Prefactor and derived series
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PrefactorProfile {
    /// `log ω(t_i)` with gauge `log ω(0) = gauge`.
    pub log_omega: Vec<f64>,
    /// `d log ω/dt = −∇·b − tr(DK)` at the samples.
    pub rate: Vec<f64>,
    /// `log ω(T) − log ω(0)`.
    pub closure_error: f64,
}

impl PrefactorProfile {
    /// Same profile with `log ω` shifted by a constant.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            log_omega: self.log_omega.iter().map(|v| v + shift).collect(),
            ..self.clone()
        }
    }
}

/// Integrate `d log ω/dt = −∇·b(x*) − tr(D K)` around the cycle from
/// `log ω(0) = 0`.
pub fn propagate_log_prefactor(
    model: &ModelSpec,
    samples: &CycleSamples,
    curvature: &CycleCurvature,
) -> PrefactorProfile {
    let d = model.diffusion();
    let rate: Vec<f64> = samples
        .jacobians
        .iter()
        .zip(&curvature.k_full)
        .map(|(a, k)| -a.trace() - linalg::frobenius(d, k))
        .collect();
    let mut cum = periodic::cumulative_integral(&rate, samples.step());
    let closure_error = cum.pop().unwrap_or(0.0);
    PrefactorProfile {
        log_omega: cum,
        rate,
        closure_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservedQuantity {
    pub values: Vec<f64>,
    pub mean: f64,
    pub relative_std: f64,
    pub max_relative_deviation: f64,
}

fn spread(values: Vec<f64>) -> ConservedQuantity {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max_dev = values
        .iter()
        .map(|v| ((v - mean) / mean).abs())
        .fold(0.0, f64::max);
    ConservedQuantity {
        relative_std: var.sqrt() / mean.abs(),
        max_relative_deviation: max_dev,
        mean,
        values,
    }
}

/// `c(t) = √v(t)·ω(t)·‖b(x*(t))‖`, constant on the cycle.
pub fn conserved_quantity(
    samples: &CycleSamples,
    curvature: &CycleCurvature,
    prefactor: &PrefactorProfile,
) -> ConservedQuantity {
    let values = (0..samples.len())
        .map(|i| curvature.v[i].sqrt() * prefactor.log_omega[i].exp() * samples.speeds[i])
        .collect();
    spread(values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDensity {
    /// Density per unit arclength at the samples.
    pub g: Vec<f64>,
    /// Arclength position of each sample from the anchor.
    pub arclength: Vec<f64>,
    /// Total length of the cycle.
    pub length: f64,
    /// Cumulative probability from the anchor to each sample.
    pub cdf: Vec<f64>,
    /// `Σ g_i ds_i`.
    pub normalization: f64,
    /// Maximum relative deviation of `g·‖b‖` from its mean.
    pub flux_deviation: f64,
}

impl MarginalDensity {
    /// Cumulative probability at arclength `s ∈ [0, length]`.
    pub fn cdf_at(&self, s: f64) -> f64 {
        let n = self.arclength.len();
        let idx = self.arclength.partition_point(|&a| a <= s);
        let (s0, c0) = (self.arclength[idx - 1], self.cdf[idx - 1]);
        let (s1, c1) = if idx < n {
            (self.arclength[idx], self.cdf[idx])
        } else {
            (self.length, 1.0)
        };
        if s1 <= s0 {
            return c0;
        }
        c0 + (c1 - c0) * (s - s0) / (s1 - s0)
    }
}

/// Cycle marginal `g = ω√v / Σ ω√v ds` per unit arclength.
pub fn cycle_marginal_density(
    samples: &CycleSamples,
    curvature: &CycleCurvature,
    prefactor: &PrefactorProfile,
) -> MarginalDensity {
    let h = samples.step();
    let w: Vec<f64> = (0..samples.len())
        .map(|i| prefactor.log_omega[i].exp() * curvature.v[i].sqrt())
        .collect();
    let z: f64 = w.iter().zip(&samples.ds).map(|(a, b)| a * b).sum();
    let g: Vec<f64> = w.iter().map(|v| v / z).collect();
    let normalization = g.iter().zip(&samples.ds).map(|(a, b)| a * b).sum();
    let mut arclength = periodic::cumulative_integral(&samples.speeds, h);
    let length = arclength.pop().unwrap_or(0.0);
    let time_density: Vec<f64> = g.iter().zip(&samples.speeds).map(|(a, b)| a * b).collect();
    let mut cdf = periodic::cumulative_integral(&time_density, h);
    let total = cdf.pop().unwrap_or(1.0);
    for c in &mut cdf {
        *c /= total;
    }
    let flux = spread(time_density);
    MarginalDensity {
        g,
        arclength,
        length,
        cdf,
        normalization,
        flux_deviation: flux.max_relative_deviation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyBalanceReport {
    /// `∇·b + tr(DK)`.
    pub expr1: Vec<f64>,
    /// `−d log ω/dt`.
    pub expr2: Vec<f64>,
    /// `d log‖b‖/dt + ½ d log v/dt`.
    pub expr3: Vec<f64>,
    /// `d log‖b‖/dt`.
    pub dissipative: Vec<f64>,
    /// `½ d log v/dt`.
    pub fluctuation: Vec<f64>,
    pub max_abs: f64,
    /// Largest pointwise difference between any two expressions.
    pub max_pairwise_deviation: f64,
    pub period_averages: [f64; 3],
}

/// Entropy of a Gaussian with covariance `Σ`, `½ ln(2π det Σ)`.
pub fn gaussian_entropy(sigma: &DMatrix<f64>) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * sigma.determinant()).ln()
}

/// Three expressions of the local entropy rate on the cycle.
pub fn entropy_balance(
    model: &ModelSpec,
    samples: &CycleSamples,
    curvature: &CycleCurvature,
    prefactor: &PrefactorProfile,
) -> EntropyBalanceReport {
    let h = samples.step();
    let n_s = samples.len();
    let d = model.diffusion();
    let expr1: Vec<f64> = samples
        .jacobians
        .iter()
        .zip(&curvature.k_full)
        .map(|(a, k)| a.trace() + linalg::frobenius(d, k))
        .collect();
    // Remove the (tiny) non-periodic drift of log ω before differencing.
    let slope = prefactor.closure_error / samples.period;
    let detrended: Vec<f64> = prefactor
        .log_omega
        .iter()
        .zip(&samples.times)
        .map(|(l, t)| l - slope * t)
        .collect();
    let expr2: Vec<f64> = periodic::derivative(&detrended, h)
        .into_iter()
        .map(|v| -(v + slope))
        .collect();
    let log_speed: Vec<f64> = samples.speeds.iter().map(|v| v.ln()).collect();
    let log_v: Vec<f64> = curvature.v.iter().map(|v| v.ln()).collect();
    let dissipative = periodic::derivative(&log_speed, h);
    let fluctuation: Vec<f64> = periodic::derivative(&log_v, h)
        .into_iter()
        .map(|v| 0.5 * v)
        .collect();
    let expr3: Vec<f64> = dissipative.iter().zip(&fluctuation).map(|(a, b)| a + b).collect();
    let mut max_abs = 0.0f64;
    let mut max_dev = 0.0f64;
    for i in 0..n_s {
        let e = [expr1[i], expr2[i], expr3[i]];
        for (a, x) in e.iter().enumerate() {
            max_abs = max_abs.max(x.abs());
            for y in &e[a + 1..] {
                max_dev = max_dev.max((x - y).abs());
            }
        }
    }
    let period_averages = [
        periodic::mean(&expr1),
        periodic::mean(&expr2),
        periodic::mean(&expr3),
    ];
    EntropyBalanceReport {
        expr1,
        expr2,
        expr3,
        dissipative,
        fluctuation,
        max_abs,
        max_pairwise_deviation: max_dev,
        period_averages,
    }
}

// ---------------------------------------------------------------------------
// Projection onto the cycle and flux
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Phase as a time in `[0, T)`.
    pub phase: f64,
    pub point: DVector<f64>,
    pub distance: f64,
}

/// Nearest-point projection onto the sampled cycle.
#[derive(Debug, Clone)]
pub struct CycleProjector {
    period: f64,
    h: f64,
    states: Vec<DVector<f64>>,
    drift: Vec<DVector<f64>>,
    diameter: f64,
}

impl CycleProjector {
    pub fn new(samples: &CycleSamples) -> Self {
        let mut diameter = 0.0f64;
        for (i, a) in samples.states.iter().enumerate() {
            for b in &samples.states[i + 1..] {
                diameter = diameter.max((a - b).norm());
            }
        }
        Self {
            period: samples.period,
            h: samples.step(),
            states: samples.states.clone(),
            drift: samples.drift.clone(),
            diameter,
        }
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Cycle point at phase `t` by cubic Hermite interpolation of the
    /// samples and their velocities.
    pub fn point_at(&self, t: f64) -> DVector<f64> {
        let n = self.states.len();
        let p = (t / self.h).rem_euclid(n as f64);
        let j = (p.floor() as usize).min(n - 1);
        let s = p - j as f64;
        let k = (j + 1) % n;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.states[j] * h00
            + &self.drift[j] * (h10 * self.h)
            + &self.states[k] * h01
            + &self.drift[k] * (h11 * self.h)
    }

    /// Nearest sample, then golden-section refinement of the phase.
    pub fn project(&self, x: &DVector<f64>) -> Projection {
        let (best, _) = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s - x).norm_squared()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let dist2 = |t: f64| (self.point_at(t) - x).norm_squared();
        let mut lo = (best as f64 - 1.0) * self.h;
        let mut hi = (best as f64 + 1.0) * self.h;
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = hi - ratio * (hi - lo);
        let mut d = lo + ratio * (hi - lo);
        let (mut fc, mut fd) = (dist2(c), dist2(d));
        let tol = 1e-13 * self.period;
        for _ in 0..200 {
            if hi - lo < tol {
                break;
            }
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - ratio * (hi - lo);
                fc = dist2(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + ratio * (hi - lo);
                fd = dist2(d);
            }
        }
        let t = 0.5 * (lo + hi);
        let point = self.point_at(t);
        Projection {
            phase: t.rem_euclid(self.period),
            distance: (&point - x).norm(),
            point,
        }
    }
}

// ---------------------------------------------------------------------------
// Bundled analysis
// ---------------------------------------------------------------------------

/// Full chain of cycle quantities for one model and one sampled cycle.
#[derive(Debug, Clone)]
pub struct CycleAnalysis {
    pub model: ModelSpec,
    pub samples: CycleSamples,
    pub frame: FrenetFrameField,
    pub curvature: CycleCurvature,
    pub prefactor: PrefactorProfile,
    pub projector: CycleProjector,
    pub options: CurvatureOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxEstimate {
    pub gamma: DVector<f64>,
    pub projection: Projection,
    pub curvature: DMatrix<f64>,
}

impl CycleAnalysis {
    pub fn new(model: &ModelSpec, samples: CycleSamples, opts: &CurvatureOptions) -> Result<Self> {
        let frame = build_frame(&samples)?;
        let curvature = solve_periodic_covariance(model, &samples, &frame, opts)?;
        for k in &curvature.k_full {
            transverse_variance_product(k, opts.zero_eig_tol)?;
        }
        let prefactor = propagate_log_prefactor(model, &samples, &curvature);
        let projector = CycleProjector::new(&samples);
        Ok(Self {
            model: model.clone(),
            samples,
            frame,
            curvature,
            prefactor,
            projector,
            options: *opts,
        })
    }

    pub fn conserved_quantity(&self) -> ConservedQuantity {
        conserved_quantity(&self.samples, &self.curvature, &self.prefactor)
    }

    pub fn marginal(&self) -> MarginalDensity {
        cycle_marginal_density(&self.samples, &self.curvature, &self.prefactor)
    }

    pub fn entropy(&self) -> EntropyBalanceReport {
        entropy_balance(&self.model, &self.samples, &self.curvature, &self.prefactor)
    }

    /// Frame at a cycle point, from the exact drift there.
    pub fn frame_at_point(&self, point: &DVector<f64>) -> Result<DMatrix<f64>> {
        let b = self.model.drift(point.as_slice());
        let speed = b.norm();
        if !(speed > 0.0) {
            return Err(Error::ZeroVelocity(0));
        }
        Ok(self.frame.frame_at(&(b / speed)))
    }

    /// Cycle point at phase `t`, integrated from the preceding sample.
    pub fn point_at(&self, t: f64) -> Result<DVector<f64>> {
        let h = self.samples.step();
        let t = t.rem_euclid(self.samples.period);
        let j = ((t / h).floor() as usize).min(self.samples.len() - 1);
        let dt = t - self.samples.times[j];
        crate::flow::flow_map(
            &self.model,
            self.samples.states[j].as_slice(),
            dt,
            &crate::ode::StepControl::with_tolerances(1e-13, 1e-15),
        )
    }

    /// Transverse covariance `Σ̃` at an arbitrary phase.
    pub fn sigma_reduced_at(&self, phase: f64) -> DMatrix<f64> {
        let mut s =
            periodic::interpolate_matrix(&self.curvature.sigma_reduced, phase / self.samples.step());
        symmetrize(&mut s);
        s
    }

    /// Full curvature `K` at the cycle point of a projection.
    pub fn curvature_at(&self, proj: &Projection) -> Result<DMatrix<f64>> {
        let q = self.frame_at_point(&proj.point)?;
        let qt = transverse_block(&q);
        let sr = self.sigma_reduced_at(proj.phase);
        let kr = sr
            .cholesky()
            .ok_or(Error::LostPositivity(0))?
            .inverse();
        let mut k = &qt * kr * qt.transpose();
        symmetrize(&mut k);
        Ok(k)
    }

    /// Local linearization of the probability velocity near the cycle,
    /// `γ(x) ≈ b(x*) + (A(x*) + D K(x*))(x − x*)`.
    pub fn flux(&self, x: &DVector<f64>) -> Result<FluxEstimate> {
        let mut proj = self.projector.project(x);
        proj.point = self.point_at(proj.phase)?;
        proj.distance = (x - &proj.point).norm();
        let radius = 0.1 * self.projector.diameter();
        if proj.distance > radius {
            return Err(Error::TooFarFromCycle {
                distance: proj.distance,
                radius,
            });
        }
        let k = self.curvature_at(&proj)?;
        let xs = proj.point.as_slice();
        let a = self.model.jacobian(xs);
        let dk = self.model.diffusion() * &k;
        let gamma = self.model.drift(xs) + (a + dk) * (x - &proj.point);
        Ok(FluxEstimate {
            gamma,
            projection: proj,
            curvature: k,
        })
    }

    /// `cycle_report` table: `t, x*, eigenvalues of K, v, logomega, g, c,
    /// expr1..expr3, dissipative, fluctuation`.
    pub fn report_csv(&self) -> CsvTable {
        let n = self.samples.dim();
        let marginal = self.marginal();
        let c = self.conserved_quantity();
        let e = self.entropy();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("x", n));
        header.extend(indexed("lambda", n));
        for h in [
            "v", "logomega", "g", "c", "expr1", "expr2", "expr3", "dissipative", "fluctuation",
        ] {
            header.push(h.to_string());
        }
        let mut table = CsvTable::new(header);
        for i in 0..self.samples.len() {
            let mut row = vec![self.samples.times[i]];
            row.extend(self.samples.states[i].iter());
            row.extend(sym_eigen(&self.curvature.k_full[i]).0);
            row.extend([
                self.curvature.v[i],
                self.prefactor.log_omega[i],
                marginal.g[i],
                c.values[i],
                e.expr1[i],
                e.expr2[i],
                e.expr3[i],
                e.dissipative[i],
                e.fluctuation[i],
            ]);
            table.push(row);
        }
        table
    }
}

/// Run the full analysis for a model whose cycle passes near `x_guess`.
pub fn analyze_cycle(
    model: &ModelSpec,
    x_guess: &[f64],
    n_samples: usize,
    cycle_opts: &crate::flow::CycleOptions,
    opts: &CurvatureOptions,
) -> Result<CycleAnalysis> {
    let cycle = crate::flow::find_limit_cycle(model, x_guess, cycle_opts)?;
    let samples = crate::flow::sample_cycle(&cycle, model, n_samples, cycle_opts.cycle_tol)?;
    CycleAnalysis::new(model, samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::CycleOptions;
    use crate::model::{builtin_model, params};
    use std::f64::consts::PI;

    fn hopf(n: usize) -> CycleAnalysis {
        let m = builtin_model("hopf", &params(&[("omega", 1.0)])).unwrap();
        analyze_cycle(&m, &[0.5, 0.0], n, &CycleOptions::default(), &CurvatureOptions::default())
            .unwrap()
    }

    #[test]
    fn hopf_frame_and_rotation_rate() {
        let an = hopf(256);
        // Find the sample closest to (1,0).
        let i = an
            .samples
            .states
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1 - DVector::from_vec(vec![1.0, 0.0])).norm();
                let db = (b.1 - DVector::from_vec(vec![1.0, 0.0])).norm();
                da.total_cmp(&db)
            })
            .unwrap()
            .0;
        let q = an.frame_at_point(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((q[(0, 0)]).abs() < 1e-15 && (q[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((q[(0, 1)] + 1.0).abs() < 1e-15 && q[(1, 1)].abs() < 1e-15);
        let s = &an.frame.s[i];
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(linalg::max_abs(&(s - expect)) < 1e-7);
        assert!(an.frame.orthonormality_defect() < 1e-10);
        assert!(an.frame.q.iter().all(|q| q.determinant() > 0.0));
    }

    #[test]
    fn hopf_curvature_and_derived_quantities() {
        let an = hopf(256);
        for (kr, kf) in an.curvature.k_reduced.iter().zip(&an.curvature.k_full) {
            assert!((kr[(0, 0)] - 2.0).abs() < 1e-8);
            let (vals, _) = sym_eigen(kf);
            assert!(vals[0].abs() < 1e-8 && (vals[1] - 2.0).abs() < 1e-8);
            let v = transverse_variance_product(kf, 1e-6).unwrap();
            assert!((v - 0.5).abs() < 1e-8);
        }
        assert!(an.prefactor.rate.iter().all(|r| r.abs() < 1e-8));
        assert!(an.prefactor.closure_error.abs() < 1e-8);
        let c = an.conserved_quantity();
        assert!(c.max_relative_deviation < 1e-6);
        assert!((c.mean - 0.5f64.sqrt()).abs() < 1e-6);
        let g = an.marginal();
        assert!(g.g.iter().all(|v| (v - 1.0 / (2.0 * PI)).abs() < 1e-8));
        assert!((g.normalization - 1.0).abs() < 1e-12);
        let e = an.entropy();
        assert!(e.max_abs < 1e-6);
    }

    #[test]
    fn ambiguous_nullspace_guard() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1e-9, 2.0]));
        assert_eq!(
            transverse_variance_product(&k, 1e-6).unwrap_err(),
            Error::AmbiguousNullspace(2)
        );
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 4.0]));
        assert!((transverse_variance_product(&k, 1e-6).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hopf_flux_is_tangent_to_level_sets() {
        let an = hopf(256);
        let on = an.flux(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((on.gamma - DVector::from_vec(vec![0.0, 1.0])).norm() < 1e-9);
        let off = an.flux(&DVector::from_vec(vec![1.01, 0.0])).unwrap();
        assert!(off.gamma[0].abs() < 1e-9);
        assert!((off.gamma[1] - 1.01).abs() < 1e-9);
        assert!(matches!(
            an.flux(&DVector::from_vec(vec![1.5, 0.0])),
            Err(Error::TooFarFromCycle { .. })
        ));
    }

    #[test]
    fn divergence_free_rotation_has_flat_prefactor() {
        let m = builtin_model(
            "linear",
            &params(&[("a11", 0.0), ("a12", -1.0), ("a21", 1.0), ("a22", 0.0)]),
        )
        .unwrap();
        let n = 128;
        let period = 2.0 * PI;
        let states: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let t = period * i as f64 / n as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
        let drift: Vec<DVector<f64>> = states.iter().map(|x| m.drift(x.as_slice())).collect();
        let samples = CycleSamples {
            period,
            times: (0..n).map(|i| period * i as f64 / n as f64).collect(),
            jacobians: states.iter().map(|x| m.jacobian(x.as_slice())).collect(),
            speeds: drift.iter().map(|b| b.norm()).collect(),
            ds: vec![period / n as f64; n],
            states,
            drift,
            closure_error: 0.0,
        };
        let zero_k = CycleCurvature {
            sigma_reduced: vec![],
            k_reduced: vec![],
            k_full: vec![DMatrix::zeros(2, 2); n],
            v: vec![1.0; n],
            transverse_drift: vec![],
            transverse_diffusion: vec![],
            periods_used: 0,
            periodicity_error: 0.0,
            riccati_residuals: vec![],
        };
        let p = propagate_log_prefactor(&m, &samples, &zero_k);
        assert!(p.rate.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn gauge_shift_leaves_normalized_quantities() {
        let m = builtin_model("vdp", &params(&[("mu", 1.0)])).unwrap();
        let an = analyze_cycle(&m, &[2.0, 0.0], 256, &CycleOptions::default(), &Default::default())
            .unwrap();
        let shifted = an.prefactor.shifted(2f64.ln());
        let c0 = conserved_quantity(&an.samples, &an.curvature, &an.prefactor);
        let c1 = conserved_quantity(&an.samples, &an.curvature, &shifted);
        assert!((c1.mean / c0.mean - 2.0).abs() < 1e-12);
        assert!((c1.relative_std - c0.relative_std).abs() < 1e-12);
        let g0 = cycle_marginal_density(&an.samples, &an.curvature, &an.prefactor);
        let g1 = cycle_marginal_density(&an.samples, &an.curvature, &shifted);
        for (a, b) in g0.g.iter().zip(&g1.g) {
            assert!((a - b).abs() < 1e-12 * a.abs());
        }
        let e0 = entropy_balance(&m, &an.samples, &an.curvature, &an.prefactor);
        let e1 = entropy_balance(&m, &an.samples, &an.curvature, &shifted);
        for (a, b) in e0.expr2.iter().zip(&e1.expr2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_recovers_phase() {
        let an = hopf(256);
        let x = DVector::from_vec(vec![1.02 * 0.3f64.cos(), 1.02 * 0.3f64.sin()]);
        let p = an.projector.project(&x);
        assert!((p.distance - 0.02).abs() < 1e-9);
        // On the unit circle with ω = 1 the phase equals the polar angle
        // relative to the anchor.
        let a = &an.samples.states[0];
        let anchor_angle = a[1].atan2(a[0]);
        let expect = (0.3 - anchor_angle).rem_euclid(2.0 * PI);
        let diff = (p.phase - expect).abs();
        assert!(diff.min(2.0 * PI - diff) < 1e-8);
    }
}
