//! Laplace-method asymptotics for integrals of the form
//!
//! ```text
//! ∫ f(x) g(x) exp(-h(x)/ε) dx,   ε → 0,
//! ```
//!
//! expanded to first order in ε about the nondegenerate global minimum `x*`
//! of `h`. Gaussian moment tensors are built in closed form from Wick
//! pairings, and a tensor-product Gauss–Legendre quadrature provides an
//! independent oracle for the expansions.
//!
//! With `Ξ = [∇∇h(x*)]⁻¹`, the first-order correction of the integral is
//!
//! ```text
//! η = ½ f_ij Ξ_ij − (1/6) f_i h_jkl M4_ijkl − (1/24) f h_ijkl M4_ijkl
//!     + (1/72) f h_ijk h_lmn M6_ijklmn
//! ```
//!
//! where `M4 = (Ξ^{1/2})^{⊗4}·Θ` and `M6 = (Ξ^{1/2})^{⊗6}·Λ` are the fourth and
//! sixth moments of `N(0, Ξ)`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, sym_eigen};

/// Gradient norm above which a supplied `x*` is rejected as not critical.
pub const CRITICAL_POINT_TOL: f64 = 1e-8;

/// Dense tensor of arbitrary rank over `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

/// Calls `f` on every multi-index of the given rank in row-major order.
fn for_each_index(dim: usize, rank: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; rank];
    if dim == 0 {
        return;
    }
    loop {
        f(&idx);
        let mut k = rank;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < dim {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl Tensor {
    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            data: vec![0.0; dim.pow(rank as u32)],
        }
    }

    pub fn from_fn(dim: usize, rank: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim.pow(rank as u32));
        for_each_index(dim, rank, |idx| data.push(f(idx)));
        Self { dim, rank, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Largest deviation between an entry and the entry at its sorted index.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for_each_index(self.dim, self.rank, |idx| {
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            worst = worst.max((self.get(idx) - self.get(&sorted)).abs());
        });
        worst
    }

    /// Applies `m` along every mode:
    /// `T'_{i1..ir} = Σ m_{i1 μ1} ⋯ m_{ir μr} T_{μ1..μr}`.
    pub fn transform(&self, m: &DMatrix<f64>) -> Tensor {
        let n = self.dim;
        let mut cur = self.clone();
        for mode in 0..self.rank {
            let stride = n.pow((self.rank - 1 - mode) as u32);
            let mut out = Tensor::zeros(n, self.rank);
            for (o, slot) in out.data.iter_mut().enumerate() {
                let i = (o / stride) % n;
                let base = o - i * stride;
                *slot = (0..n).map(|mu| m[(i, mu)] * cur.data[base + mu * stride]).sum();
            }
            cur = out;
        }
        cur
    }

    /// Full contraction `Σ T_{i..} U_{i..}` of two tensors of equal shape.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!((self.dim, self.rank), (other.dim, other.rank));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Sum over all perfect pairings of `idx` of the product of `cov` over pairs.
/// For `cov = δ` this is the Gaussian moment `E[y_{i1}⋯y_{ir}]`, `y ~ N(0, I)`.
pub fn wick_sum(idx: &[usize], cov: &impl Fn(usize, usize) -> f64) -> f64 {
    match idx.len() {
        0 => 1.0,
        l if l % 2 == 1 => 0.0,
        _ => {
            let first = idx[0];
            let rest = &idx[1..];
            let mut total = 0.0;
            for j in 0..rest.len() {
                let c = cov(first, rest[j]);
                if c == 0.0 {
                    continue;
                }
                let remaining: Vec<usize> = rest
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, &v)| v)
                    .collect();
                total += c * wick_sum(&remaining, cov);
            }
            total
        }
    }
}

fn kronecker(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Θ_{μνρκ} = E[y_μ y_ν y_ρ y_κ] for `y ~ N(0, I_n)`.
pub fn gaussian_moment_4(dim: usize) -> Result<Tensor> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(Tensor::from_fn(dim, 4, |idx| wick_sum(idx, &kronecker)))
}

/// Λ_{μμ'νν'ρρ'} = E[y_μ y_μ' y_ν y_ν' y_ρ y_ρ'] for `y ~ N(0, I_n)`.
pub fn gaussian_moment_6(dim: usize) -> Result<Tensor> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(Tensor::from_fn(dim, 6, |idx| wick_sum(idx, &kronecker)))
}

/// Standard moment tensors together with the covariance `Ξ = [∇∇h(x*)]⁻¹`.
#[derive(Debug, Clone)]
pub struct MomentTensors {
    pub theta: Tensor,
    pub lambda: Tensor,
    pub xi: DMatrix<f64>,
    pub xi_sqrt: DMatrix<f64>,
    pub xi_inv_sqrt: DMatrix<f64>,
}

impl MomentTensors {
    pub fn from_hessian(hessian: &DMatrix<f64>) -> Result<Self> {
        let n = hessian.nrows();
        if n == 0 || hessian.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Hessian is {}×{}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        let scale = hessian.amax().max(f64::MIN_POSITIVE);
        if max_asymmetry(hessian) > 1e-10 * scale {
            return Err(Error::NonPdHessian);
        }
        let (vals, vecs) = sym_eigen(hessian);
        if !vals.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return Err(Error::NonPdHessian);
        }
        let spectral = |p: f64| {
            let d = DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                vals.iter().map(|l| l.powf(p)),
            ));
            &vecs * d * vecs.transpose()
        };
        Ok(Self {
            theta: gaussian_moment_4(n)?,
            lambda: gaussian_moment_6(n)?,
            xi: spectral(-1.0),
            xi_sqrt: spectral(-0.5),
            xi_inv_sqrt: spectral(0.5),
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.nrows()
    }

    /// Fourth moments of `N(0, Ξ)`.
    pub fn m4(&self) -> Tensor {
        self.theta.transform(&self.xi_sqrt)
    }

    /// Sixth moments of `N(0, Ξ)`.
    pub fn m6(&self) -> Tensor {
        self.lambda.transform(&self.xi_sqrt)
    }
}

/// Value and derivatives up to fourth order of a scalar function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub third: Tensor,
    pub fourth: Tensor,
}

impl Jet {
    pub fn zeros(dim: usize) -> Self {
        Self {
            value: 0.0,
            gradient: DVector::zeros(dim),
            hessian: DMatrix::zeros(dim, dim),
            third: Tensor::zeros(dim, 3),
            fourth: Tensor::zeros(dim, 4),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    /// Largest index-permutation asymmetry over the Hessian and higher tensors.
    pub fn max_asymmetry(&self) -> f64 {
        max_asymmetry(&self.hessian)
            .max(self.third.max_asymmetry())
            .max(self.fourth.max_asymmetry())
    }
}

/// A scalar function on `R^dim` that can be evaluated pointwise.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
}

/// A smooth scalar function with derivatives through fourth order.
pub trait SmoothFunction: ScalarField {
    fn jet(&self, x: &[f64]) -> Jet;
}

/// The constant function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant {
    pub dim: usize,
    pub value: f64,
}

impl ScalarField for Constant {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }
}

impl SmoothFunction for Constant {
    fn jet(&self, _x: &[f64]) -> Jet {
        let mut j = Jet::zeros(self.dim);
        j.value = self.value;
        j
    }
}

/// One-dimensional profile of a ridge term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Exp,
    Cos,
    Sin,
    Power(u32),
}

impl Profile {
    /// `m`-th derivative of the profile at `u`.
    pub fn derivative(&self, m: u32, u: f64) -> f64 {
        match *self {
            Profile::Exp => u.exp(),
            Profile::Cos => match m % 4 {
                0 => u.cos(),
                1 => -u.sin(),
                2 => -u.cos(),
                _ => u.sin(),
            },
            Profile::Sin => match m % 4 {
                0 => u.sin(),
                1 => u.cos(),
                2 => -u.sin(),
                _ => -u.cos(),
            },
            Profile::Power(k) => {
                if m > k {
                    0.0
                } else {
                    let falling: f64 = ((k - m + 1)..=k).map(f64::from).product();
                    falling * u.powi((k - m) as i32)
                }
            }
        }
    }
}

/// Term `weight · φ(directionᵀx + shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub weight: f64,
    pub direction: Vec<f64>,
    pub shift: f64,
    pub profile: Profile,
}

/// `c + lᵀx + ½ xᵀQx + Σ_r w_r φ_r(a_rᵀx + s_r)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFunction {
    pub constant: f64,
    pub linear: DVector<f64>,
    pub quadratic: DMatrix<f64>,
    pub ridges: Vec<Ridge>,
}

impl RidgeFunction {
    /// The zero function on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            constant: 0.0,
            linear: DVector::zeros(dim),
            quadratic: DMatrix::zeros(dim, dim),
            ridges: Vec::new(),
        }
    }

    /// `½ xᵀQx` with `Q` symmetrized.
    pub fn quadratic_form(q: DMatrix<f64>) -> Self {
        let mut f = Self::zero(q.nrows());
        f.quadratic = (&q + q.transpose()) * 0.5;
        f
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn with_linear(mut self, l: DVector<f64>) -> Self {
        self.linear = l;
        self
    }

    pub fn with_ridge(mut self, weight: f64, direction: &[f64], shift: f64, profile: Profile) -> Self {
        self.ridges.push(Ridge {
            weight,
            direction: direction.to_vec(),
            shift,
            profile,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        if self.quadratic.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "quadratic part is {:?}, expected ({n}, {n})",
                self.quadratic.shape()
            )));
        }
        for r in &self.ridges {
            if r.direction.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "ridge direction has length {}, expected {n}",
                    r.direction.len()
                )));
            }
        }
        Ok(())
    }

    fn argument(r: &Ridge, x: &[f64]) -> f64 {
        r.direction.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>() + r.shift
    }
}

impl ScalarField for RidgeFunction {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut v = self.constant;
        for i in 0..n {
            v += self.linear[i] * x[i];
            let qx: f64 = (0..n).map(|j| self.quadratic[(i, j)] * x[j]).sum();
            v += 0.5 * x[i] * qx;
        }
        for r in &self.ridges {
            v += r.weight * r.profile.derivative(0, Self::argument(r, x));
        }
        v
    }
}

impl SmoothFunction for RidgeFunction {
    fn jet(&self, x: &[f64]) -> Jet {
        let n = self.dim();
        let xv = DVector::from_column_slice(x);
        let mut j = Jet::zeros(n);
        j.value = self.value(x);
        j.gradient = &self.linear + &self.quadratic * &xv;
        j.hessian = self.quadratic.clone();
        for r in &self.ridges {
            let u = Self::argument(r, x);
            let a = &r.direction;
            let d: [f64; 4] = std::array::from_fn(|m| r.weight * r.profile.derivative(m as u32 + 1, u));
            for i in 0..n {
                j.gradient[i] += d[0] * a[i];
                for k in 0..n {
                    j.hessian[(i, k)] += d[1] * a[i] * a[k];
                }
            }
            for (o, slot) in j.third.data.iter_mut().enumerate() {
                let (i, k, l) = (o / (n * n), (o / n) % n, o % n);
                *slot += d[2] * a[i] * a[k] * a[l];
            }
            for (o, slot) in j.fourth.data.iter_mut().enumerate() {
                let (i, k, l, m) = (o / (n * n * n), (o / (n * n)) % n, (o / n) % n, o % n);
                *slot += d[3] * a[i] * a[k] * a[l] * a[m];
            }
        }
        j
    }
}

/// Function given by user closures for the value and for the full jet.
pub struct ClosureFunction<V, J> {
    dim: usize,
    value: V,
    jet: J,
}

impl<V, J> ClosureFunction<V, J>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    J: Fn(&[f64]) -> Jet + Send + Sync,
{
    pub fn new(dim: usize, value: V, jet: J) -> Self {
        Self { dim, value, jet }
    }
}

impl<V, J> ScalarField for ClosureFunction<V, J>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    J: Fn(&[f64]) -> Jet + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
}

impl<V, J> SmoothFunction for ClosureFunction<V, J>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    J: Fn(&[f64]) -> Jet + Send + Sync,
{
    fn jet(&self, x: &[f64]) -> Jet {
        (self.jet)(x)
    }
}

/// Derivatives by nested central differences of a value closure.
///
/// Each derivative of order `m` uses `2^m` evaluations at step
/// `1e-3 · scale`; truncation error is `O(step²)` but roundoff grows like
/// `ε_mach / step^m`, so fourth derivatives carry roughly four fewer
/// significant digits than the function values.
pub struct FiniteDifferenceFunction<V> {
    dim: usize,
    value: V,
    step: f64,
}

impl<V> FiniteDifferenceFunction<V>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, value: V, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("FD scale must be positive, got {scale}")));
        }
        Ok(Self {
            dim,
            value,
            step: 1e-3 * scale,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn nested(&self, x: &[f64], idx: &[usize]) -> f64 {
        let m = idx.len();
        let mut total = 0.0;
        let mut p = x.to_vec();
        for signs in 0..(1u32 << m) {
            p.copy_from_slice(x);
            let mut sign = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                if signs & (1 << k) != 0 {
                    p[i] -= self.step;
                    sign = -sign;
                } else {
                    p[i] += self.step;
                }
            }
            total += sign * (self.value)(&p);
        }
        total / (2.0 * self.step).powi(m as i32)
    }

    fn symmetric_tensor(&self, x: &[f64], rank: usize) -> Tensor {
        let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
        Tensor::from_fn(self.dim, rank, |idx| {
            let mut key = idx.to_vec();
            key.sort_unstable();
            *cache.entry(key).or_insert_with_key(|k| self.nested(x, k))
        })
    }
}

impl<V> ScalarField for FiniteDifferenceFunction<V>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
}

impl<V> SmoothFunction for FiniteDifferenceFunction<V>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn jet(&self, x: &[f64]) -> Jet {
        let n = self.dim;
        let g = self.symmetric_tensor(x, 1);
        let h = self.symmetric_tensor(x, 2);
        Jet {
            value: (self.value)(x),
            gradient: DVector::from_column_slice(g.data()),
            hessian: DMatrix::from_row_slice(n, n, h.data()),
            third: self.symmetric_tensor(x, 3),
            fourth: self.symmetric_tensor(x, 4),
        }
    }
}

/// How the `h‴ h‴` term of the integral correction is contracted with Λ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SixthMomentConvention {
    /// `(1/72) f h_ijk h_lmn M6_ijklmn` with `M6 = (Ξ^{1/2})^{⊗6}·Λ`, the
    /// sixth moment of `N(0, Ξ)`.
    #[default]
    Consistent,
    /// `(1/72) f Σ_ijk h_ijk² (Ξ^{-1/2})^{⊗6}·Λ` evaluated at the paired
    /// index `(i,i,j,j,k,k)`. Agrees with `Consistent` only in one dimension
    /// with `h″(x*) = 1`; kept for comparison.
    AsDisplayed,
}

/// Expansion data at a nondegenerate minimum of `h`.
#[derive(Debug, Clone)]
pub struct LaplacePoint {
    pub x_star: DVector<f64>,
    pub h: Jet,
    pub moments: MomentTensors,
    pub m4: Tensor,
    pub m6: Tensor,
    pub det_hessian: f64,
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{what} has dimension {got}, expected {want}"
        )));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")));
    }
    Ok(())
}

impl LaplacePoint {
    pub fn new(h: &dyn SmoothFunction, x_star: &DVector<f64>) -> Result<Self> {
        check_dim("x*", x_star.len(), h.dim())?;
        let jet = h.jet(x_star.as_slice());
        let gnorm = jet.gradient.norm();
        if !(gnorm <= CRITICAL_POINT_TOL) {
            return Err(Error::NotCriticalPoint(gnorm));
        }
        let moments = MomentTensors::from_hessian(&jet.hessian)?;
        let det_hessian = jet.hessian.determinant();
        if !(det_hessian > 0.0) {
            return Err(Error::NonPdHessian);
        }
        Ok(Self {
            x_star: x_star.clone(),
            m4: moments.m4(),
            m6: moments.m6(),
            h: jet,
            moments,
            det_hessian,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.moments.xi
    }

    fn f_jet(&self, f: &dyn SmoothFunction) -> Result<Jet> {
        check_dim("f", f.dim(), self.dim())?;
        Ok(f.jet(self.x_star.as_slice()))
    }

    /// `½ f_ij Ξ_ij`.
    fn curvature_term(&self, fj: &Jet) -> f64 {
        0.5 * fj.hessian.component_mul(self.xi()).sum()
    }

    /// `Σ f_i h_jkl M4_ijkl`.
    fn skew_term(&self, fj: &Jet) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for i in 0..n {
            if fj.gradient[i] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for_each_index(n, 3, |jkl| {
                inner += self.h.third.get(jkl) * self.m4.get(&[i, jkl[0], jkl[1], jkl[2]]);
            });
            total += fj.gradient[i] * inner;
        }
        total
    }

    /// `Σ h_ijk h_lmn M6_ijklmn` or its displayed counterpart.
    fn cubic_pair_term(&self, convention: SixthMomentConvention) -> f64 {
        let n = self.dim();
        let t = &self.h.third;
        match convention {
            SixthMomentConvention::Consistent => {
                let mut total = 0.0;
                for_each_index(n, 3, |ijk| {
                    let a = t.get(ijk);
                    if a == 0.0 {
                        return;
                    }
                    for_each_index(n, 3, |lmn| {
                        total += a
                            * t.get(lmn)
                            * self.m6.get(&[ijk[0], ijk[1], ijk[2], lmn[0], lmn[1], lmn[2]]);
                    });
                });
                total
            }
            SixthMomentConvention::AsDisplayed => {
                let inv = self.moments.lambda.transform(&self.moments.xi_inv_sqrt);
                let mut total = 0.0;
                for_each_index(n, 3, |ijk| {
                    let (i, j, k) = (ijk[0], ijk[1], ijk[2]);
                    total += t.get(ijk).powi(2) * inv.get(&[i, i, j, j, k, k]);
                });
                total
            }
        }
    }

    /// First-order correction `η` of the integral.
    pub fn eta(&self, f: &dyn SmoothFunction, convention: SixthMomentConvention) -> Result<f64> {
        let fj = self.f_jet(f)?;
        let quartic = self.h.fourth.dot(&self.m4);
        Ok(self.curvature_term(&fj) - self.skew_term(&fj) / 6.0 - fj.value * quartic / 24.0
            + fj.value * self.cubic_pair_term(convention) / 72.0)
    }

    /// `(2πε)^{n/2} det(∇∇h)^{-1/2} e^{-h(x*)/ε} [f(x*) + ε η]`.
    pub fn integral(
        &self,
        f: &dyn SmoothFunction,
        eps: f64,
        convention: SixthMomentConvention,
    ) -> Result<f64> {
        check_epsilon(eps)?;
        let eta = self.eta(f, convention)?;
        let fv = f.value(self.x_star.as_slice());
        Ok(self.gaussian_mass(eps) * (fv + eps * eta))
    }

    /// `(2πε)^{n/2} det(∇∇h)^{-1/2} e^{-h(x*)/ε}`.
    pub fn gaussian_mass(&self, eps: f64) -> f64 {
        let n = self.dim() as f64;
        (2.0 * PI * eps).powf(0.5 * n) / self.det_hessian.sqrt() * (-self.h.value / eps).exp()
    }

    /// `f + ε [½ f_ij Ξ_ij − (1/6) f_i h_jkl M4_ijkl]`.
    pub fn ratio(&self, f: &dyn SmoothFunction, eps: f64) -> Result<f64> {
        check_epsilon(eps)?;
        let fj = self.f_jet(f)?;
        Ok(fj.value + eps * (self.curvature_term(&fj) - self.skew_term(&fj) / 6.0))
    }

    /// Ratio with weight `g`: adds `ε f_i Ξ_ij (log g)_j`.
    pub fn weighted_ratio(
        &self,
        f: &dyn SmoothFunction,
        g: &dyn SmoothFunction,
        eps: f64,
    ) -> Result<f64> {
        check_epsilon(eps)?;
        check_dim("g", g.dim(), self.dim())?;
        let gj = g.jet(self.x_star.as_slice());
        if !(gj.value > 0.0) {
            return Err(Error::NonPositiveWeight(gj.value));
        }
        let fj = self.f_jet(f)?;
        let dlog_g = &gj.gradient / gj.value;
        let tilt = fj.gradient.dot(&(self.xi() * dlog_g));
        Ok(self.ratio(f, eps)? + eps * tilt)
    }

    /// Weighted variance `ε f′(x*)² / h″(x*)` in one dimension.
    pub fn variance(
        &self,
        f: &dyn SmoothFunction,
        g: &dyn SmoothFunction,
        eps: f64,
    ) -> Result<f64> {
        check_epsilon(eps)?;
        if self.dim() != 1 {
            return Err(Error::NotOneDimensional(self.dim()));
        }
        check_dim("g", g.dim(), 1)?;
        let gv = g.value(self.x_star.as_slice());
        if !(gv > 0.0) {
            return Err(Error::NonPositiveWeight(gv));
        }
        let fj = self.f_jet(f)?;
        Ok(eps * fj.gradient[0].powi(2) / self.h.hessian[(0, 0)])
    }
}

/// Laplace approximation of `∫ f e^{-h/ε}` with the consistent Λ contraction.
pub fn laplace_integral(
    f: &dyn SmoothFunction,
    h: &dyn SmoothFunction,
    x_star: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    LaplacePoint::new(h, x_star)?.integral(f, eps, SixthMomentConvention::Consistent)
}

/// Laplace approximation of `∫ f e^{-h/ε} / ∫ e^{-h/ε}`.
pub fn laplace_ratio(
    f: &dyn SmoothFunction,
    h: &dyn SmoothFunction,
    x_star: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    LaplacePoint::new(h, x_star)?.ratio(f, eps)
}

/// Laplace approximation of `∫ f g e^{-h/ε} / ∫ g e^{-h/ε}`.
pub fn laplace_weighted_ratio(
    f: &dyn SmoothFunction,
    g: &dyn SmoothFunction,
    h: &dyn SmoothFunction,
    x_star: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    LaplacePoint::new(h, x_star)?.weighted_ratio(f, g, eps)
}

/// Leading-order variance of `f` under the density `∝ g e^{-h/ε}` (1D).
pub fn laplace_variance(
    f: &dyn SmoothFunction,
    g: &dyn SmoothFunction,
    h: &dyn SmoothFunction,
    x_star: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    if h.dim() != 1 {
        return Err(Error::NotOneDimensional(h.dim()));
    }
    LaplacePoint::new(h, x_star)?.variance(f, g, eps)
}

/// Newton iteration options for [`refine_minimum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub gradient_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Polishes an approximate local minimum of `h` by damped Newton steps.
pub fn refine_minimum(
    h: &dyn SmoothFunction,
    x0: &DVector<f64>,
    opts: NewtonOptions,
) -> Result<DVector<f64>> {
    check_dim("x0", x0.len(), h.dim())?;
    let mut x = x0.clone();
    for _ in 0..opts.max_iter {
        let j = h.jet(x.as_slice());
        let gnorm = j.gradient.norm();
        if gnorm <= opts.gradient_tol {
            MomentTensors::from_hessian(&j.hessian)?;
            return Ok(x);
        }
        let chol = j.hessian.clone().cholesky().ok_or(Error::NonPdHessian)?;
        let dx = chol.solve(&(-&j.gradient));
        let mut t = 1.0;
        loop {
            let trial = &x + &dx * t;
            let tj = h.jet(trial.as_slice());
            if tj.gradient.norm() < gnorm || tj.value < j.value || t < 1e-8 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
    }
    let gnorm = h.jet(x.as_slice()).gradient.norm();
    if gnorm <= CRITICAL_POINT_TOL {
        Ok(x)
    } else {
        Err(Error::NewtonDivergence(format!(
            "gradient norm {gnorm:e} after {} iterations",
            opts.max_iter
        )))
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if order == 0 { 1.0 } else { p1 };
            dp = n * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre order used inside every quadrature panel.
pub const QUADRATURE_ORDER: usize = 16;

/// Relative size of `e^{-h/ε}` on the box boundary above which the box is
/// rejected.
pub const BOUNDARY_TOL: f64 = 1e-16;

/// Result of [`quadrature_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    /// Integral at twice the requested resolution.
    pub value: f64,
    /// Difference between the requested and doubled resolutions.
    pub error: f64,
    /// Largest boundary value of `e^{-(h - h_min)/ε}`.
    pub boundary_mass: f64,
}

struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn composite_grid(lo: f64, hi: f64, panels: usize) -> Grid {
    let (gx, gw) = gauss_legendre(QUADRATURE_ORDER);
    let width = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * QUADRATURE_ORDER);
    let mut weights = Vec::with_capacity(panels * QUADRATURE_ORDER);
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(mid + 0.5 * width * x);
            weights.push(0.5 * width * w);
        }
    }
    Grid { nodes, weights }
}

/// Tensor-product sum of `f g e^{-(h - h_ref)/ε}`; also returns the minimum
/// of `h` over the nodes.
fn tensor_sum(
    f: &dyn ScalarField,
    g: &dyn ScalarField,
    h: &dyn ScalarField,
    eps: f64,
    grids: &[Grid],
    h_ref: f64,
) -> (f64, f64) {
    let n = grids.len();
    let inner: usize = grids[1..].iter().map(|g| g.nodes.len()).product();
    let partial: Vec<(f64, f64)> = (0..grids[0].nodes.len())
        .into_par_iter()
        .map(|i0| {
            let mut x = vec![0.0; n];
            x[0] = grids[0].nodes[i0];
            let mut sum = 0.0;
            let mut hmin = f64::INFINITY;
            let mut idx = vec![0usize; n];
            for _ in 0..inner {
                let mut w = grids[0].weights[i0];
                for d in 1..n {
                    x[d] = grids[d].nodes[idx[d]];
                    w *= grids[d].weights[idx[d]];
                }
                let hv = h.value(&x);
                hmin = hmin.min(hv);
                sum += w * f.value(&x) * g.value(&x) * (-(hv - h_ref) / eps).exp();
                for d in (1..n).rev() {
                    idx[d] += 1;
                    if idx[d] < grids[d].nodes.len() {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            (sum, hmin)
        })
        .collect();
    partial
        .into_iter()
        .fold((0.0, f64::INFINITY), |(s, m), (ps, pm)| (s + ps, m.min(pm)))
}

/// Minimum of `h` over a uniform lattice with `points` nodes per axis.
fn lattice_min(h: &dyn ScalarField, bounds: &[(f64, f64)], points: usize) -> f64 {
    let n = bounds.len();
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; n];
    for_each_index(points, n, |idx| {
        for d in 0..n {
            let (lo, hi) = bounds[d];
            x[d] = lo + (hi - lo) * idx[d] as f64 / (points - 1) as f64;
        }
        best = best.min(h.value(&x));
    });
    best
}

/// Largest `e^{-(h - h_min)/ε}` over lattice points on the faces of the box.
fn boundary_mass(
    h: &dyn ScalarField,
    bounds: &[(f64, f64)],
    points: usize,
    h_min: f64,
    eps: f64,
) -> f64 {
    let n = bounds.len();
    let mut worst: f64 = 0.0;
    let mut x = vec![0.0; n];
    for face_dim in 0..n {
        for side in [bounds[face_dim].0, bounds[face_dim].1] {
            for_each_index(points, n - 1, |idx| {
                let mut k = 0;
                for d in 0..n {
                    if d == face_dim {
                        x[d] = side;
                    } else {
                        let (lo, hi) = bounds[d];
                        x[d] = lo + (hi - lo) * idx[k] as f64 / (points - 1) as f64;
                        k += 1;
                    }
                }
                worst = worst.max((-(h.value(&x) - h_min) / eps).exp());
            });
        }
    }
    worst
}

/// Composite tensor-product Gauss–Legendre quadrature of
/// `∫_box f g e^{-h/ε} dx` with `resolution` panels per axis, reported at
/// `2·resolution` panels with the difference as error estimate.
pub fn quadrature_oracle(
    f: &dyn ScalarField,
    g: &dyn ScalarField,
    h: &dyn ScalarField,
    eps: f64,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<QuadratureResult> {
    check_epsilon(eps)?;
    let n = h.dim();
    check_dim("box", bounds.len(), n)?;
    check_dim("f", f.dim(), n)?;
    check_dim("g", g.dim(), n)?;
    if n == 0 || resolution == 0 {
        return Err(Error::InvalidArgument("empty quadrature grid".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid box {bounds:?}")));
    }
    let lattice = 4 * resolution + 1;
    let h_ref = lattice_min(h, bounds, lattice);
    let coarse: Vec<Grid> = bounds
        .iter()
        .map(|&(lo, hi)| composite_grid(lo, hi, resolution))
        .collect();
    let fine: Vec<Grid> = bounds
        .iter()
        .map(|&(lo, hi)| composite_grid(lo, hi, 2 * resolution))
        .collect();
    let (c, _) = tensor_sum(f, g, h, eps, &coarse, h_ref);
    let (v, fine_min) = tensor_sum(f, g, h, eps, &fine, h_ref);
    let h_min = fine_min.min(h_ref);
    let edge = boundary_mass(h, bounds, lattice, h_min, eps);
    if edge > BOUNDARY_TOL {
        return Err(Error::BoxTooSmall(edge));
    }
    let scale = (-h_ref / eps).exp();
    Ok(QuadratureResult {
        value: v * scale,
        error: (v - c).abs() * scale,
        boundary_mass: edge,
    })
}

/// Least-squares slope of `log err` against `log ε`.
pub fn log_log_slope(eps: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = eps.iter().zip(err).map(|(e, r)| (e.ln(), r.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Pointwise product of two scalar fields.
pub struct Product<'a>(pub &'a dyn ScalarField, pub &'a dyn ScalarField);

impl ScalarField for Product<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x) * self.1.value(x)
    }
}

/// A test triple `(f, g, h)` with `x* = 0` the unique global minimum of `h`.
#[derive(Debug, Clone)]
pub struct TestFamily {
    pub f: RidgeFunction,
    pub g: RidgeFunction,
    pub h: RidgeFunction,
    pub bounds: Vec<(f64, f64)>,
}

impl TestFamily {
    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// Random smooth family on `R^dim`.
///
/// `h = ½ xᵀQx + (b/6) u³ + (c/24) u⁴ + w (1 − cos pᵀx)` with `u = aᵀx`.
/// Along `u` the polynomial part is bounded below by
/// `u² (κ/2 + b u/6 + c u²/24)` with `κ = λ_min(Q)/|a|²`, which is positive
/// for `u ≠ 0` when `b² < 3κc`; drawing `b² ≤ κc` keeps `x = 0` the unique
/// global minimum with margin. `g = g₀ + w_g e^{qᵀx}` is positive and `f`
/// mixes quadratic and trigonometric ridge terms.
pub fn random_family(dim: usize, seed: u64) -> Result<TestFamily> {
    use rand::{Rng, SeedableRng};
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut unif = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut draws = |count: usize, lo: f64, hi: f64| -> Vec<f64> { (0..count).map(|_| unif(lo, hi)).collect() };

    let basis = draws(dim * dim, -1.0, 1.0);
    let orth = DMatrix::from_column_slice(dim, dim, &basis).qr().q();
    let eig = draws(dim, 0.8, 2.0);
    let mut q = DMatrix::zeros(dim, dim);
    for (i, e) in eig.iter().enumerate() {
        let col = orth.column(i);
        q += col * col.transpose() * *e;
    }
    let lambda_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = draws(dim, -1.0, 1.0);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(0.5);
    let a: Vec<f64> = raw.iter().map(|v| 0.9 * v / norm).collect();
    let kappa = lambda_min / a.iter().map(|v| v * v).sum::<f64>();
    let s = draws(3, 0.0, 1.0);
    let c = 0.3 + 0.7 * s[0];
    let b = (2.0 * s[1] - 1.0) * (kappa * c).sqrt();
    let w = 0.3 * s[2];
    let p = draws(dim, -0.8, 0.8);
    let h = RidgeFunction::quadratic_form(q)
        .with_constant(w)
        .with_ridge(b / 6.0, &a, 0.0, Profile::Power(3))
        .with_ridge(c / 24.0, &a, 0.0, Profile::Power(4))
        .with_ridge(-w, &p, 0.0, Profile::Cos);

    let fq = draws(dim, -1.0, 1.0);
    let fquad = DMatrix::from_fn(dim, dim, |i, j| 0.5 * fq[i] * fq[j] + if i == j { 0.2 } else { 0.0 });
    let fl = draws(dim, -1.0, 1.0);
    let fa = draws(dim, -1.0, 1.0);
    let fb = draws(dim, -0.7, 0.7);
    let fs = draws(4, 0.0, 1.0);
    let f = RidgeFunction::quadratic_form(fquad)
        .with_constant(2.0 * fs[0] - 1.0)
        .with_linear(DVector::from_vec(fl))
        .with_ridge(0.2 + 0.8 * fs[1], &fa, 2.0 * fs[2] - 1.0, Profile::Sin)
        .with_ridge(fs[3] - 0.5, &fb, 0.0, Profile::Exp);

    let gq = draws(dim, -0.5, 0.5);
    let gs = draws(2, 0.2, 1.0);
    let g = RidgeFunction::zero(dim)
        .with_constant(gs[0])
        .with_ridge(gs[1], &gq, 0.0, Profile::Exp);

    Ok(TestFamily {
        f,
        g,
        h,
        bounds: vec![(-4.0, 4.0); dim],
    })
}

/// Expansion and oracle values at one ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonErrorRow {
    pub epsilon: f64,
    /// `|integral − oracle|` divided by the Gaussian mass at `x*`.
    pub integral_error: f64,
    pub ratio_error: f64,
    pub weighted_ratio_error: f64,
    /// Only computed in one dimension.
    pub variance_error: Option<f64>,
    /// Largest quadrature error estimate relative to the integral it
    /// belongs to.
    pub oracle_error: f64,
}

/// Log-log slopes of the expansion errors over an ε sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport {
    pub rows: Vec<EpsilonErrorRow>,
    pub integral_slope: f64,
    pub ratio_slope: f64,
    pub weighted_ratio_slope: f64,
    pub variance_slope: Option<f64>,
}

impl SlopeReport {
    /// Smallest slope across all expansions.
    pub fn min_slope(&self) -> f64 {
        [self.integral_slope, self.ratio_slope, self.weighted_ratio_slope]
            .into_iter()
            .chain(self.variance_slope)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The ε sweep `0.1·2^{-k}`, `k = 0..count`.
pub fn epsilon_sweep(count: usize) -> Vec<f64> {
    (0..count).map(|k| 0.1 * 0.5f64.powi(k as i32)).collect()
}

/// Compares every expansion with the quadrature oracle over `eps`.
pub fn slope_study(
    family: &TestFamily,
    eps: &[f64],
    resolution: usize,
    convention: SixthMomentConvention,
) -> Result<SlopeReport> {
    if eps.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two ε values".into()));
    }
    let n = family.dim();
    let x0 = DVector::zeros(n);
    let point = LaplacePoint::new(&family.h, &x0)?;
    let one = Constant { dim: n, value: 1.0 };
    let (f, g, h) = (&family.f, &family.g, &family.h);
    let fg = Product(f, g);
    let mut rows = Vec::with_capacity(eps.len());
    for &e in eps {
        let quad = |a: &dyn ScalarField, b: &dyn ScalarField| {
            quadrature_oracle(a, b, h, e, &family.bounds, resolution)
        };
        let z = quad(&one, &one)?;
        let zf = quad(f, &one)?;
        let zg = quad(g, &one)?;
        let zfg = quad(f, g)?;
        let mut oracle_error = [z, zf, zg, zfg]
            .iter()
            .map(|r| r.error / r.value.abs())
            .fold(0.0, f64::max);
        let mass = point.gaussian_mass(e);
        let integral_error = (point.integral(f, e, convention)? - zf.value).abs() / mass;
        let ratio_error = (point.ratio(f, e)? - zf.value / z.value).abs();
        let weighted_ratio_error = (point.weighted_ratio(f, g, e)? - zfg.value / zg.value).abs();
        let variance_error = if n == 1 {
            let zffg = quad(&fg, f)?;
            oracle_error = oracle_error.max(zffg.error / zffg.value.abs());
            let mean = zfg.value / zg.value;
            let var = zffg.value / zg.value - mean * mean;
            Some((point.variance(f, g, e)? - var).abs())
        } else {
            None
        };
        rows.push(EpsilonErrorRow {
            epsilon: e,
            integral_error,
            ratio_error,
            weighted_ratio_error,
            variance_error,
            oracle_error,
        });
    }
    let slope = |sel: fn(&EpsilonErrorRow) -> f64| {
        log_log_slope(eps, &rows.iter().map(sel).collect::<Vec<_>>())
    };
    Ok(SlopeReport {
        integral_slope: slope(|r| r.integral_error),
        ratio_slope: slope(|r| r.ratio_error),
        weighted_ratio_slope: slope(|r| r.weighted_ratio_error),
        variance_slope: (n == 1).then(|| slope(|r| r.variance_error.unwrap_or(f64::NAN))),
        rows,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one() -> Constant {
        Constant { dim: 1, value: 1.0 }
    }

    fn half_square() -> RidgeFunction {
        RidgeFunction::quadratic_form(DMatrix::from_element(1, 1, 1.0))
    }

    fn x_pow(k: u32) -> RidgeFunction {
        RidgeFunction::zero(1).with_ridge(1.0, &[1.0], 0.0, Profile::Power(k))
    }

    fn origin(n: usize) -> DVector<f64> {
        DVector::zeros(n)
    }

    #[test]
    fn wick_tensors_small_cases() {
        assert_eq!(gaussian_moment_4(1).unwrap().data(), &[3.0]);
        assert_eq!(gaussian_moment_6(1).unwrap().data(), &[15.0]);
        let t = gaussian_moment_4(2).unwrap();
        assert_eq!(t.get(&[0, 0, 1, 1]), 1.0);
        assert_eq!(t.get(&[0, 1, 0, 1]), 1.0);
        assert_eq!(t.get(&[0, 0, 0, 0]), 3.0);
        assert_eq!(t.get(&[0, 0, 0, 1]), 0.0);
        let l = gaussian_moment_6(2).unwrap();
        assert_eq!(l.get(&[0, 0, 0, 0, 1, 1]), 3.0);
        assert_eq!(l.get(&[0, 1, 0, 1, 0, 0]), 3.0);
        assert_eq!(l.get(&[0, 0, 0, 0, 0, 1]), 0.0);
        assert_eq!(l.get(&[0, 0, 1, 1, 1, 1]), 3.0);
        assert!(gaussian_moment_4(0).is_err());
    }

    #[test]
    fn wick_tensors_match_delta_formula_and_are_symmetric() {
        for n in 1..=3 {
            let t = gaussian_moment_4(n).unwrap();
            for_each_index(n, 4, |i| {
                let d = |a, b| kronecker(i[a], i[b]);
                let closed = d(0, 1) * d(2, 3) + d(0, 2) * d(1, 3) + d(0, 3) * d(1, 2);
                assert_eq!(t.get(i), closed);
            });
            assert_eq!(t.max_asymmetry(), 0.0);
            assert_eq!(gaussian_moment_6(n).unwrap().max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn wick_tensors_match_quadrature() {
        let (gx, gw) = gauss_legendre(QUADRATURE_ORDER);
        let grid: Vec<(f64, f64)> = (0..64)
            .flat_map(|p| {
                let mid = -8.0 + (p as f64 + 0.5) * 0.25;
                gx.iter()
                    .zip(&gw)
                    .map(move |(x, w)| (mid + 0.125 * x, 0.125 * w))
                    .collect::<Vec<_>>()
            })
            .collect();
        let density = |y: f64| (-0.5 * y * y).exp() / (2.0 * PI).sqrt();
        let moment = |p: i32| grid.iter().map(|(y, w)| w * y.powi(p) * density(*y)).sum::<f64>();
        let t1 = gaussian_moment_4(1).unwrap();
        assert!((moment(4) - t1.data()[0]).abs() < 1e-6);
        let t2 = gaussian_moment_4(2).unwrap();
        for_each_index(2, 4, |idx| {
            let p0 = idx.iter().filter(|&&i| i == 0).count() as i32;
            let q = moment(p0) * moment(4 - p0);
            assert!((q - t2.get(idx)).abs() < 1e-6, "{idx:?}");
        });
        let l2 = gaussian_moment_6(2).unwrap();
        for_each_index(2, 6, |idx| {
            let p0 = idx.iter().filter(|&&i| i == 0).count() as i32;
            let q = moment(p0) * moment(6 - p0);
            assert!((q - l2.get(idx)).abs() < 1e-6, "{idx:?}");
        });
    }

    #[test]
    fn transformed_moments_are_wick_sums_in_xi() {
        let hess = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = MomentTensors::from_hessian(&hess).unwrap();
        let xi = m.xi.clone();
        let cov = |i: usize, j: usize| xi[(i, j)];
        let m4 = m.m4();
        for_each_index(2, 4, |idx| assert!((m4.get(idx) - wick_sum(idx, &cov)).abs() < 1e-12));
        let m6 = m.m6();
        for_each_index(2, 6, |idx| assert!((m6.get(idx) - wick_sum(idx, &cov)).abs() < 1e-12));
        assert!((&m.xi_sqrt * &m.xi_sqrt - &xi).amax() < 1e-14);
        assert!((&m.xi_inv_sqrt * &m.xi_sqrt).is_identity(1e-13));
    }

    #[test]
    fn non_pd_hessian_is_rejected() {
        let h = RidgeFunction::quadratic_form(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(
            LaplacePoint::new(&h, &origin(2)).unwrap_err(),
            Error::NonPdHessian
        );
        let shifted = half_square().with_linear(DVector::from_element(1, 1e-3));
        assert!(matches!(
            LaplacePoint::new(&shifted, &origin(1)),
            Err(Error::NotCriticalPoint(_))
        ));
    }

    #[test]
    fn gaussian_integral_examples() {
        let v = laplace_integral(&one(), &half_square(), &origin(1), 0.1).unwrap();
        assert!((v - 0.7926655).abs() < 1e-7);
        assert!((v - (0.2 * PI).sqrt()).abs() < 1e-15);
        let eps = 0.1;
        let lp = LaplacePoint::new(&half_square(), &origin(1)).unwrap();
        let eta = lp.eta(&x_pow(2), SixthMomentConvention::Consistent).unwrap();
        assert!((eta - 1.0).abs() < 1e-15);
        let v2 = lp.integral(&x_pow(2), eps, SixthMomentConvention::Consistent).unwrap();
        assert!((v2 - eps * (2.0 * PI * eps).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ratio_examples() {
        let h = half_square();
        let r = laplace_ratio(&x_pow(2), &h, &origin(1), 0.05).unwrap();
        assert!((r - 0.05).abs() < 1e-15);
        let cos = RidgeFunction::zero(1).with_ridge(1.0, &[1.0], 0.0, Profile::Cos);
        for eps in [0.1, 0.05] {
            let r = laplace_ratio(&cos, &h, &origin(1), eps).unwrap();
            assert!((r - (1.0 - eps / 2.0)).abs() < 1e-15);
            assert!((r - (-eps / 2.0f64).exp()).abs() < eps * eps);
        }
        let cubic = half_square().with_ridge(1.0 / 6.0, &[1.0], 0.0, Profile::Power(3));
        let r = laplace_ratio(&x_pow(1), &cubic, &origin(1), 0.01).unwrap();
        assert!((r + 0.005).abs() < 1e-15);
    }

    #[test]
    fn skewed_ratio_matches_quadrature_on_truncated_box() {
        let h = half_square().with_ridge(1.0 / 6.0, &[1.0], 0.0, Profile::Power(3));
        let bounds = [(-2.0, 3.0)];
        let mut errs = Vec::new();
        let eps_list = [0.015, 0.0075, 0.00375];
        for &eps in &eps_list {
            let num = quadrature_oracle(&x_pow(1), &one(), &h, eps, &bounds, 40).unwrap();
            let den = quadrature_oracle(&one(), &one(), &h, eps, &bounds, 40).unwrap();
            let exact = num.value / den.value;
            let approx = laplace_ratio(&x_pow(1), &h, &origin(1), eps).unwrap();
            assert!((exact + eps / 2.0).abs() < 5.0 * eps * eps, "{eps}: {exact}");
            errs.push((approx - exact).abs());
        }
        assert!(log_log_slope(&eps_list, &errs) >= 1.9);
        assert!(matches!(
            quadrature_oracle(&one(), &one(), &h, 0.1, &bounds, 10),
            Err(Error::BoxTooSmall(_))
        ));
    }

    #[test]
    fn weighted_ratio_and_variance_examples() {
        let h = half_square();
        let ex = RidgeFunction::zero(1).with_ridge(1.0, &[1.0], 0.0, Profile::Exp);
        let eps = 0.02;
        let r = laplace_weighted_ratio(&x_pow(1), &ex, &h, &origin(1), eps).unwrap();
        assert!((r - eps).abs() < 1e-15);
        let r2 = laplace_weighted_ratio(&x_pow(2), &ex, &h, &origin(1), eps).unwrap();
        assert!((r2 - eps).abs() < 1e-15);
        let cos = RidgeFunction::zero(1).with_ridge(1.0, &[1.0], 0.3, Profile::Cos);
        assert_eq!(
            laplace_weighted_ratio(&cos, &one(), &h, &origin(1), eps).unwrap(),
            laplace_ratio(&cos, &h, &origin(1), eps).unwrap()
        );
        let neg = Constant { dim: 1, value: -1.0 };
        assert!(matches!(
            laplace_weighted_ratio(&cos, &neg, &h, &origin(1), eps),
            Err(Error::NonPositiveWeight(_))
        ));
        assert_eq!(laplace_variance(&x_pow(1), &one(), &h, &origin(1), eps).unwrap(), eps);
        let c = Constant { dim: 1, value: 4.0 };
        assert_eq!(laplace_variance(&c, &one(), &h, &origin(1), eps).unwrap(), 0.0);
        let sin = RidgeFunction::zero(1).with_ridge(1.0, &[1.0], 0.0, Profile::Sin);
        assert!((laplace_variance(&sin, &ex, &h, &origin(1), eps).unwrap() - eps).abs() < 1e-15);
        let h2 = RidgeFunction::quadratic_form(DMatrix::identity(2, 2));
        let f2 = Constant { dim: 2, value: 1.0 };
        assert_eq!(
            laplace_variance(&f2, &f2, &h2, &origin(2), eps).unwrap_err(),
            Error::NotOneDimensional(2)
        );
    }

    #[test]
    fn one_dimensional_eta_matches_classical_formula() {
        let h = RidgeFunction::quadratic_form(DMatrix::from_element(1, 1, 2.5))
            .with_ridge(0.4, &[1.0], 0.0, Profile::Power(3))
            .with_ridge(-0.3, &[1.0], 0.0, Profile::Cos)
            .with_constant(0.3);
        let f = RidgeFunction::zero(1)
            .with_constant(1.2)
            .with_ridge(0.7, &[1.0], 0.2, Profile::Sin)
            .with_ridge(0.5, &[2.0], 0.0, Profile::Exp);
        let lp = LaplacePoint::new(&h, &origin(1)).unwrap();
        let fj = f.jet(&[0.0]);
        let (f0, f1, f2) = (fj.value, fj.gradient[0], fj.hessian[(0, 0)]);
        let h2 = lp.h.hessian[(0, 0)];
        let h3 = lp.h.third.data()[0];
        let h4 = lp.h.fourth.data()[0];
        let classical = f2 / (2.0 * h2) - f1 * h3 / (2.0 * h2 * h2) - f0 * h4 / (8.0 * h2 * h2)
            + 5.0 * f0 * h3 * h3 / (24.0 * h2.powi(3));
        let eta = lp.eta(&f, SixthMomentConvention::Consistent).unwrap();
        assert!((eta - classical).abs() < 1e-12 * classical.abs().max(1.0));
        let displayed = lp.eta(&f, SixthMomentConvention::AsDisplayed).unwrap();
        assert!((displayed - eta).abs() > 1e-3);
    }

    #[test]
    fn conventions_agree_for_unit_curvature_in_one_dimension() {
        let h = half_square().with_ridge(0.3, &[1.0], 0.0, Profile::Power(3));
        let lp = LaplacePoint::new(&h, &origin(1)).unwrap();
        let f = Constant { dim: 1, value: 1.0 };
        let a = lp.eta(&f, SixthMomentConvention::Consistent).unwrap();
        let b = lp.eta(&f, SixthMomentConvention::AsDisplayed).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn exact_for_quadratic_data() {
        let q = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let h = RidgeFunction::quadratic_form(q).with_constant(0.2);
        let f = RidgeFunction::quadratic_form(DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.1]))
            .with_linear(DVector::from_vec(vec![0.3, -0.5]))
            .with_constant(0.9);
        let g = Constant { dim: 2, value: 1.0 };
        let bounds = [(-5.0, 5.0), (-5.0, 5.0)];
        for eps in [0.1, 0.05] {
            let num = quadrature_oracle(&f, &g, &h, eps, &bounds, 24).unwrap();
            let den = quadrature_oracle(&g, &g, &h, eps, &bounds, 24).unwrap();
            let lp = LaplacePoint::new(&h, &origin(2)).unwrap();
            let i = lp.integral(&f, eps, SixthMomentConvention::Consistent).unwrap();
            assert!((i - num.value).abs() < 1e-12 * num.value.abs(), "{i} {}", num.value);
            let r = lp.ratio(&f, eps).unwrap();
            assert!((r - num.value / den.value).abs() < 1e-12);
            assert!((lp.weighted_ratio(&f, &g, eps).unwrap() - r).abs() < 1e-15);
        }
    }

    #[test]
    fn quadrature_oracle_gaussians() {
        let r = quadrature_oracle(&one(), &one(), &half_square(), 0.1, &[(-5.0, 5.0)], 8).unwrap();
        assert!((r.value - 0.7926655).abs() < 1e-7);
        assert!((r.value - (0.2 * PI).sqrt()).abs() < 1e-10);
        assert!(r.error < 1e-10);
        let h2 = RidgeFunction::quadratic_form(DMatrix::identity(2, 2));
        let c2 = Constant { dim: 2, value: 1.0 };
        let eps = 0.05;
        let r2 = quadrature_oracle(&c2, &c2, &h2, eps, &[(-3.0, 3.0), (-3.0, 3.0)], 8).unwrap();
        assert!((r2.value - 2.0 * PI * eps).abs() < 1e-8);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for p in 0..14 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "p={p}");
        }
    }

    #[test]
    fn newton_refines_shifted_minimum() {
        let h = RidgeFunction::quadratic_form(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]))
            .with_linear(DVector::from_vec(vec![0.4, -0.2]))
            .with_ridge(0.1, &[1.0, 1.0], 0.0, Profile::Power(4));
        let x = refine_minimum(&h, &origin(2), NewtonOptions::default()).unwrap();
        assert!(h.jet(x.as_slice()).gradient.norm() < 1e-12);
        assert!(LaplacePoint::new(&h, &x).is_ok());
    }

    #[test]
    fn finite_difference_bundle_tracks_analytic_jet() {
        let h = RidgeFunction::quadratic_form(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]))
            .with_ridge(0.5, &[1.0, -0.5], 0.1, Profile::Cos)
            .with_ridge(0.2, &[0.3, 0.7], 0.0, Profile::Exp);
        let hh = h.clone();
        let fd = FiniteDifferenceFunction::new(2, move |x: &[f64]| hh.value(x), 1.0).unwrap();
        let x = [0.2, -0.4];
        let a = h.jet(&x);
        let b = fd.jet(&x);
        assert!((&a.gradient - &b.gradient).amax() < 1e-6);
        assert!((&a.hessian - &b.hessian).amax() < 1e-6);
        let d3 = a.third.data().iter().zip(b.third.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let d4 = a.fourth.data().iter().zip(b.fourth.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(d3 < 1e-5, "{d3}");
        assert!(d4 < 1e-3, "{d4}");
        assert_eq!(b.max_asymmetry(), 0.0);
    }

    proptest! {
        #[test]
        fn ridge_jets_are_symmetric(
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            x in proptest::collection::vec(-1.0f64..1.0, 3),
            s in -1.0f64..1.0,
        ) {
            let f = RidgeFunction::zero(3)
                .with_ridge(0.7, &a, s, Profile::Sin)
                .with_ridge(-0.4, &a.iter().rev().copied().collect::<Vec<_>>(), 0.0, Profile::Power(4));
            let j = f.jet(&x);
            prop_assert!(j.max_asymmetry() < 1e-14);
        }

        #[test]
        fn transform_composes(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let ma = DMatrix::from_row_slice(2, 2, &a);
            let mb = DMatrix::from_row_slice(2, 2, &b);
            let t = gaussian_moment_4(2).unwrap();
            let lhs = t.transform(&mb).transform(&ma);
            let rhs = t.transform(&(&ma * &mb));
            for (p, q) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
