//! SDE models `dX = b(X) dt + sqrt(2εD) dB`: drift, its derivatives, and the
//! constant diffusion matrix, plus a zoo of standard oscillators.
//!
//! A [`ModelSpec`] is immutable after construction and cheap to clone; every
//! evaluation function is pure, so a model can be shared freely between
//! threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// Axis-aligned box `[lo_k, hi_k]` in which a model's derivatives are
/// validated.
pub type DomainBox = Vec<(f64, f64)>;

#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    drift: DriftFn,
    jacobian: Option<JacobianFn>,
    hessian: Option<HessianFn>,
    diffusion: DMatrix<f64>,
    params: BTreeMap<String, f64>,
    domain: Option<DomainBox>,
    affine: bool,
    equations: String,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("diffusion", &self.diffusion)
            .field("jacobian", &self.jacobian_source())
            .field("hessian", &self.hessian_source())
            .finish()
    }
}

impl ModelSpec {
    /// A model with the given drift, identity diffusion and finite-difference
    /// derivatives. Use the `with_*` methods to refine it.
    pub fn new<F>(name: impl Into<String>, dim: usize, drift: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0, "model dimension must be positive");
        Self {
            name: name.into(),
            dim,
            drift: Arc::new(drift),
            jacobian: None,
            hessian: None,
            diffusion: DMatrix::identity(dim, dim),
            params: BTreeMap::new(),
            domain: None,
            affine: false,
            equations: String::new(),
        }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hess));
        self
    }

    /// Replace the diffusion matrix. Only the shape is checked here; symmetry
    /// and definiteness are reported by [`check_diffusion`] and enforced by
    /// the operations that need them.
    pub fn with_diffusion(mut self, d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != self.dim || d.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "diffusion is {}×{}, model dimension is {}",
                d.nrows(),
                d.ncols(),
                self.dim
            )));
        }
        self.diffusion = d;
        Ok(self)
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        self.domain = Some(domain);
        self
    }

    /// Declare the drift affine, so its Hessian vanishes identically.
    pub fn with_affine(mut self, affine: bool) -> Self {
        self.affine = affine;
        self
    }

    pub fn with_equations(mut self, text: impl Into<String>) -> Self {
        self.equations = text.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn domain(&self) -> Option<&DomainBox> {
        self.domain.as_ref()
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn equations(&self) -> &str {
        &self.equations
    }

    pub fn jacobian_source(&self) -> DerivativeSource {
        if self.jacobian.is_some() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    pub fn hessian_source(&self) -> DerivativeSource {
        if self.hessian.is_some() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    /// Drift evaluated in place.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        (self.drift)(x, out.as_mut_slice());
        out
    }

    /// Jacobian `A_ij = ∂b_i/∂x_j`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => {
                let h = 1e-6f64.max(1e-6 * norm(x));
                central_jacobian(&*self.drift, self.dim, x, h)
            }
        }
    }

    /// Hessians `H_i = ∇∇b_i`, one symmetric matrix per drift component.
    pub fn hessian(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        if let Some(h) = &self.hessian {
            return h(x);
        }
        if self.affine {
            return vec![DMatrix::zeros(self.dim, self.dim); self.dim];
        }
        // Differencing a finite-difference Jacobian needs a larger step to
        // keep the roundoff noise below the truncation error.
        let h = if self.jacobian.is_some() {
            1e-6f64.max(1e-6 * norm(x))
        } else {
            1e-4f64.max(1e-4 * norm(x))
        };
        let mut out = central_hessian(|y| self.jacobian(y), self.dim, x, h);
        for m in &mut out {
            linalg::symmetrize(m);
        }
        out
    }

    /// `∇·b = tr A`.
    pub fn divergence(&self, x: &[f64]) -> f64 {
        self.jacobian(x).trace()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn central_jacobian(
    f: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    dim: usize,
    x: &[f64],
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(dim, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for j in 0..n {
        xp[j] = x[j] + h;
        f(&xp, &mut fp);
        xp[j] = x[j] - h;
        f(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..dim {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

/// Central-difference Hessians from a Jacobian function.
pub fn central_hessian<J>(jac: J, dim: usize, x: &[f64], h: f64) -> Vec<DMatrix<f64>>
where
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = x.len();
    let mut out = vec![DMatrix::zeros(n, n); dim];
    let mut xp = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + h;
        let ap = jac(&xp);
        xp[k] = x[k] - h;
        let am = jac(&xp);
        xp[k] = x[k];
        for (i, hi) in out.iter_mut().enumerate() {
            for j in 0..n {
                hi[(j, k)] = (ap[(i, j)] - am[(i, j)]) / (2.0 * h);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Polynomial drift
// ---------------------------------------------------------------------------

/// One monomial `coeff · Π_k x_k^{powers_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    /// Mixed partial derivative with respect to the multiset `wrt`.
    fn partial(&self, x: &[f64], wrt: &[usize]) -> f64 {
        let mut v = self.coeff;
        for (k, &p) in self.powers.iter().enumerate() {
            let d = wrt.iter().filter(|&&w| w == k).count() as u32;
            if d > p {
                return 0.0;
            }
            for r in 0..d {
                v *= (p - r) as f64;
            }
            let e = p - d;
            if e > 0 {
                v *= x[k].powi(e as i32);
            }
        }
        v
    }

    fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }
}

/// Drift whose components are sums of monomials, with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDrift {
    pub dim: usize,
    /// `components[i]` lists the monomials of `b_i`.
    pub components: Vec<Vec<Monomial>>,
}

impl PolynomialDrift {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.components.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "polynomial drift declares dimension {} but has {} components",
                self.dim,
                self.components.len()
            )));
        }
        for comp in &self.components {
            for m in comp {
                if m.powers.len() != self.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "monomial has {} exponents, expected {}",
                        m.powers.len(),
                        self.dim
                    )));
                }
                if !m.coeff.is_finite() {
                    return Err(Error::InvalidArgument("non-finite coefficient".into()));
                }
            }
        }
        Ok(())
    }

    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .flatten()
            .map(Monomial::degree)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = comp.iter().map(|m| m.partial(x, &[])).sum();
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.components[i].iter().map(|m| m.partial(x, &[j])).sum()
        })
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.dim)
            .map(|i| {
                DMatrix::from_fn(self.dim, self.dim, |j, k| {
                    self.components[i].iter().map(|m| m.partial(x, &[j, k])).sum()
                })
            })
            .collect()
    }

    pub fn equations(&self) -> String {
        let mut lines = Vec::new();
        for (i, comp) in self.components.iter().enumerate() {
            let terms: Vec<String> = comp
                .iter()
                .map(|m| {
                    let mut s = format!("{}", m.coeff);
                    for (k, &p) in m.powers.iter().enumerate() {
                        match p {
                            0 => {}
                            1 => s.push_str(&format!("·x{}", k + 1)),
                            _ => s.push_str(&format!("·x{}^{}", k + 1, p)),
                        }
                    }
                    s
                })
                .collect();
            let rhs = if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" + ")
            };
            lines.push(format!("dx{}/dt = {}", i + 1, rhs));
        }
        lines.join("; ")
    }

    pub fn into_model(self, name: impl Into<String>) -> Result<ModelSpec> {
        self.validate()?;
        let p = Arc::new(self);
        let (pd, pj, ph) = (p.clone(), p.clone(), p.clone());
        Ok(ModelSpec::new(name, p.dim, move |x, out| pd.eval(x, out))
            .with_jacobian(move |x| pj.jacobian(x))
            .with_hessian(move |x| ph.hessian(x))
            .with_affine(p.degree() <= 1)
            .with_equations(p.equations()))
    }
}

// ---------------------------------------------------------------------------
// Zoo
// ---------------------------------------------------------------------------

/// Registry entry for a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub dim: Option<usize>,
    pub params: Vec<String>,
    pub equations: String,
    pub domain: Option<DomainBox>,
    pub notes: String,
}

pub const BUILTIN_MODELS: [&str; 5] = ["hopf", "vdp", "brusselator", "linear", "cubic1d"];

/// Description of a built-in model without instantiating it.
pub fn describe_model(name: &str) -> Result<ModelDescriptor> {
    let d = |dim: Option<usize>, params: &[&str], eq: &str, domain: Option<DomainBox>, notes: &str| {
        ModelDescriptor {
            name: name.to_string(),
            dim,
            params: params.iter().map(|s| s.to_string()).collect(),
            equations: eq.to_string(),
            domain,
            notes: notes.to_string(),
        }
    };
    Ok(match name {
        "hopf" => d(
            Some(2),
            &["omega"],
            "dx/dt = x(1 - x^2 - y^2) - omega·y; dy/dt = y(1 - x^2 - y^2) + omega·x",
            Some(vec![(-2.0, 2.0), (-2.0, 2.0)]),
            "Hopf normal form dr/dt = r(1 - r^2), dθ/dt = omega; limit cycle r = 1, period 2π/omega",
        ),
        "vdp" => d(
            Some(2),
            &["mu"],
            "dx/dt = y; dy/dt = mu(1 - x^2)y - x",
            Some(vec![(-3.0, 3.0), (-4.0, 4.0)]),
            "Van der Pol oscillator",
        ),
        "brusselator" => d(
            Some(2),
            &["a", "b"],
            "dx/dt = a - (b + 1)x + x^2·y; dy/dt = b·x - x^2·y",
            Some(vec![(0.0, 5.0), (0.0, 6.0)]),
            "standard literature form; limit cycle for b > 1 + a^2",
        ),
        "linear" => d(
            None,
            &["a11", "a12", "...", "ann"],
            "dx/dt = A x",
            None,
            "dimension inferred from the entries a<i><j> (1-based) of A",
        ),
        "cubic1d" => d(
            Some(1),
            &["c"],
            "dx/dt = -x + c·x^2",
            Some(vec![(-0.5, 0.5)]),
            "one-dimensional nonlinear test drift",
        ),
        _ => return Err(Error::UnknownModel(name.to_string())),
    })
}

fn param(params: &BTreeMap<String, f64>, model: &str, key: &str) -> Result<f64> {
    params.get(key).copied().ok_or_else(|| Error::MissingParam {
        model: model.to_string(),
        param: key.to_string(),
    })
}

/// Instantiate a zoo model with identity diffusion and analytic derivatives.
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let desc = describe_model(name)?;
    let model = match name {
        "hopf" => {
            let w = param(params, name, "omega")?;
            ModelSpec::new(name, 2, move |x, f| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                f[0] = x[0] * (1.0 - r2) - w * x[1];
                f[1] = x[1] * (1.0 - r2) + w * x[0];
            })
            .with_jacobian(move |x| {
                let (a, b) = (x[0], x[1]);
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        1.0 - 3.0 * a * a - b * b,
                        -2.0 * a * b - w,
                        -2.0 * a * b + w,
                        1.0 - a * a - 3.0 * b * b,
                    ],
                )
            })
            .with_hessian(|x| {
                let (a, b) = (x[0], x[1]);
                vec![
                    DMatrix::from_row_slice(2, 2, &[-6.0 * a, -2.0 * b, -2.0 * b, -2.0 * a]),
                    DMatrix::from_row_slice(2, 2, &[-2.0 * b, -2.0 * a, -2.0 * a, -6.0 * b]),
                ]
            })
        }
        "vdp" => {
            let mu = param(params, name, "mu")?;
            ModelSpec::new(name, 2, move |x, f| {
                f[0] = x[1];
                f[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            })
            .with_jacobian(move |x| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[0.0, 1.0, -2.0 * mu * x[0] * x[1] - 1.0, mu * (1.0 - x[0] * x[0])],
                )
            })
            .with_hessian(move |x| {
                vec![
                    DMatrix::zeros(2, 2),
                    DMatrix::from_row_slice(
                        2,
                        2,
                        &[-2.0 * mu * x[1], -2.0 * mu * x[0], -2.0 * mu * x[0], 0.0],
                    ),
                ]
            })
        }
        "brusselator" => {
            let a = param(params, name, "a")?;
            let b = param(params, name, "b")?;
            ModelSpec::new(name, 2, move |x, f| {
                let x2y = x[0] * x[0] * x[1];
                f[0] = a - (b + 1.0) * x[0] + x2y;
                f[1] = b * x[0] - x2y;
            })
            .with_jacobian(move |x| {
                let xy = x[0] * x[1];
                let xx = x[0] * x[0];
                DMatrix::from_row_slice(2, 2, &[-(b + 1.0) + 2.0 * xy, xx, b - 2.0 * xy, -xx])
            })
            .with_hessian(|x| {
                let (u, v) = (x[0], x[1]);
                vec![
                    DMatrix::from_row_slice(2, 2, &[2.0 * v, 2.0 * u, 2.0 * u, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[-2.0 * v, -2.0 * u, -2.0 * u, 0.0]),
                ]
            })
        }
        "linear" => {
            let a = linear_matrix(params)?;
            let n = a.nrows();
            let (ad, aj) = (a.clone(), a.clone());
            ModelSpec::new(name, n, move |x, f| {
                for i in 0..n {
                    f[i] = (0..n).map(|j| ad[(i, j)] * x[j]).sum();
                }
            })
            .with_jacobian(move |_| aj.clone())
            .with_hessian(move |_| vec![DMatrix::zeros(n, n); n])
            .with_affine(true)
        }
        "cubic1d" => {
            let c = param(params, name, "c")?;
            ModelSpec::new(name, 1, move |x, f| f[0] = -x[0] + c * x[0] * x[0])
                .with_jacobian(move |x| DMatrix::from_element(1, 1, -1.0 + 2.0 * c * x[0]))
                .with_hessian(move |_| vec![DMatrix::from_element(1, 1, 2.0 * c)])
        }
        _ => unreachable!("describe_model accepted an unregistered name"),
    };
    let mut model = model.with_params(params.clone()).with_equations(desc.equations);
    if let Some(domain) = desc.domain {
        model = model.with_domain(domain);
    }
    Ok(model)
}

/// Parse the matrix of the `linear` model from keys `a<i><j>` (1-based).
fn linear_matrix(params: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
    let mut entries = Vec::new();
    for (k, &v) in params {
        let digits = k.strip_prefix('a').filter(|d| d.len() == 2);
        let parsed = digits.and_then(|d| {
            let mut it = d.chars().map(|c| c.to_digit(10));
            match (it.next().flatten(), it.next().flatten()) {
                (Some(i), Some(j)) if i >= 1 && j >= 1 => Some((i as usize - 1, j as usize - 1)),
                _ => None,
            }
        });
        match parsed {
            Some((i, j)) => entries.push((i, j, v)),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "linear model parameter `{k}` is not of the form a<i><j>"
                )))
            }
        }
    }
    let n = entries
        .iter()
        .map(|&(i, j, _)| i.max(j) + 1)
        .max()
        .ok_or_else(|| Error::MissingParam {
            model: "linear".into(),
            param: "a11".into(),
        })?;
    let mut a = DMatrix::from_element(n, n, f64::NAN);
    for (i, j, v) in entries {
        a[(i, j)] = v;
    }
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)].is_nan() {
                return Err(Error::MissingParam {
                    model: "linear".into(),
                    param: format!("a{}{}", i + 1, j + 1),
                });
            }
        }
    }
    Ok(a)
}

/// Parameters for `linear` from a row-major matrix.
pub fn linear_params(a: &DMatrix<f64>) -> BTreeMap<String, f64> {
    let mut p = BTreeMap::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            p.insert(format!("a{}{}", i + 1, j + 1), a[(i, j)]);
        }
    }
    p
}

/// Shorthand for building parameter maps.
pub fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionReport {
    pub max_asymmetry: f64,
    pub eigenvalues: Vec<f64>,
    pub positive_definite: bool,
}

/// Check that `D` is exactly symmetric and positive semidefinite.
pub fn check_diffusion(d: &DMatrix<f64>) -> Result<DiffusionReport> {
    let asym = linalg::max_asymmetry(d);
    if asym != 0.0 {
        return Err(Error::NonSymmetricDiffusion(asym));
    }
    let (eigenvalues, _) = linalg::sym_eigen(d);
    let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eigenvalues[0];
    if min < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NegativeDiffusionEigenvalue(min));
    }
    Ok(DiffusionReport {
        max_asymmetry: asym,
        positive_definite: min > 1e-12 * scale,
        eigenvalues,
    })
}

/// Require a strictly positive definite diffusion matrix.
pub fn require_pd_diffusion(model: &ModelSpec) -> Result<()> {
    let rep = check_diffusion(model.diffusion())?;
    if !rep.positive_definite {
        return Err(Error::InvalidArgument(
            "operation requires a positive definite diffusion matrix".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationOptions {
    pub jacobian_tol: f64,
    pub hessian_tol: f64,
    /// Finite-difference step, scaled by `max(1, ‖x‖∞)`.
    pub fd_step: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            jacobian_tol: 1e-5,
            hessian_tol: 1e-4,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub x: Vec<f64>,
    pub jacobian_error: f64,
    pub hessian_error: f64,
    pub hessian_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub probes: Vec<ProbeReport>,
    pub max_jacobian_error: f64,
    pub max_hessian_error: f64,
    pub max_hessian_asymmetry: f64,
    pub jacobian_pass: bool,
    pub hessian_pass: bool,
    pub diffusion: DiffusionReport,
    pub options: ValidationOptions,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.jacobian_pass && self.hessian_pass
    }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::max_abs(&(a - b)) / linalg::max_abs(a).max(1.0)
}

/// Compare the model's Jacobian and Hessian against central differences of
/// the drift and Jacobian at each probe, and report on `D`.
pub fn validate_model(
    model: &ModelSpec,
    probes: &[Vec<f64>],
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("validation needs at least one probe".into()));
    }
    let diffusion = check_diffusion(model.diffusion())?;
    let n = model.dim();
    let mut reports = Vec::with_capacity(probes.len());
    for x in probes {
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "probe has {} coordinates, model dimension is {n}",
                x.len()
            )));
        }
        let h = opts.fd_step * x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let a = model.jacobian(x);
        let a_fd = central_jacobian(&*model.drift, n, x, h);
        let hs = model.hessian(x);
        let hs_fd = central_hessian(|y| model.jacobian(y), n, x, h);
        let mut herr = 0.0f64;
        let mut hasym = 0.0f64;
        for (hi, fi) in hs.iter().zip(&hs_fd) {
            herr = herr.max(rel_err(hi, fi));
            hasym = hasym.max(linalg::max_asymmetry(hi));
        }
        reports.push(ProbeReport {
            x: x.clone(),
            jacobian_error: rel_err(&a, &a_fd),
            hessian_error: herr,
            hessian_asymmetry: hasym,
        });
    }
    let max_j = reports.iter().fold(0.0f64, |a, r| a.max(r.jacobian_error));
    let max_h = reports.iter().fold(0.0f64, |a, r| a.max(r.hessian_error));
    let max_s = reports.iter().fold(0.0f64, |a, r| a.max(r.hessian_asymmetry));
    Ok(ValidationReport {
        model: model.name().to_string(),
        probes: reports,
        max_jacobian_error: max_j,
        max_hessian_error: max_h,
        max_hessian_asymmetry: max_s,
        jacobian_pass: max_j < opts.jacobian_tol,
        hessian_pass: max_h < opts.hessian_tol,
        diffusion,
        options: *opts,
    })
}

/// Uniform random probes in the model's domain box (or `[-1,1]^n`).
pub fn random_probes(model: &ModelSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let default_box = vec![(-1.0, 1.0); model.dim()];
    let bx = model.domain().unwrap_or(&default_box);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| bx.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect()
}
