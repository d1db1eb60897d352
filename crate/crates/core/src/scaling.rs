//! Space-time rescaling of a base SDE into an ε-parameterized family, and
//! the Itô correction for state-dependent diffusion.
//!
//! A base process `dY = g(Y) dτ + sqrt(2 D(Y)) dW` observed on a space scale
//! `α` and time scale `β = ξ(α)`, i.e. `X(t) = Y(β t)/α`, obeys
//!
//! ```text
//! dX = b_ε(X) dt + sqrt(2 ε D_ε(X)) dB,
//! b_ε(x) = (β/α) g(αx),   D_ε(x) = D(αx),   ε = β/α².
//! ```
//!
//! Here ε is always derived from the structure and never supplied directly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DriftFn, ModelSpec};

/// State-dependent diffusion matrix `x ↦ D(x)`.
pub type DiffusionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// The time scale `β = ξ(α)` as a function of the space scale.
#[derive(Clone)]
pub enum TimeScale {
    /// `ξ(α) = α^k`.
    PowerLaw(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for TimeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeScale::PowerLaw(k) => write!(f, "PowerLaw({k})"),
            TimeScale::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TimeScale {
    pub fn eval(&self, alpha: f64) -> f64 {
        match self {
            TimeScale::PowerLaw(k) => alpha.powf(*k),
            TimeScale::Custom(xi) => xi(alpha),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeStructure {
    alpha: f64,
    xi: TimeScale,
    beta: f64,
}

impl SpaceTimeStructure {
    pub fn new(alpha: f64, xi: TimeScale) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::NonPositiveScale(alpha));
        }
        let beta = xi.eval(alpha);
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::NonPositiveScale(beta));
        }
        Ok(Self { alpha, xi, beta })
    }

    pub fn power_law(alpha: f64, k: f64) -> Result<Self> {
        Self::new(alpha, TimeScale::PowerLaw(k))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The time scale `β = ξ(α)`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn time_scale(&self) -> &TimeScale {
        &self.xi
    }

    /// `ε = ξ(α)/α²`.
    pub fn epsilon(&self) -> f64 {
        self.beta / (self.alpha * self.alpha)
    }

    /// Macroscopic state `x = y/α` of a base state `y`.
    pub fn to_macro(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().map(|v| v / self.alpha))
    }

    /// Base state `y = αx` of a macroscopic state `x`.
    pub fn to_base(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|v| v * self.alpha))
    }
}

/// The rescaled family member: drift `b_ε`, diffusion `D_ε` and the derived
/// `ε`.
#[derive(Clone)]
pub struct RescaledSde {
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub epsilon: f64,
}

impl fmt::Debug for RescaledSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RescaledSde")
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl RescaledSde {
    pub fn drift_at(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        (self.drift)(x, out.as_mut_slice());
        out
    }

    pub fn diffusion_at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(x)
    }
}

/// Build `b_ε(x) = (β/α) g(αx)`, `D_ε(x) = D(αx)` and `ε = β/α²`.
pub fn rescale_sde(g: DriftFn, d: DiffusionFn, structure: &SpaceTimeStructure) -> RescaledSde {
    let alpha = structure.alpha;
    let factor = structure.beta / alpha;
    let drift: DriftFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let y: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        g(&y, out);
        for o in out.iter_mut() {
            *o *= factor;
        }
    });
    let diffusion: DiffusionFn = Arc::new(move |x: &[f64]| {
        let y: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        d(&y)
    });
    RescaledSde {
        drift,
        diffusion,
        epsilon: structure.epsilon(),
    }
}

/// Rescale a constant-diffusion model, returning the macroscopic model and
/// its `ε`. Analytic derivatives carry over by the chain rule:
/// `∇b_ε(x) = β ∇g(αx)` and `∇∇b_ε(x) = αβ ∇∇g(αx)`.
pub fn rescale_model(model: &ModelSpec, structure: &SpaceTimeStructure) -> Result<(ModelSpec, f64)> {
    let alpha = structure.alpha;
    let beta = structure.beta;
    let factor = beta / alpha;
    let base = model.clone();
    let jac_base = model.clone();
    let hess_base = model.clone();
    let scaled = move |x: &[f64]| -> Vec<f64> { x.iter().map(|v| alpha * v).collect() };
    let mut out = ModelSpec::new(
        format!("{}@alpha={alpha}", model.name()),
        model.dim(),
        move |x: &[f64], b: &mut [f64]| {
            base.drift_into(&scaled(x), b);
            for v in b.iter_mut() {
                *v *= factor;
            }
        },
    )
    .with_jacobian(move |x: &[f64]| jac_base.jacobian(&scaled(x)) * beta)
    .with_hessian(move |x: &[f64]| {
        hess_base
            .hessian(&scaled(x))
            .into_iter()
            .map(|h| h * (alpha * beta))
            .collect()
    })
    .with_affine(model.is_affine())
    .with_params(model.params().clone())
    .with_diffusion(model.diffusion().clone())?;
    if let Some(domain) = model.domain() {
        out = out.with_domain(
            domain
                .iter()
                .map(|&(lo, hi)| (lo / alpha, hi / alpha))
                .collect(),
        );
    }
    Ok((out, structure.epsilon()))
}

/// Time exponent `k = 1 − n` that makes a degree-`n` monomial drift
/// scale-invariant. Requires `n > −1`.
pub fn monomial_scaling_exponent(n: f64) -> Result<f64> {
    if !(n > -1.0 && n.is_finite()) {
        return Err(Error::OutOfRange(n));
    }
    Ok(1.0 - n)
}

/// For `g(y) = c yⁿ` and `ξ(α) = α^k`, the rescaled drift is
/// `b_ε(x) = c ε^p xⁿ` with `p = (k − 1 + n)/(k − 2)`, obtained by
/// substituting `α = ε^{1/(k−2)}` into `α^{k−1+n}`. At `k = 2` the family
/// has `ε ≡ 1` and no exponent exists.
pub fn monomial_drift_exponent(n: f64, k: f64) -> Result<f64> {
    if k == 2.0 {
        return Err(Error::InvalidArgument(
            "k = 2 gives ε ≡ 1 for every α".into(),
        ));
    }
    Ok((k - 1.0 + n) / (k - 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftVerdict {
    /// `b_ε` does not depend on ε.
    Invariant,
    /// `b_ε` vanishes as ε → 0.
    Vanishing,
    /// `b_ε` blows up as ε → 0.
    Divergent,
}

pub fn drift_verdict(exponent: f64) -> DriftVerdict {
    const TOL: f64 = 1e-12;
    if exponent.abs() <= TOL {
        DriftVerdict::Invariant
    } else if exponent > 0.0 {
        DriftVerdict::Vanishing
    } else {
        DriftVerdict::Divergent
    }
}

/// One row of an `(α, β, ε)` sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleRow {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

pub fn scale_table(alphas: &[f64], xi: &TimeScale) -> Result<Vec<ScaleRow>> {
    alphas
        .iter()
        .map(|&a| {
            let s = SpaceTimeStructure::new(a, xi.clone())?;
            Ok(ScaleRow {
                alpha: s.alpha(),
                beta: s.beta(),
                epsilon: s.epsilon(),
            })
        })
        .collect()
}

/// Itô drift at a point: `b_I = b_S + ε ∇·D`.
pub fn ito_drift(b_s: &[f64], div_d: &[f64], epsilon: f64) -> DVector<f64> {
    DVector::from_iterator(
        b_s.len(),
        b_s.iter().zip(div_d).map(|(b, d)| b + epsilon * d),
    )
}

/// Itô drift field from a Stratonovich drift and the divergence
/// `(∇·D)_i = Σ_j ∂_j D_ij`.
pub fn ito_from_stratonovich(b_s: DriftFn, div_d: DriftFn, epsilon: f64) -> DriftFn {
    Arc::new(move |x: &[f64], out: &mut [f64]| {
        b_s(x, out);
        let mut div = vec![0.0; out.len()];
        div_d(x, &mut div);
        for (o, d) in out.iter_mut().zip(&div) {
            *o += epsilon * d;
        }
    })
}

/// Central-difference divergence `(∇·D)_i = Σ_j ∂_j D_ij` with step `h`.
pub fn matrix_divergence(d: &dyn Fn(&[f64]) -> DMatrix<f64>, x: &[f64], h: f64) -> DVector<f64> {
    let n = x.len();
    let mut out = DVector::zeros(n);
    let mut y = x.to_vec();
    for j in 0..n {
        y[j] = x[j] + h;
        let plus = d(&y);
        y[j] = x[j] - h;
        let minus = d(&y);
        y[j] = x[j];
        for i in 0..n {
            out[i] += (plus[(i, j)] - minus[(i, j)]) / (2.0 * h);
        }
    }
    out
}
