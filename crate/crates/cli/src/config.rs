//! Run configuration: a TOML document with one schema version, validated
//! before any computation. Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use stocycle::laplace::SixthMomentConvention;
use stocycle::model::{builtin_model, check_diffusion, Monomial, PolynomialDrift};
use stocycle::ModelSpec;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Validate,
    CycleReport,
    CltCheck,
    LaplaceCheck,
    Scaling,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Validate => "validate",
            Analysis::CycleReport => "cycle-report",
            Analysis::CltCheck => "clt-check",
            Analysis::LaplaceCheck => "laplace-check",
            Analysis::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Analysis performed by the `run` subcommand.
    pub analysis: Option<Analysis>,
    #[serde(default)]
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub cycle: CycleConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub clt: CltConfig,
    #[serde(default)]
    pub laplace: LaplaceConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Built-in model name; exclusive with `polynomial`.
    pub name: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub polynomial: Option<PolynomialConfig>,
    /// Row-major diffusion matrix; identity when absent.
    pub diffusion: Option<Vec<Vec<f64>>>,
    /// Starting point for the limit-cycle search.
    pub guess: Option<Vec<f64>>,
    /// Initial state for trajectory analyses of models without a cycle.
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialConfig {
    pub dim: usize,
    /// `components[i]` lists the terms of the i-th drift component.
    pub components: Vec<Vec<TermConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleConfig {
    pub samples: usize,
    pub transient: f64,
    pub cycle_tol: f64,
    pub periodicity_tol: f64,
    pub zero_eig_tol: f64,
    /// Required relative periodicity of `Σ̃` over the last period.
    pub periodic_check_tol: f64,
    pub riccati_tol: f64,
    pub tangency_tol: f64,
    /// Bound on the relative std of `√v·ω·‖b‖`.
    pub conserved_tol: f64,
    /// Bound on the pairwise entropy-expression deviation, relative to the
    /// largest magnitude.
    pub entropy_tol: f64,
    pub entropy_average_tol: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            samples: 1024,
            transient: 100.0,
            cycle_tol: 1e-9,
            periodicity_tol: 1e-12,
            zero_eig_tol: 1e-6,
            periodic_check_tol: 1e-6,
            riccati_tol: 1e-5,
            tangency_tol: 1e-6,
            conserved_tol: 1e-3,
            entropy_tol: 1e-4,
            entropy_average_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub probes: usize,
    pub jacobian_tol: f64,
    pub hessian_tol: f64,
    pub fd_step: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let d = stocycle::model::ValidationOptions::default();
        Self {
            probes: 20,
            jacobian_tol: d.jacobian_tol,
            hessian_tol: d.hessian_tol,
            fd_step: d.fd_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltConfig {
    pub epsilon: f64,
    pub trajectories: usize,
    /// Euler–Maruyama step; defaults to `duration/20000`.
    pub step: Option<f64>,
    /// Simulated time; defaults to one period for cycle models.
    pub duration: Option<f64>,
    pub grid_points: usize,
    pub pass_fraction: f64,
    pub long_run: Option<LongRunConfig>,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            trajectories: 10_000,
            step: None,
            duration: None,
            grid_points: 20,
            pass_fraction: 0.95,
            long_run: None,
        }
    }
}

/// Stationary check on the cycle: phase-uniform starts, a burn-in, then
/// transverse covariance per phase bin and the cycle marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongRunConfig {
    pub trajectories: usize,
    pub periods: f64,
    /// Euler–Maruyama step; defaults to `T/2000`.
    pub step: Option<f64>,
    pub bins: usize,
    pub pass_fraction: f64,
    pub ks_max: f64,
}

impl Default for LongRunConfig {
    fn default() -> Self {
        Self {
            trajectories: 10_000,
            periods: 2.0,
            step: None,
            bins: 16,
            pass_fraction: 0.9,
            ks_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionConfig {
    Consistent,
    AsDisplayed,
}

impl From<ConventionConfig> for SixthMomentConvention {
    fn from(c: ConventionConfig) -> Self {
        match c {
            ConventionConfig::Consistent => SixthMomentConvention::Consistent,
            ConventionConfig::AsDisplayed => SixthMomentConvention::AsDisplayed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceConfig {
    pub families: usize,
    /// Dimensions cycled through by successive families.
    pub dims: Vec<usize>,
    pub resolution_1d: usize,
    pub resolution_2d: usize,
    pub epsilons: usize,
    pub convention: ConventionConfig,
    pub slope_min: f64,
    pub oracle_tol: f64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            families: 10,
            dims: vec![1, 2],
            resolution_1d: 40,
            resolution_2d: 30,
            epsilons: 4,
            convention: ConventionConfig::Consistent,
            slope_min: 1.9,
            oracle_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Degree `n` of the monomial drift `g(y) = c yⁿ`.
    pub degree: f64,
    pub coefficient: f64,
    /// Time exponent `k` of `ξ(α) = α^k`; defaults to `1 − n`.
    pub k: Option<f64>,
    pub alphas: Vec<f64>,
    pub points: usize,
    /// Allowed deviation from `c ε^p xⁿ`, in units of machine epsilon.
    pub ulps: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            degree: 2.0,
            coefficient: 1.0,
            k: None,
            alphas: vec![1.0, 10.0, 100.0, 1000.0],
            points: 100,
            ulps: 64.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        if let Some(m) = &self.model {
            match (&m.name, &m.polynomial) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "model.name and model.polynomial are exclusive".into(),
                    ))
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "model needs either name or polynomial".into(),
                    ))
                }
                _ => {}
            }
            if let Some(d) = &m.diffusion {
                if d.is_empty() || d.iter().any(|r| r.len() != d.len()) {
                    return Err(CliError::Config("diffusion must be a square matrix".into()));
                }
            }
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be positive (got {v})")))
            }
        };
        positive("clt.epsilon", self.clt.epsilon)?;
        if let Some(h) = self.clt.step {
            positive("clt.step", h)?;
        }
        if let Some(t) = self.clt.duration {
            positive("clt.duration", t)?;
        }
        if self.clt.trajectories < 2 || self.clt.grid_points == 0 {
            return Err(CliError::Config(
                "clt needs at least 2 trajectories and 1 grid point".into(),
            ));
        }
        if let Some(lr) = &self.clt.long_run {
            positive("clt.long_run.periods", lr.periods)?;
            if lr.trajectories < 2 {
                return Err(CliError::Config("clt.long_run needs at least 2 trajectories".into()));
            }
        }
        if self.cycle.samples < stocycle::flow::MIN_CYCLE_SAMPLES {
            return Err(CliError::Config(format!(
                "cycle.samples must be at least {}",
                stocycle::flow::MIN_CYCLE_SAMPLES
            )));
        }
        if self.laplace.families == 0 || self.laplace.epsilons < 2 {
            return Err(CliError::Config(
                "laplace needs at least one family and two epsilons".into(),
            ));
        }
        if self.laplace.dims.is_empty() || self.laplace.dims.iter().any(|&d| d == 0 || d > 2) {
            return Err(CliError::Config("laplace.dims entries must be 1 or 2".into()));
        }
        if self.scaling.alphas.is_empty() || self.scaling.points == 0 {
            return Err(CliError::Config("scaling needs alphas and points".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<&ModelConfig, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("this analysis needs a [model] section".into()))
    }

    /// Instantiate the model, checking the diffusion matrix.
    pub fn build_model(&self) -> Result<ModelSpec, CliError> {
        let mc = self.model_config()?;
        let model = match (&mc.name, &mc.polynomial) {
            (Some(name), None) => builtin_model(name, &mc.params)?,
            (None, Some(p)) => PolynomialDrift {
                dim: p.dim,
                components: p
                    .components
                    .iter()
                    .map(|c| {
                        c.iter()
                            .map(|t| Monomial {
                                coeff: t.coeff,
                                powers: t.powers.clone(),
                            })
                            .collect()
                    })
                    .collect(),
            }
            .into_model("polynomial")?,
            _ => unreachable!("checked when the config was loaded"),
        };
        let model = match &mc.diffusion {
            Some(rows) => {
                let n = rows.len();
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                model.with_diffusion(DMatrix::from_row_slice(n, n, &flat))?
            }
            None => model,
        };
        check_diffusion(model.diffusion())?;
        Ok(model)
    }

    /// Starting point for the cycle search.
    pub fn cycle_guess(&self, model: &ModelSpec) -> Result<Vec<f64>, CliError> {
        let mc = self.model_config()?;
        if let Some(g) = &mc.guess {
            return check_len("model.guess", g, model.dim());
        }
        let p = |k: &str| mc.params.get(k).copied().unwrap_or(1.0);
        match mc.name.as_deref() {
            Some("hopf") => Ok(vec![0.5, 0.0]),
            Some("vdp") => Ok(vec![2.0, 0.0]),
            Some("brusselator") => Ok(vec![p("a") + 0.5, p("b") / p("a")]),
            _ => Err(CliError::Config(
                "model.guess is required to locate the limit cycle".into(),
            )),
        }
    }

    pub fn initial_state(&self, model: &ModelSpec) -> Result<Option<DVector<f64>>, CliError> {
        let mc = self.model_config()?;
        mc.x0
            .as_ref()
            .map(|x| check_len("model.x0", x, model.dim()).map(DVector::from_vec))
            .transpose()
    }
}

fn check_len(name: &str, v: &[f64], dim: usize) -> Result<Vec<f64>, CliError> {
    if v.len() != dim {
        return Err(CliError::Config(format!(
            "{name} has {} entries, model dimension is {dim}",
            v.len()
        )));
    }
    Ok(v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VDP: &str = r#"
schema_version = 1
analysis = "cycle-report"
[model]
name = "vdp"
params = { mu = 1.0 }
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_toml(VDP).unwrap();
        assert_eq!(cfg.analysis, Some(Analysis::CycleReport));
        assert_eq!(cfg.cycle, CycleConfig::default());
        let m = cfg.build_model().unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(cfg.cycle_guess(&m).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad = VDP.replace("[model]", "colour = 3\n[model]");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad = VDP.replace("params", "parms");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad = VDP.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad = format!("{VDP}[clt]\nepsilon = -1.0\n");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn non_symmetric_diffusion_is_a_config_error() {
        let text = format!("{VDP}diffusion = [[1.0, 0.2], [0.0, 1.0]]\n");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let err = cfg.build_model().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("not symmetric"), "{err}");
    }

    #[test]
    fn polynomial_model() {
        let text = r#"
schema_version = 1
[model]
polynomial = { dim = 1, components = [[{ coeff = -1.0, powers = [1] }, { coeff = 0.5, powers = [2] }]] }
x0 = [0.1]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let m = cfg.build_model().unwrap();
        assert!((m.drift(&[0.2])[0] - (-0.2 + 0.02)).abs() < 1e-15);
        assert_eq!(cfg.initial_state(&m).unwrap().unwrap()[0], 0.1);
        assert!(cfg.cycle_guess(&m).is_err());
    }
}
