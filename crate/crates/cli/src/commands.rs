//! One function per analysis. Each fills a [`Report`] with CSV tables and
//! the checks it exercised; writing and exit codes are handled by the
//! caller.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stocycle::clt::{propagate_gaussian, uniform_grid};
use stocycle::cycle::{analyze_cycle, CurvatureOptions, CycleAnalysis};
use stocycle::flow::CycleOptions;
use stocycle::laplace::{epsilon_sweep, random_family, slope_study};
use stocycle::model::{describe_model, random_probes, validate_model, ModelDescriptor, ValidationOptions};
use stocycle::montecarlo::{
    clt_check, default_cycle_step, empirical_cycle_marginal, simulate_ensemble,
    transverse_fluctuation_check, uniform_phase_states, EnsembleConfig, InitialState, Z_THRESHOLD,
};
use stocycle::ode::StepControl;
use stocycle::report::CsvTable;
use stocycle::scaling::{
    drift_verdict, ito_from_stratonovich, monomial_drift_exponent, monomial_scaling_exponent,
    rescale_sde, DiffusionFn, SpaceTimeStructure,
};
use stocycle::model::DriftFn;
use stocycle::ModelSpec;

use crate::config::{Analysis, RunConfig};
use crate::error::CliError;
use crate::output::Report;

/// Default Euler–Maruyama resolution of a tube check, steps per simulated
/// duration.
const TUBE_STEPS: f64 = 20_000.0;

pub fn run_analysis(analysis: Analysis, cfg: &RunConfig, workers: Option<usize>) -> Result<Report, CliError> {
    match analysis {
        Analysis::Validate => validate(cfg),
        Analysis::CycleReport => cycle_report(cfg),
        Analysis::CltCheck => clt(cfg, workers),
        Analysis::LaplaceCheck => in_pool(workers, || laplace(cfg))?,
        Analysis::Scaling => scaling(cfg),
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn validate(cfg: &RunConfig) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let v = &cfg.validate;
    let opts = ValidationOptions {
        jacobian_tol: v.jacobian_tol,
        hessian_tol: v.hessian_tol,
        fd_step: v.fd_step,
    };
    let probes = random_probes(&model, v.probes, cfg.seed);
    let rep = validate_model(&model, &probes, &opts)?;
    let n = model.dim();
    let mut header = stocycle::report::indexed("x", n);
    header.extend(["jacobian_error", "hessian_error", "hessian_asymmetry"].map(String::from));
    let mut table = CsvTable::new(header);
    for p in &rep.probes {
        let mut row = p.x.clone();
        row.extend([p.jacobian_error, p.hessian_error, p.hessian_asymmetry]);
        table.push(row);
    }
    let mut report = Report::default();
    report.table("validation.csv", &table);
    report.below("jacobian_relative_error", rep.max_jacobian_error, opts.jacobian_tol);
    report.below("hessian_relative_error", rep.max_hessian_error, opts.hessian_tol);
    report.tolerance("fd_step", opts.fd_step);
    report.note("model", model.name());
    report.note("jacobian_source", model.jacobian_source());
    report.note("hessian_source", model.hessian_source());
    report.note("diffusion", &rep.diffusion);
    Ok(report)
}

fn cycle_analysis(cfg: &RunConfig, model: &ModelSpec) -> Result<CycleAnalysis, CliError> {
    let c = &cfg.cycle;
    let guess = cfg.cycle_guess(model)?;
    let copts = CycleOptions {
        transient: c.transient,
        cycle_tol: c.cycle_tol,
        ..CycleOptions::default()
    };
    let kopts = CurvatureOptions {
        periodicity_tol: c.periodicity_tol,
        zero_eig_tol: c.zero_eig_tol,
        ..CurvatureOptions::default()
    };
    Ok(analyze_cycle(model, &guess, c.samples, &copts, &kopts)?)
}

pub fn cycle_report(cfg: &RunConfig) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    stocycle::model::require_pd_diffusion(&model)?;
    let an = cycle_analysis(cfg, &model)?;
    let c = &cfg.cycle;
    let mut report = Report::default();
    report.table("cycle_report.csv", &an.report_csv());
    report.table("cycle.csv", &an.samples.to_csv());

    let curv = &an.curvature;
    report.below("periodicity_error", curv.periodicity_error, c.periodic_check_tol);
    report.below("riccati_residual", curv.max_riccati_residual(), c.riccati_tol);
    report.below("tangency_defect", curv.tangency_defect(&an.samples), c.tangency_tol);
    let cq = an.conserved_quantity();
    report.below("conserved_relative_std", cq.relative_std, c.conserved_tol);
    let e = an.entropy();
    let scale = e.max_abs.max(f64::MIN_POSITIVE);
    report.below("entropy_pairwise_deviation", e.max_pairwise_deviation / scale, c.entropy_tol);
    let avg = e.period_averages.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    report.below("entropy_period_average", avg, c.entropy_average_tol);
    report.tolerance("cycle_tol", c.cycle_tol);
    report.tolerance("periodicity_tol", c.periodicity_tol);
    report.tolerance("zero_eig_tol", c.zero_eig_tol);

    report.note("period", an.samples.period);
    report.note("arclength", an.samples.arclength());
    report.note("samples", an.samples.len());
    report.note("conserved_mean", cq.mean);
    report.note("periods_used", curv.periods_used);
    report.note("entropy_max_abs", e.max_abs);
    Ok(report)
}

pub fn clt(cfg: &RunConfig, workers: Option<usize>) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let c = &cfg.clt;
    let x0 = cfg.initial_state(&model)?;
    let needs_cycle = x0.is_none() || c.long_run.is_some();
    let an = if needs_cycle {
        stocycle::model::require_pd_diffusion(&model)?;
        Some(cycle_analysis(cfg, &model)?)
    } else {
        None
    };
    let (x0, duration) = match (&x0, &an) {
        (Some(x), _) => (x.clone(), c.duration.unwrap_or(1.0)),
        (None, Some(a)) => (a.samples.states[0].clone(), c.duration.unwrap_or(a.samples.period)),
        (None, None) => unreachable!("a cycle is analyzed whenever x0 is absent"),
    };
    let step = c.step.unwrap_or(duration / TUBE_STEPS);
    let times = uniform_grid(duration, c.grid_points);
    let n = model.dim();
    let tube = propagate_gaussian(
        &model,
        x0.as_slice(),
        &vec![0.0; n],
        &DMatrix::zeros(n, n),
        &times,
        &StepControl::default(),
    )?;
    let mut ens = EnsembleConfig::new(c.epsilon, c.trajectories, step, cfg.seed);
    ens.workers = workers;
    let stats = simulate_ensemble(&model, &ens, &InitialState::Point(x0), &times)?;
    let chk = clt_check(&stats, &tube)?;

    let mut report = Report::default();
    report.table("tube.csv", &tube.to_csv());
    report.table("ensemble.csv", &stats.to_csv());
    report.table("clt_check.csv", &chk.to_csv());
    report.at_least("clt_fraction_within", chk.fraction_within, c.pass_fraction);
    report.tolerance("z_threshold", Z_THRESHOLD);
    report.tolerance("epsilon", c.epsilon);
    report.tolerance("step", step);
    report.note("duration", duration);
    report.note("trajectories", c.trajectories);
    report.note("degenerate_entries", chk.degenerate);
    report.note("low_power", chk.low_power);

    if let (Some(lr), Some(an)) = (&c.long_run, &an) {
        let period = an.samples.period;
        let step = lr.step.unwrap_or_else(|| default_cycle_step(period));
        let mut ens = EnsembleConfig::new(c.epsilon, lr.trajectories, step, cfg.seed.wrapping_add(1));
        ens.workers = workers;
        let starts = InitialState::PerTrajectory(uniform_phase_states(an, lr.trajectories));
        let long = simulate_ensemble(&model, &ens, &starts, &[0.0, lr.periods * period])?;
        let tr = transverse_fluctuation_check(&long, an, lr.bins)?;
        let mg = empirical_cycle_marginal(&long, an, lr.bins)?;
        report.table("transverse.csv", &tr.to_csv());
        report.table("marginal.csv", &mg.to_csv());
        report.table("long_run_endpoints.csv", &long.endpoints_csv());
        report.at_least("transverse_fraction_passing", tr.fraction_passing, lr.pass_fraction);
        report.below("marginal_ks_distance", mg.ks_distance, lr.ks_max);
        report.tolerance("long_run_step", step);
        report.tolerance("long_run_periods", lr.periods);
    }
    Ok(report)
}

pub fn laplace(cfg: &RunConfig) -> Result<Report, CliError> {
    let l = &cfg.laplace;
    let eps = epsilon_sweep(l.epsilons);
    let mut rows = CsvTable::new(
        [
            "family",
            "dim",
            "epsilon",
            "integral_error",
            "ratio_error",
            "weighted_ratio_error",
            "variance_error",
            "oracle_error",
            "slope",
        ]
        .map(String::from),
    );
    let mut slopes = CsvTable::new(
        [
            "family",
            "dim",
            "integral_slope",
            "ratio_slope",
            "weighted_ratio_slope",
            "variance_slope",
            "min_slope",
        ]
        .map(String::from),
    );
    let mut min_slope = f64::INFINITY;
    let mut max_oracle = 0.0f64;
    for f in 0..l.families {
        let dim = l.dims[f % l.dims.len()];
        let family = random_family(dim, cfg.seed.wrapping_add(f as u64))?;
        let resolution = if dim == 1 { l.resolution_1d } else { l.resolution_2d };
        let rep = slope_study(&family, &eps, resolution, l.convention.into())?;
        let fam_min = rep.min_slope();
        min_slope = min_slope.min(fam_min);
        for r in &rep.rows {
            max_oracle = max_oracle.max(r.oracle_error);
            rows.push(vec![
                f as f64,
                dim as f64,
                r.epsilon,
                r.integral_error,
                r.ratio_error,
                r.weighted_ratio_error,
                r.variance_error.unwrap_or(f64::NAN),
                r.oracle_error,
                fam_min,
            ]);
        }
        slopes.push(vec![
            f as f64,
            dim as f64,
            rep.integral_slope,
            rep.ratio_slope,
            rep.weighted_ratio_slope,
            rep.variance_slope.unwrap_or(f64::NAN),
            fam_min,
        ]);
    }
    let mut report = Report::default();
    report.table("epsilon_error.csv", &rows);
    report.table("slopes.csv", &slopes);
    report.at_least("min_slope", min_slope, l.slope_min);
    report.below("oracle_error", max_oracle, l.oracle_tol);
    report.note("epsilons", &eps);
    report.note("convention", l.convention);
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ScalingSummary {
    degree: f64,
    k: f64,
    drift_exponent: f64,
    verdict: stocycle::scaling::DriftVerdict,
}

pub fn scaling(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = &cfg.scaling;
    let n = s.degree;
    let k = match s.k {
        Some(k) => k,
        None => monomial_scaling_exponent(n)?,
    };
    let p = monomial_drift_exponent(n, k)?;
    let c = s.coefficient;
    let g: DriftFn = Arc::new(move |y: &[f64], out: &mut [f64]| out[0] = c * y[0].powf(n));
    let d: DiffusionFn = Arc::new(|_y: &[f64]| DMatrix::from_element(1, 1, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Non-integer degrees need a positive base.
    let lo = if n.fract() == 0.0 { -2.0 } else { 0.1 };
    let xs: Vec<f64> = (0..s.points).map(|_| rng.random_range(lo..2.0)).collect();

    let mut table = CsvTable::new(
        ["alpha", "beta", "epsilon", "drift_scale", "max_relative_error"].map(String::from),
    );
    let mut worst = 0.0f64;
    let mut ito_exact = true;
    for &alpha in &s.alphas {
        let st = SpaceTimeStructure::power_law(alpha, k)?;
        let sde = rescale_sde(g.clone(), d.clone(), &st);
        let scale = st.epsilon().powf(p);
        let mut err = 0.0f64;
        let zero_div: DriftFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
        let ito = ito_from_stratonovich(sde.drift.clone(), zero_div, st.epsilon());
        let (mut b_s, mut b_i) = ([0.0], [0.0]);
        for &x in &xs {
            (sde.drift)(&[x], &mut b_s);
            let want = c * scale * x.powf(n);
            if want != 0.0 {
                err = err.max(((b_s[0] - want) / want).abs());
            } else {
                err = err.max(b_s[0].abs());
            }
            ito(&[x], &mut b_i);
            ito_exact &= b_i[0].to_bits() == b_s[0].to_bits();
        }
        worst = worst.max(err);
        table.push(vec![alpha, st.beta(), st.epsilon(), scale, err]);
    }
    let mut report = Report::default();
    report.table("scaling.csv", &table);
    report.at_most("max_relative_error", worst, s.ulps * f64::EPSILON);
    report.at_most("ito_constant_diffusion_mismatch", if ito_exact { 0.0 } else { 1.0 }, 0.0);
    report.note(
        "scaling",
        ScalingSummary {
            degree: n,
            k,
            drift_exponent: p,
            verdict: drift_verdict(p),
        },
    );
    Ok(report)
}

/// Descriptor of a built-in model as text or JSON.
pub fn describe(name: &str, json: bool) -> Result<String, CliError> {
    let d = describe_model(name)?;
    if json {
        return serde_json::to_string_pretty(&d).map_err(|e| CliError::Io(std::io::Error::other(e)));
    }
    Ok(describe_text(&d))
}

fn describe_text(d: &ModelDescriptor) -> String {
    let dim = d.dim.map_or("any".to_string(), |n| n.to_string());
    let domain = match &d.domain {
        Some(b) => b
            .iter()
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect::<Vec<_>>()
            .join(" x "),
        None => "none".to_string(),
    };
    format!(
        "model: {}\ndimension: {dim}\nparameters: {}\nequations: {}\ndomain: {domain}\nnotes: {}\n",
        d.name,
        d.params.join(", "),
        d.equations,
        d.notes
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::from_toml(text).unwrap()
    }

    #[test]
    fn describe_hopf_and_unknown() {
        let t = describe("hopf", false).unwrap();
        assert!(t.contains("dimension: 2") && t.contains("omega") && t.contains("[-2, 2]"));
        let j: serde_json::Value = serde_json::from_str(&describe("hopf", true).unwrap()).unwrap();
        assert_eq!(j["dim"], 2);
        let err = describe("nosuch", false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unknown model"));
    }

    #[test]
    fn scaling_default_is_invariant_and_exact() {
        let rep = scaling(&cfg("schema_version = 1\n")).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert_eq!(rep.summary["scaling"]["verdict"], "invariant");
    }

    #[test]
    fn scaling_reports_divergent_drift() {
        let rep = scaling(&cfg("schema_version = 1\n[scaling]\ndegree = 2.0\nk = 0.0\n")).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.summary["scaling"]["verdict"], "divergent");
        assert_eq!(rep.summary["scaling"]["drift_exponent"], -0.5);
    }

    #[test]
    fn linear_model_clt_check() {
        let text = r#"
schema_version = 1
seed = 3
[model]
name = "linear"
params = { a11 = -1.0, a12 = 0.5, a21 = -0.3, a22 = -0.8 }
x0 = [1.0, -0.5]
[clt]
epsilon = 0.01
trajectories = 2000
step = 0.001
duration = 1.0
grid_points = 4
"#;
        let rep = clt(&cfg(text), None).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert_eq!(rep.tables.len(), 3);
    }
}
