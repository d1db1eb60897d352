//! Seeded Euler–Maruyama ensembles of `dX = b(X) dt + sqrt(2εD) dB` and the
//! empirical statistics that cross-check the Gaussian tube, the transverse
//! covariance on a limit cycle and the cycle marginal density.
//!
//! Trajectory `j` draws its noise from a ChaCha8 generator keyed by the master
//! seed with stream `j`, and trajectories are grouped into fixed-size blocks
//! whose results are concatenated in index order. Statistics are computed
//! afterwards by two-pass sums in trajectory order, so every output is
//! bitwise identical for any number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::clt::GaussianTube;
use crate::cycle::CycleAnalysis;
use crate::error::{Error, Result};
use crate::flow::flow_map;
use crate::linalg::psd_sqrt;
use crate::model::ModelSpec;
use crate::ode::StepControl;
use crate::report::{indexed, CsvTable};

/// Trajectories simulated per parallel work item.
pub const BLOCK_SIZE: usize = 64;

/// Minimum number of samples a phase bin must hold.
pub const MIN_SAMPLES_PER_BIN: usize = 100;

/// Ensembles smaller than this are flagged as having no statistical power.
pub const LOW_POWER_TRAJECTORIES: usize = 100;

/// A sample statistic matches its prediction when `|z|` is below this.
pub const Z_THRESHOLD: f64 = 3.0;

/// Default Euler–Maruyama step for cycle studies, `T/2000`.
pub fn default_cycle_step(period: f64) -> f64 {
    period / 2000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub epsilon: f64,
    pub trajectories: usize,
    /// Largest Euler–Maruyama step; each grid interval is split evenly.
    pub step: f64,
    pub seed: u64,
    /// Thread count; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Standard normals summed into each Brownian increment. A run with step
    /// `2h` and two substeps follows the same Brownian path as a run with
    /// step `h` and one substep.
    pub noise_substeps: usize,
}

impl EnsembleConfig {
    pub fn new(epsilon: f64, trajectories: usize, step: f64, seed: u64) -> Self {
        Self {
            epsilon,
            trajectories,
            step,
            seed,
            workers: None,
            noise_substeps: 1,
        }
    }
}

/// Initial condition at the first grid time.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Every trajectory starts at the same point. Enables `Z_ε` statistics.
    Point(DVector<f64>),
    /// Trajectory `j` starts at entry `j`.
    PerTrajectory(Vec<DVector<f64>>),
}

/// Sample mean and covariance with standard errors.
///
/// `mean_se_i = s_i/√M` with `s` the unbiased sample standard deviation.
/// The covariance uses divisor `M − 1` and its standard error is
/// `sqrt((m4_ij − c_ij²)/M)`, where `c_ij` and `m4_ij` are the biased
/// central moments `⟨d_i d_j⟩` and `⟨d_i² d_j²⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub covariance_se: DMatrix<f64>,
}

/// Two-pass moments of the given samples, summed in slice order.
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<Moments> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {m}")));
    }
    let n = samples[0].len();
    let mf = m as f64;
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= mf;
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut m4 = DMatrix::<f64>::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        for i in 0..n {
            for j in i..n {
                let p = d[i] * d[j];
                c[(i, j)] += p;
                m4[(i, j)] += p * p;
            }
        }
    }
    let mut covariance = DMatrix::zeros(n, n);
    let mut covariance_se = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let biased = c[(i, j)] / mf;
            let v = c[(i, j)] / (mf - 1.0);
            let se = ((m4[(i, j)] / mf - biased * biased).max(0.0) / mf).sqrt();
            covariance[(i, j)] = v;
            covariance[(j, i)] = v;
            covariance_se[(i, j)] = se;
            covariance_se[(j, i)] = se;
        }
    }
    let mean_se = DVector::from_iterator(n, (0..n).map(|i| (covariance[(i, i)] / mf).sqrt()));
    Ok(Moments {
        mean,
        covariance,
        mean_se,
        covariance_se,
    })
}

/// Empirical statistics of an ensemble on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub seed: u64,
    pub trajectories: usize,
    pub epsilon: f64,
    pub step: f64,
    pub times: Vec<f64>,
    /// Moments of `X_ε` at each grid time.
    pub state: Vec<Moments>,
    /// Deterministic trajectory `x̂` when all trajectories share one start.
    pub base: Option<Vec<DVector<f64>>>,
    /// Moments of `Z_ε = (X_ε − x̂)/√ε` when `base` is present and `ε > 0`.
    pub deviation: Option<Vec<Moments>>,
    /// States at the final grid time, in trajectory order.
    pub endpoints: Vec<DVector<f64>>,
}

fn moments_header(prefix: &str, n: usize) -> Vec<String> {
    let mut h = indexed(&format!("{prefix}mean"), n);
    for i in 0..n {
        for j in i..n {
            h.push(format!("{prefix}cov{}{}", i + 1, j + 1));
        }
    }
    h.extend(indexed(&format!("{prefix}mean_se"), n));
    for i in 0..n {
        for j in i..n {
            h.push(format!("{prefix}cov_se{}{}", i + 1, j + 1));
        }
    }
    h
}

fn moments_row(m: &Moments, row: &mut Vec<f64>) {
    let n = m.mean.len();
    row.extend(m.mean.iter());
    for i in 0..n {
        for j in i..n {
            row.push(m.covariance[(i, j)]);
        }
    }
    row.extend(m.mean_se.iter());
    for i in 0..n {
        for j in i..n {
            row.push(m.covariance_se[(i, j)]);
        }
    }
}

impl EnsembleStats {
    pub fn dim(&self) -> usize {
        self.state[0].mean.len()
    }

    /// Columns `t`, moments of `X` (prefix `x_`) and, when present, of `Z`
    /// (prefix `z_`).
    pub fn to_csv(&self) -> CsvTable {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend(moments_header("x_", n));
        if self.deviation.is_some() {
            header.extend(moments_header("z_", n));
        }
        let mut table = CsvTable::new(header);
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![*t];
            moments_row(&self.state[k], &mut row);
            if let Some(dev) = &self.deviation {
                moments_row(&dev[k], &mut row);
            }
            table.push(row);
        }
        table
    }

    /// Final states, one row per trajectory.
    pub fn endpoints_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(indexed("x", self.dim()));
        for e in &self.endpoints {
            table.push(e.iter().copied().collect());
        }
        table
    }
}

fn validate_config(cfg: &EnsembleConfig, times: &[f64]) -> Result<()> {
    if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be non-negative, got {}", cfg.epsilon)));
    }
    if cfg.trajectories < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trajectories, got {}",
            cfg.trajectories
        )));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    let min_spacing = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid times must be strictly increasing".into()));
    }
    if !(cfg.step > 0.0) || cfg.step > min_spacing * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "step {} must be positive and at most the grid spacing {min_spacing}",
            cfg.step
        )));
    }
    if cfg.noise_substeps == 0 {
        return Err(Error::InvalidArgument("noise_substeps must be positive".into()));
    }
    if cfg.workers == Some(0) {
        return Err(Error::InvalidArgument("worker count must be positive".into()));
    }
    Ok(())
}

/// Euler–Maruyama path of one trajectory; writes the state at every grid
/// time into `out` (`times.len() × n`, row-major).
fn simulate_path(
    model: &ModelSpec,
    noise: &DMatrix<f64>,
    x0: &[f64],
    times: &[f64],
    cfg: &EnsembleConfig,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) -> Result<()> {
    let step = cfg.step;
    let substeps = cfg.noise_substeps;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut b = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let deterministic = noise.iter().all(|&v| v == 0.0);
    out[..n].copy_from_slice(&x);
    for k in 1..times.len() {
        let span = times[k] - times[k - 1];
        let steps = ((span / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        let sq = (dt / substeps as f64).sqrt();
        for s in 0..steps {
            model.drift_into(&x, &mut b);
            if !deterministic {
                xi.fill(0.0);
                for _ in 0..substeps {
                    for v in xi.iter_mut() {
                        *v += Distribution::<f64>::sample(&StandardNormal, rng);
                    }
                }
            }
            for i in 0..n {
                let mut dw = 0.0;
                if !deterministic {
                    for j in 0..n {
                        dw += noise[(i, j)] * xi[j];
                    }
                }
                x[i] += b[i] * dt + sq * dw;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    t: times[k - 1] + (s + 1) as f64 * dt,
                });
            }
        }
        out[k * n..(k + 1) * n].copy_from_slice(&x);
    }
    Ok(())
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Simulates `cfg.trajectories` Euler–Maruyama paths from `times[0]` and
/// collects moments at every grid time.
pub fn simulate_ensemble(
    model: &ModelSpec,
    cfg: &EnsembleConfig,
    init: &InitialState,
    times: &[f64],
) -> Result<EnsembleStats> {
    validate_config(cfg, times)?;
    let n = model.dim();
    let m = cfg.trajectories;
    match init {
        InitialState::Point(x) if x.len() != n => {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, model dimension is {n}",
                x.len()
            )))
        }
        InitialState::PerTrajectory(v) if v.len() != m || v.iter().any(|x| x.len() != n) => {
            return Err(Error::DimensionMismatch(format!(
                "need {m} initial states of length {n}"
            )))
        }
        _ => {}
    }
    let noise = psd_sqrt(&(model.diffusion() * (2.0 * cfg.epsilon)), 1e-12)?;
    let nt = times.len();
    let blocks = m.div_ceil(BLOCK_SIZE);

    let run = || -> Result<Vec<Vec<f64>>> {
        (0..blocks)
            .into_par_iter()
            .map(|blk| {
                let lo = blk * BLOCK_SIZE;
                let hi = (lo + BLOCK_SIZE).min(m);
                let mut buf = vec![0.0; (hi - lo) * nt * n];
                for (j, out) in (lo..hi).zip(buf.chunks_mut(nt * n)) {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(j as u64);
                    let x0 = match init {
                        InitialState::Point(x) => x.as_slice(),
                        InitialState::PerTrajectory(v) => v[j].as_slice(),
                    };
                    simulate_path(model, &noise, x0, times, cfg, &mut rng, out)?;
                }
                Ok(buf)
            })
            .collect()
    };
    let paths: Vec<f64> = with_workers(cfg.workers, run)??.concat();
    let sample = |j: usize, k: usize| {
        let o = (j * nt + k) * n;
        DVector::from_column_slice(&paths[o..o + n])
    };

    let base = match init {
        InitialState::Point(x0) => {
            let ctrl = StepControl::default();
            let mut b = Vec::with_capacity(nt);
            b.push(x0.clone());
            for k in 1..nt {
                let next = flow_map(model, b[k - 1].as_slice(), times[k] - times[k - 1], &ctrl)?;
                b.push(next);
            }
            Some(b)
        }
        InitialState::PerTrajectory(_) => None,
    };

    let stats = || -> Result<Vec<(Moments, Option<Moments>)>> {
        (0..nt)
            .into_par_iter()
            .map(|k| {
                let xs: Vec<DVector<f64>> = (0..m).map(|j| sample(j, k)).collect();
                let state = sample_moments(&xs)?;
                let dev = match (&base, cfg.epsilon > 0.0) {
                    (Some(b), true) => {
                        let scale = cfg.epsilon.sqrt();
                        let zs: Vec<DVector<f64>> = xs.iter().map(|x| (x - &b[k]) / scale).collect();
                        Some(sample_moments(&zs)?)
                    }
                    _ => None,
                };
                Ok((state, dev))
            })
            .collect()
    };
    let per_time = with_workers(cfg.workers, stats)??;
    let has_dev = per_time[0].1.is_some();
    let (state, dev): (Vec<Moments>, Vec<Option<Moments>>) = per_time.into_iter().unzip();
    Ok(EnsembleStats {
        seed: cfg.seed,
        trajectories: m,
        epsilon: cfg.epsilon,
        step: cfg.step,
        times: times.to_vec(),
        state,
        base,
        deviation: has_dev.then(|| dev.into_iter().flatten().collect()),
        endpoints: (0..m).map(|j| sample(j, nt - 1)).collect(),
    })
}

// ---------------------------------------------------------------------------
// CLT check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZScore {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub empirical: f64,
    pub predicted: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltCheck {
    pub entries: Vec<ZScore>,
    /// Fraction of entries with `|z| < 3`.
    pub fraction_within: f64,
    /// Entries skipped because both the standard error and the difference
    /// vanish (deterministic initial covariance).
    pub degenerate: usize,
    pub low_power: bool,
}

impl CltCheck {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["t", "i", "j", "empirical", "predicted", "se", "z"]);
        for e in &self.entries {
            t.push(vec![
                e.t,
                (e.i + 1) as f64,
                (e.j + 1) as f64,
                e.empirical,
                e.predicted,
                e.se,
                e.z,
            ]);
        }
        t
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Compares the empirical covariance of `Z_ε` with the tube covariance at
/// every ensemble time.
pub fn clt_check(stats: &EnsembleStats, tube: &GaussianTube) -> Result<CltCheck> {
    let dev = stats.deviation.as_ref().ok_or_else(|| {
        Error::InvalidArgument("ensemble has no rescaled-deviation statistics".into())
    })?;
    if tube.dim() != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "tube dimension {} vs ensemble dimension {}",
            tube.dim(),
            stats.dim()
        )));
    }
    let n = stats.dim();
    let mut entries = Vec::new();
    let mut degenerate = 0;
    for (k, &t) in stats.times.iter().enumerate() {
        let idx = tube.index_of(t)?;
        let sigma = &tube.sigma[idx];
        for i in 0..n {
            for j in i..n {
                let empirical = dev[k].covariance[(i, j)];
                let predicted = sigma[(i, j)];
                let se = dev[k].covariance_se[(i, j)];
                if se == 0.0 && empirical == predicted {
                    degenerate += 1;
                    continue;
                }
                entries.push(ZScore {
                    t,
                    i,
                    j,
                    empirical,
                    predicted,
                    se,
                    z: z_score(empirical - predicted, se),
                });
            }
        }
    }
    let within = entries.iter().filter(|e| e.z.abs() < Z_THRESHOLD).count();
    Ok(CltCheck {
        fraction_within: if entries.is_empty() { 1.0 } else { within as f64 / entries.len() as f64 },
        degenerate,
        low_power: stats.trajectories < LOW_POWER_TRAJECTORIES,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Cycle checks
// ---------------------------------------------------------------------------

/// States on the cycle at phases `jT/M`, `j = 0..M`, for long-run ensembles
/// whose phase distribution starts out stationary.
pub fn uniform_phase_states(analysis: &CycleAnalysis, m: usize) -> Vec<DVector<f64>> {
    let period = analysis.samples.period;
    (0..m)
        .map(|j| analysis.projector.point_at(period * j as f64 / m as f64))
        .collect()
}

/// Endpoint expressed in cycle coordinates.
#[derive(Debug, Clone, PartialEq)]
struct CyclePoint {
    phase: f64,
    /// Transverse coordinates `Q̃ᵀ(x − x*)`.
    transverse: DVector<f64>,
}

fn locate(analysis: &CycleAnalysis, x: &DVector<f64>) -> Result<CyclePoint> {
    let proj = analysis.projector.project(x);
    let radius = 0.1 * analysis.projector.diameter();
    if proj.distance > radius {
        return Err(Error::TooFarFromCycle {
            distance: proj.distance,
            radius,
        });
    }
    let q = analysis.frame_at_point(&proj.point)?;
    let n = q.nrows();
    let qt = q.columns(1, n - 1);
    Ok(CyclePoint {
        phase: proj.phase,
        transverse: qt.transpose() * (x - &proj.point),
    })
}

fn phase_bin(phase: f64, period: f64, bins: usize) -> usize {
    ((phase / period * bins as f64).floor() as usize).min(bins - 1)
}

/// Per-bin comparison of whitened transverse fluctuations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransverseBin {
    pub phase_lo: f64,
    pub phase_hi: f64,
    pub count: usize,
    /// Mean of the predicted transverse covariance `εΣ̃` over the bin's samples
    /// (first diagonal entry).
    pub predicted_variance: f64,
    /// Empirical variance of the first transverse coordinate.
    pub empirical_variance: f64,
    /// Largest `|z|` over the entries of the whitened covariance against `I`.
    pub max_abs_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransverseCheck {
    pub bins: Vec<TransverseBin>,
    pub fraction_passing: f64,
}

impl TransverseCheck {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new([
            "phase_lo",
            "phase_hi",
            "count",
            "predicted_variance",
            "empirical_variance",
            "max_abs_z",
            "pass",
        ]);
        for b in &self.bins {
            t.push(vec![
                b.phase_lo,
                b.phase_hi,
                b.count as f64,
                b.predicted_variance,
                b.empirical_variance,
                b.max_abs_z,
                if b.pass { 1.0 } else { 0.0 },
            ]);
        }
        t
    }
}

/// Bins the ensemble endpoints by cycle phase and compares their transverse
/// covariance with `εΣ̃(phase) = εK̃(phase)⁻¹`.
///
/// Each sample `y` is whitened by the Cholesky factor of `εΣ̃` at its own
/// phase, so within a bin the whitened samples should have identity
/// covariance; every entry is judged by its z-score against that identity.
/// Phase bin, whitened transverse coordinates, predicted variance and raw
/// value of the first transverse coordinate, for one ensemble endpoint.
type Located = (usize, DVector<f64>, f64, f64);

pub fn transverse_fluctuation_check(
    stats: &EnsembleStats,
    analysis: &CycleAnalysis,
    bins: usize,
) -> Result<TransverseCheck> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if !(stats.epsilon > 0.0) {
        return Err(Error::InvalidArgument("transverse check needs ε > 0".into()));
    }
    let period = analysis.samples.period;
    let eps = stats.epsilon;
    let located: Vec<Result<Located>> = stats
        .endpoints
        .par_iter()
        .map(|x| {
            let cp = locate(analysis, x)?;
            let sigma = analysis.sigma_reduced_at(cp.phase) * eps;
            let chol = sigma
                .clone()
                .cholesky()
                .ok_or(Error::LostPositivity(phase_bin(cp.phase, period, bins)))?;
            let w = chol.l().solve_lower_triangular(&cp.transverse).ok_or_else(|| {
                Error::FactorizationFailure("singular transverse covariance".into())
            })?;
            Ok((phase_bin(cp.phase, period, bins), w, sigma[(0, 0)], cp.transverse[0]))
        })
        .collect();
    let mut per_bin: Vec<Vec<(DVector<f64>, f64, f64)>> = vec![Vec::new(); bins];
    for r in located {
        let (b, w, pv, y0) = r?;
        per_bin[b].push((w, pv, y0));
    }
    let mut out = Vec::with_capacity(bins);
    for (b, samples) in per_bin.iter().enumerate() {
        if samples.len() < MIN_SAMPLES_PER_BIN {
            return Err(Error::InsufficientSamplesPerBin {
                bin: b,
                count: samples.len(),
                required: MIN_SAMPLES_PER_BIN,
            });
        }
        let ws: Vec<DVector<f64>> = samples.iter().map(|s| s.0.clone()).collect();
        let mom = sample_moments(&ws)?;
        let k = mom.covariance.nrows();
        let mut max_abs_z: f64 = 0.0;
        for i in 0..k {
            for j in i..k {
                let target = if i == j { 1.0 } else { 0.0 };
                let z = z_score(mom.covariance[(i, j)] - target, mom.covariance_se[(i, j)]);
                max_abs_z = max_abs_z.max(z.abs());
            }
        }
        let cnt = samples.len() as f64;
        let predicted_variance = samples.iter().map(|s| s.1).sum::<f64>() / cnt;
        let y_mean = samples.iter().map(|s| s.2).sum::<f64>() / cnt;
        let empirical_variance =
            samples.iter().map(|s| (s.2 - y_mean).powi(2)).sum::<f64>() / (cnt - 1.0);
        out.push(TransverseBin {
            phase_lo: period * b as f64 / bins as f64,
            phase_hi: period * (b + 1) as f64 / bins as f64,
            count: samples.len(),
            predicted_variance,
            empirical_variance,
            max_abs_z,
            pass: max_abs_z < Z_THRESHOLD,
        });
    }
    let passing = out.iter().filter(|b| b.pass).count();
    Ok(TransverseCheck {
        fraction_passing: passing as f64 / bins as f64,
        bins: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCheck {
    /// Arclength bin edges, `bins + 1` entries from 0 to the cycle length.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Empirical density per unit arclength.
    pub empirical: Vec<f64>,
    /// Predicted probability of each bin divided by its width.
    pub predicted: Vec<f64>,
    /// Kolmogorov distance between the empirical arclength distribution and
    /// the predicted cumulative distribution.
    pub ks_distance: f64,
}

impl MarginalCheck {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["s_lo", "s_hi", "count", "empirical", "predicted"]);
        for b in 0..self.counts.len() {
            t.push(vec![
                self.edges[b],
                self.edges[b + 1],
                self.counts[b] as f64,
                self.empirical[b],
                self.predicted[b],
            ]);
        }
        t
    }
}

/// Minimum number of histogram bins for the marginal comparison.
pub const MIN_MARGINAL_BINS: usize = 16;

/// Arclength histogram of the endpoints' cycle phases and its Kolmogorov
/// distance to the predicted marginal density.
pub fn empirical_cycle_marginal(
    stats: &EnsembleStats,
    analysis: &CycleAnalysis,
    bins: usize,
) -> Result<MarginalCheck> {
    if bins < MIN_MARGINAL_BINS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MARGINAL_BINS} bins, got {bins}"
        )));
    }
    let marginal = analysis.marginal();
    let h = analysis.samples.step();
    let nsamp = analysis.samples.len();
    let length = marginal.length;
    let arclength_at = |phase: f64| {
        let p = phase / h;
        let j = (p.floor() as usize).min(nsamp - 1);
        let s0 = marginal.arclength[j];
        let s1 = if j + 1 < nsamp { marginal.arclength[j + 1] } else { length };
        s0 + (s1 - s0) * (p - j as f64)
    };
    let phases: Vec<Result<f64>> = stats
        .endpoints
        .par_iter()
        .map(|x| locate(analysis, x).map(|c| c.phase))
        .collect();
    let mut s: Vec<f64> = phases
        .into_iter()
        .map(|p| p.map(arclength_at))
        .collect::<Result<_>>()?;
    s.sort_by(f64::total_cmp);

    let m = s.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &si) in s.iter().enumerate() {
        let f = marginal.cdf_at(si.clamp(0.0, length));
        ks = ks.max((f - i as f64 / m).abs()).max(((i + 1) as f64 / m - f).abs());
    }

    let width = length / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| b as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &si in &s {
        counts[((si / width).floor() as usize).min(bins - 1)] += 1;
    }
    for (b, &c) in counts.iter().enumerate() {
        if c < MIN_SAMPLES_PER_BIN {
            return Err(Error::InsufficientSamplesPerBin {
                bin: b,
                count: c,
                required: MIN_SAMPLES_PER_BIN,
            });
        }
    }
    let empirical = counts.iter().map(|&c| c as f64 / (m * width)).collect();
    let predicted = (0..bins)
        .map(|b| (marginal.cdf_at(edges[b + 1].min(length)) - marginal.cdf_at(edges[b])) / width)
        .collect();
    Ok(MarginalCheck {
        edges,
        counts,
        empirical,
        predicted,
        ks_distance: ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::integrate_flow;
    use crate::model::{builtin_model, linear_params};

    fn ou() -> ModelSpec {
        builtin_model("linear", &linear_params(&DMatrix::from_element(1, 1, -1.0))).unwrap()
    }

    fn cfg(eps: f64, m: usize, step: f64, seed: u64) -> EnsembleConfig {
        EnsembleConfig::new(eps, m, step, seed)
    }

    #[test]
    fn moments_of_known_samples() {
        let xs: Vec<DVector<f64>> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&v| DVector::from_vec(vec![v, 2.0 * v]))
            .collect();
        let m = sample_moments(&xs).unwrap();
        assert_eq!(m.mean[0], 2.5);
        assert!((m.covariance[(0, 0)] - 5.0 / 3.0).abs() < 1e-15);
        assert!((m.covariance[(0, 1)] - 10.0 / 3.0).abs() < 1e-15);
        assert!((m.mean_se[0] - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        // ⟨d⁴⟩ = (2·1.5⁴ + 2·0.5⁴)/4, ⟨d²⟩ = 1.25.
        let m4 = (2.0 * 1.5f64.powi(4) + 2.0 * 0.5f64.powi(4)) / 4.0;
        let se = ((m4 - 1.25 * 1.25) / 4.0).sqrt();
        assert!((m.covariance_se[(0, 0)] - se).abs() < 1e-15);
        assert!(sample_moments(&xs[..1]).is_err());
    }

    #[test]
    fn ou_stationary_variance() {
        let eps = 0.01;
        let times = [0.0, 5.0];
        let st = simulate_ensemble(&ou(), &cfg(eps, 10_000, 0.01, 7), &InitialState::Point(DVector::zeros(1)), &times)
            .unwrap();
        let last = &st.state[1];
        let exact = eps * (1.0 - (-10.0f64).exp());
        let z = (last.covariance[(0, 0)] - exact) / last.covariance_se[(0, 0)];
        assert!(z.abs() < 3.0, "z = {z}");
        let zdev = &st.deviation.as_ref().unwrap()[1];
        assert!((zdev.covariance[(0, 0)] - last.covariance[(0, 0)] / eps).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_reproduce_and_workers_do_not_matter() {
        let times = [0.0, 0.5, 1.0];
        let init = InitialState::Point(DVector::from_vec(vec![0.3]));
        let mut c = cfg(0.05, 300, 0.01, 11);
        let a = simulate_ensemble(&ou(), &c, &init, &times).unwrap();
        let b = simulate_ensemble(&ou(), &c, &init, &times).unwrap();
        assert_eq!(a, b);
        c.workers = Some(1);
        let one = simulate_ensemble(&ou(), &c, &init, &times).unwrap();
        c.workers = Some(5);
        let five = simulate_ensemble(&ou(), &c, &init, &times).unwrap();
        assert_eq!(a, one);
        assert_eq!(a, five);
        c.seed = 12;
        assert_ne!(simulate_ensemble(&ou(), &c, &init, &times).unwrap(), a);
    }

    #[test]
    fn zero_noise_follows_the_flow() {
        let m = builtin_model("vdp", &crate::model::params(&[("mu", 1.0)])).unwrap();
        let x0 = DVector::from_vec(vec![2.0, 0.0]);
        let h = 1e-3;
        let st = simulate_ensemble(&m, &cfg(0.0, 2, h, 1), &InitialState::Point(x0.clone()), &[0.0, 1.0]).unwrap();
        let exact = integrate_flow(&m, x0.as_slice(), 0.0, 1.0, &StepControl::default()).unwrap();
        let err = (&st.endpoints[0] - exact.last()).norm();
        assert!(err < 10.0 * h, "{err}");
        assert!(err > 0.0);
        assert!(st.deviation.is_none());
        assert_eq!(st.endpoints[0], st.endpoints[1]);
    }

    #[test]
    fn substeps_reproduce_the_fine_brownian_path() {
        // For a pure Brownian motion the endpoint is the sum of the
        // increments, so the coupled coarse run must agree to rounding.
        let bm = builtin_model("linear", &linear_params(&DMatrix::zeros(1, 1))).unwrap();
        let init = InitialState::Point(DVector::zeros(1));
        let fine = simulate_ensemble(&bm, &cfg(0.5, 4, 0.01, 3), &init, &[0.0, 1.0]).unwrap();
        let mut c = cfg(0.5, 4, 0.02, 3);
        c.noise_substeps = 2;
        let coarse = simulate_ensemble(&bm, &c, &init, &[0.0, 1.0]).unwrap();
        for (a, b) in fine.endpoints.iter().zip(&coarse.endpoints) {
            assert!((a - b).norm() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn invalid_configurations() {
        let init = InitialState::Point(DVector::zeros(1));
        assert!(simulate_ensemble(&ou(), &cfg(0.1, 1, 0.01, 0), &init, &[0.0, 1.0]).is_err());
        assert!(simulate_ensemble(&ou(), &cfg(0.1, 10, 0.5, 0), &init, &[0.0, 0.1]).is_err());
        let blow = builtin_model("cubic1d", &crate::model::params(&[("c", 1.0)])).unwrap();
        let r = simulate_ensemble(
            &blow,
            &cfg(0.0, 2, 0.1, 0),
            &InitialState::Point(DVector::from_vec(vec![10.0])),
            &[0.0, 100.0],
        );
        assert!(matches!(r, Err(Error::NonFiniteState { .. })), "{r:?}");
    }

    #[test]
    fn low_power_is_flagged() {
        let model = ou();
        let times = crate::clt::uniform_grid(1.0, 4);
        let tube = crate::clt::propagate_gaussian(
            &model,
            &[0.0],
            &[0.0],
            &DMatrix::zeros(1, 1),
            &times,
            &StepControl::default(),
        )
        .unwrap();
        let st = simulate_ensemble(&model, &cfg(0.01, 2, 0.01, 3), &InitialState::Point(DVector::zeros(1)), &times).unwrap();
        let chk = clt_check(&st, &tube).unwrap();
        assert!(chk.low_power);
        let off = simulate_ensemble(&model, &cfg(0.01, 2, 0.01, 3), &InitialState::Point(DVector::zeros(1)), &[0.0, 0.3]).unwrap();
        assert!(matches!(clt_check(&off, &tube), Err(Error::GridMismatch(_))));
    }
}
