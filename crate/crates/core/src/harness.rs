//! Reproducible ensembles and the comparisons built on them.
//!
//! Trajectory `i` of epsilon index `e` draws from its own ChaCha stream
//! keyed by `(seed, e, i)`, and per-trajectory results are merged in index
//! order, so every statistic is independent of the worker count.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::generator::{MartingaleCheck, TestFunctional, MIN_TRAJECTORIES};
use crate::grid::{Grid, GridFunction, Spectral};
use crate::kinetic::{KineticField, OutputPlan, SolverConfig};
use crate::noise::NoiseModel;
use crate::stats::{RunningStats, VectorStats};

/// Stream tag of the limit-equation ensemble; kinetic ensembles use `1 + e`.
pub const LIMIT_STREAM: u64 = 0;
const GENERATOR_STREAM: u64 = 0xF000;
const MARTINGALE_STREAM: u64 = 0xF100;
const NOISE_STREAM: u64 = 0xF200;
/// Largest tolerated fraction of failed trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

pub fn trajectory_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 40) | index);
    rng
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `count` independent jobs and returns their results in index order.
pub fn run_indexed<T: Send>(workers: usize, count: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<Result<T>>> {
    let pool = pool(workers)?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&job).collect()))
}

/// Statistics at one output time.
#[derive(Clone, Debug)]
pub struct TimeStats {
    pub time: f64,
    /// One entry per configured functional, `phi(rho(t))`.
    pub functionals: Vec<RunningStats>,
    pub density: VectorStats,
    /// `||f||^2` and `||f||^4` (kinetic ensembles only).
    pub norm2: RunningStats,
    pub norm4: RunningStats,
}

impl TimeStats {
    fn new(time: f64, functionals: usize) -> Self {
        Self {
            time,
            functionals: vec![RunningStats::default(); functionals],
            density: VectorStats::default(),
            norm2: RunningStats::default(),
            norm4: RunningStats::default(),
        }
    }

    pub fn mean_density(&self, grid: Grid) -> GridFunction {
        GridFunction::from_values(grid, self.density.mean()).expect("density length matches grid")
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    /// `None` for the limit equation.
    pub epsilon: Option<f64>,
    pub times: Vec<TimeStats>,
    pub completed: usize,
    pub failed: usize,
    pub gronwall_violations: usize,
    pub jumps: u64,
}

impl EnsembleSummary {
    pub fn at_final(&self) -> &TimeStats {
        self.times.last().expect("final time is always recorded")
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub grid: Grid,
    pub labels: Vec<String>,
    pub kinetic: Vec<EnsembleSummary>,
    pub limit: Option<EnsembleSummary>,
}

struct Sample {
    per_time: Vec<(Vec<f64>, GridFunction, Option<f64>)>,
    gronwall: usize,
    jumps: u64,
}

fn summarize(epsilon: Option<f64>, times: &[f64], nfun: usize, results: Vec<Result<Sample>>) -> Result<EnsembleSummary> {
    let total = results.len();
    let mut out = EnsembleSummary {
        epsilon,
        times: times.iter().map(|&t| TimeStats::new(t, nfun)).collect(),
        completed: 0,
        failed: 0,
        gronwall_violations: 0,
        jumps: 0,
    };
    for r in results {
        match r {
            Ok(sample) => {
                out.completed += 1;
                out.gronwall_violations += sample.gronwall;
                out.jumps += sample.jumps;
                for (stats, (values, density, norm)) in out.times.iter_mut().zip(&sample.per_time) {
                    for (s, &v) in stats.functionals.iter_mut().zip(values) {
                        s.push(v);
                    }
                    stats.density.push(density.values());
                    if let Some(n) = norm {
                        stats.norm2.push(n * n);
                        stats.norm4.push(n.powi(4));
                    }
                }
            }
            Err(_) => out.failed += 1,
        }
    }
    if out.failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: out.failed, total });
    }
    Ok(out)
}

fn evaluate(functionals: &[TestFunctional], rho: &GridFunction) -> Vec<f64> {
    functionals.iter().map(|f| f.value(rho)).collect()
}

/// Times at which ensembles are summarized: 0 and the configured outputs.
pub fn summary_times(exp: &Experiment) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend(exp.config.times());
    t
}

/// Kinetic ensemble at epsilon index `e` of the config.
pub fn run_kinetic(exp: &Experiment, e: usize, count: usize, workers: usize) -> Result<EnsembleSummary> {
    let cfg = &exp.config;
    let eps = cfg.epsilons[e];
    let times = summary_times(exp);
    let solver_cfg = SolverConfig { epsilon: eps, dt_factor: cfg.dt_factor, final_time: cfg.final_time };
    let plan = OutputPlan::at(cfg.times());
    let results = run_indexed(workers, count, |i| {
        let mut rng = trajectory_rng(cfg.seed, 1 + e as u64, i as u64);
        let traj = exp.kinetic.solve_trajectory(&exp.f0, &solver_cfg, &plan, &mut rng)?;
        let per_time = traj
            .at_times(&times)
            .map(|s| (evaluate(&exp.functionals, &s.density), s.density.clone(), Some(s.norm)))
            .collect::<Vec<_>>();
        if per_time.len() != times.len() {
            return Err(Error::Config("solver skipped an output time".into()));
        }
        Ok(Sample { per_time, gronwall: traj.gronwall_violations, jumps: traj.jumps as u64 })
    })?;
    summarize(Some(eps), &times, exp.functionals.len(), results)
}

/// Limit-equation ensemble.
pub fn run_limit(exp: &Experiment, count: usize, workers: usize) -> Result<EnsembleSummary> {
    let cfg = &exp.config;
    let times = summary_times(exp);
    let results = run_indexed(workers, count, |i| {
        let mut rng = trajectory_rng(cfg.seed, LIMIT_STREAM, i as u64);
        let path = exp.spde.solve(&exp.rho0, cfg.final_time, cfg.spde_steps, &cfg.times(), &mut rng)?;
        let mut per_time = Vec::with_capacity(times.len());
        for &t in &times {
            let k = path
                .times
                .iter()
                .position(|&s| (s - t).abs() <= 0.5 * cfg.final_time / cfg.spde_steps as f64)
                .ok_or_else(|| Error::Config(format!("output time {t} is not on the SPDE step grid")))?;
            let rho = &path.densities[k];
            if !rho.is_finite() {
                return Err(Error::Overflow { time: t, norm: f64::INFINITY });
            }
            per_time.push((evaluate(&exp.functionals, rho), rho.clone(), None));
        }
        Ok(Sample { per_time, gronwall: 0, jumps: 0 })
    })?;
    summarize(None, &times, exp.functionals.len(), results)
}

/// All kinetic ensembles of the config plus one limit ensemble.
pub fn run_ensemble(exp: &Experiment, workers: usize) -> Result<EnsembleStats> {
    let kinetic = (0..exp.config.epsilons.len())
        .map(|e| run_kinetic(exp, e, exp.config.ensemble, workers))
        .collect::<Result<Vec<_>>>()?;
    let limit = run_limit(exp, exp.config.spde_ensemble(), workers)?;
    Ok(EnsembleStats {
        grid: exp.grid,
        labels: exp.functionals.iter().map(|f| f.label.clone()).collect(),
        kinetic,
        limit: Some(limit),
    })
}

/// `sqrt(sum_xi (1 + (2 pi |xi|)^2)^-eta |a^(xi) - b^(xi)|^2)`, normalized so
/// that `eta = 0` gives the grid `L^2` distance.
pub fn sobolev_distance(a: &GridFunction, b: &GridFunction, eta: f64) -> Result<f64> {
    a.grid().check_same(&b.grid())?;
    if !(eta >= 0.0) {
        return Err(Error::Config(format!("Sobolev order must be nonnegative, got {eta}")));
    }
    let grid = a.grid();
    let diff = a.zip_map(b, |x, y| x - y);
    let spec = Spectral::new(grid).forward(diff.values());
    let len = grid.len() as f64;
    let sum: f64 = spec
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = grid.frequency(i);
            let xi2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            (1.0 + 4.0 * std::f64::consts::PI.powi(2) * xi2).powf(-eta) * c.norm_sqr()
        })
        .sum();
    Ok((sum / (len * len)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Consistent,
    Inconclusive,
    Inconsistent,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "consistent with convergence",
            Verdict::Inconclusive => "inconclusive, increase ensemble",
            Verdict::Inconsistent => "inconsistent with convergence",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakErrorRow {
    pub functional: String,
    pub epsilon: f64,
    pub kinetic_mean: f64,
    pub kinetic_stderr: f64,
    pub limit_mean: f64,
    pub limit_stderr: f64,
    pub error: f64,
    /// `3 sqrt(se_kinetic^2 + se_limit^2)`.
    pub ci: f64,
    /// Error at the previous (larger) epsilon over this one; NaN on the first row.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceRow {
    pub epsilon: f64,
    pub distance: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakErrorTable {
    pub rows: Vec<WeakErrorRow>,
    pub verdicts: Vec<(String, Verdict)>,
    pub distances: Vec<DistanceRow>,
    pub distances_decrease: bool,
    pub verdict: Verdict,
}

/// Verdict for one error sequence ordered by decreasing epsilon.
pub fn convergence_verdict(errors: &[f64], cis: &[f64]) -> Verdict {
    let n = errors.len();
    if n < 2 {
        return Verdict::Inconclusive;
    }
    let rises = (1..n).any(|i| errors[i] - errors[i - 1] > cis[i] + cis[i - 1]);
    if rises {
        return Verdict::Inconsistent;
    }
    if errors[0] - errors[n - 1] > cis[0] + cis[n - 1] {
        Verdict::Consistent
    } else {
        Verdict::Inconclusive
    }
}

/// Weak errors at the final time against the limit ensemble.
pub fn weak_error_table(stats: &EnsembleStats, eta: f64) -> Result<WeakErrorTable> {
    if stats.kinetic.len() < 2 {
        return Err(Error::Config("weak error table needs at least two epsilons".into()));
    }
    let limit = stats.limit.as_ref().ok_or_else(|| Error::Config("no limit ensemble".into()))?;
    let lim = limit.at_final();
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for (j, label) in stats.labels.iter().enumerate() {
        let (mut errors, mut cis) = (Vec::new(), Vec::new());
        for k in &stats.kinetic {
            let kin = &k.at_final().functionals[j];
            let l = &lim.functionals[j];
            let error = (kin.mean() - l.mean()).abs();
            let ci = 3.0 * (kin.stderr().powi(2) + l.stderr().powi(2)).sqrt();
            let ratio = errors.last().map_or(f64::NAN, |p: &f64| p / error);
            rows.push(WeakErrorRow {
                functional: label.clone(),
                epsilon: k.epsilon.unwrap_or(f64::NAN),
                kinetic_mean: kin.mean(),
                kinetic_stderr: kin.stderr(),
                limit_mean: l.mean(),
                limit_stderr: l.stderr(),
                error,
                ci,
                ratio,
            });
            errors.push(error);
            cis.push(ci);
        }
        verdicts.push((label.clone(), convergence_verdict(&errors, &cis)));
    }
    let lim_mean = lim.mean_density(stats.grid);
    let mut distances: Vec<DistanceRow> = Vec::new();
    for k in &stats.kinetic {
        let d = sobolev_distance(&k.at_final().mean_density(stats.grid), &lim_mean, eta)?;
        let ratio = distances.last().map_or(f64::NAN, |p| p.distance / d);
        distances.push(DistanceRow { epsilon: k.epsilon.unwrap_or(f64::NAN), distance: d, ratio });
    }
    let distances_decrease = distances.windows(2).all(|w| w[1].distance < w[0].distance);
    let verdict = if verdicts.iter().any(|(_, v)| *v == Verdict::Inconsistent) {
        Verdict::Inconsistent
    } else if verdicts.iter().all(|(_, v)| *v == Verdict::Consistent) && distances_decrease {
        Verdict::Consistent
    } else {
        Verdict::Inconclusive
    };
    Ok(WeakErrorTable { rows, verdicts, distances, distances_decrease, verdict })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentSup {
    pub value: f64,
    pub epsilon: f64,
    pub time: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    /// `sup E||f||^2` and `sup E||f||^4` over epsilons and times.
    pub second: MomentSup,
    pub fourth: MomentSup,
    /// `(epsilon, sup_t E||f||^2, sup_t E||f||^4)`.
    pub per_epsilon: Vec<(f64, f64, f64)>,
    /// Whether the per-epsilon suprema do not grow as epsilon decreases.
    pub nonincreasing: bool,
}

/// Checks `sup E||f||^2 <= threshold ||f_0||^2` and
/// `sup E||f||^4 <= threshold^2 ||f_0||^4`.
pub fn uniform_moment_check(kinetic: &[EnsembleSummary], norm0_sq: f64, threshold: f64) -> Result<MomentReport> {
    let mut second = MomentSup { value: f64::NEG_INFINITY, epsilon: f64::NAN, time: f64::NAN };
    let mut fourth = second;
    let mut per_epsilon = Vec::new();
    for k in kinetic {
        let eps = k.epsilon.unwrap_or(f64::NAN);
        let (mut s2, mut s4) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for t in &k.times {
            if t.norm2.count() == 0 {
                continue;
            }
            let (m2, m4) = (t.norm2.mean(), t.norm4.mean());
            s2 = s2.max(m2);
            s4 = s4.max(m4);
            if m2 > second.value {
                second = MomentSup { value: m2, epsilon: eps, time: t.time };
            }
            if m4 > fourth.value {
                fourth = MomentSup { value: m4, epsilon: eps, time: t.time };
            }
        }
        per_epsilon.push((eps, s2, s4));
    }
    if second.value > threshold * norm0_sq {
        return Err(Error::MomentBound {
            epsilon: second.epsilon,
            time: second.time,
            value: second.value,
            threshold: threshold * norm0_sq,
        });
    }
    if fourth.value > threshold * threshold * norm0_sq * norm0_sq {
        return Err(Error::MomentBound {
            epsilon: fourth.epsilon,
            time: fourth.time,
            value: fourth.value,
            threshold: threshold * threshold * norm0_sq * norm0_sq,
        });
    }
    let nonincreasing = per_epsilon.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(MomentReport { second, fourth, per_epsilon, nonincreasing })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseStatRow {
    pub mode: usize,
    pub c_analytic: f64,
    pub c_empirical: f64,
    pub stderr: f64,
}

/// Empirical `c_j` from `samples` stationary paths of microscopic length
/// `length`: the mean of `(int_0^L s_j(n_t) dt)^2 / L`.
pub fn noise_statistics(noise: &NoiseModel, samples: usize, length: f64, seed: u64, workers: usize) -> Result<Vec<NoiseStatRow>> {
    let integrals = run_indexed(workers, samples, |i| {
        let mut rng = trajectory_rng(seed, NOISE_STREAM, i as u64);
        let path = noise.simulate_path(length, &mut rng);
        Ok(path
            .chains
            .iter()
            .zip(noise.chains())
            .map(|(p, c)| {
                let x = p.integrate(c.states(), length);
                x * x / length
            })
            .collect::<Vec<f64>>())
    })?;
    let mut stats = VectorStats::new(noise.mode_count());
    for r in integrals {
        stats.push(&r?);
    }
    Ok(stats
        .components()
        .iter()
        .enumerate()
        .map(|(j, s)| NoiseStatRow {
            mode: j,
            c_analytic: noise.autocovariances()[j],
            c_empirical: s.mean(),
            stderr: s.stderr(),
        })
        .collect())
}

/// Kinetic state with random Fourier content up to wavenumber 3 in each
/// direction, and uniformly drawn chain states.
pub fn random_smooth_state<R: Rng + ?Sized>(
    grid: Grid,
    velocities: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> (KineticField, Vec<usize>) {
    let kmax: i64 = 3;
    let ky_range = if grid.dim() == 2 { -kmax..=kmax } else { 0..=0 };
    let mut waves = Vec::new();
    for v in 0..velocities {
        for kx in 0..=kmax {
            for ky in ky_range.clone() {
                if kx == 0 && ky < 0 {
                    continue;
                }
                let scale = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
                waves.push((v, [kx as f64, ky as f64], scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)));
            }
        }
    }
    let field = KineticField::from_fn(grid, velocities, |x, v| {
        let p = grid.point(x);
        1.0 + waves
            .iter()
            .filter(|w| w.0 == v)
            .map(|&(_, k, a, b)| {
                let phase = 2.0 * std::f64::consts::PI * (k[0] * p[0] + k[1] * p[1]);
                a * phase.cos() + b * phase.sin()
            })
            .sum::<f64>()
    });
    let state = noise.chains().iter().map(|c| rng.random_range(0..c.len())).collect();
    (field, state)
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneratorRow {
    pub epsilon: f64,
    pub functional_id: String,
    pub residual_mean: f64,
    pub residual_stderr: f64,
    /// Median over states of the residual at the previous epsilon over this one.
    pub scaling_ratio: f64,
}

/// Normalized residuals `|L^eps phi^eps - L phi| / (1 + ||f||^2)` over
/// `states` random smooth states, for every configured epsilon and functional.
pub fn diagnose_generator(exp: &Experiment, states: usize, workers: usize) -> Result<Vec<GeneratorRow>> {
    let system = exp.corrector_system()?;
    let eps = &exp.config.epsilons;
    let per_state = run_indexed(workers, states, |i| {
        let mut rng = trajectory_rng(exp.config.seed, GENERATOR_STREAM, i as u64);
        let (f, n) = random_smooth_state(exp.grid, exp.model.len(), &exp.noise, &mut rng);
        let scale = 1.0 + f.inner(&f, &exp.model);
        let rho = exp.model.average(&f)?;
        let mut out = Vec::with_capacity(exp.functionals.len());
        for phi in &exp.functionals {
            let limit = system.generator_limit(phi, &rho)?;
            let r = eps
                .iter()
                .map(|&e| Ok((system.generator_eps(phi, &f, &n, e)? - limit).abs() / scale))
                .collect::<Result<Vec<f64>>>()?;
            out.push(r);
        }
        Ok(out)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (j, phi) in exp.functionals.iter().enumerate() {
        for (e, &epsilon) in eps.iter().enumerate() {
            let stats = RunningStats::from_slice(&per_state.iter().map(|s| s[j][e]).collect::<Vec<_>>());
            let scaling_ratio = if e == 0 {
                f64::NAN
            } else {
                median(per_state.iter().map(|s| s[j][e - 1] / s[j][e]).collect())
            };
            rows.push(GeneratorRow {
                epsilon,
                functional_id: phi.label.clone(),
                residual_mean: stats.mean(),
                residual_stderr: stats.stderr(),
                scaling_ratio,
            });
        }
    }
    Ok(rows)
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.retain(|v| !v.is_nan());
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

#[derive(Clone, Debug)]
pub struct MartingaleReport {
    pub epsilon: f64,
    /// One entry per functional.
    pub checks: Vec<(String, Vec<MartingaleCheck>)>,
    pub gronwall_violations: usize,
    pub failed: usize,
}

/// Martingale residuals of every functional at `checkpoints`, from `count`
/// kinetic trajectories at `epsilon` recorded at every step and jump.
pub fn martingale_check(
    exp: &Experiment,
    epsilon: f64,
    count: usize,
    checkpoints: &[f64],
    workers: usize,
) -> Result<MartingaleReport> {
    if count < MIN_TRAJECTORIES {
        return Err(Error::InsufficientEnsemble { found: count, needed: MIN_TRAJECTORIES });
    }
    let system = exp.corrector_system()?;
    let horizon = checkpoints.iter().copied().fold(0.0, f64::max);
    let solver_cfg = SolverConfig { epsilon, dt_factor: exp.config.dt_factor, final_time: horizon };
    let plan = OutputPlan { times: checkpoints.to_vec(), every_step: true, keep_fields: true, at_jumps: true };
    let results = run_indexed(workers, count, |i| {
        let mut rng = trajectory_rng(exp.config.seed, MARTINGALE_STREAM, i as u64);
        let traj = exp.kinetic.solve_trajectory(&exp.f0, &solver_cfg, &plan, &mut rng)?;
        let samples = exp
            .functionals
            .iter()
            .map(|phi| system.martingale_values(phi, &traj, checkpoints))
            .collect::<Result<Vec<_>>>()?;
        Ok((samples, traj.gronwall_violations))
    })?;
    let total = results.len();
    let mut per_functional: Vec<Vec<_>> = vec![Vec::new(); exp.functionals.len()];
    let (mut failed, mut gronwall_violations) = (0, 0);
    for r in results {
        match r {
            Ok((samples, g)) => {
                gronwall_violations += g;
                for (acc, s) in per_functional.iter_mut().zip(samples) {
                    acc.push(s);
                }
            }
            Err(_) => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let checks = exp
        .functionals
        .iter()
        .zip(&per_functional)
        .map(|(phi, samples)| (phi.label.clone(), MartingaleCheck::summarize(checkpoints, samples)))
        .collect();
    Ok(MartingaleReport { epsilon, checks, gronwall_violations, failed })
}
