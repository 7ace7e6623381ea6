//! Command-line front end.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::generator::MIN_TRAJECTORIES;
use crate::harness::{self, Verdict};
use crate::output::{cell, functional_table, moment_table, FailureCount, RunManifest, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;
const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "diffusion-limit", version, about = "Kinetic equations with Markov noise and their stochastic diffusion limit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print K, the autocovariances c_j and the trace F.
    Coeffs,
    /// Compare analytic and empirical autocovariances.
    NoiseStats {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Microscopic path length.
        #[arg(long, default_value_t = 50.0)]
        length: f64,
    },
    /// Kinetic ensembles for every configured epsilon.
    SimulateKinetic,
    /// Limit-equation ensemble.
    SimulateSpde,
    /// Epsilon sweep, weak-error table and moment check.
    Converge,
    /// Scaling of the generator residual over random smooth states.
    DiagnoseGenerator {
        #[arg(long, default_value_t = 200)]
        states: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Coeffs => "coeffs",
            Command::NoiseStats { .. } => "noise-stats",
            Command::SimulateKinetic => "simulate-kinetic",
            Command::SimulateSpde => "simulate-spde",
            Command::Converge => "converge",
            Command::DiagnoseGenerator { .. } => "diagnose-generator",
        }
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub out_dir: PathBuf,
}

/// Parses arguments, runs, and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let exp = match prepare(&cli.common) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run(&cli, &exp) {
        Ok(o) if o.passed => EXIT_OK,
        Ok(o) => {
            eprintln!("check failed; see {}", o.out_dir.display());
            EXIT_CHECK
        }
        Err(e @ (Error::MomentBound { .. } | Error::TooManyFailures { .. })) => {
            eprintln!("check failed: {e}");
            EXIT_CHECK
        }
        Err(e @ (Error::Config(_) | Error::InsufficientEnsemble { .. })) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn prepare(common: &CommonArgs) -> Result<Experiment> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if common.workers == Some(0) {
        return Err(Error::Config("--workers must be positive".into()));
    }
    cfg.build()
}

fn workers(common: &CommonArgs) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run(cli: &Cli, exp: &Experiment) -> Result<Outcome> {
    let cfg = &exp.config;
    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;
    let workers = workers(&cli.common);
    let mut manifest = RunManifest::new(cli.command.name(), cfg, workers);
    let write = |name: &str, table: &Table, manifest: &mut RunManifest| -> Result<()> {
        table.write(&out_dir.join(name))?;
        manifest.outputs.push(name.to_string());
        Ok(())
    };

    let passed = match &cli.command {
        Command::Coeffs => {
            let k = exp.model.diffusion_matrix()?;
            let mut coeffs = Table::new(&["quantity", "index", "value"]);
            for p in 0..k.dim() {
                for q in 0..k.dim() {
                    coeffs.push(vec!["K".into(), format!("{p}{q}"), cell(k.get(p, q))]);
                }
            }
            for (j, c) in exp.noise.autocovariances().iter().enumerate() {
                coeffs.push(vec!["c".into(), j.to_string(), cell(*c)]);
            }
            coeffs.push(vec!["C_star".into(), String::new(), cell(exp.noise.bound())]);
            let mut trace = Table::new(&["x0", "x1", "F"]);
            for (i, f) in exp.noise.trace().values().iter().enumerate() {
                let x = exp.grid.point(i);
                trace.push(vec![cell(x[0]), cell(x[1]), cell(*f)]);
            }
            print!("{}", coeffs.to_csv());
            write("coefficients.csv", &coeffs, &mut manifest)?;
            write("trace.csv", &trace, &mut manifest)?;
            true
        }
        Command::NoiseStats { samples, length } => {
            let rows = harness::noise_statistics(&exp.noise, *samples, *length, cfg.seed, workers)?;
            let mut t = Table::new(&["j", "c_analytic", "c_empirical", "stderr"]);
            for r in &rows {
                t.push(vec![r.mode.to_string(), cell(r.c_analytic), cell(r.c_empirical), cell(r.stderr)]);
            }
            print!("{}", t.to_csv());
            write("noise_stats.csv", &t, &mut manifest)?;
            rows.iter().all(|r| (r.c_empirical - r.c_analytic).abs() <= 3.0 * r.stderr)
        }
        Command::SimulateKinetic => {
            cfg.require_ensemble(1)?;
            let runs = (0..cfg.epsilons.len())
                .map(|e| harness::run_kinetic(exp, e, cfg.ensemble, workers))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = exp.functionals.iter().map(|f| f.label.clone()).collect();
            write("kinetic_stats.csv", &functional_table(&labels, &runs.iter().collect::<Vec<_>>()), &mut manifest)?;
            write("moments.csv", &moment_table(&runs), &mut manifest)?;
            manifest.failures = runs.iter().map(FailureCount::of).collect();
            runs.iter().all(|r| r.gronwall_violations == 0)
        }
        Command::SimulateSpde => {
            let run = harness::run_limit(exp, cfg.spde_ensemble(), workers)?;
            let labels: Vec<String> = exp.functionals.iter().map(|f| f.label.clone()).collect();
            write("spde_stats.csv", &functional_table(&labels, &[&run]), &mut manifest)?;
            manifest.failures = vec![FailureCount::of(&run)];
            true
        }
        Command::Converge => {
            cfg.require_ensemble(MIN_TRAJECTORIES)?;
            let stats = harness::run_ensemble(exp, workers)?;
            let table = harness::weak_error_table(&stats, cfg.sobolev_order)?;
            let mut all: Vec<_> = stats.kinetic.iter().collect();
            all.extend(stats.limit.as_ref());
            manifest.failures = all.iter().map(|s| FailureCount::of(s)).collect();
            write("kinetic_stats.csv", &functional_table(&stats.labels, &all), &mut manifest)?;
            write("moments.csv", &moment_table(&stats.kinetic), &mut manifest)?;
            let mut weak = Table::new(&[
                "functional_id",
                "epsilon",
                "kinetic_mean",
                "kinetic_stderr",
                "limit_mean",
                "limit_stderr",
                "error",
                "ci",
                "ratio",
            ]);
            for r in &table.rows {
                weak.push(vec![
                    r.functional.clone(),
                    cell(r.epsilon),
                    cell(r.kinetic_mean),
                    cell(r.kinetic_stderr),
                    cell(r.limit_mean),
                    cell(r.limit_stderr),
                    cell(r.error),
                    cell(r.ci),
                    cell(r.ratio),
                ]);
            }
            write("weak_errors.csv", &weak, &mut manifest)?;
            let mut dist = Table::new(&["epsilon", "distance", "ratio"]);
            for d in &table.distances {
                dist.push(vec![cell(d.epsilon), cell(d.distance), cell(d.ratio)]);
            }
            write("sobolev.csv", &dist, &mut manifest)?;
            let norm0_sq = exp.f0.inner(&exp.f0, &exp.model);
            let moments = harness::uniform_moment_check(&stats.kinetic, norm0_sq, cfg.moment_threshold);
            let gronwall: usize = stats.kinetic.iter().map(|k| k.gronwall_violations).sum();
            println!("verdict: {}", table.verdict);
            for (label, v) in &table.verdicts {
                println!("  {label}: {v}");
            }
            manifest.checks = serde_json::json!({
                "verdict": table.verdict.to_string(),
                "functionals": table.verdicts.iter().map(|(l, v)| (l.clone(), v.to_string())).collect::<Vec<_>>(),
                "distances_decrease": table.distances_decrease,
                "moments": moments.as_ref().map_err(|e| e.to_string()).map(|m| serde_json::to_value(m).ok()),
                "gronwall_violations": gronwall,
            });
            table.verdict == Verdict::Consistent && moments.is_ok() && gronwall == 0
        }
        Command::DiagnoseGenerator { states } => {
            let rows = harness::diagnose_generator(exp, *states, workers)?;
            let mut t = Table::new(&["epsilon", "functional_id", "residual_mean", "residual_stderr", "scaling_ratio"]);
            for r in &rows {
                t.push(vec![
                    cell(r.epsilon),
                    r.functional_id.clone(),
                    cell(r.residual_mean),
                    cell(r.residual_stderr),
                    cell(r.scaling_ratio),
                ]);
            }
            print!("{}", t.to_csv());
            write("generator.csv", &t, &mut manifest)?;
            scaling_ok(exp, &rows)
        }
    };
    manifest.write(&out_dir)?;
    Ok(Outcome { passed, out_dir })
}

/// Each median ratio within 25% of the epsilon ratio (linear scaling).
fn scaling_ok(exp: &Experiment, rows: &[harness::GeneratorRow]) -> bool {
    let eps = &exp.config.epsilons;
    rows.iter().all(|r| {
        if r.scaling_ratio.is_nan() {
            return true;
        }
        let e = eps.iter().position(|&x| x == r.epsilon).expect("row epsilon is configured");
        let target = eps[e - 1] / eps[e];
        (r.scaling_ratio / target - 1.0).abs() <= 0.25
    })
}
