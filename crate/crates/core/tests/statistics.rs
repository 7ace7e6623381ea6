//! Monte Carlo checks against independent closed forms.

use std::f64::consts::PI;

use diffusion_limit::grid::{Grid, GridFunction, Shape};
use diffusion_limit::kinetic::{KineticField, KineticSolver, OutputPlan, SolverConfig};
use diffusion_limit::noise::{ChainSpec, NoiseModel, NoisePath};
use diffusion_limit::spde::SpdeSolver;
use diffusion_limit::stats::RunningStats;
use diffusion_limit::velocity::{DiffusionMatrix, VelocityModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn three_state() -> ChainSpec {
    let rates = vec![vec![-3.0, 2.0, 1.0], vec![0.5, -1.0, 0.5], vec![1.0, 3.0, -4.0]];
    let raw = [-1.0, 0.5, 2.0];
    let probe = ChainSpec::new(vec![0.0; 3], rates.clone()).unwrap();
    let mean = probe.expectation(&raw);
    ChainSpec::new(raw.iter().map(|s| s - mean).collect(), rates).unwrap()
}

fn single(chain: ChainSpec) -> NoiseModel {
    let g = Grid::new(1, 8).unwrap();
    NoiseModel::new(g, vec![Shape::Const.sample(g)], vec![chain]).unwrap()
}

#[test]
fn occupation_and_holding_times_match_the_generator() {
    let chain = three_state();
    let noise = single(chain.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let horizon = 20_000.0;
    let path = noise.simulate_path(horizon, &mut rng);
    let p = &path.chains[0];
    let mut occupation = [0.0; 3];
    let mut holding: Vec<RunningStats> = vec![RunningStats::default(); 3];
    let (mut last, mut state) = (0.0, p.initial);
    for &(t, next) in &p.jumps {
        occupation[state] += t - last;
        if last > 0.0 {
            holding[state].push(t - last);
        }
        last = t;
        state = next;
    }
    occupation[state] += horizon - last;
    for k in 0..3 {
        // occupation fractions have relaxation time O(1); 2% is many standard errors
        assert!((occupation[k] / horizon - chain.stationary()[k]).abs() < 0.02, "{k}");
        let expected = 1.0 / chain.holding_rate(k);
        assert!((holding[k].mean() - expected).abs() <= 4.0 * holding[k].stderr(), "{k}");
    }
    // ergodic average of the centered observable
    let avg = p.integrate(chain.states(), horizon) / horizon;
    assert!(avg.abs() < 0.03, "{avg}");
}

#[test]
fn empirical_kernel_matches_autocovariance_sum() {
    let g = Grid::new(1, 16).unwrap();
    let noise = NoiseModel::new(
        g,
        vec![Shape::Cos([1, 0]).sample(g), Shape::Const.sample(g)],
        vec![ChainSpec::telegraph(1.0, 1.0).unwrap(), three_state()],
    )
    .unwrap();
    let (x, y) = (1, 5);
    let length = 50.0;
    let mut est = RunningStats::default();
    for i in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let path = noise.simulate_path(length, &mut rng);
        let (mut ix, mut iy) = (0.0, 0.0);
        for (j, (p, c)) in path.chains.iter().zip(noise.chains()).enumerate() {
            let integral = p.integrate(c.states(), length);
            ix += integral * noise.modes()[j].values()[x];
            iy += integral * noise.modes()[j].values()[y];
        }
        est.push(ix * iy / length);
    }
    let k = noise.kernel().eval(x, y);
    assert!((est.mean() - k).abs() <= 3.0 * est.stderr(), "{} vs {k} (se {})", est.mean(), est.stderr());
}

#[test]
fn strang_splitting_is_second_order() {
    let g = Grid::new(1, 32).unwrap();
    let noise = NoiseModel::new(
        g,
        vec![Shape::Cos([1, 0]).sample(g)],
        vec![ChainSpec::telegraph(1.0, 1.0).unwrap()],
    )
    .unwrap();
    let solver = KineticSolver::new(VelocityModel::two_speed(), noise).unwrap();
    let f0 = KineticField::from_fn(g, 2, |x, v| 1.0 + 0.4 * (2.0 * PI * (x as f64 / 32.0) + v as f64).sin());
    // step counts 2, 4, 8: dt halves exactly
    let eps = 0.2;
    let t = 0.032;
    let path = NoisePath::frozen(&[1], t / (eps * eps));
    let run = |beta: f64| {
        let cfg = SolverConfig { epsilon: eps, dt_factor: beta, final_time: t };
        let traj = solver.solve_with_path(&f0, &cfg, &OutputPlan::at(vec![t]), &path).unwrap();
        traj.last().density.clone()
    };
    let (a, b, c) = (run(0.4), run(0.2), run(0.1));
    let d1 = a.zip_map(&b, |x, y| x - y).norm();
    let d2 = b.zip_map(&c, |x, y| x - y).norm();
    let order = (d1 / d2).log2();
    assert!(order > 1.8, "observed order {order} ({d1:e}, {d2:e})");
}

#[test]
fn kinetic_mass_follows_the_integrated_noise() {
    let noise = single(ChainSpec::telegraph(1.0, 1.0).unwrap());
    let g = noise.grid();
    let solver = KineticSolver::new(VelocityModel::two_speed(), noise.clone()).unwrap();
    let f0 = KineticField::from_fn(g, 2, |x, v| 1.0 + 0.3 * ((x + v) as f64).cos());
    let model = VelocityModel::two_speed();
    let mass0 = model.average(&f0).unwrap().integral();
    let eps = 0.1;
    let t = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let path = noise.simulate_path(t / (eps * eps), &mut rng);
    let cfg = SolverConfig::new(eps, t);
    let traj = solver.solve_with_path(&f0, &cfg, &OutputPlan::at(vec![t]), &path).unwrap();
    let exponent = eps * path.chains[0].integrate(noise.chain(0).states(), t / (eps * eps));
    let mass = traj.last().density.integral();
    assert!((mass - mass0 * exponent.exp()).abs() < 1e-12 * mass0);
}

/// `E rho_n` obeys the deterministic recursion `rho <- exp(F dt / 2) heat(dt) rho`.
fn mean_recursion(solver: &SpdeSolver, trace: &GridFunction, rho0: &GridFunction, steps: usize, t: f64) -> GridFunction {
    let dt = t / steps as f64;
    let mut rho = rho0.clone();
    for _ in 0..steps {
        solver.heat_step(&mut rho, dt);
        rho = rho.zip_map(trace, |r, f| r * (0.5 * f * dt).exp());
    }
    rho
}

#[test]
fn spde_mean_and_weak_order() {
    let g = Grid::new(1, 16).unwrap();
    let noise = NoiseModel::new(
        g,
        vec![Shape::Cos([1, 0]).sample(g), Shape::Sin([1, 0]).sample(g).scale(0.5)],
        vec![ChainSpec::telegraph(2.0, 1.0).unwrap(), ChainSpec::telegraph(1.0, 1.0).unwrap()],
    )
    .unwrap();
    let solver = SpdeSolver::new(DiffusionMatrix::isotropic(1, 0.3), &noise).unwrap();
    let rho0 = GridFunction::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
    let w = Shape::Cos([1, 0]).sample(g);
    let t = 0.4;
    let coarse = 4;
    let trajectories = 10_000;

    // coupled ensembles at dt, dt/2, dt/4 sharing the same Brownian path
    let mut levels = [RunningStats::default(), RunningStats::default(), RunningStats::default()];
    let mut diffs = [RunningStats::default(), RunningStats::default()];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..trajectories {
        let fine_steps = coarse * 4;
        let dt = t / fine_steps as f64;
        let fine: Vec<[f64; 2]> = (0..fine_steps)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a * dt.sqrt(), b * dt.sqrt()]
            })
            .collect();
        let mut values = [0.0; 3];
        for (level, value) in values.iter_mut().enumerate() {
            let group = 4 >> level;
            let mut rho = rho0.clone();
            for chunk in fine.chunks(group) {
                let inc = [chunk.iter().map(|c| c[0]).sum(), chunk.iter().map(|c| c[1]).sum()];
                solver.spde_step(&mut rho, dt * group as f64, &inc).unwrap();
            }
            *value = rho.inner(&w);
        }
        for l in 0..3 {
            levels[l].push(values[l]);
        }
        diffs[0].push(values[0] - values[1]);
        diffs[1].push(values[1] - values[2]);
    }

    // each level's mean matches its exact discrete recursion
    let trace = noise.trace();
    let exact: Vec<f64> = (0..3).map(|l| mean_recursion(&solver, &trace, &rho0, coarse << l, t).inner(&w)).collect();
    for (l, s) in levels.iter().enumerate() {
        assert!((s.mean() - exact[l]).abs() <= 3.0 * s.stderr(), "level {l}: {} vs {}", s.mean(), exact[l]);
    }
    for (l, d) in diffs.iter().enumerate() {
        let expected = exact[l] - exact[l + 1];
        assert!((d.mean() - expected).abs() <= 3.0 * d.stderr(), "difference {l}: {} vs {expected}", d.mean());
    }
    // the step bias halves with the step
    let ratio = (exact[0] - exact[1]) / (exact[1] - exact[2]);
    assert!((1.5..=2.5).contains(&ratio), "Richardson ratio {ratio}");
}

#[test]
fn constant_mode_gives_lognormal_mass() {
    let g = Grid::new(1, 8).unwrap();
    let noise = single(ChainSpec::telegraph(1.0, 0.5).unwrap());
    let c = noise.autocovariances()[0];
    let solver = SpdeSolver::new(DiffusionMatrix::isotropic(1, 1.0), &noise).unwrap();
    let rho0 = GridFunction::from_fn(g, |x| 2.0 + (2.0 * PI * x[0]).sin());
    let t = 0.5;
    let mut stats = RunningStats::default();
    let mut log_stats = RunningStats::default();
    for i in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let path = solver.solve(&rho0, t, 16, &[], &mut rng).unwrap();
        let mass = path.densities.last().unwrap().integral();
        stats.push(mass);
        log_stats.push((mass / rho0.integral()).ln());
    }
    let expected = rho0.integral() * (0.5 * c * t).exp();
    assert!((stats.mean() - expected).abs() <= 3.0 * stats.stderr());
    // log-mass is exactly N(0, c t)
    assert!(log_stats.mean().abs() <= 3.0 * log_stats.stderr());
    assert!((log_stats.variance() / (c * t) - 1.0).abs() < 0.05);
}
