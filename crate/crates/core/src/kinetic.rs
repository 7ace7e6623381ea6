//! Pathwise integration of the scaled kinetic equation
//!
//! `d_t f + (1/eps) a(v).grad f = (1/eps^2) L f + (1/eps) f m(t/eps^2, x)`
//!
//! by Strang composition of three exactly solvable sub-flows: free
//! transport (a spectral phase shift), relaxation (an exponential blend
//! toward the velocity average), and multiplication by the frozen noise.
//! Noise jump times cut every step so the multiplier stays exact.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Spectral};
use crate::noise::{NoiseModel, NoisePath};
use crate::velocity::VelocityModel;

/// Aborts a trajectory whose L2 norm exceeds this value.
pub const OVERFLOW_NORM: f64 = 1e12;
const GRONWALL_SLACK: f64 = 1e-10;

/// `f(x, v)` on a periodic grid, stored velocity-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KineticField {
    grid: Grid,
    velocities: usize,
    values: Vec<f64>,
}

impl KineticField {
    pub fn zeros(grid: Grid, velocities: usize) -> Self {
        Self { grid, velocities, values: vec![0.0; grid.len() * velocities] }
    }

    pub fn from_values(grid: Grid, velocities: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * velocities;
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: values.len() });
        }
        Ok(Self { grid, velocities, values })
    }

    /// `f(x, v) = g(point index, velocity index)`.
    pub fn from_fn(grid: Grid, velocities: usize, g: impl Fn(usize, usize) -> f64) -> Self {
        let npts = grid.len();
        let values = (0..velocities).flat_map(|v| (0..npts).map(move |x| (x, v))).map(|(x, v)| g(x, v)).collect();
        Self { grid, velocities, values }
    }

    /// Velocity-independent field equal to `rho` for every velocity.
    pub fn from_density(rho: &GridFunction, velocities: usize) -> Self {
        let values = rho.values().repeat(velocities);
        Self { grid: rho.grid(), velocities, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn velocity_count(&self) -> usize {
        self.velocities
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, v: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[v * n..(v + 1) * n]
    }

    pub fn slice_mut(&mut self, v: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[v * n..(v + 1) * n]
    }

    /// `L^2_{x,v}` inner product with weights `mu`.
    pub fn inner(&self, other: &KineticField, model: &VelocityModel) -> f64 {
        let h = self.grid.cell_volume();
        model
            .weights()
            .iter()
            .enumerate()
            .map(|(v, w)| w * h * crate::grid::dot(self.slice(v), other.slice(v)))
            .sum()
    }

    pub fn norm(&self, model: &VelocityModel) -> f64 {
        self.inner(self, model).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &KineticField) -> Self {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        out
    }

    /// Pointwise product with a spatial function, for every velocity.
    pub fn mul_spatial(&self, g: &GridFunction) -> Self {
        let mut out = self.clone();
        for v in 0..self.velocities {
            for (a, b) in out.slice_mut(v).iter_mut().zip(g.values()) {
                *a *= b;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// Macroscopic step is `dt_factor * epsilon^2`.
    pub dt_factor: f64,
    pub final_time: f64,
}

impl SolverConfig {
    pub const DEFAULT_DT_FACTOR: f64 = 0.1;

    pub fn new(epsilon: f64, final_time: f64) -> Self {
        Self { epsilon, dt_factor: Self::DEFAULT_DT_FACTOR, final_time }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 1.0) {
            return Err(Error::Config(format!("dt_factor must lie in (0, 1], got {}", self.dt_factor)));
        }
        if !(self.final_time >= 0.0 && self.final_time.is_finite()) {
            return Err(Error::Config(format!("final time must be nonnegative, got {}", self.final_time)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.dt_factor * self.epsilon * self.epsilon
    }
}

/// What to keep from a trajectory.
#[derive(Clone, Debug, Default)]
pub struct OutputPlan {
    /// Macroscopic output times in `(0, T]`; time 0 is always recorded.
    pub times: Vec<f64>,
    /// Record after every solver step as well.
    pub every_step: bool,
    /// Keep the full kinetic field in each snapshot.
    pub keep_fields: bool,
    /// Record on both sides of every noise jump (same time, old and new state).
    pub at_jumps: bool,
}

impl OutputPlan {
    pub fn at(times: Vec<f64>) -> Self {
        Self { times, every_step: false, keep_fields: false, at_jumps: false }
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub density: GridFunction,
    /// `||f||_{L^2_{x,v}}`.
    pub norm: f64,
    pub state: Vec<usize>,
    pub field: Option<KineticField>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub epsilon: f64,
    pub snapshots: Vec<Snapshot>,
    /// Steps at which `||f||^2 > exp(2 C_* t / eps) ||f_0||^2`.
    pub gronwall_violations: usize,
    pub jumps: usize,
}

impl Trajectory {
    /// Snapshots taken at the requested output times (plus time 0).
    pub fn at_times<'a>(&'a self, times: &'a [f64]) -> impl Iterator<Item = &'a Snapshot> + 'a {
        times.iter().filter_map(move |&t| {
            self.snapshots.iter().find(|s| (s.time - t).abs() <= 1e-12 * t.abs().max(1.0))
        })
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("time 0 is always recorded")
    }
}

/// Holds the immutable models and FFT plans; shareable across threads.
#[derive(Clone, Debug)]
pub struct KineticSolver {
    model: VelocityModel,
    noise: NoiseModel,
    spectral: Spectral,
}

impl KineticSolver {
    pub fn new(model: VelocityModel, noise: NoiseModel) -> Result<Self> {
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidVelocityModel(violations));
        }
        if noise.grid().dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: noise.grid().dim() });
        }
        let spectral = Spectral::new(noise.grid());
        Ok(Self { model, noise, spectral })
    }

    pub fn model(&self) -> &VelocityModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn grid(&self) -> Grid {
        self.noise.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn check_field(&self, f: &KineticField) -> Result<()> {
        f.grid().check_same(&self.grid())?;
        if f.velocity_count() != self.model.len() {
            return Err(Error::DimensionMismatch { expected: self.model.len(), found: f.velocity_count() });
        }
        Ok(())
    }

    /// Free transport over `tau`: each velocity slice is translated by
    /// `-a(v) tau / eps` through a spectral phase shift.
    pub fn step_transport(&self, f: &mut KineticField, tau: f64, eps: f64) {
        if tau == 0.0 {
            return;
        }
        let grid = self.grid();
        for v in 0..self.model.len() {
            let a = self.model.velocity(v);
            let shift = [a[0] * tau / eps, a[1] * tau / eps];
            self.spectral.apply_symbol(f.slice_mut(v), |i| {
                let k = grid.frequency(i);
                let phase = -2.0 * PI * (k[0] as f64 * shift[0] + k[1] as f64 * shift[1]);
                Complex64::from_polar(1.0, phase)
            });
        }
    }

    /// Exact relaxation flow `f <- rho + exp(-tau/eps^2) (f - rho)`.
    pub fn step_collision(&self, f: &mut KineticField, tau: f64, eps: f64) {
        let decay = (-tau / (eps * eps)).exp();
        let rho = self.model.average(f).expect("checked dimensions");
        for v in 0..self.model.len() {
            for (x, r) in f.slice_mut(v).iter_mut().zip(rho.values()) {
                *x = r + decay * (*x - r);
            }
        }
    }

    /// `f <- f exp(m duration / eps)` for a frozen noise field.
    pub fn step_multiplier(&self, f: &mut KineticField, m: &GridFunction, duration: f64, eps: f64) {
        let growth: Vec<f64> = m.values().iter().map(|mx| (mx * duration / eps).exp()).collect();
        for v in 0..self.model.len() {
            for (x, g) in f.slice_mut(v).iter_mut().zip(&growth) {
                *x *= g;
            }
        }
    }

    /// Noise multiplication over the macroscopic interval `[start, end]`;
    /// the path must not jump strictly inside the rescaled interval.
    pub fn step_noise_multiplication(
        &self,
        f: &mut KineticField,
        start: f64,
        end: f64,
        eps: f64,
        path: &NoisePath,
    ) -> Result<()> {
        let (a, b) = (start / (eps * eps), end / (eps * eps));
        if path.events().iter().any(|j| j.time > a && j.time < b) {
            return Err(Error::StraddlesJump { start, end });
        }
        let state = path.state_at(a);
        let m = self.noise_field(&state);
        self.step_multiplier(f, &m, end - start, eps);
        Ok(())
    }

    fn noise_field(&self, state: &[usize]) -> GridFunction {
        if state.is_empty() {
            GridFunction::zeros(self.grid())
        } else {
            self.noise.field(state)
        }
    }

    fn strang(&self, f: &mut KineticField, h: f64, eps: f64, m: &GridFunction, quiet: bool) {
        self.step_collision(f, 0.5 * h, eps);
        self.step_transport(f, 0.5 * h, eps);
        if !quiet {
            self.step_multiplier(f, m, h, eps);
        }
        self.step_transport(f, 0.5 * h, eps);
        self.step_collision(f, 0.5 * h, eps);
    }

    /// Advances `f` from macroscopic time `t` to `t + dt`. Noise jumps in
    /// `[t, t + dt]` split the step; each piece is one Strang step.
    pub fn advance(&self, f: &mut KineticField, t: f64, dt: f64, eps: f64, path: &NoisePath) -> Result<()> {
        self.check_field(f)?;
        if !path.chains.is_empty() && path.chains.len() != self.noise.mode_count() {
            return Err(Error::DimensionMismatch { expected: self.noise.mode_count(), found: path.chains.len() });
        }
        let scale = eps * eps;
        let (micro_start, micro_end) = (t / scale, (t + dt) / scale);
        if micro_end > path.horizon * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::PathTooShort { needed: micro_end, horizon: path.horizon });
        }
        let mut cursor = PathCursor::new(path, micro_start, &self.noise);
        self.advance_with(f, t, dt, eps, &mut cursor, &mut |_, _, _| {});
        Ok(())
    }

    fn advance_with(
        &self,
        f: &mut KineticField,
        t: f64,
        dt: f64,
        eps: f64,
        cursor: &mut PathCursor,
        on_jump: &mut dyn FnMut(f64, &KineticField, &[usize]),
    ) {
        let scale = eps * eps;
        let end = t + dt;
        let mut now = t;
        loop {
            let next_jump = cursor.next_jump_time().map(|s| s * scale);
            let piece_end = match next_jump {
                Some(j) if j < end => j,
                _ => end,
            };
            let h = piece_end - now;
            if h > 0.0 {
                let quiet = cursor.state.is_empty();
                self.strang(f, h, eps, &cursor.field, quiet);
            }
            now = piece_end;
            if piece_end < end {
                on_jump(now, f, &cursor.state);
                cursor.apply_next(&self.noise);
                on_jump(now, f, &cursor.state);
            } else {
                break;
            }
        }
    }

    /// One trajectory: simulates a stationary noise path over `[0, T/eps^2]`
    /// and integrates with `dt = dt_factor * eps^2`, stepping exactly onto
    /// every requested output time.
    pub fn solve_trajectory<R: Rng + ?Sized>(
        &self,
        f0: &KineticField,
        config: &SolverConfig,
        plan: &OutputPlan,
        rng: &mut R,
    ) -> Result<Trajectory> {
        config.validate()?;
        let eps = config.epsilon;
        let path = self.noise.simulate_path(config.final_time / (eps * eps), rng);
        self.solve_with_path(f0, config, plan, &path)
    }

    pub fn solve_with_path(
        &self,
        f0: &KineticField,
        config: &SolverConfig,
        plan: &OutputPlan,
        path: &NoisePath,
    ) -> Result<Trajectory> {
        config.validate()?;
        self.check_field(f0)?;
        if !f0.is_finite() {
            return Err(Error::Config("initial datum is not finite".into()));
        }
        let eps = config.epsilon;
        let horizon = config.final_time / (eps * eps);
        if !path.chains.is_empty() && path.chains.len() != self.noise.mode_count() {
            return Err(Error::DimensionMismatch { expected: self.noise.mode_count(), found: path.chains.len() });
        }
        if path.horizon < horizon * (1.0 - 1e-12) {
            return Err(Error::PathTooShort { needed: horizon, horizon: path.horizon });
        }
        let mut stops: Vec<f64> = plan
            .times
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t <= config.final_time * (1.0 + 1e-12))
            .collect();
        stops.push(config.final_time);
        stops.sort_by(f64::total_cmp);
        stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        let requested = |t: f64| plan.times.iter().any(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0));

        let growth_rate = 2.0 * self.noise.bound() / eps;
        let norm0_sq = f0.inner(f0, &self.model);
        let mut f = f0.clone();
        let mut cursor = PathCursor::new(path, 0.0, &self.noise);
        let mut traj = Trajectory { epsilon: eps, snapshots: Vec::new(), gronwall_violations: 0, jumps: 0 };
        let snapshot = |f: &KineticField, t: f64, state: &[usize], norm: f64| Snapshot {
            time: t,
            density: self.model.average(f).expect("checked"),
            norm,
            state: state.to_vec(),
            field: plan.keep_fields.then(|| f.clone()),
        };
        traj.snapshots.push(snapshot(&f, 0.0, &cursor.state, norm0_sq.sqrt()));

        let mut t = 0.0;
        for &stop in &stops {
            let span = stop - t;
            if span <= 0.0 {
                continue;
            }
            let steps = (span / config.step() * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let dt = span / steps as f64;
            for s in 0..steps {
                let t_next = if s + 1 == steps { stop } else { t + dt };
                let mut jump_snaps = Vec::new();
                let mut on_jump = |time: f64, g: &KineticField, state: &[usize]| {
                    if plan.at_jumps {
                        jump_snaps.push(snapshot(g, time, state, g.inner(g, &self.model).sqrt()));
                    }
                };
                self.advance_with(&mut f, t, t_next - t, eps, &mut cursor, &mut on_jump);
                traj.snapshots.append(&mut jump_snaps);
                t = t_next;
                let norm_sq = f.inner(&f, &self.model);
                if !norm_sq.is_finite() || norm_sq.sqrt() > OVERFLOW_NORM {
                    return Err(Error::Overflow { time: t, norm: norm_sq.sqrt() });
                }
                if norm_sq > (growth_rate * t).exp() * norm0_sq * (1.0 + GRONWALL_SLACK) + 1e-300 {
                    traj.gronwall_violations += 1;
                }
                let last = s + 1 == steps;
                if plan.every_step || (last && (requested(stop) || stop == config.final_time)) {
                    traj.snapshots.push(snapshot(&f, t, &cursor.state, norm_sq.sqrt()));
                }
            }
        }
        traj.jumps = cursor.consumed;
        Ok(traj)
    }
}

/// Walks the merged jump list of a path, tracking the current state and
/// its noise field.
struct PathCursor {
    events: Vec<crate::noise::Jump>,
    next: usize,
    state: Vec<usize>,
    field: GridFunction,
    consumed: usize,
}

impl PathCursor {
    fn new(path: &NoisePath, micro_start: f64, noise: &NoiseModel) -> Self {
        let events = path.events();
        let next = events.partition_point(|j| j.time <= micro_start);
        let state = path.state_at(micro_start);
        let field = if state.is_empty() { GridFunction::zeros(noise.grid()) } else { noise.field(&state) };
        Self { events, next, state, field, consumed: 0 }
    }

    fn next_jump_time(&self) -> Option<f64> {
        self.events.get(self.next).map(|j| j.time)
    }

    fn apply_next(&mut self, noise: &NoiseModel) {
        let j = self.events[self.next];
        self.state[j.chain] = j.state;
        self.next += 1;
        self.consumed += 1;
        self.field = noise.field(&self.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;
    use crate::noise::ChainSpec;

    fn solver_1d(n: usize) -> KineticSolver {
        let grid = Grid::new(1, n).unwrap();
        KineticSolver::new(VelocityModel::two_speed(), NoiseModel::zero(grid)).unwrap()
    }

    #[test]
    fn transport_shifts_cosine() {
        let s = solver_1d(32);
        let grid = s.grid();
        let cos = Shape::Cos([1, 0]).sample(grid);
        let mut f = KineticField::from_density(&cos, 2);
        s.step_transport(&mut f, 0.25 * 0.1, 0.1);
        // velocity index 1 has a = +1
        for (i, x) in grid.points().enumerate() {
            let exact = (2.0 * PI * (x[0] - 0.25)).cos();
            assert!((f.slice(1)[i] - exact).abs() < 1e-12);
            let back = (2.0 * PI * (x[0] + 0.25)).cos();
            assert!((f.slice(0)[i] - back).abs() < 1e-12);
        }
        let mut g = KineticField::from_density(&cos, 2);
        s.step_transport(&mut g, 0.0, 0.1);
        assert_eq!(g, KineticField::from_density(&cos, 2));
    }

    #[test]
    fn noiseless_splitting_self_converges_at_second_order() {
        let s = solver_1d(32);
        let f0 = KineticField::from_fn(s.grid(), 2, |x, v| 1.0 + 0.5 * (2.0 * PI * x as f64 / 32.0 + v as f64).cos());
        let t = 0.5;
        let run = |beta: f64| {
            let cfg = SolverConfig { epsilon: 1.0, dt_factor: beta, final_time: t };
            let traj = s.solve_with_path(&f0, &cfg, &OutputPlan::at(vec![t]), &NoisePath::silent(t)).unwrap();
            traj.last().density.clone()
        };
        let reference = run(0.1 / 8.0);
        let errors: Vec<f64> =
            [0.1, 0.05, 0.025].iter().map(|&b| run(b).zip_map(&reference, |a, r| a - r).norm()).collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 2.0, "order {order} from {errors:?}");
        }
    }

    #[test]
    fn transport_by_one_cell_is_a_rotation() {
        let n = 16;
        let s = solver_1d(n);
        let values: Vec<f64> = (0..2 * n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut f = KineticField::from_values(s.grid(), 2, values.clone()).unwrap();
        let eps = 0.3;
        s.step_transport(&mut f, eps / n as f64, eps);
        for i in 0..n {
            // a = +1 moves data right by one cell, a = -1 left
            assert!((f.slice(1)[(i + 1) % n] - values[n + i]).abs() < 1e-12);
            assert!((f.slice(0)[i] - values[(i + 1) % n]).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_examples() {
        let s = solver_1d(16);
        let grid = s.grid();
        let h = Shape::Sin([2, 0]).sample(grid);
        let mut f = KineticField::from_fn(grid, 2, |x, v| 1.0 + s.model().velocity(v)[0] * h.values()[x]);
        let eps = 0.2;
        s.step_collision(&mut f, 2f64.ln() * eps * eps, eps);
        for x in 0..grid.len() {
            assert!((f.slice(1)[x] - (1.0 + 0.5 * h.values()[x])).abs() < 1e-14);
            assert!((f.slice(0)[x] - (1.0 - 0.5 * h.values()[x])).abs() < 1e-14);
        }
        let flat = KineticField::from_density(&h, 2);
        let mut g = flat.clone();
        s.step_collision(&mut g, 0.3, eps);
        assert_eq!(g, flat);
        s.step_collision(&mut f, 1e3, eps);
        for x in 0..grid.len() {
            assert!((f.slice(0)[x] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn multiplier_examples() {
        let grid = Grid::new(1, 16).unwrap();
        let noise = NoiseModel::new(
            grid,
            vec![Shape::Const.sample(grid), Shape::Cos([1, 0]).sample(grid)],
            vec![ChainSpec::telegraph(1.0, 1.0).unwrap(), ChainSpec::telegraph(1.0, 1.0).unwrap()],
        )
        .unwrap();
        let s = KineticSolver::new(VelocityModel::two_speed(), noise).unwrap();
        let eps = 0.5;
        let ones = KineticField::from_fn(grid, 2, |_, _| 2.0);

        let mut f = ones.clone();
        s.step_multiplier(&mut f, &GridFunction::zeros(grid), 0.7, eps);
        assert_eq!(f, ones);

        let mut f = ones.clone();
        s.step_multiplier(&mut f, &GridFunction::constant(grid, 1.0), 3f64.ln() * eps, eps);
        assert!(f.values().iter().all(|v| (v - 6.0).abs() < 1e-13));

        let m = Shape::Cos([1, 0]).sample(grid);
        let mut f = ones.clone();
        s.step_multiplier(&mut f, &m, 0.1, eps);
        for v in 0..2 {
            for x in 0..grid.len() {
                let log_ratio = (f.slice(v)[x] / 2.0).ln();
                assert!(log_ratio * m.values()[x] >= 0.0);
            }
        }

        let path = NoisePath {
            horizon: 10.0,
            chains: vec![
                crate::noise::ChainPath { initial: 1, jumps: vec![(2.0, 0)] },
                crate::noise::ChainPath { initial: 0, jumps: vec![] },
            ],
        };
        let mut f = ones.clone();
        // jump at micro time 2 = macro time 0.5
        assert!(s.step_noise_multiplication(&mut f, 0.4, 0.6, eps, &path).is_err());
        assert!(s.step_noise_multiplication(&mut f, 0.1, 0.5, eps, &path).is_ok());
        // state (1, 0): m = const*1 + cos*(-1)
        for x in 0..grid.len() {
            let m = 1.0 - grid.point(x)[0].mul_add(2.0 * PI, 0.0).cos();
            assert!((f.slice(0)[x] - 2.0 * (m * 0.4 / eps).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn advance_keeps_constant_state() {
        let s = solver_1d(16);
        let f0 = KineticField::from_fn(s.grid(), 2, |_, _| 1.5);
        let mut f = f0.clone();
        let path = NoisePath::silent(10.0);
        s.advance(&mut f, 0.0, 0.01, 0.1, &path).unwrap();
        for (a, b) in f.values().iter().zip(f0.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(matches!(s.advance(&mut f, 0.0, 0.2, 0.1, &path), Err(Error::PathTooShort { .. })));
    }

    #[test]
    fn zero_datum_stays_zero_and_mass_is_conserved() {
        let s = solver_1d(32);
        let grid = s.grid();
        let cfg = SolverConfig::new(0.1, 0.05);
        let zero = KineticField::zeros(grid, 2);
        let t = s.solve_with_path(&zero, &cfg, &OutputPlan::at(vec![0.05]), &NoisePath::silent(5.0)).unwrap();
        assert!(t.last().density.max_abs() == 0.0);

        let rho0 = GridFunction::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos() + 0.2 * (6.0 * PI * x[0]).sin());
        let f0 = KineticField::from_fn(grid, 2, |x, v| rho0.values()[x] * (1.0 + 0.3 * s.model().velocity(v)[0]));
        let plan = OutputPlan { times: vec![], every_step: true, keep_fields: false, at_jumps: false };
        let t = s.solve_with_path(&f0, &cfg, &plan, &NoisePath::silent(5.0)).unwrap();
        let mass0 = rho0.integral();
        for snap in &t.snapshots {
            assert!((snap.density.integral() - mass0).abs() < 1e-10);
        }
        // pure dissipation
        assert!(t.snapshots.windows(2).all(|w| w[1].norm <= w[0].norm * (1.0 + 1e-13)));
    }
}
