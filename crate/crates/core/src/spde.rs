//! The limit equation `d rho = div(K grad rho) dt + 1/2 F rho dt + rho R dbeta`
//! with `R beta = sum_j sqrt(c_j) eta_j beta_j`.
//!
//! Each step is an exact heat propagation followed by the pointwise
//! multiplier `exp(sum_j sqrt(c_j) eta_j dbeta_j)`, whose mean reproduces
//! the Ito drift `1/2 F rho` because `1/2 sum_j c_j eta_j^2 = 1/2 F`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Spectral};
use crate::noise::NoiseModel;
use crate::velocity::DiffusionMatrix;

/// Default number of SPDE steps over `[0, T]`.
pub const DEFAULT_STEPS: usize = 2048;

pub type DensityField = GridFunction;

#[derive(Clone, Debug)]
pub struct SpdeSolver {
    grid: Grid,
    diffusion: DiffusionMatrix,
    /// `sqrt(c_j) eta_j`.
    factors: Vec<GridFunction>,
    spectral: Spectral,
}

#[derive(Clone, Debug)]
pub struct SpdePath {
    pub times: Vec<f64>,
    pub densities: Vec<DensityField>,
}

impl SpdeSolver {
    pub fn new(diffusion: DiffusionMatrix, noise: &NoiseModel) -> Result<Self> {
        let grid = noise.grid();
        if diffusion.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), found: diffusion.dim() });
        }
        let factors = noise
            .modes()
            .iter()
            .zip(noise.autocovariances())
            .map(|(m, &c)| m.scale(c.sqrt()))
            .collect();
        Ok(Self { grid, diffusion, factors, spectral: Spectral::new(grid) })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mode_count(&self) -> usize {
        self.factors.len()
    }

    /// Exact propagation: mode `xi` is damped by `exp(-(2 pi)^2 xi^T K xi dt)`.
    pub fn heat_step(&self, rho: &mut DensityField, dt: f64) {
        if dt == 0.0 {
            return;
        }
        let grid = self.grid;
        let k = self.diffusion;
        self.spectral.apply_symbol(rho.values_mut(), |i| {
            let f = grid.frequency(i);
            let xi = [f[0] as f64, f[1] as f64];
            Complex64::new((-4.0 * PI * PI * k.quadratic_form(xi) * dt).exp(), 0.0)
        });
    }

    /// One step with Brownian increments `dbeta_j ~ N(0, dt)`.
    pub fn spde_step(&self, rho: &mut DensityField, dt: f64, increments: &[f64]) -> Result<()> {
        if increments.len() != self.factors.len() {
            return Err(Error::IncrementCount { expected: self.factors.len(), found: increments.len() });
        }
        rho.grid().check_same(&self.grid)?;
        self.heat_step(rho, dt);
        if self.factors.is_empty() {
            return Ok(());
        }
        let mut exponent = GridFunction::zeros(self.grid);
        for (r, &db) in self.factors.iter().zip(increments) {
            exponent.add_scaled(db, r);
        }
        for (x, e) in rho.values_mut().iter_mut().zip(exponent.values()) {
            *x *= e.exp();
        }
        Ok(())
    }

    /// Integrates `[0, T]` in `steps` equal steps, recording at time 0 and
    /// at each output time (rounded to the nearest step).
    pub fn solve<R: Rng + ?Sized>(
        &self,
        rho0: &DensityField,
        final_time: f64,
        steps: usize,
        output_times: &[f64],
        rng: &mut R,
    ) -> Result<SpdePath> {
        rho0.grid().check_same(&self.grid)?;
        let steps = steps.max(1);
        let dt = final_time / steps as f64;
        let mut marks: Vec<usize> = output_times
            .iter()
            .map(|&t| if dt > 0.0 { (t / dt).round() as usize } else { 0 })
            .filter(|&s| s >= 1 && s <= steps)
            .collect();
        marks.push(steps);
        marks.sort_unstable();
        marks.dedup();

        let sd = dt.sqrt();
        let mut rho = rho0.clone();
        let mut path = SpdePath { times: vec![0.0], densities: vec![rho0.clone()] };
        let mut increments = vec![0.0; self.factors.len()];
        let mut next = 0;
        for s in 1..=steps {
            for db in increments.iter_mut() {
                *db = sd * rng.sample::<f64, _>(StandardNormal);
            }
            self.spde_step(&mut rho, dt, &increments)?;
            if marks.get(next) == Some(&s) {
                path.times.push(s as f64 * dt);
                path.densities.push(rho.clone());
                next += 1;
            }
        }
        Ok(path)
    }
}

/// `max_x |1/2 sum_j c_j eta_j(x)^2 - 1/2 F(x)|`.
pub fn drift_consistency(noise: &NoiseModel) -> f64 {
    let trace = noise.trace();
    let grid = noise.grid();
    (0..grid.len())
        .map(|x| {
            let ito: f64 = noise
                .modes()
                .iter()
                .zip(noise.autocovariances())
                .map(|(m, c)| 0.5 * c * m.values()[x] * m.values()[x])
                .sum();
            (ito - 0.5 * trace.values()[x]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;
    use crate::noise::ChainSpec;

    fn grid() -> Grid {
        Grid::new(1, 32).unwrap()
    }

    fn const_mode() -> NoiseModel {
        NoiseModel::new(grid(), vec![Shape::Const.sample(grid())], vec![ChainSpec::telegraph(1.0, 1.0).unwrap()])
            .unwrap()
    }

    #[test]
    fn heat_step_damps_cosine_and_keeps_constants() {
        let s = SpdeSolver::new(DiffusionMatrix::isotropic(1, 1.0), &NoiseModel::zero(grid())).unwrap();
        let mut rho = Shape::Cos([1, 0]).sample(grid());
        let orig = rho.clone();
        s.heat_step(&mut rho, 0.0);
        assert_eq!(rho, orig);
        let dt = 0.013;
        s.heat_step(&mut rho, dt);
        let damp = (-4.0 * PI * PI * dt).exp();
        for (a, b) in rho.values().iter().zip(orig.values()) {
            assert!((a - damp * b).abs() < 1e-14);
        }
        let mut c = GridFunction::constant(grid(), 2.5);
        s.heat_step(&mut c, 1.0);
        assert!(c.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn zero_increments_give_pure_heat_step() {
        let s = SpdeSolver::new(DiffusionMatrix::isotropic(1, 0.7), &const_mode()).unwrap();
        let rho0 = GridFunction::from_fn(grid(), |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        let (mut a, mut b) = (rho0.clone(), rho0.clone());
        s.spde_step(&mut a, 0.01, &[0.0]).unwrap();
        s.heat_step(&mut b, 0.01);
        assert_eq!(a, b);
        assert!(matches!(s.spde_step(&mut a, 0.01, &[]), Err(Error::IncrementCount { .. })));
    }

    #[test]
    fn two_dimensional_heat_uses_quadratic_form() {
        let g = Grid::new(2, 16).unwrap();
        let k = DiffusionMatrix::new(2, [[0.5, 0.1], [0.1, 0.3]]);
        let s = SpdeSolver::new(k, &NoiseModel::zero(g)).unwrap();
        let mut rho = Shape::Cos([1, 2]).sample(g);
        let orig = rho.clone();
        s.heat_step(&mut rho, 0.02);
        let q = 0.5 + 2.0 * 0.1 * 2.0 + 0.3 * 4.0;
        let damp = (-4.0 * PI * PI * q * 0.02).exp();
        for (a, b) in rho.values().iter().zip(orig.values()) {
            assert!((a - damp * b).abs() < 1e-13);
        }
    }

    #[test]
    fn drift_identity_holds() {
        assert!(drift_consistency(&const_mode()) < 1e-14);
        let cs = NoiseModel::new(
            grid(),
            vec![Shape::Cos([1, 0]).sample(grid()), Shape::Sin([1, 0]).sample(grid())],
            vec![ChainSpec::telegraph(0.4, 1.5).unwrap(); 2],
        )
        .unwrap();
        assert!(drift_consistency(&cs) < 1e-14);
        assert_eq!(drift_consistency(&NoiseModel::zero(grid())), 0.0);
    }
}
