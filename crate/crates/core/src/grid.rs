//! Uniform periodic grids on the unit torus and the spectral machinery
//! shared by the kinetic and limit solvers.
//!
//! A grid has `n` points per dimension (`n` a power of two) in dimension
//! one or two. Two-dimensional data is stored row-major: point `(i, j)`
//! sits at `(i / n, j / n)` and index `i * n + j`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Grid(format!("points per dimension must be a power of two >= 2, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one cell, `n^-d`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = 1.0 / self.n as f64;
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Signed frequency of each axis for a flat spectral index.
    pub fn frequency(&self, idx: usize) -> [i64; 2] {
        let signed = |k: usize| -> i64 {
            if k <= self.n / 2 {
                k as i64
            } else {
                k as i64 - self.n as i64
            }
        };
        match self.dim {
            1 => [signed(idx), 0],
            _ => [signed(idx / self.n), signed(idx % self.n)],
        }
    }

    /// Frequency used by odd-order derivative symbols: Nyquist components
    /// are zeroed so that the discrete derivative stays real and skew.
    pub fn derivative_frequency(&self, idx: usize) -> [f64; 2] {
        let half = (self.n / 2) as i64;
        let f = self.frequency(idx);
        let clip = |k: i64| if k.abs() == half { 0.0 } else { k as f64 };
        [clip(f[0]), clip(f[1])]
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::Grid(format!("grid mismatch: {self} vs {other}")));
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            1 => write!(f, "{}", self.n),
            _ => write!(f, "{}x{}", self.n, self.n),
        }
    }
}

/// Real scalar function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self { grid, values: grid.points().map(f).collect() }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Quadrature inner product on the unit torus.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        dot(&self.values, &other.values) * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn add_scaled(&mut self, s: f64, other: &GridFunction) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed-form spatial profiles used in configuration files.
///
/// Text forms: `const`, `cos:k`, `sin:k` in one dimension and
/// `cos:k1,k2`, `sin:k1,k2` in two, meaning `cos(2 pi (k . x))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Const,
    Cos([i64; 2]),
    Sin([i64; 2]),
}

impl Shape {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            Shape::Const => 1.0,
            Shape::Cos(k) => (2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).cos(),
            Shape::Sin(k) => (2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).sin(),
        }
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Largest wavenumber component, to check resolution against a grid.
    pub fn max_frequency(&self) -> i64 {
        match self {
            Shape::Const => 0,
            Shape::Cos(k) | Shape::Sin(k) => k[0].abs().max(k[1].abs()),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "const" {
            return Ok(Shape::Const);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("unknown shape label '{s}'")))?;
        let ks = rest
            .split(',')
            .map(|p| p.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad wavenumber in '{s}': {e}")))?;
        let k = match ks.as_slice() {
            [a] => [*a, 0],
            [a, b] => [*a, *b],
            _ => return Err(Error::Config(format!("shape '{s}' needs one or two wavenumbers"))),
        };
        match kind {
            "cos" => Ok(Shape::Cos(k)),
            "sin" => Ok(Shape::Sin(k)),
            _ => Err(Error::Config(format!("unknown shape label '{s}'"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, k) = match self {
            Shape::Const => return write!(f, "const"),
            Shape::Cos(k) => ("cos", k),
            Shape::Sin(k) => ("sin", k),
        };
        if k[1] == 0 {
            write!(f, "{name}:{}", k[0])
        } else {
            write!(f, "{name}:{},{}", k[0], k[1])
        }
    }
}

/// FFT plans for one grid. Cheap to clone, shareable across threads.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.grid.len());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse transform with `1/len` normalization; imaginary parts are dropped.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>, out: &mut [f64]) {
        self.transform(&mut spec, &self.inverse);
        let scale = self.grid.cell_volume();
        for (o, c) in out.iter_mut().zip(&spec) {
            *o = c.re * scale;
        }
    }

    /// Multiplies each Fourier coefficient by `symbol(flat spectral index)`.
    pub fn apply_symbol(&self, values: &mut [f64], symbol: impl Fn(usize) -> Complex64) {
        let mut spec = self.forward(values);
        for (i, c) in spec.iter_mut().enumerate() {
            *c *= symbol(i);
        }
        self.inverse_real(spec, values);
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        match self.grid.dim() {
            1 => plan.process(buf),
            _ => {
                // rows are contiguous
                plan.process(buf);
                let mut col = vec![Complex64::default(); n];
                for j in 0..n {
                    for i in 0..n {
                        col[i] = buf[i * n + j];
                    }
                    plan.process(&mut col);
                    for i in 0..n {
                        buf[i * n + j] = col[i];
                    }
                }
            }
        }
    }

    /// Directional derivative `c . grad u` computed spectrally.
    pub fn directional_derivative(&self, values: &[f64], c: [f64; 2]) -> Vec<f64> {
        let grid = self.grid;
        let mut out = values.to_vec();
        self.apply_symbol(&mut out, |i| {
            let k = grid.derivative_frequency(i);
            Complex64::new(0.0, 2.0 * PI * (c[0] * k[0] + c[1] * k[1]))
        });
        out
    }

    /// Sup norm of the spectral gradient, used for W^{1,inf} bounds.
    pub fn gradient_sup(&self, values: &[f64]) -> f64 {
        (0..self.grid.dim())
            .map(|axis| {
                let mut c = [0.0; 2];
                c[axis] = 1.0;
                self.directional_derivative(values, c)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}
