//! Finite velocity sets with atomic weights, the relaxation operator
//! `Lf = rho - f`, and the effective diffusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kinetic::KineticField;

const MOMENT_TOL: f64 = 1e-12;
/// Smallest eigenvalue of `K` must exceed this fraction of the largest.
pub const SPD_RELATIVE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    dim: usize,
    velocities: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

/// Symmetric `d x d` matrix stored padded to 2x2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionMatrix {
    dim: usize,
    entries: [[f64; 2]; 2],
}

impl DiffusionMatrix {
    pub fn new(dim: usize, entries: [[f64; 2]; 2]) -> Self {
        Self { dim, entries }
    }

    pub fn isotropic(dim: usize, value: f64) -> Self {
        let mut entries = [[0.0; 2]; 2];
        for (p, row) in entries.iter_mut().enumerate().take(dim) {
            row[p] = value;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.entries[p][q]
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.entries
    }

    /// `xi^T K xi`.
    pub fn quadratic_form(&self, xi: [f64; 2]) -> f64 {
        let mut s = 0.0;
        for p in 0..self.dim {
            for q in 0..self.dim {
                s += xi[p] * self.entries[p][q] * xi[q];
            }
        }
        s
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.entries[0][0]];
        }
        let [[a, b], [_, c]] = self.entries;
        let mean = 0.5 * (a + c);
        let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        vec![mean - radius, mean + radius]
    }

    pub fn is_positive_definite(&self) -> bool {
        let eig = self.eigenvalues();
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max > 0.0 && eig.iter().all(|&l| l > SPD_RELATIVE_TOL * max)
    }
}

impl VelocityModel {
    /// Builds a model; only structural shape is checked here, the moment
    /// hypotheses are reported by [`VelocityModel::validate`].
    pub fn new(dim: usize, velocities: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidVelocityModel(vec![format!("dimension {dim} not in {{1, 2}}")]));
        }
        if velocities.is_empty() {
            return Err(Error::InvalidVelocityModel(vec!["no velocities".into()]));
        }
        if velocities.len() != weights.len() {
            return Err(Error::InvalidVelocityModel(vec![format!(
                "{} velocities but {} weights",
                velocities.len(),
                weights.len()
            )]));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidVelocityModel(vec![format!("weight {w} is not a nonnegative number")]));
        }
        let mut padded = Vec::with_capacity(velocities.len());
        for v in &velocities {
            if v.len() != dim {
                return Err(Error::InvalidVelocityModel(vec![format!(
                    "velocity {v:?} has {} components, expected {dim}",
                    v.len()
                )]));
            }
            let mut a = [0.0; 2];
            a[..dim].copy_from_slice(v);
            padded.push(a);
        }
        Ok(Self { dim, velocities: padded, weights })
    }

    /// Velocities `+1, -1` with equal weights; `K = 1`.
    pub fn two_speed() -> Self {
        Self::new(1, vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).expect("valid")
    }

    /// The four axis directions in the plane with weight 1/4; `K = I/2`.
    pub fn four_speed() -> Self {
        Self::new(
            2,
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![0.25; 4],
        )
        .expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn velocity(&self, i: usize) -> [f64; 2] {
        self.velocities[i]
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .map(|a| (a[0] * a[0] + a[1] * a[1]).sqrt())
            .fold(0.0, f64::max)
    }

    fn second_moment(&self) -> DiffusionMatrix {
        let mut k = [[0.0; 2]; 2];
        for (a, &w) in self.velocities.iter().zip(&self.weights) {
            for p in 0..self.dim {
                for q in 0..self.dim {
                    k[p][q] += w * a[p] * a[q];
                }
            }
        }
        DiffusionMatrix::new(self.dim, k)
    }

    /// All violated structure hypotheses; empty iff the model is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > MOMENT_TOL {
            violations.push(format!("weights sum to {total}, not 1"));
        }
        let scale = self.max_speed().max(1.0);
        for p in 0..self.dim {
            let m: f64 = self.velocities.iter().zip(&self.weights).map(|(a, w)| w * a[p]).sum();
            if m.abs() > MOMENT_TOL * scale {
                violations.push(format!("first moment nonzero: component {p} is {m}"));
            }
        }
        let k = self.second_moment();
        if !k.is_positive_definite() {
            violations.push(format!("K singular: eigenvalues {:?}", k.eigenvalues()));
        }
        violations
    }

    /// `K = sum_i w_i a_i (x) a_i`.
    pub fn diffusion_matrix(&self) -> Result<DiffusionMatrix> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidVelocityModel(violations));
        }
        Ok(self.second_moment())
    }

    /// Velocity average `rho(x) = sum_i w_i f(x, v_i)`.
    pub fn average(&self, f: &KineticField) -> Result<GridFunction> {
        if f.velocity_count() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: f.velocity_count() });
        }
        let npts = f.grid().len();
        let mut rho = vec![0.0; npts];
        for (i, &w) in self.weights.iter().enumerate() {
            for (r, v) in rho.iter_mut().zip(f.slice(i)) {
                *r += w * v;
            }
        }
        GridFunction::from_values(f.grid(), rho)
    }

    /// Relaxation operator `Lf = rho - f`.
    pub fn relaxation(&self, f: &KineticField) -> Result<KineticField> {
        let rho = self.average(f)?;
        let mut out = f.clone();
        for i in 0..self.len() {
            for (o, r) in out.slice_mut(i).iter_mut().zip(rho.values()) {
                *o = r - *o;
            }
        }
        Ok(out)
    }
}
