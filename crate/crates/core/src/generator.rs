//! Perturbed test functions for the kinetic process `(f, n)`.
//!
//! For a functional `phi` of the density alone, the correctors `phi_1`
//! and `phi_2` are built so that `phi^eps = phi + eps phi_1 + eps^2 phi_2`
//! satisfies
//!
//! ```text
//! L^eps phi^eps = L phi + eps L_A phi_2
//! ```
//!
//! exactly, where `L^eps = eps^-2 L_L + eps^-1 L_A` is the generator of
//! the kinetic process and `L` that of the limit equation. Writing
//! `D = Dphi(rho)`, `H = D^2 phi(rho)`, `u = avg(A f)`, `psi(n) = M^-1 I(n)`:
//!
//! ```text
//! phi_1 = -(u, D) - (rho psi(n), D)
//! phi_2 = (avg(A^2 f) - avg(A^2 rho), D) + 1/2 H(u, u)               [n-free]
//!       - (avg(A(f m~(n))), D) - H(u, rho m~(n))
//!       + (u psi~(n), D) + H(rho psi~(n), u)                           [linear in n]
//!       - sum_jk B_jk Phi_jk(n_j, n_k)                                 [quadratic in n]
//! ```
//!
//! with `m~ = sum_j ((1 - G_j)^-1 s_j)(n_j) eta_j`, `psi~` likewise from the
//! chain correctors, `B_jk = -(rho eta_j eta_k, D) - H(rho eta_k, rho eta_j)`
//! and `Phi_jk` the centered Poisson solution of `s_j phi_k` on the product
//! chain of `j` and `k`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Shape, Spectral};
use crate::kinetic::{KineticField, Trajectory};
use crate::noise::{self, NoiseModel};
use crate::stats::RunningStats;
use crate::velocity::{DiffusionMatrix, VelocityModel};

/// Largest product state space solved for one mode pair.
pub const MAX_PAIR_STATES: usize = 1024;
/// Ensembles smaller than this are rejected by the martingale check.
pub const MIN_TRAJECTORIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionalKind {
    /// `(rho, w)`
    Linear,
    /// `1/2 (rho, w)^2`
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctional {
    pub kind: FunctionalKind,
    pub weight: GridFunction,
    pub label: String,
}

impl TestFunctional {
    pub fn linear(weight: GridFunction) -> Self {
        Self { kind: FunctionalKind::Linear, weight, label: "linear".into() }
    }

    pub fn quadratic(weight: GridFunction) -> Self {
        Self { kind: FunctionalKind::Quadratic, weight, label: "quadratic".into() }
    }

    pub fn from_shape(kind: FunctionalKind, shape: &Shape, grid: Grid) -> Self {
        let prefix = match kind {
            FunctionalKind::Linear => "linear",
            FunctionalKind::Quadratic => "quadratic",
        };
        Self { kind, weight: shape.sample(grid), label: format!("{prefix}:{shape}") }
    }

    pub fn value(&self, rho: &GridFunction) -> f64 {
        let s = rho.inner(&self.weight);
        match self.kind {
            FunctionalKind::Linear => s,
            FunctionalKind::Quadratic => 0.5 * s * s,
        }
    }

    /// Gradient `Dphi(rho)` as a grid function.
    pub fn derivative(&self, rho: &GridFunction) -> GridFunction {
        match self.kind {
            FunctionalKind::Linear => self.weight.clone(),
            FunctionalKind::Quadratic => self.weight.scale(rho.inner(&self.weight)),
        }
    }

    /// `D^2 phi(rho)(a, b)`; independent of `rho` for both kinds.
    pub fn hessian(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        match self.kind {
            FunctionalKind::Linear => 0.0,
            FunctionalKind::Quadratic => a.inner(&self.weight) * b.inner(&self.weight),
        }
    }
}

/// Models plus all chain-level solves needed by the correctors.
#[derive(Clone, Debug)]
pub struct CorrectorSystem {
    model: VelocityModel,
    diffusion: DiffusionMatrix,
    noise: NoiseModel,
    spectral: Spectral,
    /// `(1 - G_j)^-1 s_j`
    resolved_states: Vec<Vec<f64>>,
    /// `(1 - G_j)^-1 phi_j`
    resolved_correctors: Vec<Vec<f64>>,
    /// `Phi_jk` indexed `j * J + k`, product index `a * |S_k| + b`.
    pairs: Vec<Vec<f64>>,
}

impl CorrectorSystem {
    pub fn new(model: VelocityModel, noise: NoiseModel) -> Result<Self> {
        let diffusion = model.diffusion_matrix()?;
        if noise.grid().dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: noise.grid().dim() });
        }
        let chains = noise.chains();
        let resolved_states =
            chains.iter().map(|c| c.resolvent(1.0, c.states())).collect::<Result<Vec<_>>>()?;
        let resolved_correctors = chains
            .iter()
            .enumerate()
            .map(|(j, c)| c.resolvent(1.0, noise.corrector(j)))
            .collect::<Result<Vec<_>>>()?;
        let count = chains.len();
        let mut pairs = Vec::with_capacity(count * count);
        for j in 0..count {
            for k in 0..count {
                let (a, b) = (&chains[j], &chains[k]);
                let sol = if j == k {
                    let obs: Vec<f64> = a.states().iter().zip(noise.corrector(j)).map(|(s, p)| s * p).collect();
                    a.solve_poisson(&obs)?
                } else {
                    let size = a.len() * b.len();
                    if size > MAX_PAIR_STATES {
                        return Err(Error::PairBudget(j, k, size));
                    }
                    let (g, pi) = noise::product_chain(a, b);
                    let obs: Vec<f64> = a
                        .states()
                        .iter()
                        .flat_map(|s| noise.corrector(k).iter().map(move |p| s * p))
                        .collect();
                    noise::poisson_solve(&g, &pi, &obs)?
                };
                pairs.push(sol);
            }
        }
        let spectral = Spectral::new(noise.grid());
        Ok(Self { model, diffusion, noise, spectral, resolved_states, resolved_correctors, pairs })
    }

    pub fn model(&self) -> &VelocityModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn diffusion(&self) -> DiffusionMatrix {
        self.diffusion
    }

    fn pair(&self, j: usize, k: usize, n: &[usize]) -> f64 {
        let sol = &self.pairs[j * self.noise.mode_count() + k];
        if j == k {
            sol[n[j]]
        } else {
            sol[n[j] * self.noise.chain(k).len() + n[k]]
        }
    }

    /// `A f = a(v) . grad_x f`, per velocity.
    pub fn transport(&self, f: &KineticField) -> KineticField {
        let mut out = f.clone();
        for v in 0..self.model.len() {
            let d = self.spectral.directional_derivative(f.slice(v), self.model.velocity(v));
            out.slice_mut(v).copy_from_slice(&d);
        }
        out
    }

    fn average(&self, f: &KineticField) -> GridFunction {
        self.model.average(f).expect("dimensions checked by caller")
    }

    /// `div(K grad rho)`, with the same discrete derivative as `A`.
    pub fn diffusion_operator(&self, rho: &GridFunction) -> GridFunction {
        let f = KineticField::from_density(rho, self.model.len());
        self.average(&self.transport(&self.transport(&f)))
    }

    fn check(&self, f: &KineticField, n: &[usize]) -> Result<()> {
        f.grid().check_same(&self.noise.grid())?;
        if f.velocity_count() != self.model.len() {
            return Err(Error::DimensionMismatch { expected: self.model.len(), found: f.velocity_count() });
        }
        self.noise.check_state(n)
    }

    /// Every `f`-dependent quantity entering `phi^eps(f, .)`.
    pub fn expansion<'a>(&'a self, phi: &'a TestFunctional, f: &KineticField) -> Expansion<'a> {
        let rho = self.average(f);
        let d = phi.derivative(&rho);
        let af = self.transport(f);
        let u = self.average(&af);
        let a2f = self.average(&self.transport(&af));
        let a2rho = self.diffusion_operator(&rho);
        let modes = self.noise.modes();
        let count = modes.len();

        let rho_eta: Vec<GridFunction> = modes.iter().map(|m| rho.zip_map(m, |a, b| a * b)).collect();
        let alpha: Vec<f64> = rho_eta.iter().map(|re| re.inner(&d)).collect();
        let beta: Vec<f64> = modes
            .iter()
            .map(|m| self.average(&self.transport(&f.mul_spatial(m))).inner(&d))
            .collect();
        let gamma: Vec<f64> = rho_eta.iter().map(|re| phi.hessian(&u, re)).collect();
        let delta: Vec<f64> = modes.iter().map(|m| u.zip_map(m, |a, b| a * b).inner(&d)).collect();
        let mut coupling = vec![0.0; count * count];
        for j in 0..count {
            for k in 0..count {
                let triple: f64 = rho_eta[j]
                    .values()
                    .iter()
                    .zip(modes[k].values())
                    .zip(d.values())
                    .map(|((a, b), c)| a * b * c)
                    .sum::<f64>()
                    * rho.grid().cell_volume();
                coupling[j * count + k] = -triple - phi.hessian(&rho_eta[k], &rho_eta[j]);
            }
        }
        Expansion {
            system: self,
            phi,
            value: phi.value(&rho),
            u_dot_d: u.inner(&d),
            sharp: (a2f.zip_map(&a2rho, |a, b| a - b)).inner(&d) + 0.5 * phi.hessian(&u, &u),
            alpha,
            beta,
            gamma,
            delta,
            coupling,
            rho,
        }
    }

    /// First corrector `phi_1(f, n)`.
    pub fn corrector1(&self, phi: &TestFunctional, f: &KineticField, n: &[usize]) -> Result<f64> {
        self.check(f, n)?;
        Ok(self.expansion(phi, f).first(n))
    }

    /// Second corrector `phi_2(f, n)`.
    pub fn corrector2(&self, phi: &TestFunctional, f: &KineticField, n: &[usize]) -> Result<f64> {
        self.check(f, n)?;
        Ok(self.expansion(phi, f).second(n))
    }

    /// `phi^eps(f, n)`.
    pub fn perturbed(&self, phi: &TestFunctional, f: &KineticField, n: &[usize], eps: f64) -> Result<f64> {
        self.check(f, n)?;
        Ok(self.expansion(phi, f).perturbed(n, eps))
    }

    /// Parts of the kinetic generator applied to `c0 phi + c1 phi_1 + c2 phi_2`.
    fn generator_parts(
        &self,
        phi: &TestFunctional,
        f: &KineticField,
        n: &[usize],
        weights: [f64; 3],
    ) -> GeneratorParts {
        let eval = |e: &Expansion<'_>, n: &[usize]| e.combination(n, weights);
        let base = self.expansion(phi, f);
        let lf = self.model.relaxation(f).expect("checked");
        let m = self.noise_field(n);
        let drift = self.transport(f).scale(-1.0).axpy(1.0, &f.mul_spatial(&m));
        // Polynomials of degree <= 2 in f: the symmetric difference is exact.
        let directional = |h: &KineticField| {
            let plus = self.expansion(phi, &f.axpy(1.0, h));
            let minus = self.expansion(phi, &f.axpy(-1.0, h));
            0.5 * (eval(&plus, n) - eval(&minus, n))
        };
        GeneratorParts {
            collision: directional(&lf),
            chain: self.chain_generator(n, |s| eval(&base, s)),
            transport: directional(&drift),
        }
    }

    fn noise_field(&self, n: &[usize]) -> GridFunction {
        if n.is_empty() {
            GridFunction::zeros(self.noise.grid())
        } else {
            self.noise.field(n)
        }
    }

    /// `(M psi)(n) = sum_j sum_l G_j[n_j][l] (psi(n with n_j = l) - psi(n))`.
    pub fn chain_generator(&self, n: &[usize], psi: impl Fn(&[usize]) -> f64) -> f64 {
        let here = psi(n);
        let mut scratch = n.to_vec();
        let mut acc = 0.0;
        for (j, chain) in self.noise.chains().iter().enumerate() {
            for l in 0..chain.len() {
                if l == n[j] {
                    continue;
                }
                let rate = chain.rate(n[j], l);
                if rate == 0.0 {
                    continue;
                }
                scratch[j] = l;
                acc += rate * (psi(&scratch) - here);
            }
            scratch[j] = n[j];
        }
        acc
    }

    /// `L_L* phi = (Lf, Dphi) + M phi`, zero for density functionals.
    pub fn collision_generator(&self, phi: &TestFunctional, f: &KineticField, n: &[usize]) -> Result<f64> {
        self.check(f, n)?;
        let p = self.generator_parts(phi, f, n, [1.0, 0.0, 0.0]);
        Ok(p.collision + p.chain)
    }

    /// Order-by-order residuals of the corrector equations:
    /// `[L_L phi, L_A phi + L_L phi_1, L_A phi_1 + L_L phi_2 - L phi]`.
    pub fn hierarchy_residuals(&self, phi: &TestFunctional, f: &KineticField, n: &[usize]) -> Result<[f64; 3]> {
        self.check(f, n)?;
        let p0 = self.generator_parts(phi, f, n, [1.0, 0.0, 0.0]);
        let p1 = self.generator_parts(phi, f, n, [0.0, 1.0, 0.0]);
        let p2 = self.generator_parts(phi, f, n, [0.0, 0.0, 1.0]);
        let limit = self.generator_limit(phi, &self.average(f))?;
        Ok([
            p0.collision + p0.chain,
            p0.transport + p1.collision + p1.chain,
            p1.transport + p2.collision + p2.chain - limit,
        ])
    }

    /// `L^eps phi^eps(f, n)`, assembled term by term.
    pub fn generator_eps(&self, phi: &TestFunctional, f: &KineticField, n: &[usize], eps: f64) -> Result<f64> {
        self.check(f, n)?;
        let p = self.generator_parts(phi, f, n, [1.0, eps, eps * eps]);
        Ok((p.collision + p.chain) / (eps * eps) + p.transport / eps)
    }

    /// `L phi(rho) = (div K grad rho, D) + 1/2 (F rho, D) + 1/2 sum_j c_j H(rho eta_j, rho eta_j)`.
    pub fn generator_limit(&self, phi: &TestFunctional, rho: &GridFunction) -> Result<f64> {
        rho.grid().check_same(&self.noise.grid())?;
        let d = phi.derivative(rho);
        let trace = self.noise.trace();
        let mut out = self.diffusion_operator(rho).inner(&d) + 0.5 * rho.zip_map(&trace, |r, t| r * t).inner(&d);
        for (m, &c) in self.noise.modes().iter().zip(self.noise.autocovariances()) {
            let re = rho.zip_map(m, |a, b| a * b);
            out += 0.5 * c * phi.hessian(&re, &re);
        }
        Ok(out)
    }

    /// Quadratic-variation density of the martingale built on `phi^eps`:
    /// `sum_j sum_l G_j[n_j][l] (phi_1 + eps phi_2)(l) - (phi_1 + eps phi_2)(n))^2`.
    pub fn bracket_density(&self, phi: &TestFunctional, f: &KineticField, n: &[usize], eps: f64) -> Result<f64> {
        self.check(f, n)?;
        let e = self.expansion(phi, f);
        let here = e.first(n) + eps * e.second(n);
        let mut scratch = n.to_vec();
        let mut acc = 0.0;
        for (j, chain) in self.noise.chains().iter().enumerate() {
            for l in (0..chain.len()).filter(|&l| l != n[j]) {
                scratch[j] = l;
                let diff = e.first(&scratch) + eps * e.second(&scratch) - here;
                acc += chain.rate(n[j], l) * diff * diff;
            }
            scratch[j] = n[j];
        }
        Ok(acc)
    }

    /// `phi^eps` and `L^eps phi^eps` along a stored trajectory, then
    /// `M(t) = phi^eps(t) - phi^eps(0) - int_0^t L^eps phi^eps ds` at each
    /// checkpoint (trapezoid rule over the stored snapshot times).
    pub fn martingale_values(
        &self,
        phi: &TestFunctional,
        trajectory: &Trajectory,
        checkpoints: &[f64],
    ) -> Result<MartingaleSample> {
        let eps = trajectory.epsilon;
        let mut values = Vec::with_capacity(trajectory.snapshots.len());
        let mut rates = Vec::with_capacity(trajectory.snapshots.len());
        let mut brackets = Vec::with_capacity(trajectory.snapshots.len());
        for snap in &trajectory.snapshots {
            let f = snap
                .field
                .as_ref()
                .ok_or_else(|| Error::Config("martingale check needs stored kinetic fields".into()))?;
            values.push(self.perturbed(phi, f, &snap.state, eps)?);
            rates.push(self.generator_eps(phi, f, &snap.state, eps)?);
            brackets.push(self.bracket_density(phi, f, &snap.state, eps)?);
        }
        let times: Vec<f64> = trajectory.snapshots.iter().map(|s| s.time).collect();
        let mut out = MartingaleSample { residual: Vec::new(), bracket: Vec::new() };
        let (mut integral, mut bracket) = (0.0, 0.0);
        let mut next = 0;
        for (i, &t) in times.iter().enumerate() {
            if i > 0 {
                let h = t - times[i - 1];
                integral += 0.5 * h * (rates[i] + rates[i - 1]);
                bracket += 0.5 * h * (brackets[i] + brackets[i - 1]);
            }
            while next < checkpoints.len() && (checkpoints[next] - t).abs() <= 1e-9 * t.abs().max(1.0) {
                out.residual.push(values[i] - values[0] - integral);
                out.bracket.push(bracket);
                next += 1;
            }
        }
        if out.residual.len() != checkpoints.len() {
            return Err(Error::Config("checkpoints must coincide with stored snapshot times".into()));
        }
        Ok(out)
    }

    /// Ensemble mean and spread of the martingale residual at each checkpoint.
    pub fn martingale_residual(
        &self,
        phi: &TestFunctional,
        trajectories: &[Trajectory],
        checkpoints: &[f64],
    ) -> Result<Vec<MartingaleCheck>> {
        if trajectories.len() < MIN_TRAJECTORIES {
            return Err(Error::InsufficientEnsemble { found: trajectories.len(), needed: MIN_TRAJECTORIES });
        }
        let samples = trajectories
            .iter()
            .map(|t| self.martingale_values(phi, t, checkpoints))
            .collect::<Result<Vec<_>>>()?;
        Ok(MartingaleCheck::summarize(checkpoints, &samples))
    }
}

#[derive(Clone, Copy, Debug)]
struct GeneratorParts {
    collision: f64,
    chain: f64,
    transport: f64,
}

/// Martingale residual and accumulated bracket for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleSample {
    pub residual: Vec<f64>,
    pub bracket: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MartingaleCheck {
    pub time: f64,
    pub residual: RunningStats,
    /// Ensemble mean of the integrated bracket, the predicted variance.
    pub bracket: RunningStats,
}

impl MartingaleCheck {
    pub fn summarize(checkpoints: &[f64], samples: &[MartingaleSample]) -> Vec<Self> {
        checkpoints
            .iter()
            .enumerate()
            .map(|(i, &time)| {
                let mut residual = RunningStats::default();
                let mut bracket = RunningStats::default();
                for s in samples {
                    residual.push(s.residual[i]);
                    bracket.push(s.bracket[i]);
                }
                Self { time, residual, bracket }
            })
            .collect()
    }

    /// `|mean| <= 3 stderr`.
    pub fn mean_is_zero(&self) -> bool {
        self.residual.mean().abs() <= 3.0 * self.residual.stderr()
    }
}

/// `phi^eps(f, .)` for a fixed `f`, cheap to evaluate at many chain states.
#[derive(Clone, Debug)]
pub struct Expansion<'a> {
    system: &'a CorrectorSystem,
    phi: &'a TestFunctional,
    value: f64,
    u_dot_d: f64,
    sharp: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
    coupling: Vec<f64>,
    rho: GridFunction,
}

impl Expansion<'_> {
    pub fn density(&self) -> &GridFunction {
        &self.rho
    }

    pub fn functional(&self) -> &TestFunctional {
        self.phi
    }

    pub fn base(&self) -> f64 {
        self.value
    }

    pub fn first(&self, n: &[usize]) -> f64 {
        let noise = &self.system.noise;
        let random: f64 = self.alpha.iter().enumerate().map(|(j, a)| noise.corrector(j)[n[j]] * a).sum();
        -self.u_dot_d - random
    }

    pub fn second(&self, n: &[usize]) -> f64 {
        let s = self.system;
        let count = self.alpha.len();
        let mut linear = 0.0;
        for j in 0..count {
            linear += -s.resolved_states[j][n[j]] * (self.beta[j] + self.gamma[j])
                + s.resolved_correctors[j][n[j]] * (self.delta[j] + self.gamma[j]);
        }
        let mut quadratic = 0.0;
        for j in 0..count {
            for k in 0..count {
                quadratic -= self.coupling[j * count + k] * s.pair(j, k, n);
            }
        }
        self.sharp + linear + quadratic
    }

    pub fn perturbed(&self, n: &[usize], eps: f64) -> f64 {
        self.combination(n, [1.0, eps, eps * eps])
    }

    fn combination(&self, n: &[usize], w: [f64; 3]) -> f64 {
        let mut out = w[0] * self.value;
        if w[1] != 0.0 {
            out += w[1] * self.first(n);
        }
        if w[2] != 0.0 {
            out += w[2] * self.second(n);
        }
        out
    }
}

/// Pairwise Poisson residual `max |G_jk Phi_jk - (s_j phi_k - <s_j phi_k>)|`,
/// exposed for diagnostics.
pub fn pair_residual(system: &CorrectorSystem, j: usize, k: usize) -> f64 {
    let noise = system.noise();
    let (a, b) = (noise.chain(j), noise.chain(k));
    let sol = &system.pairs[j * noise.mode_count() + k];
    let (g, obs): (DMatrix<f64>, Vec<f64>) = if j == k {
        let obs = a.states().iter().zip(noise.corrector(j)).map(|(s, p)| s * p).collect();
        (a.rates().clone(), obs)
    } else {
        let (g, _) = noise::product_chain(a, b);
        let obs = a.states().iter().flat_map(|s| noise.corrector(k).iter().map(move |p| s * p)).collect();
        (g, obs)
    };
    let pi: Vec<f64> = if j == k {
        a.stationary().to_vec()
    } else {
        noise::product_chain(a, b).1
    };
    let mean: f64 = pi.iter().zip(&obs).map(|(p, o)| p * o).sum();
    let gs = &g * nalgebra::DVector::from_column_slice(sol);
    gs.iter().zip(&obs).map(|(x, o)| (x - (o - mean)).abs()).fold(0.0, f64::max)
}
