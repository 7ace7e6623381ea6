//! Driving noise `m(t, x) = sum_j m_j(t) eta_j(x)` built from independent
//! finite-state jump chains, with the Poisson-equation solver for the chain
//! generators and the effective statistics derived from it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Spectral};

/// Upper bound on the number of modes.
pub const MAX_MODES: usize = 16;
const ROW_SUM_TOL: f64 = 1e-12;
const CENTER_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-9;

/// One finite-state continuous-time Markov chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    states: Vec<f64>,
    rates: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl ChainSpec {
    /// Validates the rate matrix, solves for the invariant law and checks
    /// that the chain is centered under it.
    pub fn new(states: Vec<f64>, rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::InvalidChain("no states".into()));
        }
        if let Some(s) = states.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidChain(format!("state value {s} is not finite")));
        }
        if rates.len() != n || rates.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidChain(format!("rate matrix must be {n}x{n}")));
        }
        let g = DMatrix::from_fn(n, n, |i, j| rates[i][j]);
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                if i != j && !(g[(i, j)] >= 0.0) {
                    return Err(Error::InvalidChain(format!("negative rate G[{i}][{j}] = {}", g[(i, j)])));
                }
            }
            let row: f64 = g.row(i).sum();
            if row.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidChain(format!("row {i} sums to {row}, not 0")));
            }
        }
        if n == 1 {
            if states[0] != 0.0 {
                return Err(Error::InvalidChain(format!(
                    "single-state chain must sit at 0 to be centered, got {}",
                    states[0]
                )));
            }
            return Ok(Self { states, rates: g, stationary: vec![1.0] });
        }
        check_irreducible(&g)?;
        let stationary = stationary_law(&g)?;
        let mean: f64 = stationary.iter().zip(&states).map(|(p, s)| p * s).sum();
        let smax = states.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if mean.abs() > CENTER_TOL * smax.max(1.0) {
            return Err(Error::InvalidChain(format!("states not centered: stationary mean {mean}")));
        }
        Ok(Self { states, rates: g, stationary })
    }

    /// Two states `-sigma, +sigma`, switching at rate `lambda` each way.
    pub fn telegraph(sigma: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![-sigma, sigma], vec![vec![-lambda, lambda], vec![lambda, -lambda]])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[(from, to)]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn max_abs_state(&self) -> f64 {
        self.states.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Stationary expectation of an observable.
    pub fn expectation(&self, observable: &[f64]) -> f64 {
        self.stationary.iter().zip(observable).map(|(p, v)| p * v).sum()
    }

    /// `(G theta)(k) = sum_l G[k][l] theta(l)`.
    pub fn apply_generator(&self, observable: &[f64]) -> Vec<f64> {
        let v = &self.rates * DVector::from_column_slice(observable);
        v.iter().copied().collect()
    }

    /// Centered solution of `G phi = theta - <theta>`; equals
    /// `-int_0^inf P_t (theta - <theta>) dt`.
    pub fn solve_poisson(&self, observable: &[f64]) -> Result<Vec<f64>> {
        poisson_solve(&self.rates, &self.stationary, observable)
    }

    /// `(alpha - G)^{-1} theta`, the Laplace transform of `P_t theta` at `alpha`.
    pub fn resolvent(&self, alpha: f64, observable: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let a = DMatrix::identity(n, n) * alpha - &self.rates;
        let x = a
            .lu()
            .solve(&DVector::from_column_slice(observable))
            .ok_or_else(|| Error::InvalidChain("singular resolvent".into()))?;
        Ok(x.iter().copied().collect())
    }

    /// `int_R E[m(0) m(t)] dt = -2 sum_k pi_k s_k phi_k` with `G phi = s`.
    pub fn integrated_autocovariance(&self) -> Result<f64> {
        let phi = self.solve_poisson(&self.states)?;
        let c = -2.0 * self.expectation(&self.states.iter().zip(&phi).map(|(s, p)| s * p).collect::<Vec<_>>());
        // c >= 0 analytically; clip rounding noise
        Ok(if c < 0.0 && c > -1e-14 { 0.0 } else { c })
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_discrete(&self.stationary, rng)
    }

    pub fn holding_rate(&self, state: usize) -> f64 {
        -self.rates[(state, state)]
    }
}

fn sample_discrete<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn check_irreducible(g: &DMatrix<f64>) -> Result<()> {
    let n = g.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let r = if forward { g[(i, j)] } else { g[(j, i)] };
                if i != j && r > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (reach(true), reach(false));
    if let Some(k) = (0..n).find(|&k| !fwd[k] || !bwd[k]) {
        return Err(Error::Reducible(format!("state {k} does not communicate with state 0")));
    }
    Ok(())
}

/// Solves `pi^T G = 0, sum pi = 1`.
pub(crate) fn stationary_law(g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = g.nrows();
    let mut a = g.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Reducible("invariant law is not unique".into()))?;
    Ok(pi.iter().map(|&p| p.max(0.0)).collect())
}

/// Centered Poisson solve for a generator with invariant law `pi`, through
/// the nonsingular bordered matrix `G - 1 pi^T`.
pub(crate) fn poisson_solve(g: &DMatrix<f64>, pi: &[f64], observable: &[f64]) -> Result<Vec<f64>> {
    let n = g.nrows();
    if observable.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: observable.len() });
    }
    let mean: f64 = pi.iter().zip(observable).map(|(p, v)| p * v).sum();
    let theta = DVector::from_iterator(n, observable.iter().map(|v| v - mean));
    let a = DMatrix::from_fn(n, n, |i, j| g[(i, j)] - pi[j]);
    let phi = a
        .lu()
        .solve(&theta)
        .ok_or_else(|| Error::Reducible("Poisson system singular beyond constants".into()))?;
    let residual = (g * &phi - &theta).amax();
    let scale = theta.amax().max(1.0);
    if !(residual <= RESIDUAL_TOL * scale) {
        return Err(Error::Reducible(format!("Poisson residual {residual:e}")));
    }
    Ok(phi.iter().copied().collect())
}

/// Generator and invariant law of two independent chains run jointly;
/// product state `(a, b)` has index `a * |B| + b`.
pub fn product_chain(a: &ChainSpec, b: &ChainSpec) -> (DMatrix<f64>, Vec<f64>) {
    let (na, nb) = (a.len(), b.len());
    let ia = DMatrix::<f64>::identity(na, na);
    let ib = DMatrix::<f64>::identity(nb, nb);
    let g = a.rates().kronecker(&ib) + ia.kronecker(b.rates());
    let pi = a
        .stationary()
        .iter()
        .flat_map(|pa| b.stationary().iter().map(move |pb| pa * pb))
        .collect();
    (g, pi)
}

/// Noise field: chain `j` drives mode `j`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    grid: Grid,
    modes: Vec<GridFunction>,
    chains: Vec<ChainSpec>,
    /// Poisson correctors of the identity observable, per chain.
    correctors: Vec<Vec<f64>>,
    autocov: Vec<f64>,
    bound: f64,
}

impl NoiseModel {
    pub fn new(grid: Grid, modes: Vec<GridFunction>, chains: Vec<ChainSpec>) -> Result<Self> {
        if modes.len() != chains.len() {
            return Err(Error::InvalidNoise(format!("{} modes but {} chains", modes.len(), chains.len())));
        }
        if modes.len() > MAX_MODES {
            return Err(Error::InvalidNoise(format!("{} modes exceed the limit of {MAX_MODES}", modes.len())));
        }
        for (j, m) in modes.iter().enumerate() {
            m.grid().check_same(&grid)?;
            if !m.is_finite() {
                return Err(Error::InvalidNoise(format!("mode {j} has non-finite values")));
            }
        }
        let correctors = chains
            .iter()
            .map(|c| c.solve_poisson(c.states()))
            .collect::<Result<Vec<_>>>()?;
        let autocov = chains.iter().map(|c| c.integrated_autocovariance()).collect::<Result<Vec<_>>>()?;

        let spectral = Spectral::new(grid);
        let mut sums = [0.0f64; 4];
        for ((m, c), phi) in modes.iter().zip(&chains).zip(&correctors) {
            let (sup, grad) = (m.max_abs(), spectral.gradient_sup(m.values()));
            let smax = c.max_abs_state();
            let pmax = phi.iter().fold(0.0f64, |a, p| a.max(p.abs()));
            sums[0] += sup * smax;
            sums[1] += grad * smax;
            sums[2] += sup * pmax;
            sums[3] += grad * pmax;
        }
        let bound = sums.iter().cloned().fold(0.0, f64::max);
        Ok(Self { grid, modes, chains, correctors, autocov, bound })
    }

    pub fn zero(grid: Grid) -> Self {
        Self::new(grid, Vec::new(), Vec::new()).expect("empty model is valid")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[GridFunction] {
        &self.modes
    }

    pub fn chains(&self) -> &[ChainSpec] {
        &self.chains
    }

    pub fn chain(&self, j: usize) -> &ChainSpec {
        &self.chains[j]
    }

    /// Poisson corrector `phi_j` of the identity observable of chain `j`.
    pub fn corrector(&self, j: usize) -> &[f64] {
        &self.correctors[j]
    }

    /// Integrated autocovariances `c_j`.
    pub fn autocovariances(&self) -> &[f64] {
        &self.autocov
    }

    /// Constant `C_*` bounding `m` and `M^{-1} I(m)` in `W^{1, inf}`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Sup-norm bound on `m` alone; the growth rate in the energy estimate.
    pub fn sup_bound(&self) -> f64 {
        self.modes.iter().zip(&self.chains).map(|(m, c)| m.max_abs() * c.max_abs_state()).sum()
    }

    pub fn check_state(&self, n: &[usize]) -> Result<()> {
        if n.len() != self.chains.len() {
            return Err(Error::DimensionMismatch { expected: self.chains.len(), found: n.len() });
        }
        for (j, (&k, c)) in n.iter().zip(&self.chains).enumerate() {
            if k >= c.len() {
                return Err(Error::InvalidNoise(format!("state index {k} out of range for chain {j}")));
            }
        }
        Ok(())
    }

    /// `sum_j coeff_j(n_j) eta_j`.
    pub fn combine(&self, coeff: impl Fn(usize) -> f64) -> GridFunction {
        let mut out = GridFunction::zeros(self.grid);
        for (j, m) in self.modes.iter().enumerate() {
            let c = coeff(j);
            if c != 0.0 {
                out.add_scaled(c, m);
            }
        }
        out
    }

    /// The noise field `m(n)` for chain states `n`.
    pub fn field(&self, n: &[usize]) -> GridFunction {
        self.combine(|j| self.chains[j].states()[n[j]])
    }

    /// `M^{-1} I(n) = sum_j phi_j(n_j) eta_j`.
    pub fn m_inverse_field(&self, n: &[usize]) -> Result<GridFunction> {
        self.check_state(n)?;
        Ok(self.combine(|j| self.correctors[j][n[j]]))
    }

    pub fn kernel(&self) -> CovarianceKernel<'_> {
        CovarianceKernel { model: self }
    }

    /// Trace `F(x) = k(x, x)`.
    pub fn trace(&self) -> GridFunction {
        let mut f = GridFunction::zeros(self.grid);
        for (m, &c) in self.modes.iter().zip(&self.autocov) {
            for (o, v) in f.values_mut().iter_mut().zip(m.values()) {
                *o += c * v * v;
            }
        }
        f
    }

    /// `(Qf)(x) = sum_j c_j eta_j(x) (eta_j, f)`.
    pub fn apply_q(&self, f: &GridFunction) -> Result<GridFunction> {
        f.grid().check_same(&self.grid)?;
        let mut out = GridFunction::zeros(self.grid);
        for (m, &c) in self.modes.iter().zip(&self.autocov) {
            out.add_scaled(c * m.inner(f), m);
        }
        Ok(out)
    }

    /// Initial chain states drawn from the invariant laws.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.chains.iter().map(|c| c.sample_stationary(rng)).collect()
    }

    /// Exact event-driven simulation over microscopic time `[0, horizon]`,
    /// started from the invariant laws.
    pub fn simulate_path<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> NoisePath {
        let initial = self.sample_stationary(rng);
        self.simulate_path_from(&initial, horizon, rng)
    }

    pub fn simulate_path_from<R: Rng + ?Sized>(&self, initial: &[usize], horizon: f64, rng: &mut R) -> NoisePath {
        let horizon = horizon.max(0.0);
        let chains = self
            .chains
            .iter()
            .zip(initial)
            .map(|(chain, &start)| {
                let mut jumps = Vec::new();
                let (mut t, mut k) = (0.0, start);
                loop {
                    let q = chain.holding_rate(k);
                    if q <= 0.0 {
                        break;
                    }
                    t += Exp::new(q).expect("positive rate").sample(rng);
                    if t > horizon {
                        break;
                    }
                    let weights: Vec<f64> =
                        (0..chain.len()).map(|l| if l == k { 0.0 } else { chain.rate(k, l) }).collect();
                    k = sample_discrete(&weights, rng);
                    jumps.push((t, k));
                }
                ChainPath { initial: start, jumps }
            })
            .collect();
        NoisePath { horizon, chains }
    }
}

/// `k(x, y) = sum_j c_j eta_j(x) eta_j(y)`, evaluated lazily.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceKernel<'a> {
    model: &'a NoiseModel,
}

impl CovarianceKernel<'_> {
    pub fn eval(&self, x: usize, y: usize) -> f64 {
        self.model
            .modes
            .iter()
            .zip(&self.model.autocov)
            .map(|(m, c)| c * (m.values()[x] * m.values()[y]))
            .sum()
    }

    /// Dense `len x len` matrix, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.model.grid.len();
        (0..n * n).map(|i| self.eval(i / n, i % n)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainPath {
    pub initial: usize,
    /// `(jump time, new state)`, strictly increasing in time.
    pub jumps: Vec<(f64, usize)>,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> usize {
        match self.jumps.partition_point(|&(s, _)| s <= t) {
            0 => self.initial,
            i => self.jumps[i - 1].1,
        }
    }

    /// `int_0^t s(m(u)) du` for a piecewise constant path.
    pub fn integrate(&self, states: &[f64], t: f64) -> f64 {
        let (mut acc, mut last, mut k) = (0.0, 0.0, self.initial);
        for &(s, next) in &self.jumps {
            if s >= t {
                break;
            }
            acc += states[k] * (s - last);
            last = s;
            k = next;
        }
        acc + states[k] * (t - last)
    }
}

/// Realization of all chains over microscopic time `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub horizon: f64,
    pub chains: Vec<ChainPath>,
}

/// One jump of one chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub chain: usize,
    pub state: usize,
}

impl NoisePath {
    /// Path with no chains and no jumps (the zero noise).
    pub fn silent(horizon: f64) -> Self {
        Self { horizon, chains: Vec::new() }
    }

    /// Constant path: every chain held at its initial state.
    pub fn frozen(initial: &[usize], horizon: f64) -> Self {
        Self {
            horizon,
            chains: initial.iter().map(|&k| ChainPath { initial: k, jumps: Vec::new() }).collect(),
        }
    }

    pub fn initial_state(&self) -> Vec<usize> {
        self.chains.iter().map(|c| c.initial).collect()
    }

    pub fn state_at(&self, t: f64) -> Vec<usize> {
        self.chains.iter().map(|c| c.state_at(t)).collect()
    }

    /// All jumps of all chains in time order.
    pub fn events(&self) -> Vec<Jump> {
        let mut ev: Vec<Jump> = self
            .chains
            .iter()
            .enumerate()
            .flat_map(|(chain, p)| p.jumps.iter().map(move |&(time, state)| Jump { time, chain, state }))
            .collect();
        ev.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.chain.cmp(&b.chain)));
        ev
    }

    pub fn jump_count(&self) -> usize {
        self.chains.iter().map(|c| c.jumps.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cyclic3() -> ChainSpec {
        ChainSpec::new(
            vec![-1.0, 0.0, 1.0],
            vec![vec![-1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0], vec![1.0, 0.0, -1.0]],
        )
        .unwrap()
    }

    #[test]
    fn telegraph_stationary_law_is_uniform() {
        let c = ChainSpec::telegraph(1.0, 3.0).unwrap();
        assert!((c.stationary()[0] - 0.5).abs() < 1e-15);
        assert!((c.stationary()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cyclic_chain_is_uniform() {
        let c = cyclic3();
        for &p in c.stationary() {
            assert!((p - 1.0 / 3.0).abs() < 1e-14);
        }
        // pi^T G = 0 by direct multiplication
        let pi = DVector::from_column_slice(c.stationary());
        assert!((c.rates().transpose() * pi).amax() < 1e-15);
    }

    #[test]
    fn single_state_chain_must_be_zero() {
        assert!(ChainSpec::new(vec![0.0], vec![vec![0.0]]).is_ok());
        assert!(ChainSpec::new(vec![1.0], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn rejects_reducible_and_uncentered() {
        let absorbing = ChainSpec::new(vec![-1.0, 1.0], vec![vec![-1.0, 1.0], vec![0.0, 0.0]]);
        assert!(matches!(absorbing, Err(Error::Reducible(_))));
        let skewed = ChainSpec::new(vec![-1.0, 1.0], vec![vec![-1.0, 1.0], vec![2.0, -2.0]]);
        assert!(matches!(skewed, Err(Error::InvalidChain(_))));
        // asymmetric rates with states chosen to center: pi = (2/3, 1/3)
        let centered = ChainSpec::new(vec![-1.0, 2.0], vec![vec![-1.0, 1.0], vec![2.0, -2.0]]);
        assert!(centered.is_ok());
    }

    #[test]
    fn telegraph_poisson_solution() {
        let (sigma, lambda) = (0.7, 2.5);
        let c = ChainSpec::telegraph(sigma, lambda).unwrap();
        let phi = c.solve_poisson(c.states()).unwrap();
        for (p, s) in phi.iter().zip(c.states()) {
            assert!((p + s / (2.0 * lambda)).abs() < 1e-14);
        }
        assert_eq!(c.solve_poisson(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn poisson_residual_on_four_state_chain() {
        let rates = vec![
            vec![-3.0, 1.0, 2.0, 0.0],
            vec![0.5, -1.5, 0.0, 1.0],
            vec![0.0, 2.0, -2.5, 0.5],
            vec![1.0, 0.0, 3.0, -4.0],
        ];
        let g = DMatrix::from_fn(4, 4, |i, j| rates[i][j]);
        let pi = stationary_law(&g).unwrap();
        // centered states for this chain
        let raw = [1.0, -2.0, 0.5, 3.0];
        let mean: f64 = pi.iter().zip(&raw).map(|(p, s)| p * s).sum();
        let states: Vec<f64> = raw.iter().map(|s| s - mean).collect();
        let chain = ChainSpec::new(states, rates).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = chain.expectation(&theta);
            let phi = chain.solve_poisson(&theta).unwrap();
            let g_phi = chain.apply_generator(&phi);
            for (a, t) in g_phi.iter().zip(&theta) {
                assert!((a - (t - mean)).abs() < 1e-10);
            }
            assert!(chain.expectation(&phi).abs() < 1e-12);
        }
    }

    #[test]
    fn telegraph_autocovariance_matches_quadrature() {
        let (sigma, lambda) = (1.3, 0.8);
        let c = ChainSpec::telegraph(sigma, lambda).unwrap().integrated_autocovariance().unwrap();
        assert!((c - sigma * sigma / lambda).abs() < 1e-12);
        // independent oracle: trapezoid of sigma^2 exp(-2 lambda |t|) over R
        let h = 1e-3;
        let steps = (40.0 / h) as usize;
        let mut q = 0.0;
        for i in 0..=steps {
            let t = i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            q += w * sigma * sigma * (-2.0 * lambda * t).exp();
        }
        let oracle = 2.0 * q * h;
        assert!((c - oracle).abs() < 1e-5, "{c} vs {oracle}");
    }

    #[test]
    fn zero_chain_has_zero_autocovariance() {
        let c = ChainSpec::new(vec![0.0, 0.0], vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(c.integrated_autocovariance().unwrap(), 0.0);
    }

    #[test]
    fn resolvent_inverts() {
        let c = cyclic3();
        let theta = [0.3, -1.0, 2.0];
        let r = c.resolvent(1.0, &theta).unwrap();
        let gr = c.apply_generator(&r);
        for k in 0..3 {
            assert!((r[k] - gr[k] - theta[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn product_chain_is_kronecker_sum() {
        let a = ChainSpec::telegraph(1.0, 1.0).unwrap();
        let b = cyclic3();
        let (g, pi) = product_chain(&a, &b);
        assert_eq!(g.nrows(), 6);
        for i in 0..6 {
            assert!(g.row(i).sum().abs() < 1e-14);
        }
        let pi_v = DVector::from_column_slice(&pi);
        assert!((g.transpose() * pi_v).amax() < 1e-14);
    }

    fn model(grid: Grid, shapes: &[&str], chain: ChainSpec) -> NoiseModel {
        let modes = shapes.iter().map(|s| s.parse::<Shape>().unwrap().sample(grid)).collect::<Vec<_>>();
        let chains = vec![chain; modes.len()];
        NoiseModel::new(grid, modes, chains).unwrap()
    }

    #[test]
    fn kernel_and_trace_examples() {
        let grid = Grid::new(1, 32).unwrap();
        let m = model(grid, &["const"], ChainSpec::telegraph(1.0, 1.0).unwrap());
        for i in 0..grid.len() {
            assert!((m.trace().values()[i] - 1.0).abs() < 1e-14);
            assert!((m.kernel().eval(i, (i * 7) % grid.len()) - 1.0).abs() < 1e-14);
        }
        let z = NoiseModel::zero(grid);
        assert!(z.trace().max_abs() == 0.0 && z.kernel().eval(3, 5) == 0.0);

        let cs = model(grid, &["cos:1", "sin:1"], ChainSpec::telegraph(0.5, 2.0).unwrap());
        let c = 0.25 / 2.0;
        assert!(cs.trace().values().iter().all(|f| (f - c).abs() < 1e-14));
        let k = cs.kernel().to_dense();
        let n = grid.len();
        for x in 0..n {
            for y in 0..n {
                assert_eq!(k[x * n + y], k[y * n + x]);
            }
        }
    }

    #[test]
    fn q_acts_as_rank_one_on_normalized_mode() {
        let grid = Grid::new(1, 32).unwrap();
        let eta = Shape::Cos([1, 0]).sample(grid).scale(2f64.sqrt());
        let m = NoiseModel::new(grid, vec![eta.clone()], vec![ChainSpec::telegraph(1.0, 2.0).unwrap()]).unwrap();
        let q = m.apply_q(&eta).unwrap();
        for (a, b) in q.values().iter().zip(eta.values()) {
            assert!((a - 0.5 * b).abs() < 1e-14);
        }
        let orth = Shape::Sin([3, 0]).sample(grid);
        assert!(m.apply_q(&orth).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn m_inverse_field_of_constant_telegraph() {
        let grid = Grid::new(1, 16).unwrap();
        let m = model(grid, &["const"], ChainSpec::telegraph(1.0, 1.0).unwrap());
        let f = m.m_inverse_field(&[1]).unwrap();
        assert!(f.values().iter().all(|v| (v + 0.5).abs() < 1e-14));
        assert!(m.m_inverse_field(&[2]).is_err());
        assert!((m.bound() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paths_are_reproducible_and_well_formed() {
        let grid = Grid::new(1, 8).unwrap();
        let m = model(grid, &["const", "cos:1"], cyclic3());
        let p1 = m.simulate_path(30.0, &mut ChaCha8Rng::seed_from_u64(9));
        let p2 = m.simulate_path(30.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(p1, p2);
        for c in &p1.chains {
            let mut prev = (0.0, c.initial);
            for &(t, k) in &c.jumps {
                assert!(t > prev.0 && t <= 30.0);
                assert_ne!(k, prev.1);
                prev = (t, k);
            }
        }
        let empty = m.simulate_path(0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(empty.jump_count(), 0);
        let ev = p1.events();
        assert!(ev.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn integrate_piecewise_constant_path() {
        let p = ChainPath { initial: 0, jumps: vec![(1.0, 1), (2.5, 0)] };
        let s = [-1.0, 1.0];
        assert!((p.integrate(&s, 3.0) - (-1.0 + 1.5 - 0.5)).abs() < 1e-15);
        assert_eq!(p.state_at(0.5), 0);
        assert_eq!(p.state_at(1.0), 1);
        assert_eq!(p.state_at(2.6), 0);
    }
}
