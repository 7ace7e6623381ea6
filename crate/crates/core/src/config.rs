//! JSON experiment configuration and the models built from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{CorrectorSystem, FunctionalKind, TestFunctional};
use crate::grid::{Grid, GridFunction, Shape};
use crate::kinetic::{KineticField, KineticSolver};
use crate::noise::{ChainSpec, NoiseModel};
use crate::spde::{SpdeSolver, DEFAULT_STEPS};
use crate::velocity::VelocityModel;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub velocity: VelocitySection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub grid: GridSection,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Kinetic trajectories per epsilon.
    pub ensemble: usize,
    /// Limit-equation trajectories; defaults to `ensemble`.
    #[serde(default)]
    pub spde_ensemble: Option<usize>,
    pub final_time: f64,
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub functionals: Vec<FunctionalSection>,
    #[serde(default)]
    pub initial: Option<Vec<TermSection>>,
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    #[serde(default = "default_spde_steps")]
    pub spde_steps: usize,
    /// Bound on `sup E||f||^2 / ||f_0||^2` (squared for the fourth moment).
    #[serde(default = "default_moment_threshold")]
    pub moment_threshold: f64,
    /// Order of the negative Sobolev norm used for mean fields.
    #[serde(default = "default_sobolev_order")]
    pub sobolev_order: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_dt_factor() -> f64 {
    0.1
}

fn default_spde_steps() -> usize {
    DEFAULT_STEPS
}

fn default_moment_threshold() -> f64 {
    4.0
}

fn default_sobolev_order() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VelocitySection {
    /// `two_speed` or `four_speed`; excludes explicit velocities.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub velocities: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub modes: Vec<ModeSection>,
    #[serde(default)]
    pub chains: Vec<ChainSection>,
}

/// A spatial mode: one shape, or a finite Fourier sum.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ModeSection {
    Shape(String),
    Terms { fourier: Vec<TermSection> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub shape: String,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ChainSection {
    Telegraph { telegraph: TelegraphSection },
    General { states: Vec<f64>, rates: Vec<Vec<f64>> },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TelegraphSection {
    pub sigma: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub n: usize,
}

fn default_dim() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSection {
    pub kind: FunctionalKindSection,
    pub weight: ModeSection,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalKindSection {
    Linear,
    Quadratic,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn spde_ensemble(&self) -> usize {
        self.spde_ensemble.unwrap_or(self.ensemble)
    }

    /// Output times with `T` appended, sorted and deduplicated.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.output_times.iter().copied().filter(|&t| t > 0.0 && t < self.final_time).collect();
        t.push(self.final_time);
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epsilons.is_empty() {
            return bad("epsilons must not be empty".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("epsilons must be positive".into());
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return bad("epsilons must be strictly decreasing".into());
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad("final_time must be positive".into());
        }
        if self.output_times.iter().any(|&t| !(t >= 0.0 && t <= self.final_time)) {
            return bad("output_times must lie in [0, final_time]".into());
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 1.0) {
            return bad("dt_factor must lie in (0, 1]".into());
        }
        if self.spde_steps == 0 {
            return bad("spde_steps must be positive".into());
        }
        if !(self.moment_threshold > 0.0) || self.sobolev_order < 0.0 {
            return bad("moment_threshold must be positive and sobolev_order nonnegative".into());
        }
        if self.noise.modes.len() != self.noise.chains.len() {
            return bad(format!(
                "{} noise modes but {} chains",
                self.noise.modes.len(),
                self.noise.chains.len()
            ));
        }
        Grid::new(self.grid.dim, self.grid.n).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Ensemble-size check for the statistical subcommands.
    pub fn require_ensemble(&self, needed: usize) -> Result<()> {
        for found in [self.ensemble, self.spde_ensemble()] {
            if found < needed {
                return Err(Error::Config(format!("ensemble size {found} below the minimum {needed}")));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let grid = Grid::new(self.grid.dim, self.grid.n)?;
        let model = self.velocity_model()?;
        model.diffusion_matrix()?;
        let modes = self.noise.modes.iter().map(|m| mode_function(m, grid)).collect::<Result<Vec<_>>>()?;
        let chains = self.noise.chains.iter().map(ChainSection::build).collect::<Result<Vec<_>>>()?;
        let noise = NoiseModel::new(grid, modes, chains)?;
        let rho0 = match &self.initial {
            Some(terms) => terms_function(terms, grid)?,
            None => GridFunction::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos()),
        };
        let functionals = self
            .functionals
            .iter()
            .map(|f| {
                let kind = match f.kind {
                    FunctionalKindSection::Linear => FunctionalKind::Linear,
                    FunctionalKindSection::Quadratic => FunctionalKind::Quadratic,
                };
                let weight = mode_function(&f.weight, grid)?;
                let prefix = if kind == FunctionalKind::Linear { "linear" } else { "quadratic" };
                Ok(TestFunctional { kind, weight, label: format!("{prefix}:{}", mode_label(&f.weight)) })
            })
            .collect::<Result<Vec<_>>>()?;
        let f0 = KineticField::from_density(&rho0, model.len());
        let kinetic = KineticSolver::new(model.clone(), noise.clone())?;
        let spde = SpdeSolver::new(model.diffusion_matrix()?, &noise)?;
        Ok(Experiment { config: self.clone(), grid, model, noise, rho0, f0, functionals, kinetic, spde })
    }

    fn velocity_model(&self) -> Result<VelocityModel> {
        let v = &self.velocity;
        let model = match (&v.preset, &v.velocities, &v.weights) {
            (Some(p), None, None) => match p.as_str() {
                "two_speed" => VelocityModel::two_speed(),
                "four_speed" => VelocityModel::four_speed(),
                other => return Err(Error::Config(format!("unknown velocity preset {other:?}"))),
            },
            (None, Some(vel), Some(w)) => VelocityModel::new(self.grid.dim, vel.clone(), w.clone())?,
            _ => return Err(Error::Config("velocity needs either a preset or velocities and weights".into())),
        };
        if model.dim() != self.grid.dim {
            return Err(Error::DimensionMismatch { expected: self.grid.dim, found: model.dim() });
        }
        Ok(model)
    }
}

impl ChainSection {
    pub fn build(&self) -> Result<ChainSpec> {
        match self {
            ChainSection::Telegraph { telegraph } => ChainSpec::telegraph(telegraph.sigma, telegraph.lambda),
            ChainSection::General { states, rates } => ChainSpec::new(states.clone(), rates.clone()),
        }
    }
}

fn parse_shape(s: &str) -> Result<Shape> {
    s.parse::<Shape>().map_err(|e| Error::Config(format!("bad shape {s:?}: {e}")))
}

fn terms_function(terms: &[TermSection], grid: Grid) -> Result<GridFunction> {
    let mut out = GridFunction::zeros(grid);
    for t in terms {
        let shape = parse_shape(&t.shape)?;
        if shape.max_frequency() as usize * 2 >= grid.n() {
            return Err(Error::Config(format!("shape {} is not resolved on {grid}", t.shape)));
        }
        out.add_scaled(t.amplitude, &shape.sample(grid));
    }
    Ok(out)
}

fn mode_function(mode: &ModeSection, grid: Grid) -> Result<GridFunction> {
    match mode {
        ModeSection::Shape(s) => terms_function(&[TermSection { shape: s.clone(), amplitude: 1.0 }], grid),
        ModeSection::Terms { fourier } => terms_function(fourier, grid),
    }
}

fn mode_label(mode: &ModeSection) -> String {
    match mode {
        ModeSection::Shape(s) => s.clone(),
        ModeSection::Terms { fourier } => {
            fourier.iter().map(|t| format!("{}*{}", t.amplitude, t.shape)).collect::<Vec<_>>().join("+")
        }
    }
}

/// Everything a run needs, built once from a validated config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub model: VelocityModel,
    pub noise: NoiseModel,
    pub rho0: GridFunction,
    /// Velocity-independent initial datum `f_0(x, v) = rho_0(x)`.
    pub f0: KineticField,
    pub functionals: Vec<TestFunctional>,
    pub kinetic: KineticSolver,
    pub spde: SpdeSolver,
}

impl Experiment {
    pub fn corrector_system(&self) -> Result<CorrectorSystem> {
        CorrectorSystem::new(self.model.clone(), self.noise.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
        "velocity": {"preset": "two_speed"},
        "noise": {"modes": ["cos:1", {"fourier": [{"shape": "const"}, {"shape": "sin:2", "amplitude": 0.5}]}],
                  "chains": [{"telegraph": {"sigma": 1.0, "lambda": 2.0}},
                             {"states": [-1.0, 1.0], "rates": [[-1.0, 1.0], [1.0, -1.0]]}]},
        "grid": {"n": 32},
        "epsilons": [0.2, 0.1],
        "ensemble": 100,
        "final_time": 0.1,
        "output_times": [0.05],
        "functionals": [{"kind": "linear", "weight": "cos:1"}, {"kind": "quadratic", "weight": "const"}]
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(BASIC).unwrap();
        assert_eq!(cfg.dt_factor, 0.1);
        assert_eq!(cfg.moment_threshold, 4.0);
        assert_eq!(cfg.times(), vec![0.05, 0.1]);
        let exp = cfg.build().unwrap();
        assert_eq!(exp.noise.mode_count(), 2);
        assert!((exp.noise.autocovariances()[0] - 0.5).abs() < 1e-12);
        assert_eq!(exp.functionals[0].label, "linear:cos:1");
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let unknown = BASIC.replacen("\"ensemble\"", "\"ensembel\": 3, \"ensemble\"", 1);
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config(_))));
        let increasing = BASIC.replace("[0.2, 0.1]", "[0.1, 0.2]");
        assert!(matches!(ExperimentConfig::from_json(&increasing), Err(Error::Config(_))));
        let grid = BASIC.replace("\"n\": 32", "\"n\": 30");
        assert!(matches!(ExperimentConfig::from_json(&grid), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_json(BASIC).unwrap();
        assert!(cfg.require_ensemble(100).is_ok());
        assert!(cfg.require_ensemble(101).is_err());
    }
}
