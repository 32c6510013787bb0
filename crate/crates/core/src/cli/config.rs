//! Experiment configuration files.
//!
//! Configs are TOML. Every table rejects unknown keys, and the same layout
//! is published as JSON Schema by `gibbslab schema`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::interaction::{HamiltonianSpec, Kernel, KernelForm};
use crate::sampler::{RunConfig, TemperatureSchedule};
use crate::space::{build_grid, StateSpace};

pub const SCHEMA: &str = include_str!("../../schema/experiment.schema.json");

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceBlock,
    pub hamiltonian: HamiltonianBlock,
    pub schedule: Option<ScheduleBlock>,
    pub run: Option<RunBlock>,
    pub solver: Option<SolverBlock>,
    pub verify: Option<VerifyBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceName {
    Circle,
    Torus2,
    Sphere2,
    Interval,
    Finite,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceBlock {
    pub kind: SpaceName,
    /// Grid resolution; ignored for finite sets.
    pub resolution: Option<usize>,
    /// Number of atoms of a finite set with uniform weights.
    pub points: Option<usize>,
    /// Base weights of a finite set.
    pub weights: Option<Vec<f64>>,
    pub positions: Option<Vec<Vec<f64>>>,
    /// Base density values on the cells of `resolution`.
    pub density: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianBlock {
    #[serde(default)]
    pub terms: Vec<TermBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Constant,
    Cosine,
    Gaussian,
    LogDistance,
    Riesz,
    Tabulated,
    ExternalField,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    pub kernel: KernelName,
    pub order: Option<usize>,
    pub coefficient: Option<f64>,
    pub value: Option<f64>,
    pub bandwidth: Option<f64>,
    pub s: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub truncation: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleBlock {
    Fixed { beta: f64 },
    Proportional { c: f64 },
}

impl From<ScheduleBlock> for TemperatureSchedule {
    fn from(s: ScheduleBlock) -> Self {
        match s {
            ScheduleBlock::Fixed { beta } => TemperatureSchedule::Fixed(beta),
            ScheduleBlock::Proportional { c } => TemperatureSchedule::Proportional(c),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n: Vec<usize>,
    pub sweeps: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub keep_samples: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// A number or one of `"inf"`, `"+inf"`, `"infinity"`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum BetaValue {
    Number(f64),
    Text(String),
}

impl BetaValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            BetaValue::Number(b) => Ok(*b),
            BetaValue::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                _ => config(format!("beta {t:?} is neither a number nor \"inf\"")),
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub betas: Vec<BetaValue>,
    /// Linear tilt `u` on the grid.
    pub tilt: Option<Vec<f64>>,
}

impl SolverBlock {
    pub fn betas(&self) -> Result<Vec<f64>> {
        if self.betas.is_empty() {
            return config("solver.betas is empty");
        }
        self.betas.iter().map(BetaValue::value).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    GibbsIdentity,
    BallRate,
    GammaRecovery,
    Stability,
    H1Rate,
    Orlicz,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub suite: Suite,
    pub n: Option<Vec<usize>>,
    pub beta: Option<f64>,
    /// Inverse temperatures for the stability suite.
    pub betas: Option<Vec<f64>>,
    pub resolutions: Option<Vec<usize>>,
    /// Event `μ(cell) ≥ level` for ball-rate.
    pub cell: Option<usize>,
    pub level: Option<f64>,
    pub draws: Option<usize>,
    pub pairs: Option<usize>,
    /// Number of random measures for h1-rate.
    pub measures: Option<usize>,
    /// Target measure on the grid (defaults to μ₀).
    pub measure: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn space(&self) -> Result<StateSpace> {
        let b = &self.space;
        let mut space = match b.kind {
            SpaceName::Circle => StateSpace::circle(),
            SpaceName::Torus2 => StateSpace::torus2(),
            SpaceName::Sphere2 => StateSpace::sphere2(),
            SpaceName::Interval => StateSpace::interval(),
            SpaceName::Finite => match (&b.weights, b.points) {
                (Some(w), None) => StateSpace::finite(w.clone())?,
                (None, Some(k)) => StateSpace::finite_uniform(k)?,
                (Some(w), Some(k)) if w.len() == k => StateSpace::finite(w.clone())?,
                _ => return config("finite space needs `points` or `weights` (of matching length)"),
            },
        };
        if let Some(p) = &b.positions {
            space = space.with_positions(p.clone())?;
        }
        if let Some(d) = &b.density {
            if space.is_finite() {
                return config("use `weights` for the base measure of a finite set");
            }
            space = space.with_cell_density(self.resolution()?, d.clone())?;
        }
        Ok(space)
    }

    fn resolution(&self) -> Result<usize> {
        match (self.space.kind, self.space.resolution) {
            (SpaceName::Finite, _) => Ok(0),
            (_, Some(r)) if r > 0 => Ok(r),
            _ => config("space.resolution is required for continuous spaces"),
        }
    }

    pub fn kernels(&self) -> Result<Vec<Kernel>> {
        self.hamiltonian.terms.iter().map(term_kernel).collect()
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        let grid = build_grid(&self.space()?, self.resolution()?)?;
        HamiltonianSpec::new(Arc::new(grid), self.kernels()?)
    }

    pub fn schedule(&self) -> Result<TemperatureSchedule> {
        match self.schedule {
            Some(s) => {
                let s = TemperatureSchedule::from(s);
                s.validate()?;
                Ok(s)
            }
            None => config("missing [schedule] block"),
        }
    }

    /// One run configuration per `N`, with `seed` overriding `run.seed`.
    pub fn runs(&self, seed: Option<u64>) -> Result<Vec<RunConfig>> {
        let r = self.run.as_ref().map_or_else(|| config("missing [run] block"), Ok)?;
        if r.n.is_empty() {
            return config("run.n is empty");
        }
        let schedule = self.schedule()?;
        Ok(r.n
            .iter()
            .map(|&n| {
                RunConfig::new(n, schedule, r.sweeps, r.burn_in, seed.unwrap_or(r.seed))
                    .chains(r.chains)
                    .thinning(r.thinning)
                    .keep_samples(r.keep_samples)
            })
            .collect())
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.verify.as_ref().and_then(|v| v.seed))
            .or(self.run.as_ref().map(|r| r.seed))
            .unwrap_or(0)
    }
}

fn term_kernel(t: &TermBlock) -> Result<Kernel> {
    let need = |v: Option<f64>, key: &str| v.map_or_else(|| config(format!("{:?} kernel needs `{key}`", t.kernel)), Ok);
    let (form, default_order) = match t.kernel {
        KernelName::Constant => (KernelForm::Constant(need(t.value, "value")?), 2),
        KernelName::Cosine => (KernelForm::Cosine, 2),
        KernelName::Gaussian => (
            KernelForm::Gaussian {
                bandwidth: need(t.bandwidth, "bandwidth")?,
            },
            2,
        ),
        KernelName::LogDistance => (KernelForm::LogDistance, 2),
        KernelName::Riesz => (KernelForm::Riesz { s: need(t.s, "s")? }, 2),
        KernelName::Tabulated => match &t.values {
            Some(v) => (KernelForm::Tabulated(v.clone()), 2),
            None => return config("tabulated kernel needs `values`"),
        },
        KernelName::ExternalField => match &t.values {
            Some(v) => (KernelForm::ExternalField(v.clone()), 1),
            None => return config("external-field kernel needs `values`"),
        },
    };
    let mut k = Kernel::new(t.order.unwrap_or(default_order), form, t.coefficient.unwrap_or(1.0));
    if let Some(level) = t.truncation {
        k = k.truncated(level);
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[space]
kind = "circle"
resolution = 64

[[hamiltonian.terms]]
kernel = "cosine"

[schedule]
kind = "fixed"
beta = 1.0

[run]
n = [8, 16]
sweeps = 200
burn_in = 50
seed = 3

[solver]
betas = [-2.0, 1, "inf"]
"#;

    #[test]
    fn parses_a_complete_config() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        let spec = c.hamiltonian().unwrap();
        assert_eq!(spec.grid().len(), 64);
        assert_eq!(c.runs(None).unwrap().len(), 2);
        assert_eq!(c.runs(Some(9)).unwrap()[0].seed, 9);
        assert_eq!(c.solver.unwrap().betas().unwrap(), vec![-2.0, 1.0, f64::INFINITY]);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let extra = BASIC.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(matches!(ExperimentConfig::parse(&extra), Err(Error::Config(_))));
        let bad_schedule = BASIC.replace("beta = 1.0", "beta = 1.0\nc = 2.0");
        assert!(ExperimentConfig::parse(&bad_schedule).is_err());
        let missing = BASIC.replace("sweeps = 200\n", "");
        assert!(ExperimentConfig::parse(&missing).is_err());
        let no_space = BASIC.replace("[space]\nkind = \"circle\"\nresolution = 64\n", "");
        assert!(ExperimentConfig::parse(&no_space).is_err());
        let unknown_kernel = BASIC.replace("\"cosine\"", "\"sine\"");
        assert!(ExperimentConfig::parse(&unknown_kernel).is_err());
    }

    #[test]
    fn finite_spaces_and_kernel_parameters() {
        let text = r#"
[space]
kind = "finite"
weights = [1.0, 3.0]

[[hamiltonian.terms]]
kernel = "tabulated"
values = [1.0, 0.0, 0.0, 1.0]
coefficient = 0.5

[[hamiltonian.terms]]
kernel = "external-field"
values = [0.0, 1.0]
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        let spec = c.hamiltonian().unwrap();
        assert!((spec.grid().weights()[1] - 0.75).abs() < 1e-15);
        assert_eq!(spec.terms()[1].order, 1);
        let no_bandwidth = text.replace("\"tabulated\"", "\"gaussian\"");
        assert!(ExperimentConfig::parse(&no_bandwidth).unwrap().kernels().is_err());
        assert!(ExperimentConfig::parse(BASIC).unwrap().schedule().is_ok());
        let empty = BASIC.replace("betas = [-2.0, 1, \"inf\"]", "betas = []");
        assert!(ExperimentConfig::parse(&empty)
            .unwrap()
            .solver
            .unwrap()
            .betas()
            .is_err());
    }

    #[test]
    fn schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert!(v["required"].as_array().unwrap().iter().any(|r| r == "space"));
    }
}
