//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use infostate::control::QuadraticCost;
use infostate::io::{from_row_major, read_system};
use infostate::plants::{
    double_integrator, make_cartpole_linearized, make_ltv_oscillator, make_spring_mass_3dof, scalar_plant,
    CartPoleNominal, InitLaw, InputLaw,
};
use infostate::{DVector, LtvSystem, NoiseSpec};
use serde::{Deserialize, Serialize};

/// ARMA order: a fixed value or chosen from the data-matrix rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderChoice {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for OrderChoice {
    fn default() -> Self {
        OrderChoice::Auto(AutoTag::Auto)
    }
}

impl FromStr for OrderChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::default());
        }
        s.parse::<usize>()
            .ok()
            .filter(|&q| q > 0)
            .map(OrderChoice::Fixed)
            .ok_or_else(|| format!("expected \"auto\" or a positive integer, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    Zero,
    Gaussian { sigma: f64 },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Gaussian { sigma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Row-major `r × r`.
    pub process: Vec<f64>,
    /// Row-major `m × m`.
    pub measurement: Vec<f64>,
}

/// Scaled-identity weights `Q = q·I`, `R = r·I`, `Q_f = qf·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub q: f64,
    pub r: f64,
    pub qf: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { q: 1.0, r: 0.1, qf: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest relative held-out prediction error.
    pub prediction: f64,
    /// Largest relative cost gap between the two controllers.
    pub cost_gap: f64,
    /// Largest relative per-step input difference between the controllers.
    pub input_diff: f64,
    /// Largest normalized error of the recovered open-loop Markov parameters.
    pub openloop_markov: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { prediction: 1e-6, cost_gap: 1e-6, input_diff: 1e-7, openloop_markov: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in plant: `spring_mass`, `oscillator`, `cartpole`,
    /// `double_integrator` or `scalar`.
    pub plant: String,
    /// Plant matrices from a file; takes precedence over `plant`.
    pub system_file: Option<PathBuf>,
    pub scalar: Option<ScalarConfig>,
    pub horizon: Option<usize>,
    pub n_rollouts: usize,
    pub held_out: usize,
    pub seed: u64,
    pub input_sigma: f64,
    pub init: InitConfig,
    pub q: OrderChoice,
    pub tol: f64,
    pub noise: Option<NoiseConfig>,
    pub cost: CostConfig,
    pub x0: Option<Vec<f64>>,
    pub warmup: Option<Vec<Vec<f64>>>,
    pub thresholds: Thresholds,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: "spring_mass".into(),
            system_file: None,
            scalar: None,
            horizon: None,
            n_rollouts: 200,
            held_out: 100,
            seed: 0,
            input_sigma: 1.0,
            init: InitConfig::default(),
            q: OrderChoice::default(),
            tol: 1e-8,
            noise: None,
            cost: CostConfig::default(),
            x0: None,
            warmup: None,
            thresholds: Thresholds::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(file) = cfg.system_file.as_mut() {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn input_law(&self) -> InputLaw {
        InputLaw::Gaussian { sigma: self.input_sigma }
    }

    pub fn init_law(&self) -> InitLaw {
        match self.init {
            InitConfig::Zero => InitLaw::Zero,
            InitConfig::Gaussian { sigma } => InitLaw::Gaussian { sigma },
        }
    }

    /// Builds the plant and checks every dimension-dependent field against it.
    pub fn build(&self) -> Result<Experiment> {
        ensure!(self.n_rollouts > 0, "n_rollouts must be positive");
        ensure!(self.held_out > 0, "held_out must be positive");
        ensure!(self.tol > 0.0 && self.tol < 1.0, "tol must lie in (0, 1), got {}", self.tol);
        ensure!(self.input_sigma >= 0.0, "input_sigma must be non-negative");
        if let InitConfig::Gaussian { sigma } = self.init {
            ensure!(sigma >= 0.0, "init sigma must be non-negative");
        }
        let sys = self.plant_system()?;
        let (n, m, r) = (sys.n(), sys.m(), sys.r());
        let noise = self
            .noise
            .as_ref()
            .map(|nc| -> Result<NoiseSpec> {
                Ok(NoiseSpec::new(from_row_major(r, r, &nc.process)?, from_row_major(m, m, &nc.measurement)?)?)
            })
            .transpose()
            .context("noise covariances")?;
        let cost = QuadraticCost::scaled_identity(m, r, self.cost.q, self.cost.r, self.cost.qf).context("cost weights")?;
        let x0 = match &self.x0 {
            Some(v) => {
                ensure!(v.len() == n, "x0 has length {}, plant state dimension is {n}", v.len());
                Some(DVector::from_column_slice(v))
            }
            None => None,
        };
        let warmup = match &self.warmup {
            Some(w) => {
                ensure!(w.iter().all(|u| u.len() == r), "warmup inputs must have length {r}");
                Some(w.iter().map(|u| DVector::from_column_slice(u)).collect())
            }
            None => None,
        };
        if let OrderChoice::Fixed(q) = self.q {
            ensure!(q > 0 && q <= sys.horizon(), "q = {q} must lie in 1..={}", sys.horizon());
        }
        Ok(Experiment { sys, noise, cost, x0, warmup })
    }

    fn plant_system(&self) -> Result<LtvSystem> {
        let sys = if let Some(file) = &self.system_file {
            read_system(file).with_context(|| format!("loading system file {}", file.display()))?
        } else {
            match self.plant.as_str() {
                "spring_mass" => make_spring_mass_3dof()?,
                "oscillator" => make_ltv_oscillator()?,
                "cartpole" => make_cartpole_linearized(&CartPoleNominal::hanging(self.horizon.unwrap_or(30)), 0.02)?,
                "double_integrator" => double_integrator(30)?,
                "scalar" => {
                    let s = self.scalar.clone().unwrap_or(ScalarConfig { a: 0.5, b: 1.0, c: 1.0 });
                    scalar_plant(s.a, s.b, s.c, 20)?
                }
                other => bail!("unknown plant {other:?}"),
            }
        };
        match self.horizon {
            Some(h) if h != sys.horizon() => {
                ensure!(h > 0, "horizon must be positive");
                sys.with_horizon(h)
                    .with_context(|| format!("plant {} is time-varying; its horizon is fixed at {}", sys.name(), sys.horizon()))
            }
            _ => Ok(sys),
        }
    }
}

/// A validated configuration with its plant.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub sys: LtvSystem,
    pub noise: Option<NoiseSpec>,
    pub cost: QuadraticCost,
    pub x0: Option<DVector<f64>>,
    pub warmup: Option<Vec<DVector<f64>>>,
}
