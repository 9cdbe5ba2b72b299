//! Run configuration: TOML in, validated scenario and training settings out.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::actuation::{FallbackConfig, FieldModel, PidGains};
use crate::compensator::{IterationConfig, Scenario};
use crate::disturbance::DisturbanceModel;
use crate::error::{Error, Result};
use crate::gru::TrainConfig;
use crate::sim::InertiaTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// kg·m², row by row.
    pub inertia: [[f64; 3]; 3],
    pub integral_clamp: f64,
    /// Z-Y-X Euler error at t = 0, rad.
    pub initial_euler: [f64; 3],
    /// rad/s
    pub initial_rate: [f64; 3],
    /// s
    pub control_dt: f64,
    pub substeps: usize,
    pub gains: PidGains,
    pub field: FieldModel,
    pub fallback: FallbackConfig,
    pub disturbance: DisturbanceModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let s = Scenario::default();
        let i = s.inertia.matrix();
        ScenarioConfig {
            inertia: std::array::from_fn(|r| std::array::from_fn(|c| i[(r, c)])),
            integral_clamp: s.integral_clamp,
            initial_euler: s.initial_euler.into(),
            initial_rate: s.initial_rate.into(),
            control_dt: s.control_dt,
            substeps: s.substeps,
            gains: s.gains,
            field: s.field,
            fallback: s.fallback,
            disturbance: s.disturbance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for every random stream of the run.
    pub seed: u64,
    /// Used when no output directory is given on the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub iterations: IterationConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: None,
            scenario: ScenarioConfig::default(),
            iterations: IterationConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn finite3(name: &str, v: &[f64; 3]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be finite")))
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        self.inertia()?;
        if !(s.integral_clamp > 0.0 && s.integral_clamp.is_finite()) {
            return Err(Error::Validation(
                "scenario.integral_clamp must be > 0".into(),
            ));
        }
        finite3("scenario.initial_euler", &s.initial_euler)?;
        finite3("scenario.initial_rate", &s.initial_rate)?;
        if !(s.control_dt > 0.0 && s.control_dt.is_finite()) {
            return Err(Error::Validation("scenario.control_dt must be > 0".into()));
        }
        if s.substeps == 0 {
            return Err(Error::Validation("scenario.substeps must be > 0".into()));
        }
        s.gains.validate()?;
        s.field.validate()?;
        s.fallback.validate()?;
        s.disturbance.validate()?;
        self.iterations.validate(s.control_dt)?;
        self.train.validate()?;
        if self.iterations.steps(s.control_dt) < self.train.window + 1 {
            return Err(Error::Validation(
                "iterations.period must exceed train.window samples".into(),
            ));
        }
        Ok(())
    }

    fn inertia(&self) -> Result<InertiaTensor> {
        let m = Matrix3::from_fn(|r, c| self.scenario.inertia[r][c]);
        InertiaTensor::new(m).map_err(|_| {
            Error::Validation("scenario.inertia must be symmetric positive definite".into())
        })
    }

    /// Validated scenario with the disturbance noise tied to the run seed.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.scenario;
        Ok(Scenario {
            inertia: self.inertia()?,
            gains: s.gains,
            integral_clamp: s.integral_clamp,
            field: s.field,
            fallback: s.fallback,
            disturbance: DisturbanceModel {
                seed: self.seed,
                ..s.disturbance.clone()
            },
            initial_euler: Vector3::from(s.initial_euler),
            initial_rate: Vector3::from(s.initial_rate),
            control_dt: s.control_dt,
            substeps: s.substeps,
        })
    }

    /// Shortened campaign for smoke runs.
    pub fn quick(mut self) -> Self {
        self.iterations.period = 1000.0 * self.scenario.control_dt;
        self.train.restarts = 1;
        self.train.max_epochs = 100;
        self.train.patience = self.train.patience.min(20);
        self
    }

    /// Effective configuration as TOML; parsing it gives back `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text, &path.display().to_string())
}
