use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approximant::{Provenance, TvApproximantSpec, WindowSpec, DEFAULT_STEP};
use crate::bpm::{AngleSequence, ObjectSpec};
use crate::error::{Error, Result};
use crate::grid::OpticalGrid;
use crate::metrics::EvalOptions;
use crate::net::{NetSpec, Network, TrainConfig};

/// Symmetric sweep about x then y: `2 * half_steps + 1` angles per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleConfig {
    pub half_steps: usize,
    pub step_deg: f64,
}

impl Default for AngleConfig {
    fn default() -> Self {
        AngleConfig {
            half_steps: 10,
            step_deg: 1.0,
        }
    }
}

impl AngleConfig {
    pub fn sequence(&self) -> AngleSequence {
        AngleSequence::sweep(self.half_steps, self.step_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_count: usize,
    pub val_count: usize,
    pub seed: u64,
    /// Standard deviation of additive detector noise (0 = noiseless).
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_count: 128,
            val_count: 32,
            seed: 0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproximantConfig {
    /// Gradient-descent step for training approximants.
    pub step: f64,
    pub train_gd_iters: usize,
    /// Gradient descent plus TV denoising for test approximants.
    pub test: TvApproximantSpec,
    pub window: WindowSpec,
}

impl Default for ApproximantConfig {
    fn default() -> Self {
        ApproximantConfig {
            step: DEFAULT_STEP,
            train_gd_iters: 1,
            test: TvApproximantSpec::default(),
            window: WindowSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: EvalOptions,
    /// Approximant flavour fed to the network at evaluation.
    pub approximants: Provenance,
    /// Validation objects whose images are dumped.
    pub dump_objects: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: EvalOptions::default(),
            approximants: Provenance::Test,
            dump_objects: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Everything a run needs; a saved copy reproduces the run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: OpticalGrid,
    pub angles: AngleConfig,
    pub object: ObjectSpec,
    pub data: DataConfig,
    pub approximant: ApproximantConfig,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    /// Worker threads for data-parallel stages (all cores when unset).
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.grid.shape3()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.object.slices != self.grid.slices {
            return Err(Error::Config(format!(
                "object.slices = {} but grid.slices = {}",
                self.object.slices, self.grid.slices
            )));
        }
        let angles = self.angles.sequence();
        for (index, a) in angles.iter().enumerate() {
            a.check_band(&self.grid).map_err(|e| Error::AtAngle {
                index,
                source: Box::new(e),
            })?;
        }
        self.approximant.window.validate(angles.len())?;
        if self.approximant.train_gd_iters == 0 || self.approximant.test.gd_iters == 0 {
            return Err(Error::Config("approximant gradient descent needs at least one iteration".into()));
        }
        if !(self.data.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("data.noise_sigma = {} must be >= 0", self.data.noise_sigma)));
        }
        if self.data.train_count + self.data.val_count == 0 {
            return Err(Error::Config("the dataset must hold at least one object".into()));
        }
        Network::new(self.net.clone(), self.dims())?;
        self.train.validate()?;
        let pool = self.eval.metrics.w1_pool;
        if pool == 0 || self.grid.nx % pool != 0 || self.grid.ny % pool != 0 {
            return Err(Error::Config(format!(
                "eval.metrics.w1_pool = {pool} must divide the {}x{} grid",
                self.grid.nx, self.grid.ny
            )));
        }
        Ok(())
    }
}
