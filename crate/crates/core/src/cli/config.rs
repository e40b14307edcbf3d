use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::{SmoothingKernel, DEFAULT_GRID_SIZE, DEFAULT_SQUARING_STEPS};
use crate::error::{Error, Result};
use crate::loss::{LossKind, ObjectiveConfig, RegularizerConfig, SinkhornConfig};
use crate::optim::{AdamConfig, RegistrationConfig};

/// Every tunable of a command-line run. Read from flat JSON; keys that are
/// not fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub loss: LossKind,
    /// Data weight. `None` picks the default for `loss`.
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sinkhorn: SinkhornConfig,
    pub grid_size: usize,
    pub squaring_steps: u32,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub adam: AdamConfig,
    /// Points per cloud. With MSE this many shared vertex indices are drawn,
    /// capped at the vertex count.
    pub n_samples: usize,
    pub seed: u64,
    /// Scale each input mesh into the centred cube of side 2 before anything else.
    pub normalize: bool,
    /// Similarity ICP rounds aligning the fixed mesh onto the moving one. 0 skips ICP.
    pub icp_iterations: usize,
    /// Drop fixed vertices whose nearest moving vertex lies on the moving mesh border.
    pub crop_to_template: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reg = RegularizerConfig::for_loss(LossKind::Mse);
        RunConfig {
            loss: LossKind::Mse,
            lambda1: None,
            lambda2: reg.lambda2,
            lambda3: reg.lambda3,
            alpha: reg.alpha,
            gamma: reg.gamma,
            sinkhorn: SinkhornConfig::default(),
            grid_size: DEFAULT_GRID_SIZE,
            squaring_steps: DEFAULT_SQUARING_STEPS,
            kernel_size: SmoothingKernel::default().size,
            kernel_sigma: SmoothingKernel::default().sigma,
            adam: AdamConfig::default(),
            n_samples: 5000,
            seed: 0,
            normalize: true,
            icp_iterations: 100,
            crop_to_template: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.into(),
                line,
                message,
            },
            other => other,
        })
    }

    /// Syntax errors become [`Error::Parse`]; well-formed JSON with bad keys
    /// or values becomes [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                Error::Config(e.to_string())
            } else {
                Error::Parse {
                    path: "<config>".into(),
                    line: e.line(),
                    message: e.to_string(),
                }
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1.unwrap_or_else(|| self.loss.default_lambda1())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid_size must be at least 2, got {}", self.grid_size)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        self.adam.validate()?;
        self.registration()?;
        Ok(())
    }

    /// The registration settings this config describes.
    pub fn registration(&self) -> Result<RegistrationConfig> {
        let objective = ObjectiveConfig {
            loss: self.loss,
            sinkhorn: self.sinkhorn,
            regularizer: RegularizerConfig {
                alpha: self.alpha,
                gamma: self.gamma,
                lambda1: self.lambda1(),
                lambda2: self.lambda2,
                lambda3: self.lambda3,
            },
            squaring_steps: self.squaring_steps,
            kernel: SmoothingKernel {
                size: self.kernel_size,
                sigma: self.kernel_sigma,
            },
        };
        objective.validate()?;
        Ok(RegistrationConfig {
            objective,
            adam: self.adam,
            grid_size: self.grid_size,
        })
    }
}
