//! Run configuration: one flat TOML document holding every hyperparameter,
//! with command-line flags overriding file values. A validated snapshot is
//! written into each run directory so experiments replay from one artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::train::TrainSettings;
use crate::ingest::WindowSpec;
use crate::smc::{SoftResampleConfig, StepConfig};

fn d_window_length() -> usize {
    100
}
fn d_particles() -> usize {
    30
}
fn d_cheb_order() -> usize {
    3
}
fn d_layers() -> usize {
    2
}
fn d_hidden_dim() -> usize {
    64
}
fn d_mlp_dim() -> usize {
    32
}
fn d_learning_rate() -> f64 {
    0.01
}
fn d_batch_size() -> usize {
    12
}
fn d_alpha() -> f64 {
    0.5
}
fn d_knn() -> usize {
    5
}
fn d_sigma() -> f64 {
    1.0
}
fn d_shrinkage() -> f64 {
    0.1
}
fn d_seed() -> u64 {
    42
}
fn d_init_noise() -> f64 {
    0.05
}
fn d_ess_trigger() -> f64 {
    1.0
}
fn d_epochs() -> usize {
    12
}
fn d_patience() -> usize {
    4
}
fn d_jobs() -> usize {
    1
}
fn d_classes() -> usize {
    2
}

/// Every experiment knob. The stride has no default: window overlap changes
/// the effective dataset size so much that it must be stated explicitly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_window_length")]
    pub window_length: usize,
    pub stride: Option<usize>,
    #[serde(default = "d_particles")]
    pub particles: usize,
    #[serde(default = "d_cheb_order")]
    pub cheb_order: usize,
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "d_mlp_dim")]
    pub mlp_dim: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_knn")]
    pub knn: usize,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_shrinkage")]
    pub shrinkage: f64,
    /// Per-row sparsification degree; None resolves to ⌈R/10⌉ at use.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Cap on windows per sample; None keeps every window.
    #[serde(default)]
    pub max_windows: Option<usize>,
    #[serde(default = "d_init_noise")]
    pub init_noise: f64,
    #[serde(default = "d_ess_trigger")]
    pub ess_trigger: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_jobs")]
    pub jobs: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window_length: d_window_length(),
            stride: None,
            particles: d_particles(),
            cheb_order: d_cheb_order(),
            layers: d_layers(),
            hidden_dim: d_hidden_dim(),
            mlp_dim: d_mlp_dim(),
            learning_rate: d_learning_rate(),
            batch_size: d_batch_size(),
            alpha: d_alpha(),
            knn: d_knn(),
            sigma: d_sigma(),
            shrinkage: d_shrinkage(),
            top_k: None,
            seed: d_seed(),
            max_windows: None,
            init_noise: d_init_noise(),
            ess_trigger: d_ess_trigger(),
            epochs: d_epochs(),
            patience: d_patience(),
            jobs: d_jobs(),
            classes: d_classes(),
        }
    }
}

/// Optional values layered on top of a file config; `None` leaves the
/// underlying value alone. The CLI maps its flags into this.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub window_length: Option<usize>,
    pub stride: Option<usize>,
    pub particles: Option<usize>,
    pub cheb_order: Option<usize>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub mlp_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub alpha: Option<f64>,
    pub knn: Option<usize>,
    pub sigma: Option<f64>,
    pub shrinkage: Option<f64>,
    pub top_k: Option<usize>,
    pub seed: Option<u64>,
    pub max_windows: Option<usize>,
    pub init_noise: Option<f64>,
    pub ess_trigger: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub jobs: Option<usize>,
    pub classes: Option<usize>,
}

macro_rules! apply_field {
    ($cfg:ident, $ovr:ident, $($field:ident),+) => {
        $(if let Some(v) = $ovr.$field { $cfg.$field = Some(v); })+
    };
}

macro_rules! apply_plain_field {
    ($cfg:ident, $ovr:ident, $($field:ident),+) => {
        $(if let Some(v) = $ovr.$field { $cfg.$field = v; })+
    };
}

impl RunConfig {
    /// Reads a TOML file, layers the overrides, validates.
    pub fn load(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::input(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &ConfigOverrides) {
        apply_plain_field!(
            self, overrides, window_length, particles, cheb_order, layers, hidden_dim,
            mlp_dim, learning_rate, batch_size, alpha, knn, sigma, shrinkage, seed,
            init_noise, ess_trigger, epochs, patience, jobs, classes
        );
        apply_field!(self, overrides, stride, top_k, max_windows);
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 {
            return Err(Error::input("window length must be at least 2"));
        }
        match self.stride {
            None => return Err(Error::input("stride is required")),
            Some(0) => return Err(Error::input("invalid stride")),
            Some(_) => {}
        }
        if self.particles == 0 {
            return Err(Error::input("particle count must be at least 1"));
        }
        if self.cheb_order == 0 {
            return Err(Error::input("Chebyshev order must be at least 1"));
        }
        if self.layers < 2 {
            return Err(Error::input("need at least 2 convolution layers"));
        }
        if self.hidden_dim == 0 || self.mlp_dim == 0 {
            return Err(Error::input("layer widths must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::input("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::input(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.knn == 0 {
            return Err(Error::input("knn must be at least 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::input("bandwidth sigma must be positive"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::input(format!(
                "shrinkage must be in (0, 1], got {}",
                self.shrinkage
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::input("top-k must be at least 1"));
        }
        if self.max_windows == Some(0) {
            return Err(Error::input("max windows must be at least 1"));
        }
        if self.init_noise < 0.0 {
            return Err(Error::input("noise scale must be non-negative"));
        }
        if !(self.ess_trigger > 0.0 && self.ess_trigger <= 1.0) {
            return Err(Error::input(format!(
                "resample trigger must be in (0, 1], got {}",
                self.ess_trigger
            )));
        }
        if self.epochs == 0 {
            return Err(Error::input("epoch budget must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::input("patience must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(Error::input("jobs must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::input("need at least 2 classes"));
        }
        Ok(())
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        Ok(WindowSpec {
            window_length: self.window_length,
            stride: self.stride.ok_or_else(|| Error::input("stride is required"))?,
        })
    }

    /// ⌈R/10⌉ unless pinned explicitly.
    pub fn top_k_for(&self, nodes: usize) -> usize {
        self.top_k.unwrap_or(nodes.div_ceil(10))
    }

    pub fn step_config(&self, nodes: usize) -> StepConfig {
        StepConfig {
            knn: self.knn,
            sigma: self.sigma,
            k_top: self.top_k_for(nodes),
            resample: SoftResampleConfig {
                alpha: self.alpha,
                trigger: self.ess_trigger,
            },
        }
    }

    pub fn train_settings(&self, nodes: usize) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            hidden_dim: self.hidden_dim,
            mlp_dim: self.mlp_dim,
            layers: self.layers,
            cheb_order: self.cheb_order,
            classes: self.classes,
            particles: self.particles,
            init_noise: self.init_noise,
            step: self.step_config(nodes),
            jobs: self.jobs,
            seed: self.seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::input(format!("cannot serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
