//! JSON experiment configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kspace::{PhantomSpec, Shape};
use crate::masking::{build_bernoulli2d_density, build_column_density, SamplingDensity, Scheme};
use crate::metrics::default_crop;
use crate::oracle::OracleSuiteConfig;
use crate::trainer::{AdamConfig, FitOptions, ModelSpec, Regime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub rows: usize,
    pub cols: usize,
    pub coils: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub num_ellipses: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { rows: 64, cols: 64, coils: 2, train: 24, val: 4, test: 8, num_ellipses: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub scheme: Scheme,
    pub r: f64,
    pub r_tilde: f64,
    /// Fully sampled centre columns (or square side for 2D masks).
    pub center: usize,
    pub poly_order: u32,
    pub epsilon: f64,
    /// Fully sampled centre square of Original SSDU's 2D Bernoulli Λ.
    pub ssdu_center: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ColumnPoly,
            r: 4.0,
            r_tilde: 2.0,
            center: 4,
            poly_order: 8,
            epsilon: 1e-5,
            ssdu_center: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub model: ModelSpec,
    pub parallel: bool,
    pub divergence_factor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 4,
            optimizer: AdamConfig { learning_rate: 1e-2, ..Default::default() },
            model: ModelSpec::default(),
            parallel: false,
            divergence_factor: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Side of the central SSIM crop; `None` means half the grid height.
    pub crop: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { crop: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub r_tilde: Vec<f64>,
    pub regimes: Vec<Regime>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { r_tilde: vec![1.2, 1.6, 2.0, 4.0, 8.0, 12.0], regimes: Regime::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "n2n-out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub masks: MaskConfig,
    pub regime: Regime,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub oracle: OracleSuiteConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            masks: MaskConfig::default(),
            regime: Regime::SsduProposed,
            training: TrainingConfig::default(),
            metrics: MetricsConfig::default(),
            sweep: SweepConfig::default(),
            oracle: OracleSuiteConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.data.coils, self.data.rows, self.data.cols)
    }

    pub fn crop(&self) -> usize {
        self.metrics.crop.unwrap_or_else(|| default_crop(self.data.rows))
    }

    pub fn phantom_spec(&self, rng_seed: u64) -> PhantomSpec {
        PhantomSpec {
            rows: self.data.rows,
            cols: self.data.cols,
            num_coils: self.data.coils,
            num_ellipses: self.data.num_ellipses,
            rng_seed,
            ..Default::default()
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer.clone(),
            seed: self.seed,
            divergence_factor: self.training.divergence_factor,
            parallel: self.training.parallel,
        }
    }

    /// Sampling density of Ω.
    pub fn primary_density(&self) -> Result<SamplingDensity> {
        let m = &self.masks;
        match m.scheme {
            Scheme::ColumnPoly => build_column_density(self.data.cols, m.center, m.poly_order, m.r),
            Scheme::Bernoulli2D => build_bernoulli2d_density(self.data.rows, self.data.cols, m.center, m.r),
        }
    }

    /// Checks every section; densities are built to surface infeasible
    /// accelerations before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.shape().check_image_scale()?;
        self.phantom_spec(0).validate()?;
        if self.data.train == 0 || self.data.test == 0 {
            return Err(Error::InvalidInput("need at least one training and one test sample".into()));
        }
        if !(self.masks.epsilon > 0.0 && self.masks.epsilon <= 0.1) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0, 0.1], got {}", self.masks.epsilon)));
        }
        self.fit_options().validate()?;
        let crop = self.crop();
        if crop > self.data.rows.min(self.data.cols) || crop < crate::metrics::SSIM_WINDOW {
            return Err(Error::InvalidInput(format!("SSIM crop {crop} must fit the grid and the 7x7 window")));
        }
        if let ModelSpec::Conv(spec) = &self.training.model {
            spec.validate(self.data.coils)?;
        }
        if self.sweep.r_tilde.is_empty() || self.sweep.regimes.is_empty() {
            return Err(Error::InvalidInput("sweep needs at least one R̃ and one regime".into()));
        }
        if let Some(r) = self.sweep.r_tilde.iter().find(|r| !(r.is_finite() && **r >= 1.0)) {
            return Err(Error::InvalidInput(format!("R̃ must be >= 1, got {r}")));
        }
        self.oracle.validate()?;
        self.primary_density()?;
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn resolved_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the resolved configuration. The output location is
    /// left out so moving results does not change their identity.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let json = serde_json::to_string(&canonical)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
