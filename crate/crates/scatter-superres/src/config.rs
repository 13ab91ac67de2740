//! Experiment configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid_order::OrderParams;
use crate::imaging::SweepSetup;
use crate::sparse_dict::{GelmaParams, RefineOptions, Step1Params};
use crate::wavefield::{frequency_band, AmplitudeLaw, ArrayGeometry, FrequencyScheme, ImageGrid, MediumSpec};
use crate::{Error, Point3, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Physics {
    /// Hz.
    pub center_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    pub frequencies: FrequencyScheme,
    /// m/s.
    pub background_speed: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            center_frequency: 5e9,
            bandwidth: 1e9,
            frequencies: FrequencyScheme::Count(26),
            background_speed: 3e8,
        }
    }
}

impl Physics {
    pub fn wavelength(&self) -> f64 {
        self.background_speed / self.center_frequency
    }
}

/// Linear array on range = 0. Lengths in wavelengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub aperture: f64,
    pub spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig { aperture: 30.0, spacing: 1.0 }
    }
}

/// Image window; center in meters, spacings in wavelengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub center_cross: f64,
    pub center_range: f64,
    pub n_cross: usize,
    pub n_range: usize,
    pub spacing_cross: f64,
    pub spacing_range: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            center_cross: 0.0,
            center_range: 14.0,
            n_cross: 19,
            n_range: 19,
            spacing_cross: 0.5,
            spacing_range: 1.66,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub measurements: usize,
    pub sparsity: usize,
    pub amplitudes: AmplitudeLaw,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { measurements: 5000, sparsity: 3, amplitudes: AmplitudeLaw::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub medium: u64,
    pub data: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { medium: 900, data: 1, init: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initialization {
    /// Correlation-based blind initializer.
    Step1,
    /// True normalized columns plus complex noise of the given relative size
    /// per column. Needs the simulated sensing matrix.
    Perturbed { relative: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub init: Initialization,
    pub step1: Step1Params,
    pub gelma: GelmaParams,
    pub refine: RefineOptions,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            init: Initialization::Step1,
            step1: Step1Params::default(),
            gelma: GelmaParams::default(),
            refine: RefineOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderConfig {
    #[serde(flatten)]
    pub params: OrderParams,
    /// Grid indices used as anchors; empty means three corners.
    pub anchors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_points: usize,
    /// Number of consensus columns; 0 means the grid size.
    pub k_target: usize,
    pub eps_sweep: Vec<f64>,
    /// Pool manifest consumed by the cluster stage.
    pub pool: Option<std::path::PathBuf>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            eps: 0.0075,
            min_points: 5,
            k_target: 0,
            eps_sweep: vec![0.001, 0.0025, 0.005, 0.0075, 0.01, 0.02, 0.05],
            pool: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageConfig {
    /// Largest profile offset, in wavelengths.
    pub max_offset: f64,
    pub offset_step: f64,
    pub level: f64,
    pub noise_window: f64,
    pub replicates: usize,
    /// Apertures in wavelengths.
    pub aperture_sweep: Vec<f64>,
    /// Bandwidths in Hz.
    pub bandwidth_sweep: Vec<f64>,
    /// Cross-range separation of the two-source scene, in wavelengths.
    pub two_source_separation: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            max_offset: 15.0,
            offset_step: 0.25,
            level: 0.5,
            noise_window: 3.0,
            replicates: 5,
            aperture_sweep: vec![10.0, 20.0, 30.0, 40.0],
            bandwidth_sweep: vec![0.75e9, 1e9, 1.25e9],
            two_source_separation: 2.0,
        }
    }
}

impl ImageConfig {
    pub fn offsets(&self) -> Vec<f64> {
        let n = (self.max_offset / self.offset_step).round() as i64;
        (-n..=n).map(|i| i as f64 * self.offset_step).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub physics: Physics,
    pub array: ArrayConfig,
    pub window: WindowConfig,
    pub medium: MediumSpec,
    pub data: DataConfig,
    pub seeds: Seeds,
    pub learn: LearnConfig,
    pub order: OrderConfig,
    pub cluster: ClusterConfig,
    pub image: ImageConfig,
    /// Stages run when none are given on the command line.
    pub stages: Vec<String>,
}

impl ExperimentConfig {
    /// 19×19 window of 0.5λ × 1.66λ pixels at 14 m, 400 scatterers, M = 5000.
    pub fn full() -> Self {
        ExperimentConfig::default()
    }

    /// 9×9 window of 4λ × 3λ pixels at 14 m, 100 scatterers, M = 1500.
    pub fn desk() -> Self {
        ExperimentConfig {
            window: WindowConfig { n_cross: 9, n_range: 9, spacing_cross: 4.0, spacing_range: 3.0, ..Default::default() },
            medium: MediumSpec { count: 100, ..Default::default() },
            data: DataConfig { measurements: 1500, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.physics;
        if !(p.background_speed > 0.0) || !(p.center_frequency > 0.0) {
            return Err(Error::InvalidArgument("speeds and frequencies must be positive".into()));
        }
        if !(p.bandwidth >= 0.0 && p.bandwidth < 2.0 * p.center_frequency) {
            return Err(Error::InvalidArgument(format!("bandwidth {} must lie in [0, 2 f0)", p.bandwidth)));
        }
        if self.window.n_cross == 0 || self.window.n_range == 0 {
            return Err(Error::InvalidArgument("empty image window".into()));
        }
        if self.data.sparsity == 0 || self.data.sparsity >= self.window.n_cross * self.window.n_range {
            return Err(Error::InvalidArgument("sparsity must lie in [1, K)".into()));
        }
        let (lo, hi) = self.medium.tau;
        if !(lo <= hi) {
            return Err(Error::InvalidArgument("tau interval reversed".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Result<Vec<f64>> {
        let p = &self.physics;
        frequency_band(p.center_frequency, p.bandwidth, p.frequencies)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let l = self.physics.wavelength();
        ArrayGeometry::linear(self.array.aperture * l, self.array.spacing * l, &self.frequencies()?)
    }

    pub fn grid(&self) -> ImageGrid {
        let w = &self.window;
        let l = self.physics.wavelength();
        ImageGrid::centered(
            (w.center_cross, w.center_range),
            w.n_cross,
            w.n_range,
            w.spacing_cross * l,
            w.spacing_range * l,
        )
    }

    pub fn k(&self) -> usize {
        self.window.n_cross * self.window.n_range
    }

    pub fn anchors(&self) -> Vec<usize> {
        if self.order.anchors.is_empty() {
            self.grid().corners().to_vec()
        } else {
            self.order.anchors.clone()
        }
    }

    pub fn cluster_target(&self) -> usize {
        if self.cluster.k_target == 0 {
            self.k()
        } else {
            self.cluster.k_target
        }
    }

    /// Stability-sweep setup matching this configuration, referenced at the
    /// window center.
    pub fn sweep_setup(&self) -> SweepSetup {
        let l = self.physics.wavelength();
        let reference: Point3 = [self.window.center_cross, self.window.center_range, 0.0];
        SweepSetup {
            center_frequency: self.physics.center_frequency,
            bandwidth: self.physics.bandwidth,
            frequencies: self.physics.frequencies,
            background_speed: self.physics.background_speed,
            aperture: self.array.aperture * l,
            element_spacing: self.array.spacing * l,
            medium: self.medium.clone(),
            reference,
            offsets: self.image.offsets(),
            level: self.image.level,
            noise_window: self.image.noise_window,
        }
    }
}
