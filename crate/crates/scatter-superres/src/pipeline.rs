//! Stage orchestration over a run directory of CMX1, CSV and JSON artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{consensus_dictionary, eps_sweep, ColumnPool};
use crate::cmx::{read_cmx, write_cmx};
use crate::config::{ExperimentConfig, Initialization, Seeds};
use crate::grid_order::{identify_anchors, order_dictionary};
use crate::imaging::{
    effective_aperture, ensemble_means, local_maxima, migrate, point_spread, resolution_width, stability_sweep, Axis as
    ImAxis, Image, SweepParameter,
};
use crate::sparse_dict::{match_columns, perturb_columns, refine_dictionary, step1_initialize, Dictionary};
use crate::wavefield::{assemble_sensing_matrix, generate_dataset, ImageGrid, Medium, Propagator};
use crate::{Error, Point3, Result, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    LearnDict,
    Cluster,
    OrderGrid,
    Image,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Simulate, Stage::LearnDict, Stage::Cluster, Stage::OrderGrid, Stage::Image, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::LearnDict => "learn-dict",
            Stage::Cluster => "cluster",
            Stage::OrderGrid => "order-grid",
            Stage::Image => "image",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

pub mod artifact {
    pub const CONFIG: &str = "config.toml";
    pub const MANIFEST: &str = "manifest.json";
    pub const MEDIUM: &str = "medium.json";
    pub const SENSING: &str = "sensing.cmx";
    pub const DATA: &str = "data.cmx";
    pub const TRUE_CODES: &str = "true_codes.cmx";
    pub const ANCHORS: &str = "anchors.cmx";
    pub const DICTIONARY: &str = "dictionary.cmx";
    pub const CODES: &str = "codes.cmx";
    pub const REFINE_TRACE: &str = "refine_trace.csv";
    pub const CONSENSUS: &str = "consensus.cmx";
    pub const CLUSTER_SIZES: &str = "cluster_sizes.csv";
    pub const EPS_SWEEP: &str = "eps_sweep.csv";
    pub const ORDERED: &str = "ordered_dictionary.cmx";
    pub const PERMUTATION: &str = "permutation.csv";
    pub const EMBEDDING: &str = "embedding.csv";
    pub const ORDER_REPORT: &str = "order.json";
    pub const SCENE: &str = "scene.cmx";
    pub const IMAGE: &str = "image.csv";
    pub const IMAGE_REPORT: &str = "image.json";
    pub const PROFILES: &str = "profiles.csv";
    pub const SWEEP: &str = "aperture_sweep.csv";
    pub const METRICS: &str = "metrics.json";
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Seeds,
    pub stages: Vec<String>,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl Manifest {
    /// Every listed artifact exists and the hash matches `config_hash`.
    pub fn is_complete(&self, dir: &Path, config_hash: &str) -> bool {
        self.config_hash == config_hash && self.artifacts.values().all(|p| dir.join(p).exists())
    }
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(config.to_toml()?.as_bytes())))
}

pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    /// Overrides the default input of the cluster, order-grid and image stages.
    pub stage_input: Option<PathBuf>,
    hash: String,
    manifest: Manifest,
}

impl Run {
    pub fn new(config: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let hash = config_hash(&config)?;
        let manifest = match std::fs::read_to_string(dir.join(artifact::MANIFEST)) {
            Ok(text) => {
                let m: Manifest = serde_json::from_str(&text)?;
                if m.config_hash == hash {
                    m
                } else {
                    log::warn!("configuration changed since the last run in {}; manifest restarted", dir.display());
                    Manifest::default()
                }
            }
            Err(_) => Manifest::default(),
        };
        let manifest = Manifest { config_hash: hash.clone(), seeds: config.seeds.clone(), ..manifest };
        std::fs::write(dir.join(artifact::CONFIG), config.to_toml()?)?;
        Ok(Run { config, dir, stage_input: None, hash, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        self.manifest.artifacts.insert(name.to_string(), PathBuf::from(name));
    }

    fn save_manifest(&self) -> Result<()> {
        std::fs::write(self.path(artifact::MANIFEST), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    fn input(&self, name: &str) -> Result<CMat> {
        read_cmx(self.path(name))
    }

    fn write_matrix(&mut self, name: &str, m: &CMat) -> Result<()> {
        write_cmx(m, self.path(name))?;
        self.record(name);
        Ok(())
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.record(name);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        self.record(name);
        Ok(())
    }

    /// Runs the stages in the order given, saving the manifest after each.
    pub fn run(&mut self, stages: &[Stage]) -> Result<()> {
        for &stage in stages {
            log::info!("stage {stage}");
            match stage {
                Stage::Simulate => self.simulate()?,
                Stage::LearnDict => self.learn_dict()?,
                Stage::Cluster => self.cluster()?,
                Stage::OrderGrid => self.order_grid()?,
                Stage::Image => self.image()?,
                Stage::Evaluate => self.evaluate()?,
            }
            self.manifest.stages.push(stage.name().to_string());
            self.save_manifest()?;
        }
        Ok(())
    }

    fn medium(&self) -> Result<Medium> {
        let c = &self.config;
        Medium::random(&c.medium, c.physics.background_speed, c.seeds.medium)
    }

    pub fn simulate(&mut self) -> Result<()> {
        let c = self.config.clone();
        let medium = self.medium()?;
        let grid = c.grid();
        let sensing = assemble_sensing_matrix(&medium, &c.geometry()?, &grid)?;
        let g = sensing.normalized();
        let data = generate_dataset(&g.view(), c.data.measurements, c.data.sparsity, c.data.amplitudes, c.seeds.data)?;
        self.write_json(artifact::MEDIUM, &medium)?;
        self.write_matrix(artifact::SENSING, &sensing.entries)?;
        self.write_matrix(artifact::DATA, &data.measurements)?;
        let x = data.code_matrix(grid.len()).expect("simulated data keeps its configurations");
        self.write_matrix(artifact::TRUE_CODES, &x)?;
        let anchors = g.select(Axis(1), &c.anchors());
        self.write_matrix(artifact::ANCHORS, &anchors)
    }

    pub fn learn_dict(&mut self) -> Result<()> {
        let c = self.config.clone();
        let data = self.input(artifact::DATA)?;
        let truth = match read_cmx(self.path(artifact::SENSING)) {
            Ok(t) => Some(t),
            Err(Error::MissingArtifact(_)) => None,
            Err(e) => return Err(e),
        };
        let init = match c.learn.init {
            Initialization::Step1 => step1_initialize(&data, c.k(), c.data.sparsity, &c.learn.step1)?,
            Initialization::Perturbed { relative } => {
                let t = truth.as_ref().ok_or_else(|| Error::MissingArtifact(self.path(artifact::SENSING)))?;
                perturb_columns(t, relative, c.seeds.init)
            }
        };
        let mut opts = c.learn.refine.clone();
        opts.sparsity = c.data.sparsity;
        let r = refine_dictionary(&init, &data, &c.learn.gelma, &opts, truth.as_ref())?;
        self.write_matrix(artifact::DICTIONARY, &r.dictionary.columns)?;
        self.write_matrix(artifact::CODES, &r.codes.codes)?;
        self.write_csv(artifact::REFINE_TRACE, &r.trace)
    }

    pub fn cluster(&mut self) -> Result<()> {
        let c = self.config.clone();
        let manifest = self
            .stage_input
            .clone()
            .or_else(|| c.cluster.pool.clone())
            .ok_or_else(|| Error::MissingArtifact(PathBuf::from("pool manifest (cluster.pool or --stage-input)")))?;
        let pool = ColumnPool::from_manifest(&manifest)?;
        let sweep = eps_sweep(&pool, &c.cluster.eps_sweep, c.cluster.min_points)?;
        self.write_csv(artifact::EPS_SWEEP, &sweep)?;
        let consensus = consensus_dictionary(&pool, c.cluster.eps, c.cluster.min_points, c.cluster_target())?;
        #[derive(Serialize)]
        struct SizeRow {
            column: usize,
            members: usize,
        }
        let rows: Vec<SizeRow> =
            consensus.sizes.iter().enumerate().map(|(column, &members)| SizeRow { column, members }).collect();
        self.write_csv(artifact::CLUSTER_SIZES, &rows)?;
        self.write_matrix(artifact::CONSENSUS, &consensus.dictionary.columns)
    }

    pub fn order_grid(&mut self) -> Result<()> {
        let c = self.config.clone();
        let grid = c.grid();
        let source = match &self.stage_input {
            Some(p) => p.clone(),
            None => self.path(artifact::DICTIONARY),
        };
        let dict = Dictionary::normalized(read_cmx(&source)?);
        let calib = self.input(artifact::ANCHORS)?;
        let pixels = c.anchors();
        if calib.ncols() != pixels.len() {
            return Err(Error::DimensionMismatch(format!("{} anchor vectors for {} anchors", calib.ncols(), pixels.len())));
        }
        let cols = identify_anchors(&dict, &calib);
        let anchors: Vec<(usize, usize)> = cols.iter().cloned().zip(pixels.iter().cloned()).collect();
        let ord = order_dictionary(&dict, &grid, &anchors, &c.order.params)?;
        let ordered = dict.select(&ord.assignment.column_for_grid);
        self.write_matrix(artifact::ORDERED, &ordered.columns)?;
        #[derive(Serialize)]
        struct PermRow {
            estimated_index: usize,
            grid_index: usize,
        }
        let perm: Vec<PermRow> = ord
            .assignment
            .grid_for_column
            .iter()
            .enumerate()
            .map(|(estimated_index, &grid_index)| PermRow { estimated_index, grid_index })
            .collect();
        self.write_csv(artifact::PERMUTATION, &perm)?;
        #[derive(Serialize)]
        struct EmbRow {
            index: usize,
            x_meters: f64,
            z_meters: f64,
        }
        let emb: Vec<EmbRow> = ord
            .embedding
            .coordinates
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(index, p)| EmbRow { index, x_meters: p[0], z_meters: p[1] })
            .collect();
        self.write_csv(artifact::EMBEDDING, &emb)?;
        #[derive(Serialize)]
        struct Report {
            anchor_columns: Vec<usize>,
            anchor_pixels: Vec<usize>,
            anchor_residuals: Vec<f64>,
            mean_displacement_cells: f64,
            low_confidence: bool,
        }
        let report = Report {
            anchor_columns: cols,
            anchor_pixels: pixels,
            anchor_residuals: ord.anchor_residuals.clone(),
            mean_displacement_cells: ord.assignment.mean_displacement,
            low_confidence: ord.assignment.low_confidence,
        };
        self.write_json(artifact::ORDER_REPORT, &report)
    }

    /// Pixels of the two-source scene: the window center and the pixel the
    /// configured separation away in cross-range, at least one pixel apart.
    pub fn two_source_pixels(&self) -> (usize, usize) {
        let grid = self.config.grid();
        let step = (self.config.image.two_source_separation / self.config.window.spacing_cross).round().max(1.0) as usize;
        let cz = grid.n_range / 2;
        let a = (grid.n_cross - 1).saturating_sub(step) / 2;
        let b = (a + step).min(grid.n_cross - 1);
        (grid.index(a, cz), grid.index(b, cz))
    }

    /// Migrates one measurement with the ordered estimate and with homogeneous
    /// Green's vectors. Without `--stage-input`, the measurement is the
    /// two-source scene built from the simulated sensing matrix.
    pub fn image(&mut self) -> Result<()> {
        let c = self.config.clone();
        let grid = c.grid();
        let ordered = Dictionary::normalized(self.input(artifact::ORDERED)?);
        let (y, sources) = match &self.stage_input {
            Some(p) => (read_cmx(p)?.column(0).to_owned(), vec![]),
            None => {
                let g = self.input(artifact::SENSING)?;
                let (a, b) = self.two_source_pixels();
                let y: Array1<_> = &g.column(a) + &g.column(b);
                (y, vec![a, b])
            }
        };
        let scene = y.clone().insert_axis(Axis(1));
        self.write_matrix(artifact::SCENE, &scene)?;
        let homog = assemble_sensing_matrix(&Medium::homogeneous(c.physics.background_speed), &c.geometry()?, &grid)?;
        let estimated = migrate(&ordered, &y)?;
        let homogeneous = migrate(&Dictionary::normalized(homog.entries), &y)?;
        #[derive(Serialize)]
        struct PixelRow {
            pixel: usize,
            cross: f64,
            range: f64,
            estimated: f64,
            homogeneous: f64,
        }
        let rows: Vec<PixelRow> = (0..grid.len())
            .map(|k| PixelRow {
                pixel: k,
                cross: grid.points[k][0],
                range: grid.points[k][1],
                estimated: estimated.values[k],
                homogeneous: homogeneous.values[k],
            })
            .collect();
        self.write_csv(artifact::IMAGE, &rows)?;
        let report = ImageReport::new(&estimated, &homogeneous, &grid, sources);
        self.write_json(artifact::IMAGE_REPORT, &report)
    }

    pub fn evaluate(&mut self) -> Result<()> {
        let c = self.config.clone();
        let mut metrics = Metrics::default();
        let truth = read_cmx(self.path(artifact::SENSING)).ok();
        if let (Some(t), Ok(d)) = (&truth, read_cmx(self.path(artifact::DICTIONARY))) {
            let m = match_columns(&d, t)?;
            metrics.dictionary_min_correlation = Some(m.min_correlation());
            metrics.dictionary_mean_correlation = Some(m.mean_correlation());
        }
        if let (Some(t), Ok(d)) = (&truth, read_cmx(self.path(artifact::ORDERED))) {
            let m = match_columns(&d, t)?;
            metrics.identity_permutation = Some(m.estimate_for_truth.iter().enumerate().all(|(i, &j)| i == j));
            let n = Dictionary::normalized(d);
            let tn = Dictionary::normalized(t.clone());
            let own: Vec<f64> = (0..tn.len())
                .map(|k| crate::linalg::inner(&n.columns.column(k), &tn.columns.column(k)).norm())
                .collect();
            metrics.ordered_min_correlation = Some(own.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        if let Ok(text) = std::fs::read_to_string(self.path(artifact::ORDER_REPORT)) {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            metrics.grid_mean_displacement_cells = v["mean_displacement_cells"].as_f64();
        }
        if c.image.replicates > 0 {
            self.resolution_study(&mut metrics)?;
        }
        self.write_json(artifact::METRICS, &metrics)
    }

    fn resolution_study(&mut self, metrics: &mut Metrics) -> Result<()> {
        let c = self.config.clone();
        let setup = c.sweep_setup();
        let lambda = c.physics.wavelength();
        let geometry = c.geometry()?;
        let offsets = setup.offsets.clone();
        let reference: Point3 = setup.reference;
        let homog = Propagator::new(&Medium::homogeneous(c.physics.background_speed), &geometry)?;
        let cross_h = point_spread(&homog, &reference, ImAxis::CrossRange, &offsets, lambda)?;
        let range_h = point_spread(&homog, &reference, ImAxis::Range, &offsets, lambda)?;
        let random = Propagator::new(&self.medium()?, &geometry)?;
        let cross_r = point_spread(&random, &reference, ImAxis::CrossRange, &offsets, lambda)?;
        metrics.homogeneous_cross_width = resolution_width(&cross_h, setup.level).ok();
        metrics.homogeneous_range_width = resolution_width(&range_h, setup.level).ok();
        metrics.random_cross_width = resolution_width(&cross_r, setup.level).ok();
        metrics.effective_aperture_wavelengths =
            metrics.random_cross_width.map(|w| effective_aperture(w, reference[1]) / lambda);
        #[derive(Serialize)]
        struct ProfileRow {
            offset: f64,
            homogeneous_cross: f64,
            homogeneous_range: f64,
            random_cross: f64,
        }
        let rows: Vec<ProfileRow> = (0..offsets.len())
            .map(|i| ProfileRow {
                offset: offsets[i],
                homogeneous_cross: cross_h.correlation_modulus[i],
                homogeneous_range: range_h.correlation_modulus[i],
                random_cross: cross_r.correlation_modulus[i],
            })
            .collect();
        self.write_csv(artifact::PROFILES, &rows)?;
        let apertures: Vec<f64> = c.image.aperture_sweep.iter().map(|a| a * lambda).collect();
        let sweep = stability_sweep(&setup, SweepParameter::Aperture, &apertures, c.image.replicates, c.seeds.medium)?;
        self.write_csv(artifact::SWEEP, &sweep)?;
        metrics.aperture_sweep = ensemble_means(&sweep)
            .into_iter()
            .map(|m| SweepSummary { aperture_wavelengths: m.value / lambda, mean_width: m.mean_width, mean_noise: m.mean_noise })
            .collect();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub aperture_wavelengths: f64,
    pub mean_width: Option<f64>,
    pub mean_noise: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dictionary_min_correlation: Option<f64>,
    pub dictionary_mean_correlation: Option<f64>,
    pub ordered_min_correlation: Option<f64>,
    pub identity_permutation: Option<bool>,
    pub grid_mean_displacement_cells: Option<f64>,
    /// Widths in wavelengths.
    pub homogeneous_cross_width: Option<f64>,
    pub homogeneous_range_width: Option<f64>,
    pub random_cross_width: Option<f64>,
    pub effective_aperture_wavelengths: Option<f64>,
    pub aperture_sweep: Vec<SweepSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub sources: Vec<usize>,
    pub estimated_peaks: Vec<usize>,
    pub homogeneous_peaks: Vec<usize>,
    pub estimated_local_maxima: Vec<usize>,
    pub homogeneous_local_maxima: Vec<usize>,
}

impl ImageReport {
    /// Local maxima above half the image maximum.
    pub fn new(estimated: &Image, homogeneous: &Image, grid: &ImageGrid, sources: Vec<usize>) -> Self {
        ImageReport {
            sources,
            estimated_peaks: estimated.peak_indices.clone(),
            homogeneous_peaks: homogeneous.peak_indices.clone(),
            estimated_local_maxima: local_maxima(estimated, grid, 0.5),
            homogeneous_local_maxima: local_maxima(homogeneous, grid, 0.5),
        }
    }
}
