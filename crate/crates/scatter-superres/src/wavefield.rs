//! Foldy-Lax forward model: point scatterers, array geometry, Green's vectors,
//! sensing matrices, and sparse-source data sets.
//!
//! Multi-frequency vectors are stacked frequency-major: entry `f * N + i` holds
//! receiver `i` at frequency `f`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{FactorizeInto, LUFactorized, ReciprocalConditionNum, Solve};
use ndarray::OwnedRepr;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::normalize_columns;
use crate::{Error, Point3, Result, C64, CMat, CVec};

/// Systems whose reciprocal condition number falls below this are rejected.
pub const MIN_RCOND: f64 = 1e-12;

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[inline]
fn g0(d: f64, k: f64) -> C64 {
    C64::from_polar(1.0 / (4.0 * PI * d), k * d)
}

/// Free-space Helmholtz Green's function `exp(ik|r-z|) / (4π|r-z|)`.
pub fn green0(r: &Point3, z: &Point3, k: f64) -> Result<C64> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("wavenumber {k}")));
    }
    let d = distance(r, z);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(g0(d, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediumSpec {
    pub count: usize,
    pub cross_range: (f64, f64),
    pub range: (f64, f64),
    /// Scatterer amplitudes are drawn uniformly from this real interval (meters).
    pub tau: (f64, f64),
    /// Minimum pairwise scatterer distance enforced by rejection (meters).
    pub min_separation: f64,
}

impl Default for MediumSpec {
    fn default() -> Self {
        MediumSpec {
            count: 400,
            cross_range: (-5.0, 5.0),
            range: (2.0, 12.0),
            tau: (0.75, 1.5),
            min_separation: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub positions: Vec<Point3>,
    pub amplitudes: Vec<C64>,
    pub background_speed: f64,
    pub seed: u64,
}

impl Medium {
    pub fn homogeneous(background_speed: f64) -> Self {
        Medium { positions: vec![], amplitudes: vec![], background_speed, seed: 0 }
    }

    pub fn new(positions: Vec<Point3>, amplitudes: Vec<C64>, background_speed: f64) -> Result<Self> {
        if positions.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions vs {} amplitudes",
                positions.len(),
                amplitudes.len()
            )));
        }
        if !(background_speed > 0.0) {
            return Err(Error::InvalidArgument(format!("background speed {background_speed}")));
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if distance(&positions[i], &positions[j]) == 0.0 {
                    return Err(Error::CoincidentPoints);
                }
            }
        }
        Ok(Medium { positions, amplitudes, background_speed, seed: 0 })
    }

    pub fn random(spec: &MediumSpec, background_speed: f64, seed: u64) -> Result<Self> {
        let (x0, x1) = spec.cross_range;
        let (z0, z1) = spec.range;
        let (t0, t1) = spec.tau;
        if !(x1 > x0 && z1 > z0 && t1 >= t0) {
            return Err(Error::InvalidArgument("empty scattering region or tau interval".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions: Vec<Point3> = Vec::with_capacity(spec.count);
        let mut attempts = 0usize;
        let limit = 1000 * spec.count.max(1);
        while positions.len() < spec.count {
            attempts += 1;
            if attempts > limit {
                return Err(Error::InvalidArgument(format!(
                    "cannot place {} scatterers at separation {}",
                    spec.count, spec.min_separation
                )));
            }
            let p = [rng.gen_range(x0..x1), rng.gen_range(z0..z1), 0.0];
            let ok = positions.iter().all(|q| {
                let d = distance(&p, q);
                d > 0.0 && d >= spec.min_separation
            });
            if ok {
                positions.push(p);
            }
        }
        let amplitudes = (0..spec.count)
            .map(|_| C64::new(if t1 > t0 { rng.gen_range(t0..t1) } else { t0 }, 0.0))
            .collect();
        Ok(Medium { positions, amplitudes, background_speed, seed })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Medium {
        Medium { amplitudes: self.amplitudes.iter().map(|t| t * factor).collect(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyScheme {
    /// `n` evenly spaced frequencies spanning the band, endpoints included.
    Count(usize),
    /// Frequencies `f0 - B/2 + i·df` up to the top of the band.
    Spacing(f64),
}

/// Frequencies in Hz.
pub fn frequency_band(f0: f64, bandwidth: f64, scheme: FrequencyScheme) -> Result<Vec<f64>> {
    if !(f0 > 0.0) || !(bandwidth >= 0.0) || bandwidth >= 2.0 * f0 {
        return Err(Error::InvalidArgument(format!("band f0={f0}, B={bandwidth}")));
    }
    let lo = f0 - bandwidth / 2.0;
    match scheme {
        FrequencyScheme::Count(0) => Err(Error::InvalidArgument("zero frequencies".into())),
        FrequencyScheme::Count(1) => Ok(vec![f0]),
        FrequencyScheme::Count(n) => {
            Ok((0..n).map(|i| lo + bandwidth * i as f64 / (n - 1) as f64).collect())
        }
        FrequencyScheme::Spacing(df) => {
            if !(df > 0.0) {
                return Err(Error::InvalidArgument(format!("frequency spacing {df}")));
            }
            let n = (bandwidth / df + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| lo + df * i as f64).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub receivers: Vec<Point3>,
    /// Angular frequencies (rad/s), strictly increasing.
    pub omegas: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(receivers: Vec<Point3>, omegas: Vec<f64>) -> Result<Self> {
        if receivers.is_empty() || omegas.is_empty() {
            return Err(Error::InvalidArgument("array needs receivers and frequencies".into()));
        }
        if omegas.iter().any(|w| !(*w > 0.0)) || omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("frequencies must be positive and increasing".into()));
        }
        Ok(ArrayGeometry { receivers, omegas })
    }

    /// Receivers on the line range = 0, centered at cross-range 0, spanning
    /// `aperture` with pitch `spacing` (so `aperture / spacing + 1` elements).
    pub fn linear(aperture: f64, spacing: f64, frequencies_hz: &[f64]) -> Result<Self> {
        if !(spacing > 0.0) || !(aperture >= 0.0) {
            return Err(Error::InvalidArgument("array aperture/spacing".into()));
        }
        let n = (aperture / spacing + 1e-9).round() as usize + 1;
        let receivers = (0..n).map(|i| [-aperture / 2.0 + spacing * i as f64, 0.0, 0.0]).collect();
        Self::new(receivers, frequencies_hz.iter().map(|f| 2.0 * PI * f).collect())
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn n_frequencies(&self) -> usize {
        self.omegas.len()
    }

    pub fn rows(&self) -> usize {
        self.n_receivers() * self.n_frequencies()
    }

    pub fn wavenumbers(&self, c0: f64) -> Vec<f64> {
        self.omegas.iter().map(|w| w / c0).collect()
    }

    pub fn aperture(&self) -> f64 {
        let xs = self.receivers.iter().map(|r| r[0]);
        xs.clone().fold(f64::NEG_INFINITY, f64::max) - xs.fold(f64::INFINITY, f64::min)
    }
}

/// Rectangular image window, row-major: range rows, cross-range index fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub points: Vec<Point3>,
    pub n_cross: usize,
    pub n_range: usize,
    pub spacing_cross: f64,
    pub spacing_range: f64,
}

impl ImageGrid {
    pub fn centered(
        center: (f64, f64),
        n_cross: usize,
        n_range: usize,
        spacing_cross: f64,
        spacing_range: f64,
    ) -> Self {
        let mut points = Vec::with_capacity(n_cross * n_range);
        for ir in 0..n_range {
            for ic in 0..n_cross {
                points.push([
                    center.0 + (ic as f64 - (n_cross as f64 - 1.0) / 2.0) * spacing_cross,
                    center.1 + (ir as f64 - (n_range as f64 - 1.0) / 2.0) * spacing_range,
                    0.0,
                ]);
            }
        }
        ImageGrid { points, n_cross, n_range, spacing_cross, spacing_range }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self, cross: usize, range: usize) -> usize {
        range * self.n_cross + cross
    }

    /// `(cross, range)` lattice indices of pixel `k`.
    pub fn lattice(&self, k: usize) -> (usize, usize) {
        (k % self.n_cross, k / self.n_cross)
    }

    /// The three corners used as default anchors: first pixel, end of the
    /// first row, start of the last row.
    pub fn corners(&self) -> [usize; 3] {
        [0, self.n_cross - 1, (self.n_range - 1) * self.n_cross]
    }

    pub fn center(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a] / n;
            }
        }
        c
    }
}

/// LU factorization of the Foldy-Lax system `I - A` at one wavenumber.
pub struct FoldyLax {
    k: f64,
    positions: Vec<Point3>,
    tau: Vec<C64>,
    lu: Option<LUFactorized<OwnedRepr<C64>>>,
}

impl FoldyLax {
    pub fn new(medium: &Medium, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!("wavenumber {k}")));
        }
        let positions = medium.positions.clone();
        let tau = medium.amplitudes.clone();
        let lu = if positions.is_empty() {
            None
        } else {
            let lu = system_matrix(&positions, &tau, k)?.factorize_into()?;
            let rcond = lu.rcond()?;
            if !(rcond >= MIN_RCOND) {
                return Err(Error::Degenerate { k, rcond });
            }
            Some(lu)
        };
        Ok(FoldyLax { k, positions, tau, lu })
    }

    pub fn wavenumber(&self) -> f64 {
        self.k
    }

    pub fn incident(&self, z: &Point3) -> Result<CVec> {
        self.positions.iter().map(|p| green0(p, z, self.k)).collect::<Result<Vec<_>>>().map(Array1::from)
    }

    pub fn exciting_field(&self, z: &Point3) -> Result<CVec> {
        let b = self.incident(z)?;
        match &self.lu {
            None => Ok(b),
            Some(lu) => Ok(lu.solve_into(b)?),
        }
    }

    /// Exciting fields for several sources, one column per source.
    pub fn exciting_fields(&self, sources: &[Point3]) -> Result<CMat> {
        let mut out = Array2::zeros((self.positions.len(), sources.len()));
        for (s, z) in sources.iter().enumerate() {
            out.column_mut(s).assign(&self.exciting_field(z)?);
        }
        Ok(out)
    }

    /// `‖(I - A)ψ - b‖ / ‖b‖` for the source `z`.
    pub fn relative_residual(&self, z: &Point3, psi: &CVec) -> Result<f64> {
        if self.positions.is_empty() {
            return Ok(0.0);
        }
        let b = self.incident(z)?;
        let r = system_matrix(&self.positions, &self.tau, self.k)?.dot(psi) - &b;
        Ok(crate::linalg::norm(&r.view()) / crate::linalg::norm(&b.view()))
    }

    /// Total field at `r` from a source at `z`, given its exciting fields.
    pub fn total_field(&self, r: &Point3, z: &Point3, psi: &CVec) -> Result<C64> {
        let mut u = green0(r, z, self.k)?;
        for ((p, t), e) in self.positions.iter().zip(&self.tau).zip(psi.iter()) {
            u += green0(r, p, self.k)? * t * e;
        }
        Ok(u)
    }
}

fn system_matrix(positions: &[Point3], tau: &[C64], k: f64) -> Result<CMat> {
    let j = positions.len();
    let mut m = Array2::<C64>::eye(j);
    for a in 0..j {
        for b in 0..j {
            if a != b {
                m[[a, b]] -= green0(&positions[a], &positions[b], k)? * tau[b];
            }
        }
    }
    Ok(m)
}

/// Exciting fields `ψ^e` at every scatterer for a point source at `source`.
pub fn solve_exciting_fields(medium: &Medium, source: &Point3, k: f64) -> Result<CVec> {
    let fl = FoldyLax::new(medium, k)?;
    let psi = fl.exciting_field(source)?;
    let res = fl.relative_residual(source, &psi)?;
    if !(res <= 1e-10) {
        return Err(Error::Degenerate { k, rcond: f64::NAN });
    }
    Ok(psi)
}

/// Incident plus scattered field at `r` for a point source at `z`.
pub fn total_field(medium: &Medium, r: &Point3, z: &Point3, k: f64) -> Result<C64> {
    let fl = FoldyLax::new(medium, k)?;
    let psi = fl.exciting_field(z)?;
    fl.total_field(r, z, &psi)
}

/// Foldy-Lax factorizations for every frequency of an array, reusable for any
/// number of sources and for other receiver layouts sharing the frequencies.
#[derive(Clone)]
pub struct Propagator {
    geometry: ArrayGeometry,
    solvers: Arc<Vec<FoldyLax>>,
    background_speed: f64,
}

impl Propagator {
    pub fn new(medium: &Medium, geometry: &ArrayGeometry) -> Result<Self> {
        let c0 = medium.background_speed;
        let solvers = geometry
            .omegas
            .par_iter()
            .map(|w| FoldyLax::new(medium, w / c0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Propagator { geometry: geometry.clone(), solvers: Arc::new(solvers), background_speed: c0 })
    }

    /// Same medium seen by different receivers at the same frequencies.
    pub fn with_receivers(&self, receivers: Vec<Point3>) -> Result<Self> {
        let geometry = ArrayGeometry::new(receivers, self.geometry.omegas.clone())?;
        Ok(Propagator { geometry, solvers: self.solvers.clone(), background_speed: self.background_speed })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn green_vector(&self, x: &Point3) -> Result<CVec> {
        Ok(self.green_matrix(std::slice::from_ref(x))?.column(0).to_owned())
    }

    /// One stacked Green's vector per source point, as columns.
    pub fn green_matrix(&self, sources: &[Point3]) -> Result<CMat> {
        let n = self.geometry.n_receivers();
        let blocks = self
            .solvers
            .par_iter()
            .map(|fl| self.block(fl, sources))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((n * blocks.len(), sources.len()));
        for (f, b) in blocks.iter().enumerate() {
            out.slice_mut(s![f * n..(f + 1) * n, ..]).assign(b);
        }
        Ok(out)
    }

    fn block(&self, fl: &FoldyLax, sources: &[Point3]) -> Result<CMat> {
        let k = fl.k;
        let rec = &self.geometry.receivers;
        let mut out = Array2::zeros((rec.len(), sources.len()));
        for (i, r) in rec.iter().enumerate() {
            for (s, z) in sources.iter().enumerate() {
                out[[i, s]] = green0(r, z, k)?;
            }
        }
        if !fl.positions.is_empty() {
            let mut scatter = Array2::<C64>::zeros((rec.len(), fl.positions.len()));
            for (i, r) in rec.iter().enumerate() {
                for (j, p) in fl.positions.iter().enumerate() {
                    scatter[[i, j]] = green0(r, p, k)? * fl.tau[j];
                }
            }
            out += &scatter.dot(&fl.exciting_fields(sources)?);
        }
        Ok(out)
    }
}

pub fn green_vector(medium: &Medium, geometry: &ArrayGeometry, x: &Point3) -> Result<CVec> {
    Propagator::new(medium, geometry)?.green_vector(x)
}

#[derive(Clone, Debug)]
pub struct SensingMatrix {
    pub entries: CMat,
    pub geometry: ArrayGeometry,
    pub grid: ImageGrid,
}

impl SensingMatrix {
    pub fn normalized(&self) -> CMat {
        let mut g = self.entries.clone();
        normalize_columns(&mut g);
        g
    }
}

pub fn assemble_sensing_matrix(medium: &Medium, geometry: &ArrayGeometry, grid: &ImageGrid) -> Result<SensingMatrix> {
    let entries = Propagator::new(medium, geometry)?.green_matrix(&grid.points)?;
    Ok(SensingMatrix { entries, geometry: geometry.clone(), grid: grid.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub support: Vec<usize>,
    pub amplitudes: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// Every source has amplitude 1.
    Unit,
    /// Modulus uniform in `[min, max]`, phase uniform on the circle.
    UniformModulus { min: f64, max: f64 },
    /// Circular complex Gaussian with unit variance.
    ComplexGaussian,
}

impl Default for AmplitudeLaw {
    fn default() -> Self {
        AmplitudeLaw::UniformModulus { min: 0.5, max: 1.5 }
    }
}

impl AmplitudeLaw {
    fn draw<R: Rng>(&self, rng: &mut R) -> C64 {
        match *self {
            AmplitudeLaw::Unit => C64::new(1.0, 0.0),
            AmplitudeLaw::UniformModulus { min, max } => {
                let m = if max > min { rng.gen_range(min..max) } else { min };
                C64::from_polar(m, 2.0 * PI * rng.gen::<f64>())
            }
            AmplitudeLaw::ComplexGaussian => {
                let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                C64::from_polar((-u1.ln()).sqrt(), 2.0 * PI * u2)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataSet {
    pub measurements: CMat,
    pub configs: Option<Vec<SourceConfig>>,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.measurements.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.ncols() == 0
    }

    /// The K×M code matrix of the retained source configurations.
    pub fn code_matrix(&self, k: usize) -> Option<CMat> {
        let configs = self.configs.as_ref()?;
        let mut x = Array2::zeros((k, configs.len()));
        for (i, c) in configs.iter().enumerate() {
            for (&j, &a) in c.support.iter().zip(&c.amplitudes) {
                x[[j, i]] = a;
            }
        }
        Some(x)
    }
}

/// `m` measurements, each a combination of `s` distinct random columns.
pub fn generate_dataset(
    sensing: &ArrayView2<C64>,
    m: usize,
    s: usize,
    law: AmplitudeLaw,
    seed: u64,
) -> Result<DataSet> {
    let k = sensing.ncols();
    if s >= k {
        return Err(Error::InvalidArgument(format!("sparsity {s} must be below K = {k}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::zeros((sensing.nrows(), m));
    let mut configs = Vec::with_capacity(m);
    for i in 0..m {
        let support: Vec<usize> = sample(&mut rng, k, s).into_vec();
        let amplitudes: Vec<C64> = support.iter().map(|_| law.draw(&mut rng)).collect();
        let mut col = y.column_mut(i);
        for (&j, &a) in support.iter().zip(&amplitudes) {
            col.scaled_add(a, &sensing.column(j));
        }
        configs.push(SourceConfig { support, amplitudes });
    }
    Ok(DataSet { measurements: y, configs: Some(configs) })
}
