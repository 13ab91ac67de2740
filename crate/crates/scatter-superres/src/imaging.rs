//! Migration images and point-spread measurements.

use ndarray::Axis as NdAxis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{adjoint_dot, inner, norm};
use crate::sparse_dict::Dictionary;
use crate::wavefield::{frequency_band, ArrayGeometry, FrequencyScheme, ImageGrid, Medium, MediumSpec, Propagator};
use crate::{Error, Point3, Result, CVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    /// `|⟨column_i, y⟩|` for every pixel.
    pub values: Vec<f64>,
    pub peak_indices: Vec<usize>,
}

/// Back-propagates `y` through the ordered dictionary.
pub fn migrate(dict: &Dictionary, y: &CVec) -> Result<Image> {
    if !dict.normalized {
        return Err(Error::InvalidArgument("migration needs a normalized dictionary".into()));
    }
    if y.len() != dict.rows() {
        return Err(Error::DimensionMismatch(format!("{} data rows vs {} dictionary rows", y.len(), dict.rows())));
    }
    let values: Vec<f64> = dict.columns.axis_iter(NdAxis(1)).map(|c| inner(&c, &y.view()).norm()).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak_indices = (0..values.len()).filter(|&i| values[i] == max).collect();
    Ok(Image { values, peak_indices })
}

/// Pixels no smaller than any of their eight lattice neighbors and at least
/// `min_fraction` of the image maximum.
pub fn local_maxima(image: &Image, grid: &ImageGrid, min_fraction: f64) -> Vec<usize> {
    let v = &image.values;
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![];
    }
    let (nx, nz) = (grid.n_cross as isize, grid.n_range as isize);
    (0..v.len())
        .filter(|&k| {
            if v[k] < min_fraction * max {
                return false;
            }
            let (cx, cz) = grid.lattice(k);
            for dz in -1..=1isize {
                for dx in -1..=1isize {
                    let (x, z) = (cx as isize + dx, cz as isize + dz);
                    if (dx, dz) == (0, 0) || x < 0 || z < 0 || x >= nx || z >= nz {
                        continue;
                    }
                    if v[grid.index(x as usize, z as usize)] > v[k] {
                        return false;
                    }
                }
            }
            true
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    CrossRange,
    Range,
}

impl Axis {
    fn unit(self) -> Point3 {
        match self {
            Axis::CrossRange => [1.0, 0.0, 0.0],
            Axis::Range => [0.0, 1.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionProfile {
    /// Offsets in wavelengths.
    pub offsets: Vec<f64>,
    pub correlation_modulus: Vec<f64>,
    pub axis: Axis,
}

/// `|⟨g(x0), g(x0 + δ·axis)⟩|` over normalized Green's vectors, with offsets
/// given in wavelengths and evaluated off the lattice.
pub fn point_spread(
    prop: &Propagator,
    reference: &Point3,
    axis: Axis,
    offsets: &[f64],
    wavelength: f64,
) -> Result<ResolutionProfile> {
    let u = axis.unit();
    let mut points = vec![*reference];
    points.extend(offsets.iter().map(|&d| {
        let s = d * wavelength;
        [reference[0] + s * u[0], reference[1] + s * u[1], reference[2] + s * u[2]]
    }));
    let g = prop.green_matrix(&points)?;
    let norms: Vec<f64> = g.axis_iter(NdAxis(1)).map(|c| norm(&c)).collect();
    let c = adjoint_dot(&g.slice(ndarray::s![.., 0..1]), &g.view());
    let correlation_modulus =
        (1..points.len()).map(|j| (c[[0, j]].norm() / (norms[0] * norms[j])).min(1.0)).collect();
    Ok(ResolutionProfile { offsets: offsets.to_vec(), correlation_modulus, axis })
}

/// Full width of the main lobe at `level`, in the units of the offsets.
/// The lobe is the run of samples around the peak at offset zero.
pub fn resolution_width(profile: &ResolutionProfile, level: f64) -> Result<f64> {
    let o = &profile.offsets;
    let v = &profile.correlation_modulus;
    if o.len() != v.len() || o.is_empty() {
        return Err(Error::DimensionMismatch("profile offsets and values differ".into()));
    }
    if o.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("profile offsets must increase".into()));
    }
    let peak = (0..o.len())
        .min_by(|&a, &b| o[a].abs().total_cmp(&o[b].abs()))
        .expect("non-empty");
    if v[peak] < level {
        return Err(Error::OutOfWindow(level));
    }
    let crossing = |a: usize, b: usize| o[a] + (v[a] - level) / (v[a] - v[b]) * (o[b] - o[a]);
    let right = (peak + 1..o.len()).find(|&i| v[i] < level).map(|i| crossing(i - 1, i));
    let left = (0..peak).rev().find(|&i| v[i] < level).map(|i| crossing(i + 1, i));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::OutOfWindow(level)),
    }
}

/// Aperture an ideal homogeneous array would need for the measured
/// cross-range width: `λL / width`. With the width in wavelengths this is
/// `L / width`, in the units of `range`.
pub fn effective_aperture(width_wavelengths: f64, range: f64) -> f64 {
    range / width_wavelengths
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Aperture,
    Bandwidth,
}

/// Fixed part of a stability sweep; the swept quantity overrides one field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub frequencies: FrequencyScheme,
    pub background_speed: f64,
    pub aperture: f64,
    pub element_spacing: f64,
    pub medium: MediumSpec,
    pub reference: Point3,
    /// Cross-range offsets in wavelengths.
    pub offsets: Vec<f64>,
    pub level: f64,
    /// Offsets beyond this many wavelengths count as off-peak.
    pub noise_window: f64,
}

impl SweepSetup {
    pub fn wavelength(&self) -> f64 {
        self.background_speed / self.center_frequency
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub replicate: usize,
    pub medium_seed: u64,
    /// `None` when the lobe does not drop to the level inside the offsets.
    pub width: Option<f64>,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub value: f64,
    pub mean_width: Option<f64>,
    pub mean_noise: f64,
}

pub fn off_peak_noise(profile: &ResolutionProfile, window: f64) -> f64 {
    let far: Vec<f64> = profile
        .offsets
        .iter()
        .zip(&profile.correlation_modulus)
        .filter(|(o, _)| o.abs() > window)
        .map(|(_, v)| *v)
        .collect();
    if far.is_empty() {
        0.0
    } else {
        far.iter().sum::<f64>() / far.len() as f64
    }
}

/// Cross-range width and off-peak noise for every swept value and every
/// medium realization `seed, seed + 1, …`.
pub fn stability_sweep(
    setup: &SweepSetup,
    parameter: SweepParameter,
    values: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let lambda = setup.wavelength();
    let c0 = setup.background_speed;
    let jobs: Vec<usize> = (0..replicates).collect();
    let rows = jobs
        .par_iter()
        .map(|&rep| -> Result<Vec<SweepRow>> {
            let medium_seed = seed + rep as u64;
            let medium = Medium::random(&setup.medium, c0, medium_seed)?;
            let mut out = vec![];
            let measure = |prop: &Propagator, value: f64| -> Result<SweepRow> {
                let p = point_spread(prop, &setup.reference, Axis::CrossRange, &setup.offsets, lambda)?;
                Ok(SweepRow {
                    value,
                    replicate: rep,
                    medium_seed,
                    width: resolution_width(&p, setup.level).ok(),
                    noise: off_peak_noise(&p, setup.noise_window),
                })
            };
            match parameter {
                SweepParameter::Aperture => {
                    let freqs = frequency_band(setup.center_frequency, setup.bandwidth, setup.frequencies)?;
                    let base = ArrayGeometry::linear(setup.aperture, setup.element_spacing, &freqs)?;
                    let prop = Propagator::new(&medium, &base)?;
                    for &a in values {
                        let g = ArrayGeometry::linear(a, setup.element_spacing, &freqs)?;
                        out.push(measure(&prop.with_receivers(g.receivers)?, a)?);
                    }
                }
                SweepParameter::Bandwidth => {
                    for &b in values {
                        let freqs = frequency_band(setup.center_frequency, b, setup.frequencies)?;
                        let g = ArrayGeometry::linear(setup.aperture, setup.element_spacing, &freqs)?;
                        out.push(measure(&Propagator::new(&medium, &g)?, b)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.replicate.cmp(&b.replicate)));
    Ok(rows)
}

/// Ensemble means per swept value. A value whose width is missing for any
/// replicate has no mean width.
pub fn ensemble_means(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.dedup();
    values
        .into_iter()
        .map(|value| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value).collect();
            let n = sel.len() as f64;
            let widths: Option<Vec<f64>> = sel.iter().map(|r| r.width).collect();
            SweepMean {
                value,
                mean_width: widths.map(|w| w.iter().sum::<f64>() / n),
                mean_noise: sel.iter().map(|r| r.noise).sum::<f64>() / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle(w: f64) -> ResolutionProfile {
        let offsets: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
        let correlation_modulus = offsets.iter().map(|o| (1.0 - o.abs() / w).max(0.0)).collect();
        ResolutionProfile { offsets, correlation_modulus, axis: Axis::CrossRange }
    }

    #[test]
    fn triangular_width() {
        for (w, level) in [(3.0, 0.5), (2.2, 0.3), (7.7, 0.8)] {
            let got = resolution_width(&triangle(w), level).unwrap();
            assert!((got - 2.0 * w * (1.0 - level)).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn lobe_wider_than_window() {
        assert!(matches!(resolution_width(&triangle(40.0), 0.5), Err(Error::OutOfWindow(_))));
    }

    #[test]
    fn noise_excludes_the_lobe() {
        let p = triangle(2.0);
        assert_eq!(off_peak_noise(&p, 3.0), 0.0);
        assert!(off_peak_noise(&triangle(20.0), 3.0) > 0.0);
    }
}
