//! Forward model: lead-field construction and projection of source currents
//! to scalp potentials.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::ClassLabel;

/// Spherical head model: electrodes on the surface of a homogeneous
/// conducting sphere, dipolar sources strictly inside it.
///
/// Units are SI: metres for positions, S/m for conductivity. The laterality
/// convention throughout the toolkit is positive x = right hemisphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadGeometry {
    pub sphere_radius: f64,
    pub conductivity: f64,
    pub electrode_positions: Vec<[f64; 3]>,
    pub source_positions: Vec<[f64; 3]>,
    pub source_orientations: Vec<[f64; 3]>,
}

const ORIENTATION_TOL: f64 = 1e-12;
const ELECTRODE_SURFACE_TOL: f64 = 1e-9;

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl HeadGeometry {
    pub fn n_electrodes(&self) -> usize {
        self.electrode_positions.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sphere_radius > 0.0) {
            return Err(Error::Validation("sphere_radius must be positive".into()));
        }
        if !(self.conductivity > 0.0) {
            return Err(Error::Validation("conductivity must be positive".into()));
        }
        if self.electrode_positions.len() < 2 {
            return Err(Error::Validation("need at least 2 electrodes".into()));
        }
        if self.source_positions.is_empty() {
            return Err(Error::Validation("need at least 1 source".into()));
        }
        if self.source_orientations.len() != self.source_positions.len() {
            return Err(Error::Validation(format!(
                "{} orientations for {} sources",
                self.source_orientations.len(),
                self.source_positions.len()
            )));
        }
        for (i, e) in self.electrode_positions.iter().enumerate() {
            let r = norm(e);
            if ((r - self.sphere_radius) / self.sphere_radius).abs() > ELECTRODE_SURFACE_TOL {
                return Err(Error::Geometry(format!(
                    "electrode {i} lies at radius {r}, not on the sphere surface"
                )));
            }
        }
        for (i, s) in self.source_positions.iter().enumerate() {
            if norm(s) >= self.sphere_radius {
                return Err(Error::Geometry(format!(
                    "source {i} on or outside the sphere surface"
                )));
            }
        }
        for (i, q) in self.source_orientations.iter().enumerate() {
            if (norm(q) - 1.0).abs() > ORIENTATION_TOL {
                return Err(Error::Validation(format!(
                    "orientation {i} has norm {}, expected 1",
                    norm(q)
                )));
            }
        }
        Ok(())
    }
}

/// Where a lead field came from.
#[derive(Debug, Clone)]
pub enum LeadFieldProvenance {
    Spherical(HeadGeometry),
    External(String),
}

/// Gain matrix mapping unit dipole moments to scalp potentials, in
/// microvolts per unit moment. Rows are channels, columns are sources.
#[derive(Debug, Clone)]
pub struct LeadField {
    pub gain: Array2<f64>,
    pub provenance: LeadFieldProvenance,
}

impl LeadField {
    pub fn n_channels(&self) -> usize {
        self.gain.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.ncols()
    }
}

/// Multichannel scalp recording in microvolts.
#[derive(Debug, Clone)]
pub struct ScalpRecording {
    /// channels x samples
    pub data: Array2<f64>,
    pub sampling_rate: f64,
    pub channel_labels: Vec<String>,
    pub label: Option<ClassLabel>,
}

impl ScalpRecording {
    pub fn new(
        data: Array2<f64>,
        sampling_rate: f64,
        channel_labels: Vec<String>,
        label: Option<ClassLabel>,
    ) -> Result<Self> {
        if !(sampling_rate > 0.0) {
            return Err(Error::Validation("sampling_rate must be positive".into()));
        }
        if data.nrows() != channel_labels.len() {
            return Err(Error::Shape(format!(
                "{} data rows but {} channel labels",
                data.nrows(),
                channel_labels.len()
            )));
        }
        Ok(Self {
            data,
            sampling_rate,
            channel_labels,
            label,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }
}

const VOLT_TO_MICROVOLT: f64 = 1e6;
/// Below this source eccentricity the dipole is treated as central; the
/// n = 1 series term is the only survivor and is position-independent.
const CENTER_EPS: f64 = 1e-12;

/// Surface potential (volts) at unit vector `u` scaled to radius `r`, from a
/// unit dipole at `pos` oriented along the unit vector `moment`, inside a
/// homogeneous sphere. Truncated interior-harmonics series.
///
/// The series is the source-position gradient of the Neumann Green's
/// function of the sphere: for each degree n the solid harmonic
/// b^n P_n(cos gamma) is differentiated in closed form, giving
///
///   V = sum_n C_n b^(n-1) [ n P_n(c) (q.xhat) + P_n'(c) ((q.u) - c (q.xhat)) ]
///
/// with C_n = (2n+1) / (n 4 pi sigma R^(n+1)).
fn dipole_surface_potential(
    u: &[f64; 3],
    pos: &[f64; 3],
    moment: &[f64; 3],
    radius: f64,
    sigma: f64,
    order: usize,
) -> f64 {
    let b = norm(pos);
    let four_pi_sigma = 4.0 * std::f64::consts::PI * sigma;
    if b < CENTER_EPS * radius {
        // Central dipole: V = 3 (q.u) / (4 pi sigma R^2).
        return 3.0 * dot(moment, u) / (four_pi_sigma * radius * radius);
    }
    let xhat = [pos[0] / b, pos[1] / b, pos[2] / b];
    let c = dot(u, &xhat);
    let q_x = dot(moment, &xhat);
    let q_u = dot(moment, u);

    // Legendre recurrences for P_n(c) and P_n'(c); the derivative recurrence
    // P'_{n+1} = P'_{n-1} + (2n+1) P_n stays finite at |c| = 1.
    let mut p_prev = 1.0; // P_0
    let mut p_curr = c; // P_1
    let mut dp_prev = 0.0; // P_0'
    let mut dp_curr = 1.0; // P_1'

    let mut sum = 0.0;
    let mut b_pow = 1.0; // b^(n-1) for n = 1
    let mut r_pow = radius * radius; // R^(n+1) for n = 1
    for n in 1..=order {
        let nf = n as f64;
        let coeff = (2.0 * nf + 1.0) / (nf * four_pi_sigma * r_pow);
        sum += coeff * b_pow * (nf * p_curr * q_x + dp_curr * (q_u - c * q_x));

        let p_next = ((2.0 * nf + 1.0) * c * p_curr - nf * p_prev) / (nf + 1.0);
        let dp_next = dp_prev + (2.0 * nf + 1.0) * p_curr;
        p_prev = p_curr;
        p_curr = p_next;
        dp_prev = dp_curr;
        dp_curr = dp_next;
        b_pow *= b;
        r_pow *= radius;
    }
    sum
}

/// Builds the gain matrix of the analytic single-sphere model.
///
/// `series_order` truncates the Legendre expansion; convergence goes like
/// (b/R)^n, so 60 is ample for subcortical depths. Columns are independent
/// and computed in parallel.
pub fn build_spherical_lead_field(geometry: &HeadGeometry, series_order: usize) -> Result<LeadField> {
    geometry.validate()?;
    if series_order < 40 {
        return Err(Error::Validation(format!(
            "series truncation order {series_order} below minimum 40"
        )));
    }
    let m = geometry.n_electrodes();
    let n = geometry.n_sources();
    let radius = geometry.sphere_radius;
    let sigma = geometry.conductivity;

    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let pos = &geometry.source_positions[j];
            let q = &geometry.source_orientations[j];
            (0..m)
                .map(|i| {
                    let e = &geometry.electrode_positions[i];
                    let r = norm(e);
                    let u = [e[0] / r, e[1] / r, e[2] / r];
                    dipole_surface_potential(&u, pos, q, radius, sigma, series_order)
                        * VOLT_TO_MICROVOLT
                })
                .collect()
        })
        .collect();

    let mut gain = Array2::zeros((m, n));
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            gain[[i, j]] = v;
        }
    }
    if gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite lead-field entry".into()));
    }
    Ok(LeadField {
        gain,
        provenance: LeadFieldProvenance::Spherical(geometry.clone()),
    })
}

/// Loads an externally computed gain matrix from a tensor container file.
pub fn load_lead_field(path: &Path) -> Result<LeadField> {
    let tensor = container::read_rank(path, 2)?;
    let gain = tensor
        .into_f64()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("rank checked above");
    if gain.nrows() < 2 || gain.ncols() < 1 {
        return Err(Error::Format(format!(
            "lead field must be at least 2x1, found {}x{}",
            gain.nrows(),
            gain.ncols()
        )));
    }
    if gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite lead-field entry".into()));
    }
    Ok(LeadField {
        gain,
        provenance: LeadFieldProvenance::External(path.display().to_string()),
    })
}

pub fn save_lead_field(path: &Path, lead: &LeadField) -> Result<()> {
    container::write_f64(path, &lead.gain.clone().into_dyn())
}

/// Projects source currents through the lead field: V = A S + Z, with Z
/// i.i.d. Gaussian sensor noise of standard deviation `noise_sigma` drawn
/// from a ChaCha stream seeded with `seed`.
pub fn project_sources(
    lead: &LeadField,
    sources: &Array2<f64>,
    noise_sigma: f64,
    sampling_rate: f64,
    seed: u64,
) -> Result<ScalpRecording> {
    if sources.nrows() != lead.n_sources() {
        return Err(Error::Shape(format!(
            "source matrix has {} rows, lead field expects {}",
            sources.nrows(),
            lead.n_sources()
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Validation("noise_sigma must be nonnegative".into()));
    }
    let mut data = lead.gain.dot(sources);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::Validation(format!("bad noise sigma: {e}")))?;
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let labels = (0..lead.n_channels()).map(|i| format!("E{i:03}")).collect();
    ScalpRecording::new(data, sampling_rate, labels, None)
}

/// Evenly distributed unit vectors via the Fibonacci lattice, scaled to the
/// sphere surface. Deterministic electrode layout for synthetic montages.
pub fn fibonacci_electrodes(count: usize, radius: f64) -> Vec<[f64; 3]> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            [radius * rho * phi.cos(), radius * rho * phi.sin(), radius * z]
        })
        .collect()
}

#[allow(clippy::needless_range_loop)]
fn rotate(r: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
    }
    out
}

/// Rodrigues rotation matrix about `axis` (unit) by `angle` radians.
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn rotate_geometry(geometry: &HeadGeometry, r: &[[f64; 3]; 3]) -> HeadGeometry {
    HeadGeometry {
        sphere_radius: geometry.sphere_radius,
        conductivity: geometry.conductivity,
        electrode_positions: geometry.electrode_positions.iter().map(|v| rotate(r, v)).collect(),
        source_positions: geometry.source_positions.iter().map(|v| rotate(r, v)).collect(),
        source_orientations: geometry.source_orientations.iter().map(|v| rotate(r, v)).collect(),
    }
}
