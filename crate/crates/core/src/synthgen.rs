//! Synthetic cohorts with planted ground truth: head geometry, class-coded
//! band-limited scout activity, and single-dipole localization cases.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    fibonacci_electrodes, project_sources, HeadGeometry, LeadField, ScalpRecording,
};
use crate::scout::{build_subatlas, Atlas, Region, RegionSpec, Structure, StructureBall};
use crate::ClassLabel;

/// Procedural spherical montage: Fibonacci electrodes, ball-sampled scout
/// sources, diffuse background sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub sphere_radius: f64,
    pub conductivity: f64,
    pub n_electrodes: usize,
    pub sources_per_region: usize,
    pub n_background_sources: usize,
    pub series_order: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            sphere_radius: 0.09,
            conductivity: 0.33,
            n_electrodes: 32,
            sources_per_region: 5,
            n_background_sources: 20,
            series_order: 60,
            seed: 7,
        }
    }
}

/// Right-hemisphere ball centers for the three structures, deep enough to
/// stay well inside a 9 cm sphere and pairwise disjoint.
pub fn default_region_spec() -> RegionSpec {
    RegionSpec {
        balls: vec![
            StructureBall {
                structure: Structure::Thalamus,
                center: [0.014, 0.0, 0.020],
                radius: 0.012,
            },
            StructureBall {
                structure: Structure::Hippocampus,
                center: [0.028, -0.024, -0.008],
                radius: 0.012,
            },
            StructureBall {
                structure: Structure::Amygdala,
                center: [0.024, 0.026, -0.006],
                radius: 0.012,
            },
        ],
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn sample_in_ball(rng: &mut ChaCha8Rng, center: &[f64; 3], radius: f64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0 {
            // keep a margin so boundary jitter cannot flip membership
            return [
                center[0] + 0.9 * radius * v[0],
                center[1] + 0.9 * radius * v[1],
                center[2] + 0.9 * radius * v[2],
            ];
        }
    }
}

/// Builds the synthetic montage: scout sources first (ball by ball, left
/// hemisphere then right, canonical structure order), then background
/// sources scattered outside every ball.
pub fn synthetic_geometry(cfg: &GeometryConfig) -> Result<(HeadGeometry, RegionSpec, Atlas)> {
    let spec = default_region_spec();
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut positions = Vec::new();
    let mut orientations = Vec::new();
    for right in [false, true] {
        for ball in &spec.balls {
            for _ in 0..cfg.sources_per_region {
                let p = sample_in_ball(&mut rng, &ball.center, ball.radius);
                positions.push([if right { p[0] } else { -p[0] }, p[1], p[2]]);
                orientations.push(random_unit(&mut rng));
            }
        }
    }
    let interior = 0.8 * cfg.sphere_radius;
    while positions.len() < 6 * cfg.sources_per_region + cfg.n_background_sources {
        let v: [f64; 3] = [
            rng.gen_range(-interior..interior),
            rng.gen_range(-interior..interior),
            rng.gen_range(-interior..interior),
        ];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r >= interior {
            continue;
        }
        if crate::scout::classify_source(&v, &spec).is_some() {
            continue;
        }
        positions.push(v);
        orientations.push(random_unit(&mut rng));
    }
    let geometry = HeadGeometry {
        sphere_radius: cfg.sphere_radius,
        conductivity: cfg.conductivity,
        electrode_positions: fibonacci_electrodes(cfg.n_electrodes, cfg.sphere_radius),
        source_positions: positions,
        source_orientations: orientations,
    };
    geometry.validate()?;
    let atlas = build_subatlas(&geometry.source_positions, &spec)?;
    Ok((geometry, spec, atlas))
}

/// One spectral band: sinusoids drawn inside
/// [center - bandwidth/2, center + bandwidth/2].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub relative_power: f64,
}

/// Per-class spectral recipe: one band list per scout region, canonical
/// region order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub bands_per_region: Vec<Vec<Band>>,
}

impl ClassProfile {
    /// Same band mix in all six regions.
    pub fn uniform(bands: Vec<Band>) -> Self {
        ClassProfile {
            bands_per_region: (0..6).map(|_| bands.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub subjects_per_class: usize,
    pub duration_s: f64,
    /// pre-downsample rate
    pub sampling_rate: f64,
    /// profiles for AD, FTD/MCI, HC in class-index order
    pub class_profiles: Vec<ClassProfile>,
    /// dipole moment scale of scout sources
    pub scout_amplitude: f64,
    /// broadband moment scale of non-scout sources
    pub background_amplitude: f64,
    /// sensor noise, microvolts
    pub noise_sigma: f64,
    /// sinusoids per band
    pub sinusoids_per_band: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            subjects_per_class: 9,
            duration_s: 12.0,
            sampling_rate: 1000.0,
            class_profiles: default_class_profiles(),
            scout_amplitude: 2e-8,
            background_amplitude: 4e-9,
            noise_sigma: 0.05,
            sinusoids_per_band: 8,
            seed: 1,
        }
    }
}

/// Class signatures: AD delta/theta-dominant, the intermediate class
/// theta-shifted, HC alpha-dominant.
pub fn default_class_profiles() -> Vec<ClassProfile> {
    vec![
        ClassProfile::uniform(vec![Band {
            center_hz: 3.5,
            bandwidth_hz: 5.0,
            relative_power: 1.0,
        }]),
        ClassProfile::uniform(vec![Band {
            center_hz: 6.0,
            bandwidth_hz: 4.0,
            relative_power: 1.0,
        }]),
        ClassProfile::uniform(vec![Band {
            center_hz: 10.0,
            bandwidth_hz: 4.0,
            relative_power: 1.0,
        }]),
    ]
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects_per_class == 0 {
            return Err(Error::Validation("subjects_per_class must be positive".into()));
        }
        if !(self.duration_s > 0.0) || !(self.sampling_rate > 0.0) {
            return Err(Error::Validation("duration and sampling rate must be positive".into()));
        }
        if self.class_profiles.len() != 3 {
            return Err(Error::Validation(format!(
                "need 3 class profiles, got {}",
                self.class_profiles.len()
            )));
        }
        for (c, profile) in self.class_profiles.iter().enumerate() {
            if profile.bands_per_region.len() != 6 {
                return Err(Error::Validation(format!(
                    "class {c}: need 6 region band lists, got {}",
                    profile.bands_per_region.len()
                )));
            }
            for bands in &profile.bands_per_region {
                for b in bands {
                    if !(b.center_hz > 0.0) || !(b.bandwidth_hz >= 0.0) || !(b.relative_power >= 0.0) {
                        return Err(Error::Validation("bands need positive center and nonnegative width/power".into()));
                    }
                }
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation("noise_sigma must be nonnegative".into()));
        }
        if self.sinusoids_per_band == 0 {
            return Err(Error::Validation("sinusoids_per_band must be positive".into()));
        }
        Ok(())
    }
}

fn band_signal(
    rng: &mut ChaCha8Rng,
    band: &Band,
    amplitude: f64,
    k: usize,
    n: usize,
    fs: f64,
    out: &mut [f64],
) {
    let lo = (band.center_hz - band.bandwidth_hz / 2.0).max(0.05);
    let hi = band.center_hz + band.bandwidth_hz / 2.0;
    let per = amplitude * band.relative_power / (k as f64).sqrt();
    for _ in 0..k {
        let f = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let w = 2.0 * std::f64::consts::PI * f / fs;
        for (t, o) in out.iter_mut().enumerate().take(n) {
            *o += per * (w * t as f64 + phase).sin();
        }
    }
}

/// Pink-like broadband: log-spaced sinusoids over 1-40 Hz with 1/sqrt(f)
/// amplitudes.
fn background_signal(rng: &mut ChaCha8Rng, amplitude: f64, n: usize, fs: f64, out: &mut [f64]) {
    let k = 12;
    for i in 0..k {
        let f = 1.0 * (40.0_f64 / 1.0).powf(i as f64 / (k - 1) as f64);
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let a = amplitude / f.sqrt();
        for (t, o) in out.iter_mut().enumerate().take(n) {
            *o += a * (w * t as f64 + phase).sin();
        }
    }
}

/// A generated subject.
#[derive(Debug, Clone)]
pub struct SyntheticSubject {
    pub id: String,
    pub label: ClassLabel,
    pub seed: u64,
    pub recording: ScalpRecording,
}

/// Simulates the whole cohort. Subjects are ordered class-major
/// (all AD, then FTD/MCI, then HC); subject k uses seed cfg.seed + k.
pub fn generate_cohort(
    cfg: &CohortConfig,
    lead: &LeadField,
    atlas: &Atlas,
) -> Result<Vec<SyntheticSubject>> {
    cfg.validate()?;
    match atlas.max_index() {
        Some(max) if max < lead.n_sources() => {}
        Some(max) => {
            return Err(Error::Validation(format!(
                "atlas refers to source {max}, lead field has {}",
                lead.n_sources()
            )))
        }
        None => return Err(Error::Validation("atlas is empty".into())),
    }
    let n_samples = (cfg.duration_s * cfg.sampling_rate).round() as usize;
    let n_sources = lead.n_sources();
    let scout_sources: std::collections::BTreeSet<usize> = Region::ALL
        .iter()
        .flat_map(|&r| atlas.region(r).iter().copied())
        .collect();

    let mut subjects = Vec::new();
    let mut global_index = 0u64;
    for (class_idx, label) in ClassLabel::ALL.iter().enumerate() {
        let profile = &cfg.class_profiles[class_idx];
        for _ in 0..cfg.subjects_per_class {
            let subject_seed = cfg.seed.wrapping_add(global_index);
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
            let mut sources = Array2::zeros((n_sources, n_samples));
            for (region_idx, &region) in Region::ALL.iter().enumerate() {
                let bands = &profile.bands_per_region[region_idx];
                for &src in atlas.region(region) {
                    let row = sources.row_mut(src).into_slice().unwrap();
                    for band in bands {
                        band_signal(
                            &mut rng,
                            band,
                            cfg.scout_amplitude,
                            cfg.sinusoids_per_band,
                            n_samples,
                            cfg.sampling_rate,
                            row,
                        );
                    }
                }
            }
            for src in 0..n_sources {
                if scout_sources.contains(&src) {
                    continue;
                }
                let row = sources.row_mut(src).into_slice().unwrap();
                background_signal(
                    &mut rng,
                    cfg.background_amplitude,
                    n_samples,
                    cfg.sampling_rate,
                    row,
                );
            }
            let mut recording = project_sources(
                lead,
                &sources,
                cfg.noise_sigma,
                cfg.sampling_rate,
                subject_seed ^ 0x5eed_0001,
            )?;
            recording.label = Some(*label);
            subjects.push(SyntheticSubject {
                id: format!("s{global_index:03}"),
                label: *label,
                seed: subject_seed,
                recording,
            });
            global_index += 1;
        }
    }
    Ok(subjects)
}

/// Drives a single source with `waveform` and projects it, keeping the
/// ground-truth index for localization tests.
pub fn plant_dipole(
    lead: &LeadField,
    source_index: usize,
    waveform: &[f64],
    noise_sigma: f64,
    sampling_rate: f64,
    seed: u64,
) -> Result<(ScalpRecording, usize)> {
    if source_index >= lead.n_sources() {
        return Err(Error::Validation(format!(
            "source index {source_index} out of range ({} sources)",
            lead.n_sources()
        )));
    }
    let mut sources = Array2::zeros((lead.n_sources(), waveform.len()));
    for (t, &v) in waveform.iter().enumerate() {
        sources[[source_index, t]] = v;
    }
    let recording = project_sources(lead, &sources, noise_sigma, sampling_rate, seed)?;
    Ok((recording, source_index))
}
