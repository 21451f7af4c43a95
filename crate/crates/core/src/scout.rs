//! Subcortical parcellation and scout-series averaging.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverse::SourceEstimate;

/// The six scout regions, in the canonical order used everywhere: left
/// structures first, then right, structure order thalamus / hippocampus /
/// amygdala within each hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    ThalamusL,
    HippocampusL,
    AmygdalaL,
    ThalamusR,
    HippocampusR,
    AmygdalaR,
}

pub const REGION_COUNT: usize = 6;

impl Region {
    pub const ALL: [Region; REGION_COUNT] = [
        Region::ThalamusL,
        Region::HippocampusL,
        Region::AmygdalaL,
        Region::ThalamusR,
        Region::HippocampusR,
        Region::AmygdalaR,
    ];

    pub fn index(self) -> usize {
        Region::ALL.iter().position(|&r| r == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::ThalamusL => "ThalamusL",
            Region::HippocampusL => "HippocampusL",
            Region::AmygdalaL => "AmygdalaL",
            Region::ThalamusR => "ThalamusR",
            Region::HippocampusR => "HippocampusR",
            Region::AmygdalaR => "AmygdalaR",
        }
    }

    pub fn is_left(self) -> bool {
        matches!(self, Region::ThalamusL | Region::HippocampusL | Region::AmygdalaL)
    }
}

/// The three anatomical structures, each present in both hemispheres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Thalamus,
    Hippocampus,
    Amygdala,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Thalamus, Structure::Hippocampus, Structure::Amygdala];

    pub fn region(self, right: bool) -> Region {
        match (self, right) {
            (Structure::Thalamus, false) => Region::ThalamusL,
            (Structure::Hippocampus, false) => Region::HippocampusL,
            (Structure::Amygdala, false) => Region::AmygdalaL,
            (Structure::Thalamus, true) => Region::ThalamusR,
            (Structure::Hippocampus, true) => Region::HippocampusR,
            (Structure::Amygdala, true) => Region::AmygdalaR,
        }
    }
}

/// Bounding ball of one structure, given for the right hemisphere
/// (center x > 0) and mirrored across the midline for the left.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureBall {
    pub structure: Structure,
    /// Right-hemisphere ball center, metres; mirrored to (-x, y, z) on the left.
    pub center: [f64; 3],
    pub radius: f64,
}

/// One ball per structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub balls: Vec<StructureBall>,
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.balls.len() != Structure::ALL.len() {
            return Err(Error::Atlas(format!(
                "expected one ball per structure ({}), got {}",
                Structure::ALL.len(),
                self.balls.len()
            )));
        }
        for s in Structure::ALL {
            if !self.balls.iter().any(|b| b.structure == s) {
                return Err(Error::Atlas(format!("no ball for structure {s:?}")));
            }
        }
        for b in &self.balls {
            if !(b.radius > 0.0) {
                return Err(Error::Atlas(format!("{:?} ball radius must be positive", b.structure)));
            }
            if !(b.center[0] > 0.0) {
                return Err(Error::Atlas(format!(
                    "{:?} ball center must have positive x (right-hemisphere convention)",
                    b.structure
                )));
            }
        }
        // Disjointness within a hemisphere; mirrored layout makes one check enough.
        for (i, a) in self.balls.iter().enumerate() {
            for b in self.balls.iter().skip(i + 1) {
                let d = dist(&a.center, &b.center);
                if d <= a.radius + b.radius {
                    return Err(Error::Atlas(format!(
                        "balls {:?} and {:?} overlap (distance {d:.4} <= {:.4})",
                        a.structure,
                        b.structure,
                        a.radius + b.radius
                    )));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Source-index sets of the six regions, canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atlas {
    #[serde(rename = "ThalamusL")]
    pub thalamus_l: Vec<usize>,
    #[serde(rename = "HippocampusL")]
    pub hippocampus_l: Vec<usize>,
    #[serde(rename = "AmygdalaL")]
    pub amygdala_l: Vec<usize>,
    #[serde(rename = "ThalamusR")]
    pub thalamus_r: Vec<usize>,
    #[serde(rename = "HippocampusR")]
    pub hippocampus_r: Vec<usize>,
    #[serde(rename = "AmygdalaR")]
    pub amygdala_r: Vec<usize>,
}

impl Atlas {
    pub fn region(&self, r: Region) -> &[usize] {
        match r {
            Region::ThalamusL => &self.thalamus_l,
            Region::HippocampusL => &self.hippocampus_l,
            Region::AmygdalaL => &self.amygdala_l,
            Region::ThalamusR => &self.thalamus_r,
            Region::HippocampusR => &self.hippocampus_r,
            Region::AmygdalaR => &self.amygdala_r,
        }
    }

    fn region_mut(&mut self, r: Region) -> &mut Vec<usize> {
        match r {
            Region::ThalamusL => &mut self.thalamus_l,
            Region::HippocampusL => &mut self.hippocampus_l,
            Region::AmygdalaL => &mut self.amygdala_l,
            Region::ThalamusR => &mut self.thalamus_r,
            Region::HippocampusR => &mut self.hippocampus_r,
            Region::AmygdalaR => &mut self.amygdala_r,
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        Region::ALL
            .iter()
            .flat_map(|&r| self.region(r).iter().copied())
            .max()
    }

    fn empty() -> Self {
        Atlas {
            thalamus_l: vec![],
            hippocampus_l: vec![],
            amygdala_l: vec![],
            thalamus_r: vec![],
            hippocampus_r: vec![],
            amygdala_r: vec![],
        }
    }
}

/// Assigns a source position to a region, if any. Laterality is the sign of
/// the x coordinate (positive x = right); structure membership tests the
/// midline-mirrored position against the right-hemisphere ball.
pub fn classify_source(position: &[f64; 3], spec: &RegionSpec) -> Option<Region> {
    let mirrored = [position[0].abs(), position[1], position[2]];
    for ball in &spec.balls {
        if dist(&mirrored, &ball.center) <= ball.radius {
            return Some(ball.structure.region(position[0] >= 0.0));
        }
    }
    None
}

/// Builds the six-region atlas from source positions and per-structure balls.
pub fn build_subatlas(source_positions: &[[f64; 3]], spec: &RegionSpec) -> Result<Atlas> {
    spec.validate()?;
    let mut atlas = Atlas::empty();
    for (idx, pos) in source_positions.iter().enumerate() {
        if let Some(region) = classify_source(pos, spec) {
            atlas.region_mut(region).push(idx);
        }
    }
    for region in Region::ALL {
        if atlas.region(region).is_empty() {
            return Err(Error::Atlas(format!("region {} is empty", region.name())));
        }
    }
    Ok(atlas)
}

/// Region-averaged source time series, 6 x T, canonical region order.
#[derive(Debug, Clone)]
pub struct ScoutMatrix {
    pub series: Array2<f64>,
    pub sampling_rate: f64,
}

/// Averages source currents over each atlas region.
pub fn extract_scout_series(est: &SourceEstimate, atlas: &Atlas) -> Result<ScoutMatrix> {
    let n_sources = est.currents.nrows();
    if let Some(max) = atlas.max_index() {
        if max >= n_sources {
            return Err(Error::Shape(format!(
                "atlas refers to source {max}, estimate has only {n_sources}"
            )));
        }
    }
    let t = est.currents.ncols();
    let mut series = Array2::zeros((REGION_COUNT, t));
    for (r, region) in Region::ALL.iter().enumerate() {
        let indices = atlas.region(*region);
        let scale = 1.0 / indices.len() as f64;
        for &src in indices {
            let row = est.currents.row(src);
            for (acc, &v) in series.row_mut(r).iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
        series.row_mut(r).mapv_inplace(|v| v * scale);
    }
    Ok(ScoutMatrix {
        series,
        sampling_rate: est.sampling_rate,
    })
}
