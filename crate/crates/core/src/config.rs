//! Pipeline configuration: a single JSON document with one section per
//! stage family. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::neural::ConvNetSpec;
use crate::synthgen::{CohortConfig, GeometryConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub zero_phase: bool,
    pub target_rate: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            low_hz: 0.5,
            high_hz: 40.0,
            order: 8,
            zero_phase: true,
            target_rate: 512.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseSection {
    /// explicit regularization; when absent, lambda = trace(AA^T)/(M snr^2)
    pub lambda: Option<f64>,
    pub snr: f64,
    pub standardized: bool,
}

impl Default for InverseSection {
    fn default() -> Self {
        InverseSection {
            lambda: None,
            snr: 3.0,
            standardized: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletSection {
    pub omega0: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for WaveletSection {
    fn default() -> Self {
        WaveletSection {
            omega0: 6.0,
            f_min: 0.5,
            f_max: 40.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub net: ConvNetSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            batch: 32,
            patience: 20,
            max_steps: 2000,
            seed: 0,
            net: ConvNetSpec::standard(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub strategy: FusionStrategy,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            strategy: FusionStrategy::ProductProb,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub seed: u64,
    pub subject_level: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            seed: 0,
            subject_level: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub geometry: GeometryConfig,
    pub cohort: CohortConfig,
    pub preprocess: PreprocessSection,
    pub inverse: InverseSection,
    pub wavelet: WaveletSection,
    pub train: TrainSection,
    pub fusion: FusionSection,
    pub split: SplitSection,
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
        Self::from_json(&bytes)
    }

    /// SHA-256 of the canonical serialization; stamped into stage manifests.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// `--seed N`: one master seed drives simulation, training, and the
    /// dataset split (master, master+1, master+2).
    pub fn override_seed(&mut self, master: u64) {
        self.cohort.seed = master;
        self.geometry.seed = master;
        self.train.seed = master.wrapping_add(1);
        self.split.seed = master.wrapping_add(2);
    }
}
