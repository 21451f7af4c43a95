//! Regularized minimum-norm inverse kernel and sLORETA standardization.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::forward::{LeadField, ScalpRecording};

/// Relative eigenvalue cutoff for the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-10;

/// Inverse kernel mapping scalp potentials to source currents,
/// kernel = A^T [A A^T + lambda H]^+ .
#[derive(Debug, Clone)]
pub struct InverseKernel {
    /// sources x channels
    pub kernel: Array2<f64>,
    pub lambda: f64,
    pub standardized: bool,
    /// diag(kernel * A), recorded by standardization.
    pub resolution_diag: Option<Array1<f64>>,
}

impl InverseKernel {
    pub fn n_sources(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.kernel.ncols()
    }
}

/// Source current estimates over time.
#[derive(Debug, Clone)]
pub struct SourceEstimate {
    /// sources x samples
    pub currents: Array2<f64>,
    pub sampling_rate: f64,
}

/// Average reference operator H = I - (1/m) 11^T.
pub fn average_reference_operator(m: usize) -> Result<Array2<f64>> {
    if m < 2 {
        return Err(Error::Validation(format!(
            "average reference needs at least 2 channels, got {m}"
        )));
    }
    let mut h = Array2::from_elem((m, m), -1.0 / m as f64);
    for i in 0..m {
        h[[i, i]] += 1.0;
    }
    Ok(h)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix via eigendecomposition,
/// zeroing eigenvalues below PINV_CUTOFF relative to the largest magnitude.
fn symmetric_pinv(b: &Array2<f64>) -> Array2<f64> {
    let m = b.nrows();
    let nm = DMatrix::from_fn(m, m, |i, j| b[[i, j]]);
    let eig = SymmetricEigen::new(nm);
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let cutoff = PINV_CUTOFF * max_abs;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v.abs() > cutoff { 1.0 / v } else { 0.0 })
        .collect();
    // Q diag(1/lambda) Q^T
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let mut acc = 0.0;
            for (k, &iv) in inv_vals.iter().enumerate() {
                acc += eig.eigenvectors[(i, k)] * iv * eig.eigenvectors[(j, k)];
            }
            out[[i, j]] = acc;
            out[[j, i]] = acc;
        }
    }
    out
}

/// Builds the (non-standardized) minimum-norm kernel A^T [A A^T + lambda H]^+.
pub fn min_norm_kernel(lead: &LeadField, lambda: f64) -> Result<InverseKernel> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Validation(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let a = &lead.gain;
    let m = a.nrows();
    let mut b = a.dot(&a.t());
    if lambda > 0.0 {
        let h = average_reference_operator(m)?;
        b = b + lambda * &h;
    }
    let pinv = symmetric_pinv(&b);
    let kernel = a.t().dot(&pinv);
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite kernel entry".into()));
    }
    Ok(InverseKernel {
        kernel,
        lambda,
        standardized: false,
        resolution_diag: None,
    })
}

/// sLORETA standardization: divides kernel row j by sqrt((kernel A)_jj).
pub fn sloreta_standardize(k: &InverseKernel, lead: &LeadField) -> Result<InverseKernel> {
    if k.standardized {
        return Err(Error::Validation("kernel is already standardized".into()));
    }
    if k.n_channels() != lead.n_channels() || k.n_sources() != lead.n_sources() {
        return Err(Error::Shape(format!(
            "kernel {}x{} does not match lead field {}x{}",
            k.n_sources(),
            k.n_channels(),
            lead.n_channels(),
            lead.n_sources()
        )));
    }
    let n = k.n_sources();
    let mut diag = Array1::zeros(n);
    for j in 0..n {
        let d = k.kernel.row(j).dot(&lead.gain.column(j));
        if !(d > 0.0) {
            return Err(Error::Degeneracy {
                source_index: j,
                value: d,
            });
        }
        diag[j] = d;
    }
    let mut kernel = k.kernel.clone();
    for j in 0..n {
        let scale = 1.0 / diag[j].sqrt();
        kernel.row_mut(j).mapv_inplace(|v| v * scale);
    }
    Ok(InverseKernel {
        kernel,
        lambda: k.lambda,
        standardized: true,
        resolution_diag: Some(diag),
    })
}

/// Default regularization from an assumed sensor SNR:
/// lambda = trace(A A^T) / (M snr^2).
pub fn regularization_parameter(lead: &LeadField, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Validation(format!("snr must be positive, got {snr}")));
    }
    let trace: f64 = lead.gain.iter().map(|v| v * v).sum();
    Ok(trace / (lead.n_channels() as f64 * snr * snr))
}

/// Applies the kernel: currents = kernel * data.
pub fn apply_inverse(k: &InverseKernel, rec: &ScalpRecording) -> Result<SourceEstimate> {
    if k.n_channels() != rec.n_channels() {
        return Err(Error::Shape(format!(
            "kernel expects {} channels, recording has {}",
            k.n_channels(),
            rec.n_channels()
        )));
    }
    Ok(SourceEstimate {
        currents: k.kernel.dot(&rec.data),
        sampling_rate: rec.sampling_rate,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSidecar {
    lambda: f64,
    standardized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolution_diag: Option<Vec<f64>>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn save_kernel(path: &Path, k: &InverseKernel) -> Result<()> {
    container::write_f64(path, &k.kernel.clone().into_dyn())?;
    let sidecar = KernelSidecar {
        lambda: k.lambda,
        standardized: k.standardized,
        resolution_diag: k.resolution_diag.as_ref().map(|d| d.to_vec()),
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

pub fn load_kernel(path: &Path) -> Result<InverseKernel> {
    let kernel = container::read_rank(path, 2)?
        .into_f64()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("rank checked");
    let raw = std::fs::read(sidecar_path(path))
        .map_err(|_| Error::MissingArtifact(sidecar_path(path).display().to_string()))?;
    let sidecar: KernelSidecar = serde_json::from_slice(&raw)
        .map_err(|e| Error::Format(format!("kernel sidecar: {e}")))?;
    if sidecar.standardized && sidecar.resolution_diag.is_none() {
        return Err(Error::Format(
            "standardized kernel sidecar lacks resolution_diag".into(),
        ));
    }
    Ok(InverseKernel {
        kernel,
        lambda: sidecar.lambda,
        standardized: sidecar.standardized,
        resolution_diag: sidecar.resolution_diag.map(Array1::from_vec),
    })
}
