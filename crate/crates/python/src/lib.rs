//! Python bindings for the scout scalogram toolkit. Arrays cross the
//! boundary as NumPy arrays; heavier workflows go through the file-based
//! pipeline stages, driven by `run_stage`.

use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use scwt_core::config::PipelineConfig;
use scwt_core::error::Error;
use scwt_core::forward::{build_spherical_lead_field, HeadGeometry, LeadField, LeadFieldProvenance};
use scwt_core::fusion;
use scwt_core::inverse;
use scwt_core::pipeline::{run_stage, Stage};
use scwt_core::signal::Epoch;
use scwt_core::tfr::{self, WaveletParams};
use scwt_core::ClassLabel;

fn to_py_err(err: Error) -> PyErr {
    match &err {
        Error::Io(_) | Error::MissingArtifact(_) => PyIOError::new_err(err.to_string()),
        Error::Numeric(_) | Error::Degeneracy { .. } => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn lead_from_array(gain: PyReadonlyArray2<'_, f64>) -> PyResult<LeadField> {
    Ok(LeadField {
        gain: gain.as_array().to_owned(),
        provenance: LeadFieldProvenance::External("python".into()),
    })
}

/// Gain matrix (channels x sources, microvolts per unit dipole moment) of
/// the analytic spherical head model, from a geometry JSON document.
#[pyfunction]
#[pyo3(signature = (geometry_json, series_order = 60))]
fn build_lead_field<'py>(
    py: Python<'py>,
    geometry_json: &str,
    series_order: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let geometry: HeadGeometry = serde_json::from_str(geometry_json)
        .map_err(|e| PyValueError::new_err(format!("geometry json: {e}")))?;
    let lead = build_spherical_lead_field(&geometry, series_order).map_err(to_py_err)?;
    Ok(lead.gain.into_pyarray(py))
}

/// Average reference operator H = I - (1/m) 11^T.
#[pyfunction]
fn average_reference_operator(py: Python<'_>, m: usize) -> PyResult<Bound<'_, PyArray2<f64>>> {
    let h = inverse::average_reference_operator(m).map_err(to_py_err)?;
    Ok(h.into_pyarray(py))
}

/// Minimum-norm inverse kernel A^T [A A^T + lambda H]^+, optionally
/// sLORETA-standardized.
#[pyfunction]
#[pyo3(signature = (gain, lam, standardized = false))]
fn min_norm_kernel<'py>(
    py: Python<'py>,
    gain: PyReadonlyArray2<'py, f64>,
    lam: f64,
    standardized: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let lead = lead_from_array(gain)?;
    let mut kernel = inverse::min_norm_kernel(&lead, lam).map_err(to_py_err)?;
    if standardized {
        kernel = inverse::sloreta_standardize(&kernel, &lead).map_err(to_py_err)?;
    }
    Ok(kernel.kernel.into_pyarray(py))
}

/// lambda = trace(A A^T) / (M snr^2).
#[pyfunction]
fn regularization_parameter(gain: PyReadonlyArray2<'_, f64>, snr: f64) -> PyResult<f64> {
    let lead = lead_from_array(gain)?;
    inverse::regularization_parameter(&lead, snr).map_err(to_py_err)
}

/// Morlet scalogram (scales x shifts magnitudes) of a 128-sample signal.
#[pyfunction]
#[pyo3(signature = (x, sampling_rate, omega0 = 6.0, f_min = 0.5, f_max = 40.0))]
fn cwt_scalogram<'py>(
    py: Python<'py>,
    x: PyReadonlyArray1<'py, f64>,
    sampling_rate: f64,
    omega0: f64,
    f_min: f64,
    f_max: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let params = WaveletParams::new(omega0, sampling_rate, f_min, f_max).map_err(to_py_err)?;
    let map = tfr::cwt_scalogram(x.as_slice()?, &params).map_err(to_py_err)?;
    Ok(map.into_pyarray(py))
}

/// The scale grid of the standard wavelet parameters.
#[pyfunction]
#[pyo3(signature = (sampling_rate, omega0 = 6.0, f_min = 0.5, f_max = 40.0))]
fn wavelet_scales(
    sampling_rate: f64,
    omega0: f64,
    f_min: f64,
    f_max: f64,
) -> PyResult<Vec<f64>> {
    let params = WaveletParams::new(omega0, sampling_rate, f_min, f_max).map_err(to_py_err)?;
    Ok(params.scales)
}

/// Left/right 128 x 128 x 3 normalized scalogram tensors of one 128 x 6
/// epoch (columns in canonical scout order).
#[pyfunction]
#[pyo3(signature = (epoch, sampling_rate = 512.0, omega0 = 6.0))]
fn epoch_to_images<'py>(
    py: Python<'py>,
    epoch: PyReadonlyArray2<'py, f64>,
    sampling_rate: f64,
    omega0: f64,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray3<f64>>)> {
    let params = WaveletParams::new(omega0, sampling_rate, 0.5, 40.0).map_err(to_py_err)?;
    let e = Epoch {
        samples: epoch.as_array().to_owned(),
        subject_id: "py".into(),
        label: ClassLabel::Hc,
    };
    let pair = tfr::epoch_to_images(&e, &params).map_err(to_py_err)?;
    Ok((pair.left.into_pyarray(py), pair.right.into_pyarray(py)))
}

/// w_c = max_count / count_c.
#[pyfunction]
fn compute_class_weights(counts: [usize; 3]) -> PyResult<[f64; 3]> {
    scwt_core::neural::compute_class_weights(&counts).map_err(to_py_err)
}

/// Posterior-sum fusion: (predicted class, normalized scores).
#[pyfunction]
fn fuse_sum(pl: [f64; 3], pr: [f64; 3]) -> (usize, [f64; 3]) {
    let f = fusion::fuse_sum(&pl, &pr);
    (f.prediction, f.scores)
}

/// Posterior-product fusion: (predicted class, normalized scores).
#[pyfunction]
fn fuse_product(pl: [f64; 3], pr: [f64; 3]) -> (usize, [f64; 3]) {
    let f = fusion::fuse_product(&pl, &pr);
    (f.prediction, f.scores)
}

/// Flattened tensor-fusion vector of two embeddings.
#[pyfunction]
fn tensor_fusion_vector(zl: Vec<f64>, zr: Vec<f64>) -> Vec<f64> {
    fusion::tensor_fusion_vector(&zl, &zr)
}

/// Reads a tensor container file as a float64 NumPy array.
#[pyfunction]
fn read_tensor(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    let tensor = scwt_core::container::read(std::path::Path::new(path)).map_err(to_py_err)?;
    let arr = tensor.into_f64();
    Ok(arr.into_pyarray(py).into_any().unbind())
}

/// Writes a float64 NumPy array (any rank) to a tensor container file.
#[pyfunction]
fn write_tensor(path: &str, array: PyReadonlyArray1<'_, f64>) -> PyResult<()> {
    let data = array.as_array().to_owned().into_dyn();
    scwt_core::container::write_f64(std::path::Path::new(path), &data).map_err(to_py_err)
}

/// Runs one pipeline stage (simulate, preprocess, localize, scout, epoch,
/// cwt, train, fuse, evaluate, report) against an output directory.
#[pyfunction]
#[pyo3(signature = (stage, out_dir, config_json = None))]
fn run_pipeline_stage(stage: &str, out_dir: &str, config_json: Option<&str>) -> PyResult<()> {
    let cfg = match config_json {
        Some(json) => PipelineConfig::from_json(json.as_bytes()).map_err(to_py_err)?,
        None => PipelineConfig::default(),
    };
    let stage = Stage::parse(stage).map_err(to_py_err)?;
    run_stage(stage, &cfg, std::path::Path::new(out_dir)).map_err(to_py_err)
}

#[pymodule]
fn scwt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(build_lead_field, m)?)?;
    m.add_function(wrap_pyfunction!(average_reference_operator, m)?)?;
    m.add_function(wrap_pyfunction!(min_norm_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(regularization_parameter, m)?)?;
    m.add_function(wrap_pyfunction!(cwt_scalogram, m)?)?;
    m.add_function(wrap_pyfunction!(wavelet_scales, m)?)?;
    m.add_function(wrap_pyfunction!(epoch_to_images, m)?)?;
    m.add_function(wrap_pyfunction!(compute_class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_sum, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_product, m)?)?;
    m.add_function(wrap_pyfunction!(tensor_fusion_vector, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline_stage, m)?)?;
    Ok(())
}
