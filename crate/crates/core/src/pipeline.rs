//! File-based pipeline stages. Every stage reads and writes only tensor
//! containers and JSON inside stage-named directories under one output
//! root, so each step is independently runnable and cacheable.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::container;
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, SplitManifest};
use crate::forward::{build_spherical_lead_field, load_lead_field, HeadGeometry, ScalpRecording};
use crate::fusion::{self, FusedModel, FusionHeadParams, FusionStrategy};
use crate::inverse;
use crate::neural::{
    self, ConvNetSpec, DatasetView, ImageDataset, ModelParams, TrainConfig,
};
use crate::scout::{Atlas, RegionSpec};
use crate::signal;
use crate::synthgen;
use crate::tfr::{self, WaveletParams};
use crate::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Preprocess,
    Localize,
    Scout,
    Epoch,
    Cwt,
    Train,
    Fuse,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Localize,
        Stage::Scout,
        Stage::Epoch,
        Stage::Cwt,
        Stage::Train,
        Stage::Fuse,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Preprocess => "preprocess",
            Stage::Localize => "localize",
            Stage::Scout => "scout",
            Stage::Epoch => "epoch",
            Stage::Cwt => "cwt",
            Stage::Train => "train",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub label: ClassLabel,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub config_hash: String,
    pub sampling_rate: f64,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSubject {
    pub id: String,
    pub label: ClassLabel,
    pub n_epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochManifest {
    pub config_hash: String,
    pub epoch_len: usize,
    pub subjects: Vec<EpochSubject>,
}

impl EpochManifest {
    /// Global epoch ids, "<subject>:<index>", in storage order.
    pub fn epoch_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for s in &self.subjects {
            for e in 0..s.n_epochs {
                ids.push(format!("{}:{e:04}", s.id));
            }
        }
        ids
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut labels = Vec::new();
        for s in &self.subjects {
            labels.extend(std::iter::repeat(s.label.index()).take(s.n_epochs));
        }
        labels
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub strategy: String,
    pub epoch_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub metrics: MetricsReport,
}

pub fn stage_dir(out: &Path, stage: Stage) -> PathBuf {
    out.join(stage.name())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn subject_tensor(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.scwt"))
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    Ok(container::read_rank(path, 2)?
        .into_f64()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("rank checked"))
}

/// simulate: build the montage and lead field, then synthesize the labeled
/// cohort. Writes geometry.json, regions.json, atlas.json, leadfield.scwt,
/// one recording per subject, and manifest.json.
pub fn stage_simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, Stage::Simulate);
    std::fs::create_dir_all(&dir)?;
    let (geometry, regions, atlas) = synthgen::synthetic_geometry(&cfg.geometry)?;
    let lead = build_spherical_lead_field(&geometry, cfg.geometry.series_order)?;
    write_json(&dir.join("geometry.json"), &geometry)?;
    write_json(&dir.join("regions.json"), &regions)?;
    write_json(&dir.join("atlas.json"), &atlas)?;
    crate::forward::save_lead_field(&dir.join("leadfield.scwt"), &lead)?;

    let subjects = synthgen::generate_cohort(&cfg.cohort, &lead, &atlas)?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in &subjects {
        container::write_f64(
            &subject_tensor(&dir, &s.id),
            &s.recording.data.clone().into_dyn(),
        )?;
        entries.push(SubjectEntry {
            id: s.id.clone(),
            label: s.label,
            seed: s.seed,
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &CohortManifest {
            config_hash: cfg.hash(),
            sampling_rate: cfg.cohort.sampling_rate,
            subjects: entries,
        },
    )?;
    Ok(())
}

/// preprocess: average reference, zero-phase band-pass, resample to the
/// target rate, per subject.
pub fn stage_preprocess(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let src = stage_dir(out, Stage::Simulate);
    let dir = stage_dir(out, Stage::Preprocess);
    std::fs::create_dir_all(&dir)?;
    let manifest: CohortManifest = read_json(&src.join("manifest.json"))?;
    let p = &cfg.preprocess;
    let results: Vec<Result<()>> = manifest
        .subjects
        .par_iter()
        .map(|entry| {
            let data = read_matrix(&subject_tensor(&src, &entry.id))?;
            let labels = (0..data.nrows()).map(|i| format!("E{i:03}")).collect();
            let rec = ScalpRecording::new(data, manifest.sampling_rate, labels, Some(entry.label))?;
            let rec = signal::average_rereference(&rec)?;
            let rec = signal::butterworth_bandpass(&rec, p.low_hz, p.high_hz, p.order, p.zero_phase)?;
            let rec = signal::downsample(&rec, p.target_rate)?;
            container::write_f64(&subject_tensor(&dir, &entry.id), &rec.data.into_dyn())
        })
        .collect();
    results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(
        &dir.join("manifest.json"),
        &CohortManifest {
            config_hash: cfg.hash(),
            sampling_rate: p.target_rate,
            subjects: manifest.subjects,
        },
    )?;
    Ok(())
}

/// localize: build the inverse kernel from the lead field and apply it to
/// every preprocessed recording.
pub fn stage_localize(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let sim = stage_dir(out, Stage::Simulate);
    let src = stage_dir(out, Stage::Preprocess);
    let dir = stage_dir(out, Stage::Localize);
    std::fs::create_dir_all(&dir)?;
    let manifest: CohortManifest = read_json(&src.join("manifest.json"))?;
    let lead = load_lead_field(&sim.join("leadfield.scwt"))?;
    let lambda = match cfg.inverse.lambda {
        Some(l) => l,
        None => inverse::regularization_parameter(&lead, cfg.inverse.snr)?,
    };
    let mut kernel = inverse::min_norm_kernel(&lead, lambda)?;
    if cfg.inverse.standardized {
        kernel = inverse::sloreta_standardize(&kernel, &lead)?;
    }
    inverse::save_kernel(&dir.join("kernel.scwt"), &kernel)?;
    let results: Vec<Result<()>> = manifest
        .subjects
        .par_iter()
        .map(|entry| {
            let data = read_matrix(&subject_tensor(&src, &entry.id))?;
            let labels = (0..data.nrows()).map(|i| format!("E{i:03}")).collect();
            let rec = ScalpRecording::new(data, manifest.sampling_rate, labels, Some(entry.label))?;
            let est = inverse::apply_inverse(&kernel, &rec)?;
            container::write_f64(&subject_tensor(&dir, &entry.id), &est.currents.into_dyn())
        })
        .collect();
    results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

/// scout: average source currents into the six-region scout matrix.
pub fn stage_scout(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let sim = stage_dir(out, Stage::Simulate);
    let src = stage_dir(out, Stage::Localize);
    let dir = stage_dir(out, Stage::Scout);
    std::fs::create_dir_all(&dir)?;
    let _ = cfg;
    let manifest: CohortManifest = read_json(&src.join("manifest.json"))?;
    let atlas: Atlas = read_json(&sim.join("atlas.json"))?;
    for entry in &manifest.subjects {
        let currents = read_matrix(&subject_tensor(&src, &entry.id))?;
        let est = inverse::SourceEstimate {
            currents,
            sampling_rate: manifest.sampling_rate,
        };
        let sm = crate::scout::extract_scout_series(&est, &atlas)?;
        container::write_f64(&subject_tensor(&dir, &entry.id), &sm.series.into_dyn())?;
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

/// epoch: cut each scout matrix into 128 x 6 windows; one rank-3 tensor per
/// subject plus an epoch manifest.
pub fn stage_epoch(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let src = stage_dir(out, Stage::Scout);
    let dir = stage_dir(out, Stage::Epoch);
    std::fs::create_dir_all(&dir)?;
    let manifest: CohortManifest = read_json(&src.join("manifest.json"))?;
    let mut subjects = Vec::new();
    for entry in &manifest.subjects {
        let series = read_matrix(&subject_tensor(&src, &entry.id))?;
        let sm = crate::scout::ScoutMatrix {
            series,
            sampling_rate: manifest.sampling_rate,
        };
        let epochs = signal::segment_epochs(&sm, tfr::EPOCH_LEN, &entry.id, entry.label)?;
        let n = epochs.len();
        let mut tensor = Array3::zeros((n, tfr::EPOCH_LEN, 6));
        for (e, epoch) in epochs.iter().enumerate() {
            tensor.index_axis_mut(Axis(0), e).assign(&epoch.samples);
        }
        container::write_f64(&subject_tensor(&dir, &entry.id), &tensor.into_dyn())?;
        subjects.push(EpochSubject {
            id: entry.id.clone(),
            label: entry.label,
            n_epochs: n,
        });
    }
    write_json(
        &dir.join("epochs.json"),
        &EpochManifest {
            config_hash: cfg.hash(),
            epoch_len: tfr::EPOCH_LEN,
            subjects,
        },
    )?;
    Ok(())
}

/// cwt: Morlet scalograms of every epoch, split into left/right 3-channel
/// image batches (f32 on disk).
pub fn stage_cwt(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let src = stage_dir(out, Stage::Epoch);
    let dir = stage_dir(out, Stage::Cwt);
    std::fs::create_dir_all(&dir)?;
    let manifest: EpochManifest = read_json(&src.join("epochs.json"))?;
    let params = WaveletParams::new(
        cfg.wavelet.omega0,
        cfg.preprocess.target_rate,
        cfg.wavelet.f_min,
        cfg.wavelet.f_max,
    )?;
    for subject in &manifest.subjects {
        let tensor = container::read_rank(&subject_tensor(&src, &subject.id), 3)?.into_f64();
        let n = tensor.shape()[0];
        let pairs: Vec<Result<(Array3<f32>, Array3<f32>)>> = (0..n)
            .into_par_iter()
            .map(|e| {
                let samples = tensor
                    .index_axis(Axis(0), e)
                    .to_owned()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("rank-3 sliced");
                let epoch = signal::Epoch {
                    samples,
                    subject_id: subject.id.clone(),
                    label: subject.label,
                };
                let pair = tfr::epoch_to_images(&epoch, &params)?;
                Ok((pair.left.mapv(|v| v as f32), pair.right.mapv(|v| v as f32)))
            })
            .collect();
        let mut left = Array4::zeros((n, tfr::SCALE_COUNT, tfr::EPOCH_LEN, 3));
        let mut right = Array4::zeros((n, tfr::SCALE_COUNT, tfr::EPOCH_LEN, 3));
        for (e, pair) in pairs.into_iter().enumerate() {
            let (l, r) = pair?;
            left.index_axis_mut(Axis(0), e).assign(&l);
            right.index_axis_mut(Axis(0), e).assign(&r);
        }
        container::write_f32(&dir.join(format!("{}_left.scwt", subject.id)), &left.into_dyn())?;
        container::write_f32(&dir.join(format!("{}_right.scwt", subject.id)), &right.into_dyn())?;
    }
    write_json(&dir.join("epochs.json"), &manifest)?;
    Ok(())
}

/// Both hemispheres of the scalogram dataset, index-aligned.
pub struct LoadedImages {
    pub left: ImageDataset,
    pub right: ImageDataset,
    pub ids: Vec<String>,
}

pub fn load_cwt_datasets(out: &Path) -> Result<LoadedImages> {
    let dir = stage_dir(out, Stage::Cwt);
    let manifest: EpochManifest = read_json(&dir.join("epochs.json"))?;
    let labels = manifest.labels();
    let ids = manifest.epoch_ids();
    let load_side = |side: &str| -> Result<Array4<f32>> {
        let mut data: Vec<f32> = Vec::new();
        let mut total = 0;
        for subject in &manifest.subjects {
            let path = dir.join(format!("{}_{side}.scwt", subject.id));
            let tensor = container::read_rank(&path, 4)?;
            let arr = match tensor {
                container::Tensor::F32(a) => a,
                container::Tensor::F64(a) => a.mapv(|v| v as f32),
            };
            if arr.shape()[0] != subject.n_epochs {
                return Err(Error::Format(format!(
                    "{}: {} epochs on disk, manifest says {}",
                    path.display(),
                    arr.shape()[0],
                    subject.n_epochs
                )));
            }
            total += subject.n_epochs;
            data.extend(arr.iter().copied());
        }
        Array4::from_shape_vec((total, tfr::SCALE_COUNT, tfr::EPOCH_LEN, 3), data)
            .map_err(|e| Error::Format(format!("scalogram batch shape: {e}")))
    };
    let left = ImageDataset::new(load_side("left")?, labels.clone())?;
    let right = ImageDataset::new(load_side("right")?, labels)?;
    Ok(LoadedImages { left, right, ids })
}

fn view_for<'a>(
    data: &'a ImageDataset,
    ids: &[String],
    wanted: &[String],
) -> Result<DatasetView<'a>> {
    let mut position = std::collections::HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        position.insert(id.as_str(), i);
    }
    let mut indices = Vec::with_capacity(wanted.len());
    for id in wanted {
        let &i = position
            .get(id.as_str())
            .ok_or_else(|| Error::Format(format!("split refers to unknown epoch id {id}")))?;
        indices.push(i);
    }
    Ok(DatasetView { data, indices })
}

fn train_config(cfg: &PipelineConfig, class_weights: [f64; 3], seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.train.lr,
        batch_size: cfg.train.batch,
        class_weights,
        patience: cfg.train.patience,
        max_steps: cfg.train.max_steps,
        seed,
    }
}

/// train: split the epochs, then train the left and right towers on the
/// training portion with the validation portion as the early-stopping
/// monitor.
pub fn stage_train(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, Stage::Train);
    std::fs::create_dir_all(&dir)?;
    let images = load_cwt_datasets(out)?;
    let split = if cfg.split.subject_level {
        eval::split_dataset_by_subject(&images.ids, cfg.split.seed)?
    } else {
        eval::split_dataset(&images.ids, cfg.split.seed)?
    };
    write_json(&dir.join("split.json"), &split)?;

    let train_view_l = view_for(&images.left, &images.ids, &split.train)?;
    let val_view_l = view_for(&images.left, &images.ids, &split.val)?;
    let class_weights = neural::compute_class_weights(&train_view_l.class_counts())?;

    let cfg_l = train_config(cfg, class_weights, cfg.train.seed);
    let (left_params, left_history) =
        neural::train_with_early_stopping(&cfg.train.net, &train_view_l, &val_view_l, &cfg_l)?;
    neural::save_model(
        &dir.join("left.scwt"),
        &left_params,
        left_history.best_step,
        left_history.best_val_acc,
    )?;
    write_json(&dir.join("history_left.json"), &left_history)?;

    let train_view_r = view_for(&images.right, &images.ids, &split.train)?;
    let val_view_r = view_for(&images.right, &images.ids, &split.val)?;
    let cfg_r = train_config(cfg, class_weights, cfg.train.seed.wrapping_add(0x8000));
    let (right_params, right_history) =
        neural::train_with_early_stopping(&cfg.train.net, &train_view_r, &val_view_r, &cfg_r)?;
    neural::save_model(
        &dir.join("right.scwt"),
        &right_params,
        right_history.best_step,
        right_history.best_val_acc,
    )?;
    write_json(&dir.join("history_right.json"), &right_history)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusedSidecar {
    strategy: String,
    input_dim: usize,
    best_step: usize,
    best_val_acc: f64,
}

/// fuse: for the trained strategies (early, tfn) fit both towers and the
/// head end-to-end on the same split; otherwise record the chosen strategy.
pub fn stage_fuse(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, Stage::Fuse);
    std::fs::create_dir_all(&dir)?;
    let strategy = cfg.fusion.strategy;
    write_json(
        &dir.join("strategy.json"),
        &serde_json::json!({ "strategy": strategy.name() }),
    )?;
    if !strategy.is_trained() {
        return Ok(());
    }
    let images = load_cwt_datasets(out)?;
    let split: SplitManifest = read_json(&stage_dir(out, Stage::Train).join("split.json"))?;
    let train_view = view_for(&images.left, &images.ids, &split.train)?;
    let val_view = view_for(&images.left, &images.ids, &split.val)?;
    let class_weights = neural::compute_class_weights(&train_view.class_counts())?;
    let fused_cfg = train_config(cfg, class_weights, cfg.train.seed.wrapping_add(0x9000));
    let (model, history) = fusion::train_fused(
        &cfg.train.net,
        strategy,
        &images.left,
        &images.right,
        &train_view,
        &val_view,
        &fused_cfg,
    )?;
    neural::save_model(&dir.join("fused_left.scwt"), &model.left, history.best_step, history.best_val_acc)?;
    neural::save_model(&dir.join("fused_right.scwt"), &model.right, history.best_step, history.best_val_acc)?;
    let mut head_flat = model.head.weights.clone();
    head_flat.extend_from_slice(&model.head.bias);
    container::write_f64(
        &dir.join("fused_head.scwt"),
        &ArrayD::from_shape_vec(IxDyn(&[head_flat.len()]), head_flat).expect("flat"),
    )?;
    write_json(
        &dir.join("fused.json"),
        &FusedSidecar {
            strategy: strategy.name().to_string(),
            input_dim: model.head.input_dim,
            best_step: history.best_step,
            best_val_acc: history.best_val_acc,
        },
    )?;
    write_json(&dir.join("history_fused.json"), &history)?;
    Ok(())
}

fn load_fused_model(out: &Path, strategy: FusionStrategy) -> Result<FusedModel> {
    let dir = stage_dir(out, Stage::Fuse);
    let (left, _) = neural::load_model(&dir.join("fused_left.scwt"))?;
    let (right, _) = neural::load_model(&dir.join("fused_right.scwt"))?;
    let sidecar: FusedSidecar = read_json(&dir.join("fused.json"))?;
    if sidecar.strategy != strategy.name() {
        return Err(Error::Validation(format!(
            "fuse stage trained '{}', evaluate asked for '{}'",
            sidecar.strategy,
            strategy.name()
        )));
    }
    let flat = container::read_rank(&dir.join("fused_head.scwt"), 1)?.into_f64();
    let expected = 3 * sidecar.input_dim + 3;
    if flat.len() != expected {
        return Err(Error::Format(format!(
            "fused head holds {} values, expected {expected}",
            flat.len()
        )));
    }
    let (data, _) = flat.into_raw_vec_and_offset();
    let mut head = FusionHeadParams::zeros(sidecar.input_dim);
    head.weights.copy_from_slice(&data[..3 * sidecar.input_dim]);
    head.bias.copy_from_slice(&data[3 * sidecar.input_dim..]);
    Ok(FusedModel {
        left,
        right,
        head,
        strategy,
    })
}

/// evaluate: score the test split with the configured fusion strategy and
/// write the metrics report.
pub fn stage_evaluate(cfg: &PipelineConfig, out: &Path) -> Result<EvaluationReport> {
    let dir = stage_dir(out, Stage::Evaluate);
    std::fs::create_dir_all(&dir)?;
    let strategy = cfg.fusion.strategy;
    let images = load_cwt_datasets(out)?;
    let split: SplitManifest = read_json(&stage_dir(out, Stage::Train).join("split.json"))?;
    let test_view = view_for(&images.left, &images.ids, &split.test)?;

    enum Scorer {
        Towers(Box<ModelParams>, Box<ModelParams>),
        Fused(Box<FusedModel>),
    }
    let scorer = if strategy.is_trained() {
        Scorer::Fused(Box::new(load_fused_model(out, strategy)?))
    } else {
        let train_dir = stage_dir(out, Stage::Train);
        let (left, _) = neural::load_model(&train_dir.join("left.scwt"))?;
        let (right, _) = neural::load_model(&train_dir.join("right.scwt"))?;
        Scorer::Towers(Box::new(left), Box::new(right))
    };

    let scored: Vec<Result<([f64; 3], usize)>> = test_view
        .indices
        .par_chunks(8)
        .flat_map_iter(|chunk| {
            chunk.iter().map(|&i| {
                let li = images.left.sample_f64(i);
                let ri = images.right.sample_f64(i);
                match &scorer {
                    Scorer::Fused(model) => {
                        let post = model.predict(&li, &ri)?;
                        Ok((post.probs, post.argmax()))
                    }
                    Scorer::Towers(left, right) => {
                        let pl = neural::forward_pass(left, &li)?;
                        let pr = neural::forward_pass(right, &ri)?;
                        match strategy {
                            FusionStrategy::LeftOnly => Ok((pl.probs, pl.argmax())),
                            FusionStrategy::RightOnly => Ok((pr.probs, pr.argmax())),
                            FusionStrategy::SumProb => {
                                let f = fusion::fuse_sum(&pl.probs, &pr.probs);
                                Ok((f.scores, f.prediction))
                            }
                            FusionStrategy::ProductProb => {
                                let f = fusion::fuse_product(&pl.probs, &pr.probs);
                                Ok((f.scores, f.prediction))
                            }
                            _ => unreachable!(),
                        }
                    }
                }
            })
        })
        .collect();
    let mut scores = Vec::with_capacity(scored.len());
    let mut preds = Vec::with_capacity(scored.len());
    for r in scored {
        let (s, p) = r?;
        scores.push(s);
        preds.push(p);
    }
    let labels: Vec<usize> = test_view
        .indices
        .iter()
        .map(|&i| images.left.labels[i])
        .collect();
    let metrics = eval::build_metrics_report(&scores, &preds, &labels)?;
    let report = EvaluationReport {
        strategy: strategy.name().to_string(),
        epoch_ids: split.test.clone(),
        labels,
        predictions: preds,
        metrics,
    };
    write_json(&dir.join(format!("metrics-{}.json", strategy.name())), &report)?;
    let mut flat = Vec::with_capacity(scores.len() * 3);
    for s in &scores {
        flat.extend_from_slice(s);
    }
    container::write_f64(
        &dir.join(format!("scores-{}.scwt", strategy.name())),
        &ArrayD::from_shape_vec(IxDyn(&[scores.len(), 3]), flat).expect("score shape"),
    )?;
    Ok(report)
}

/// report: re-emit the metrics JSON plus ROC/PR point lists as CSV
/// (columns threshold, x, y) for plotting.
pub fn stage_report(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, Stage::Report);
    std::fs::create_dir_all(&dir)?;
    let strategy = cfg.fusion.strategy;
    let src = stage_dir(out, Stage::Evaluate).join(format!("metrics-{}.json", strategy.name()));
    let report: EvaluationReport = read_json(&src)?;
    write_json(&dir.join(format!("metrics-{}.json", strategy.name())), &report)?;
    let class_names = ["AD", "FTD_or_MCI", "HC"];
    for (c, curves) in report.metrics.per_class.iter().enumerate() {
        if let Some(points) = &curves.roc {
            let mut csv = String::from("threshold,x,y\n");
            for (t, x, y) in points {
                csv.push_str(&format!("{t},{x},{y}\n"));
            }
            std::fs::write(
                dir.join(format!("roc_{}_{}.csv", class_names[c], strategy.name())),
                csv,
            )?;
        }
        if let Some(points) = &curves.pr {
            let mut csv = String::from("threshold,x,y\n");
            for (t, x, y) in points {
                csv.push_str(&format!("{t},{x},{y}\n"));
            }
            std::fs::write(
                dir.join(format!("pr_{}_{}.csv", class_names[c], strategy.name())),
                csv,
            )?;
        }
    }
    Ok(())
}

/// Runs one stage by name.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    match stage {
        Stage::Simulate => stage_simulate(cfg, out),
        Stage::Preprocess => stage_preprocess(cfg, out),
        Stage::Localize => stage_localize(cfg, out),
        Stage::Scout => stage_scout(cfg, out),
        Stage::Epoch => stage_epoch(cfg, out),
        Stage::Cwt => stage_cwt(cfg, out),
        Stage::Train => stage_train(cfg, out),
        Stage::Fuse => stage_fuse(cfg, out),
        Stage::Evaluate => stage_evaluate(cfg, out).map(|_| ()),
        Stage::Report => stage_report(cfg, out),
    }
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    for stage in Stage::ALL {
        run_stage(stage, cfg, out)?;
    }
    Ok(())
}

/// Parses a geometry JSON document (fields mirror HeadGeometry).
pub fn load_geometry(path: &Path) -> Result<HeadGeometry> {
    let g: HeadGeometry = read_json(path)?;
    g.validate()?;
    Ok(g)
}

/// Parses a region-spec JSON document.
pub fn load_regions(path: &Path) -> Result<RegionSpec> {
    let spec: RegionSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

/// The tower architecture used by both train and fuse.
pub fn net_spec(cfg: &PipelineConfig) -> ConvNetSpec {
    cfg.train.net.clone()
}
