//! Library-level pipeline integration: stage artifacts, carried manifests,
//! and the interchange JSON documents.

use scwt_core::config::PipelineConfig;
use scwt_core::eval::SplitManifest;
use scwt_core::forward::{load_lead_field, LeadFieldProvenance};
use scwt_core::pipeline::{self, EpochManifest, Stage};

fn tiny_config() -> PipelineConfig {
    let json = r#"{
  "geometry": { "n_electrodes": 20, "sources_per_region": 2, "n_background_sources": 8 },
  "cohort": { "subjects_per_class": 2, "duration_s": 2.0, "noise_sigma": 0.02 },
  "train": { "lr": 0.002, "batch": 16, "patience": 2, "max_steps": 2,
             "net": { "input": [128, 128, 3], "block_filters": [4], "kernel": 3,
                      "latent_dim": 8, "output_dim": 3 } }
}"#;
    PipelineConfig::from_json(json.as_bytes()).unwrap()
}

#[test]
fn stages_produce_consistent_artifacts() {
    let out = std::env::temp_dir().join(format!("scwt_pipe_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&out);
    let cfg = tiny_config();
    for stage in [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Localize,
        Stage::Scout,
        Stage::Epoch,
        Stage::Cwt,
        Stage::Train,
    ] {
        pipeline::run_stage(stage, &cfg, &out).unwrap();
    }

    // interchange documents load back through their public entry points
    let geometry = pipeline::load_geometry(&out.join("simulate/geometry.json")).unwrap();
    assert_eq!(geometry.n_electrodes(), 20);
    assert_eq!(geometry.n_sources(), 6 * 2 + 8);
    let regions = pipeline::load_regions(&out.join("simulate/regions.json")).unwrap();
    assert_eq!(regions.balls.len(), 3);
    let lead = load_lead_field(&out.join("simulate/leadfield.scwt")).unwrap();
    assert_eq!(lead.n_channels(), 20);
    assert!(matches!(lead.provenance, LeadFieldProvenance::External(_)));

    // epoch counts follow floor(T / 128) per subject
    let manifest: EpochManifest =
        serde_json::from_slice(&std::fs::read(out.join("epoch/epochs.json")).unwrap()).unwrap();
    let t = (2.0_f64 * 512.0) as usize;
    for s in &manifest.subjects {
        assert_eq!(s.n_epochs, t / 128, "{}", s.id);
    }
    let total: usize = manifest.subjects.iter().map(|s| s.n_epochs).sum();
    assert_eq!(manifest.epoch_ids().len(), total);

    // the split partitions the epoch ids
    let split: SplitManifest =
        serde_json::from_slice(&std::fs::read(out.join("train/split.json")).unwrap()).unwrap();
    assert_eq!(split.total(), total);
    let mut all: Vec<String> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .cloned()
        .collect();
    all.sort();
    let mut ids = manifest.epoch_ids();
    ids.sort();
    assert_eq!(all, ids);

    // evaluation emits a simplex score per test epoch
    let report = pipeline::stage_evaluate(&cfg, &out).unwrap();
    assert_eq!(report.labels.len(), split.test.len());
    assert_eq!(report.predictions.len(), split.test.len());
    assert!(report.metrics.accuracy >= 0.0 && report.metrics.accuracy <= 1.0);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn subject_level_split_keeps_subjects_whole() {
    let out = std::env::temp_dir().join(format!("scwt_pipe_subj_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&out);
    let mut cfg = tiny_config();
    cfg.cohort.subjects_per_class = 3;
    cfg.split.subject_level = true;
    for stage in [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Localize,
        Stage::Scout,
        Stage::Epoch,
        Stage::Cwt,
        Stage::Train,
    ] {
        pipeline::run_stage(stage, &cfg, &out).unwrap();
    }
    let split: SplitManifest =
        serde_json::from_slice(&std::fs::read(out.join("train/split.json")).unwrap()).unwrap();
    let subject = |id: &String| id.split(':').next().unwrap().to_string();
    let test_subjects: std::collections::HashSet<String> = split.test.iter().map(subject).collect();
    for id in split.train.iter().chain(&split.val) {
        assert!(
            !test_subjects.contains(&subject(id)),
            "{id} leaks into the test subjects"
        );
    }
    let _ = std::fs::remove_dir_all(&out);
}
