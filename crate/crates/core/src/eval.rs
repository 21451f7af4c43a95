//! Dataset splitting and classification metrics: accuracy, confusion
//! matrix, one-vs-rest ROC/AUC and precision-recall/AP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEST_FRACTION: f64 = 0.2;
/// validation fraction of the 80% training pool
pub const VAL_FRACTION: f64 = 0.2;

/// Epoch-id lists of one train/val/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Plain random epoch-level split: 20% test, then 20% of the remaining
/// training pool as validation. No class stratification.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<SplitManifest> {
    if ids.len() < 5 {
        return Err(Error::Validation(format!(
            "need at least 5 ids to split, got {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_test = ((n as f64) * TEST_FRACTION).round() as usize;
    let n_val = (((n - n_test) as f64) * VAL_FRACTION).round() as usize;
    let test = shuffled.split_off(n - n_test);
    let val = shuffled.split_off(shuffled.len() - n_val);
    Ok(SplitManifest {
        train: shuffled,
        val,
        test,
        seed,
    })
}

/// Leakage-aware variant: whole subjects are assigned to one side only.
/// Epoch ids must be "<subject>:<index>". Sizes are approximate since
/// subjects are atomic.
pub fn split_dataset_by_subject(ids: &[String], seed: u64) -> Result<SplitManifest> {
    if ids.len() < 5 {
        return Err(Error::Validation(format!(
            "need at least 5 ids to split, got {}",
            ids.len()
        )));
    }
    let subject_of = |id: &String| -> String {
        id.split(':').next().unwrap_or(id).to_string()
    };
    let mut subjects: Vec<String> = Vec::new();
    for id in ids {
        let s = subject_of(id);
        if !subjects.contains(&s) {
            subjects.push(s);
        }
    }
    if subjects.len() < 3 {
        return Err(Error::Validation(format!(
            "subject-level split needs at least 3 subjects, got {}",
            subjects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let n = ids.len() as f64;
    let count_for = |subject_set: &[String]| -> usize {
        ids.iter().filter(|id| subject_set.contains(&subject_of(id))).count()
    };
    let mut test_subjects = Vec::new();
    let mut idx = 0;
    while (count_for(&test_subjects) as f64) < n * TEST_FRACTION && idx < subjects.len() - 2 {
        test_subjects.push(subjects[idx].clone());
        idx += 1;
    }
    let mut val_subjects = Vec::new();
    let val_target = (n - count_for(&test_subjects) as f64) * VAL_FRACTION;
    while (count_for(&val_subjects) as f64) < val_target && idx < subjects.len() - 1 {
        val_subjects.push(subjects[idx].clone());
        idx += 1;
    }
    let mut manifest = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for id in ids {
        let s = subject_of(id);
        if test_subjects.contains(&s) {
            manifest.test.push(id.clone());
        } else if val_subjects.contains(&s) {
            manifest.val.push(id.clone());
        } else {
            manifest.train.push(id.clone());
        }
    }
    Ok(manifest)
}

/// One curve point: (threshold, x, y).
pub type CurvePoint = (f64, f64, f64);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCurves {
    /// one-vs-rest ROC points (threshold, fpr, tpr); None when undefined
    pub roc: Option<Vec<CurvePoint>>,
    pub auc: Option<f64>,
    /// PR points (threshold, recall, precision)
    pub pr: Option<Vec<CurvePoint>>,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// rows = true class, columns = predicted
    pub confusion: [[usize; 3]; 3],
    pub auc_macro: Option<f64>,
    pub ap_macro: Option<f64>,
    pub per_class: Vec<ClassCurves>,
    pub n_samples: usize,
}

/// Confusion matrix (rows = true) and trace accuracy.
pub fn confusion_and_accuracy(preds: &[usize], labels: &[usize]) -> Result<([[usize; 3]; 3], f64)> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("cannot score an empty set".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (&p, &y) in preds.iter().zip(labels.iter()) {
        if p >= 3 || y >= 3 {
            return Err(Error::Validation(format!("class index out of range: pred {p}, label {y}")));
        }
        confusion[y][p] += 1;
    }
    let trace: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok((confusion, trace as f64 / preds.len() as f64))
}

/// Sorted threshold sweep with tied scores grouped: returns, per distinct
/// score, the cumulative true/false positive counts after including it.
fn threshold_sweep(scores: &[f64], positive: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((threshold, tp, fp));
    }
    out
}

/// One-vs-rest ROC and trapezoid AUC for class `class`.
fn roc_for_class(scores: &[[f64; 3]], labels: &[usize], class: usize) -> (Option<Vec<CurvePoint>>, Option<f64>) {
    let positive: Vec<bool> = labels.iter().map(|&y| y == class).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return (None, None);
    }
    let class_scores: Vec<f64> = scores.iter().map(|s| s[class]).collect();
    let sweep = threshold_sweep(&class_scores, &positive);
    // anchor above every score; f64::MAX keeps the JSON/CSV parseable
    let mut points = vec![(f64::MAX, 0.0, 0.0)];
    let mut auc = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    for (threshold, tp, fp) in sweep {
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((threshold, fpr, tpr));
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    (Some(points), Some(auc))
}

/// PR curve and step-interpolated average precision for class `class`.
fn pr_for_class(scores: &[[f64; 3]], labels: &[usize], class: usize) -> (Option<Vec<CurvePoint>>, Option<f64>) {
    let positive: Vec<bool> = labels.iter().map(|&y| y == class).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return (None, None);
    }
    let class_scores: Vec<f64> = scores.iter().map(|s| s[class]).collect();
    let sweep = threshold_sweep(&class_scores, &positive);
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (threshold, tp, fp) in sweep {
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        points.push((threshold, recall, precision));
        prev_recall = recall;
    }
    (Some(points), Some(ap))
}

/// One-vs-rest ROC/AUC for all three classes; macro average over the
/// classes present in the labels.
pub fn roc_auc_ovr(scores: &[[f64; 3]], labels: &[usize]) -> Result<(Vec<(Option<Vec<CurvePoint>>, Option<f64>)>, Option<f64>)> {
    validate_scores(scores, labels)?;
    let per_class: Vec<_> = (0..3).map(|c| roc_for_class(scores, labels, c)).collect();
    let defined: Vec<f64> = per_class.iter().filter_map(|(_, a)| *a).collect();
    let macro_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok((per_class, macro_auc))
}

/// One-vs-rest PR/AP for all three classes; macro average over present classes.
pub fn precision_recall_ap(scores: &[[f64; 3]], labels: &[usize]) -> Result<(Vec<(Option<Vec<CurvePoint>>, Option<f64>)>, Option<f64>)> {
    validate_scores(scores, labels)?;
    let per_class: Vec<_> = (0..3).map(|c| pr_for_class(scores, labels, c)).collect();
    let defined: Vec<f64> = per_class.iter().filter_map(|(_, a)| *a).collect();
    let macro_ap = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok((per_class, macro_ap))
}

fn validate_scores(scores: &[[f64; 3]], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score vectors but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Validation("cannot score an empty set".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    Ok(())
}

/// Assembles the full report from per-sample score vectors, argmax
/// predictions and labels.
pub fn build_metrics_report(
    scores: &[[f64; 3]],
    preds: &[usize],
    labels: &[usize],
) -> Result<MetricsReport> {
    let (confusion, accuracy) = confusion_and_accuracy(preds, labels)?;
    let (roc, auc_macro) = roc_auc_ovr(scores, labels)?;
    let (pr, ap_macro) = precision_recall_ap(scores, labels)?;
    let per_class = roc
        .into_iter()
        .zip(pr)
        .map(|((roc, auc), (pr, ap))| ClassCurves {
            roc,
            auc,
            pr,
            average_precision: ap,
        })
        .collect();
    Ok(MetricsReport {
        accuracy,
        confusion,
        auc_macro,
        ap_macro,
        per_class,
        n_samples: labels.len(),
    })
}
