//! Training loop: minibatch Adam with validation-accuracy early stopping.

use std::path::Path;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, backward_gradients, forward_cached, AdamState, ConvNetSpec, ModelParams};
use crate::container;
use crate::error::{Error, Result};

/// Labeled scalogram batch for one hemisphere. Images are stored f32 to
/// halve the footprint; the network itself always computes in f64.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    /// n x h x w x c
    pub images: Array4<f32>,
    /// class indices, one per image
    pub labels: Vec<usize>,
}

impl ImageDataset {
    pub fn new(images: Array4<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.dim().0,
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_f64(&self, idx: usize) -> Array3<f64> {
        self.images.index_axis(ndarray::Axis(0), idx).mapv(f64::from)
    }
}

/// Index-based slice of a dataset; splits share the backing storage.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    pub data: &'a ImageDataset,
    pub indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn all(data: &'a ImageDataset) -> Self {
        DatasetView {
            data,
            indices: (0..data.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &i in &self.indices {
            counts[self.data.labels[i]] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub class_weights: [f64; 3],
    /// steps without validation improvement before stopping
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            class_weights: [1.0, 1.0, 1.0],
            patience: 20,
            max_steps: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Validation("batch_size and max_steps must be positive".into()));
        }
        if self.patience < 1 {
            return Err(Error::Validation("patience must be at least 1".into()));
        }
        if self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Validation("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step record of the run plus where the best parameters came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// 1-based step at which the returned parameters were snapshotted
    pub best_step: usize,
    pub best_val_acc: f64,
}

/// Fraction of correct argmax predictions, computed in fixed-size parallel
/// chunks (counts are order-free).
pub fn evaluate_accuracy(params: &ModelParams, view: &DatasetView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty set".into()));
    }
    let correct: usize = view
        .indices
        .par_chunks(16)
        .map(|chunk| {
            let mut ok = 0usize;
            for &i in chunk {
                let image = view.data.sample_f64(i);
                let cache = forward_cached(params, image.as_slice().unwrap())?;
                let mut best = 0;
                for k in 1..3 {
                    if cache.probs[k] > cache.probs[best] {
                        best = k;
                    }
                }
                if best == view.data.labels[i] {
                    ok += 1;
                }
            }
            Ok::<usize, Error>(ok)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / view.len() as f64)
}

/// Trains with explicit train/validation sets. One "training step" is a full
/// pass over the training set followed by a validation evaluation; training
/// stops once `patience` consecutive steps bring no improvement. Returns the
/// parameters of the best step seen.
pub fn train_with_early_stopping(
    spec: &ConvNetSpec,
    train: &DatasetView<'_>,
    val: &DatasetView<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    spec.validate()?;
    if train.class_counts().iter().any(|&c| c == 0) {
        return Err(Error::Validation(format!(
            "training data must contain all 3 classes, counts {:?}",
            train.class_counts()
        )));
    }
    if val.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }

    let mut params = ModelParams::init(spec, cfg.seed)?;
    let mut state = AdamState::new(params.data.len());
    // separate stream so the epoch shuffle never aliases the init draws
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut best_data = params.data.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_step = 0usize;
    let mut stall = 0usize;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_step: 0,
        best_val_acc: 0.0,
    };

    let mut order: Vec<usize> = train.indices.clone();
    for step in 1..=cfg.max_steps {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<(Array3<f64>, usize)> = chunk
                .iter()
                .map(|&i| (train.data.sample_f64(i), train.data.labels[i]))
                .collect();
            let batch: Vec<super::Sample> =
                images.iter().map(|(im, l)| (im, *l)).collect();
            let (grads, loss) = backward_gradients(&params, &batch, &cfg.class_weights)?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(
                &mut params.data,
                &grads,
                &mut state,
                cfg.learning_rate,
                0.9,
                0.999,
                1e-8,
            )?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_acc = evaluate_accuracy(&params, val)?;
        history.train_loss.push(train_loss);
        history.val_accuracy.push(val_acc);

        if val_acc > best_acc {
            best_acc = val_acc;
            best_data.copy_from_slice(&params.data);
            best_step = step;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }
    }

    history.best_step = best_step;
    history.best_val_acc = best_acc;
    params.data = best_data;
    Ok((params, history))
}

/// Carves a random 20% of `data` out as the validation monitor (seeded by
/// cfg.seed) and trains on the rest.
pub fn train_with_holdout(
    spec: &ConvNetSpec,
    data: &ImageDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    indices.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * 0.2).round() as usize;
    if n_val == 0 || n_val == data.len() {
        return Err(Error::Validation(format!(
            "dataset of {} samples cannot be split 80/20",
            data.len()
        )));
    }
    let val = DatasetView {
        data,
        indices: indices[..n_val].to_vec(),
    };
    let train = DatasetView {
        data,
        indices: indices[n_val..].to_vec(),
    };
    train_with_early_stopping(spec, &train, &val, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub spec: ConvNetSpec,
    pub seed: u64,
    pub step: usize,
    pub best_val_acc: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Checkpoint: all parameter tensors as one rank-1 container in layout
/// order, plus a JSON sidecar describing the architecture and run.
pub fn save_model(path: &Path, params: &ModelParams, step: usize, best_val_acc: f64) -> Result<()> {
    let flat = ndarray::ArrayD::from_shape_vec(
        ndarray::IxDyn(&[params.data.len()]),
        params.data.clone(),
    )
    .expect("flat shape");
    container::write_f64(path, &flat)?;
    let sidecar = ModelSidecar {
        spec: params.spec.clone(),
        seed: params.seed,
        step,
        best_val_acc,
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParams, ModelSidecar)> {
    let raw = std::fs::read(&sidecar_path(path))
        .map_err(|_| Error::MissingArtifact(sidecar_path(path).display().to_string()))?;
    let sidecar: ModelSidecar =
        serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("model sidecar: {e}")))?;
    let tensor = container::read_rank(path, 1)?.into_f64();
    let expected = sidecar.spec.param_count();
    if tensor.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} values, spec needs {expected}",
            tensor.len()
        )));
    }
    Ok((
        ModelParams {
            spec: sidecar.spec.clone(),
            data: tensor.into_raw_vec_and_offset().0,
            seed: sidecar.seed,
        },
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny 3-class task: each class lights up one channel block plus noise.
    fn separable_dataset(n_per_class: usize, seed: u64) -> ImageDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3 * n_per_class;
        let mut images = Array4::zeros((n, 8, 8, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 3;
            labels.push(class);
            for h in 0..8 {
                for w in 0..8 {
                    for c in 0..2 {
                        let pattern = match class {
                            0 => {
                                if h < 4 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            1 => {
                                if w < 4 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => {
                                if c == 0 {
                                    0.8
                                } else {
                                    0.1
                                }
                            }
                        };
                        images[[i, h, w, c]] = pattern as f32 + rng.gen_range(-0.05..0.05);
                    }
                }
            }
        }
        ImageDataset::new(images, labels).unwrap()
    }

    fn tiny_spec() -> ConvNetSpec {
        ConvNetSpec {
            input: (8, 8, 2),
            block_filters: vec![4],
            kernel: 3,
            latent_dim: 8,
            output_dim: 3,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            batch_size: 8,
            class_weights: [1.0, 1.0, 1.0],
            patience: 3,
            max_steps: 60,
            seed: 11,
        }
    }

    #[test]
    fn separable_task_reaches_full_validation_accuracy() {
        let data = separable_dataset(20, 5);
        let (params, history) = train_with_holdout(&tiny_spec(), &data, &tiny_cfg()).unwrap();
        assert!(
            (history.best_val_acc - 1.0).abs() < 1e-12,
            "best val acc {}",
            history.best_val_acc
        );
        assert!(history.val_accuracy.len() < 60, "hit max_steps");
        // returned parameters reproduce the recorded best accuracy
        let mut rng = ChaCha8Rng::seed_from_u64(tiny_cfg().seed.wrapping_add(1));
        let mut indices: Vec<usize> = (0..data.len()).collect();
        indices.shuffle(&mut rng);
        let n_val = ((data.len() as f64) * 0.2).round() as usize;
        let val = DatasetView {
            data: &data,
            indices: indices[..n_val].to_vec(),
        };
        let acc = evaluate_accuracy(&params, &val).unwrap();
        assert!((acc - history.best_val_acc).abs() < 1e-12);
    }

    #[test]
    fn training_is_bit_deterministic_under_seed() {
        let data = separable_dataset(8, 2);
        let mut cfg = tiny_cfg();
        cfg.max_steps = 4;
        cfg.patience = 10;
        let (p1, h1) = train_with_holdout(&tiny_spec(), &data, &cfg).unwrap();
        let (p2, h2) = train_with_holdout(&tiny_spec(), &data, &cfg).unwrap();
        assert_eq!(h1.train_loss, h2.train_loss);
        assert_eq!(h1.val_accuracy, h2.val_accuracy);
        for (a, b) in p1.data.iter().zip(p2.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn stops_patience_steps_after_the_plateau() {
        let data = separable_dataset(20, 7);
        let cfg = tiny_cfg();
        let (_, history) = train_with_holdout(&tiny_spec(), &data, &cfg).unwrap();
        // accuracy saturates at best_step; exactly `patience` more steps run
        assert_eq!(
            history.val_accuracy.len(),
            history.best_step + cfg.patience,
            "history {:?}",
            history.val_accuracy
        );
        // early stopping never returns parameters below the best recorded
        let recorded_max = history
            .val_accuracy
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(recorded_max, history.best_val_acc);
    }

    #[test]
    fn missing_class_rejected() {
        let data = separable_dataset(6, 3);
        let two_class: Vec<usize> = (0..data.len()).filter(|i| data.labels[*i] != 2).collect();
        let train = DatasetView {
            data: &data,
            indices: two_class,
        };
        let val = DatasetView::all(&data);
        assert!(matches!(
            train_with_early_stopping(&tiny_spec(), &train, &val, &tiny_cfg()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("scwt_train_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.scwt");
        let params = ModelParams::init(&tiny_spec(), 99).unwrap();
        save_model(&path, &params, 17, 0.875).unwrap();
        let (loaded, meta) = load_model(&path).unwrap();
        assert_eq!(meta.step, 17);
        assert_eq!(meta.seed, 99);
        assert!((meta.best_val_acc - 0.875).abs() < 1e-15);
        assert_eq!(loaded.spec, params.spec);
        for (a, b) in loaded.data.iter().zip(params.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
