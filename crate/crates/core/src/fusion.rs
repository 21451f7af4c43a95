//! Combining left- and right-hemisphere classifiers: posterior sum/product
//! plus end-to-end early fusion and tensor fusion heads.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    adam_step, argmax3, backward_from_latent, forward_cached, AdamState, ConvNetSpec,
    DatasetView, ImageDataset, ModelParams, Posterior, TrainConfig, TrainHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    #[serde(rename = "left")]
    LeftOnly,
    #[serde(rename = "right")]
    RightOnly,
    #[serde(rename = "sum")]
    SumProb,
    #[serde(rename = "product")]
    ProductProb,
    #[serde(rename = "early")]
    EarlyFusion,
    #[serde(rename = "tfn")]
    TensorFusion,
}

impl FusionStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(FusionStrategy::LeftOnly),
            "right" => Ok(FusionStrategy::RightOnly),
            "sum" => Ok(FusionStrategy::SumProb),
            "product" => Ok(FusionStrategy::ProductProb),
            "early" => Ok(FusionStrategy::EarlyFusion),
            "tfn" => Ok(FusionStrategy::TensorFusion),
            other => Err(Error::Validation(format!(
                "unknown fusion strategy '{other}' (expected left|right|sum|product|early|tfn)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::LeftOnly => "left",
            FusionStrategy::RightOnly => "right",
            FusionStrategy::SumProb => "sum",
            FusionStrategy::ProductProb => "product",
            FusionStrategy::EarlyFusion => "early",
            FusionStrategy::TensorFusion => "tfn",
        }
    }

    /// Strategies whose parameters are learned jointly with the towers.
    pub fn is_trained(self) -> bool {
        matches!(self, FusionStrategy::EarlyFusion | FusionStrategy::TensorFusion)
    }
}

/// A fused decision: predicted class plus reported simplex scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fused {
    pub prediction: usize,
    pub scores: [f64; 3],
}

/// Posterior sum. Prediction is the argmax of the raw sums (ties to the
/// lowest index); reported scores are the sums halved.
pub fn fuse_sum(pl: &[f64; 3], pr: &[f64; 3]) -> Fused {
    let raw = [pl[0] + pr[0], pl[1] + pr[1], pl[2] + pr[2]];
    Fused {
        prediction: argmax3(&raw),
        scores: [raw[0] / 2.0, raw[1] / 2.0, raw[2] / 2.0],
    }
}

/// Posterior product. Prediction is the argmax of the raw products; reported
/// scores are renormalized. An all-zero product falls back to the sum rule
/// with uniform scores.
pub fn fuse_product(pl: &[f64; 3], pr: &[f64; 3]) -> Fused {
    let raw = [pl[0] * pr[0], pl[1] * pr[1], pl[2] * pr[2]];
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Fused {
            prediction: fuse_sum(pl, pr).prediction,
            scores: [1.0 / 3.0; 3],
        };
    }
    Fused {
        prediction: argmax3(&raw),
        scores: [raw[0] / total, raw[1] / total, raw[2] / total],
    }
}

/// Dense head mapping a fused vector to 3 logits.
#[derive(Debug, Clone)]
pub struct FusionHeadParams {
    /// 3 x input_dim, row-major
    pub weights: Vec<f64>,
    pub bias: [f64; 3],
    pub input_dim: usize,
}

impl FusionHeadParams {
    pub fn init(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / input_dim as f64).sqrt();
        let weights = (0..3 * input_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        FusionHeadParams {
            weights,
            bias: [0.0; 3],
            input_dim,
        }
    }

    pub fn zeros(input_dim: usize) -> Self {
        FusionHeadParams {
            weights: vec![0.0; 3 * input_dim],
            bias: [0.0; 3],
            input_dim,
        }
    }

    fn logits(&self, fused: &[f64]) -> [f64; 3] {
        let mut out = self.bias;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.input_dim..(k + 1) * self.input_dim];
            for (&w, &x) in row.iter().zip(fused.iter()) {
                *o += w * x;
            }
        }
        out
    }
}

/// Expected fused dimension for a head strategy.
pub fn fused_dim(strategy: FusionStrategy, dim_l: usize, dim_r: usize) -> usize {
    match strategy {
        FusionStrategy::EarlyFusion => dim_l + dim_r,
        FusionStrategy::TensorFusion => (dim_l + 1) * (dim_r + 1),
        _ => 0,
    }
}

fn softmax3(logits: &[f64; 3]) -> [f64; 3] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = [
        (logits[0] - max).exp(),
        (logits[1] - max).exp(),
        (logits[2] - max).exp(),
    ];
    let sum: f64 = exps.iter().sum();
    [exps[0] / sum, exps[1] / sum, exps[2] / sum]
}

/// Concatenation fusion: [zL ; zR] -> dense -> softmax.
pub fn early_fusion_predict(
    zl: &[f64],
    zr: &[f64],
    head: &FusionHeadParams,
) -> Result<Posterior> {
    if zl.len() + zr.len() != head.input_dim {
        return Err(Error::Shape(format!(
            "early-fusion head expects {} inputs, got {} + {}",
            head.input_dim,
            zl.len(),
            zr.len()
        )));
    }
    let mut fused = Vec::with_capacity(head.input_dim);
    fused.extend_from_slice(zl);
    fused.extend_from_slice(zr);
    let probs = softmax3(&head.logits(&fused));
    Ok(Posterior {
        probs,
        latent: fused,
    })
}

/// Outer product of the 1-augmented embeddings, flattened row-major with the
/// appended 1 last in each factor.
pub fn tensor_fusion_vector(zl: &[f64], zr: &[f64]) -> Vec<f64> {
    let cols = zr.len() + 1;
    let mut fused = Vec::with_capacity((zl.len() + 1) * cols);
    for i in 0..=zl.len() {
        let li = if i < zl.len() { zl[i] } else { 1.0 };
        for j in 0..cols {
            let rj = if j < zr.len() { zr[j] } else { 1.0 };
            fused.push(li * rj);
        }
    }
    fused
}

/// Tensor fusion: flatten([zL;1] (x) [zR;1]) -> dense -> softmax.
pub fn tensor_fusion_predict(
    zl: &[f64],
    zr: &[f64],
    head: &FusionHeadParams,
) -> Result<Posterior> {
    let expected = (zl.len() + 1) * (zr.len() + 1);
    if expected != head.input_dim {
        return Err(Error::Shape(format!(
            "tensor-fusion head expects {} inputs, got ({}+1)x({}+1)",
            head.input_dim,
            zl.len(),
            zr.len()
        )));
    }
    let fused = tensor_fusion_vector(zl, zr);
    let probs = softmax3(&head.logits(&fused));
    Ok(Posterior {
        probs,
        latent: fused,
    })
}

/// Two towers plus a fusion head, trained end-to-end.
#[derive(Debug, Clone)]
pub struct FusedModel {
    pub left: ModelParams,
    pub right: ModelParams,
    pub head: FusionHeadParams,
    pub strategy: FusionStrategy,
}

impl FusedModel {
    pub fn init(spec: &ConvNetSpec, strategy: FusionStrategy, seed: u64) -> Result<Self> {
        if !strategy.is_trained() {
            return Err(Error::Validation(format!(
                "strategy {} has no trainable fusion head",
                strategy.name()
            )));
        }
        let left = ModelParams::init(spec, seed)?;
        let right = ModelParams::init(spec, seed.wrapping_add(0x10))?;
        let dim = fused_dim(strategy, spec.latent_dim, spec.latent_dim);
        let head = FusionHeadParams::init(dim, seed.wrapping_add(0x20));
        Ok(FusedModel {
            left,
            right,
            head,
            strategy,
        })
    }

    pub fn predict(&self, left_image: &Array3<f64>, right_image: &Array3<f64>) -> Result<Posterior> {
        let lc = forward_cached(&self.left, as_flat(left_image)?)?;
        let rc = forward_cached(&self.right, as_flat(right_image)?)?;
        match self.strategy {
            FusionStrategy::EarlyFusion => early_fusion_predict(&lc.latent, &rc.latent, &self.head),
            FusionStrategy::TensorFusion => {
                tensor_fusion_predict(&lc.latent, &rc.latent, &self.head)
            }
            _ => unreachable!("only trained strategies construct a FusedModel"),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut all =
            Vec::with_capacity(self.left.data.len() + self.right.data.len() + self.head.weights.len() + 3);
        all.extend_from_slice(&self.left.data);
        all.extend_from_slice(&self.right.data);
        all.extend_from_slice(&self.head.weights);
        all.extend_from_slice(&self.head.bias);
        all
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let nl = self.left.data.len();
        let nr = self.right.data.len();
        let nh = self.head.weights.len();
        self.left.data.copy_from_slice(&flat[..nl]);
        self.right.data.copy_from_slice(&flat[nl..nl + nr]);
        self.head.weights.copy_from_slice(&flat[nl + nr..nl + nr + nh]);
        self.head.bias.copy_from_slice(&flat[nl + nr + nh..]);
    }
}

fn as_flat(image: &Array3<f64>) -> Result<&[f64]> {
    image
        .as_slice()
        .ok_or_else(|| Error::Shape("image must be contiguous".into()))
}

/// Loss and gradient of the fused model over one batch; gradient layout
/// follows FusedModel::flatten. Gradients flow into both towers.
pub fn fused_batch_gradients(
    model: &FusedModel,
    batch: &[(&Array3<f64>, &Array3<f64>, usize)],
    weights: &[f64; 3],
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Validation("batch must not be empty".into()));
    }
    let nl = model.left.data.len();
    let nr = model.right.data.len();
    let nh = model.head.weights.len();
    let total_len = nl + nr + nh + 3;
    let scale = 1.0 / batch.len() as f64;

    let results: Vec<Result<(Vec<f64>, f64)>> = batch
        .par_chunks(crate::neural::GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; total_len];
            let mut loss = 0.0;
            for (li, ri, label) in chunk {
                let lc = forward_cached(&model.left, as_flat(li)?)?;
                let rc = forward_cached(&model.right, as_flat(ri)?)?;
                let (dl, dr) = (lc.latent.len(), rc.latent.len());
                let fused = match model.strategy {
                    FusionStrategy::EarlyFusion => {
                        let mut f = Vec::with_capacity(dl + dr);
                        f.extend_from_slice(&lc.latent);
                        f.extend_from_slice(&rc.latent);
                        f
                    }
                    FusionStrategy::TensorFusion => tensor_fusion_vector(&lc.latent, &rc.latent),
                    _ => unreachable!(),
                };
                let probs = softmax3(&model.head.logits(&fused));
                loss += weights[*label] * -(probs[*label].max(1e-12).ln()) * scale;

                let s = scale * weights[*label];
                let mut dlogits = [0.0; 3];
                for k in 0..3 {
                    let target = if k == *label { 1.0 } else { 0.0 };
                    dlogits[k] = s * (probs[k] - target);
                }
                // head gradients and fused-vector gradient
                let mut dfused = vec![0.0; fused.len()];
                {
                    let (head_w, rest) = grads[nl + nr..].split_at_mut(nh);
                    for k in 0..3 {
                        rest[k] += dlogits[k];
                        let row = &mut head_w[k * fused.len()..(k + 1) * fused.len()];
                        let wrow = &model.head.weights[k * fused.len()..(k + 1) * fused.len()];
                        for i in 0..fused.len() {
                            row[i] += dlogits[k] * fused[i];
                            dfused[i] += dlogits[k] * wrow[i];
                        }
                    }
                }
                // split the fused gradient back into the two latents
                let (dzl, dzr): (Vec<f64>, Vec<f64>) = match model.strategy {
                    FusionStrategy::EarlyFusion => {
                        (dfused[..dl].to_vec(), dfused[dl..].to_vec())
                    }
                    FusionStrategy::TensorFusion => {
                        let cols = dr + 1;
                        let mut dzl = vec![0.0; dl];
                        let mut dzr = vec![0.0; dr];
                        for i in 0..dl {
                            let mut acc = 0.0;
                            for j in 0..cols {
                                let rj = if j < dr { rc.latent[j] } else { 1.0 };
                                acc += dfused[i * cols + j] * rj;
                            }
                            dzl[i] = acc;
                        }
                        for j in 0..dr {
                            let mut acc = 0.0;
                            for i in 0..=dl {
                                let li = if i < dl { lc.latent[i] } else { 1.0 };
                                acc += dfused[i * cols + j] * li;
                            }
                            dzr[j] = acc;
                        }
                        (dzl, dzr)
                    }
                    _ => unreachable!(),
                };
                backward_from_latent(&model.left, &lc, &dzl, &mut grads[..nl]);
                backward_from_latent(&model.right, &rc, &dzr, &mut grads[nl..nl + nr]);
            }
            Ok((grads, loss))
        })
        .collect();

    let mut total = vec![0.0; total_len];
    let mut loss = 0.0;
    for r in results {
        let (g, l) = r?;
        for (acc, v) in total.iter_mut().zip(g.iter()) {
            *acc += v;
        }
        loss += l;
    }
    Ok((total, loss))
}

fn fused_accuracy(
    model: &FusedModel,
    left: &ImageDataset,
    right: &ImageDataset,
    indices: &[usize],
) -> Result<f64> {
    let correct: usize = indices
        .par_chunks(16)
        .map(|chunk| {
            let mut ok = 0usize;
            for &i in chunk {
                let li = left.sample_f64(i);
                let ri = right.sample_f64(i);
                let post = model.predict(&li, &ri)?;
                if post.argmax() == left.labels[i] {
                    ok += 1;
                }
            }
            Ok::<usize, Error>(ok)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / indices.len() as f64)
}

/// End-to-end training of both towers and the fusion head. Both towers are
/// freshly initialized, not warm-started from the solo classifiers. The
/// left/right datasets must be index-aligned (same epochs, same labels).
pub fn train_fused(
    spec: &ConvNetSpec,
    strategy: FusionStrategy,
    left: &ImageDataset,
    right: &ImageDataset,
    train_view: &DatasetView<'_>,
    val_view: &DatasetView<'_>,
    cfg: &TrainConfig,
) -> Result<(FusedModel, TrainHistory)> {
    cfg.validate()?;
    if left.len() != right.len() || left.labels != right.labels {
        return Err(Error::Validation(
            "left/right datasets must be index-aligned with equal labels".into(),
        ));
    }
    if val_view.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    {
        let mut counts = [0usize; 3];
        for &i in &train_view.indices {
            counts[left.labels[i]] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "training data must contain all 3 classes, counts {counts:?}"
            )));
        }
    }

    let mut model = FusedModel::init(spec, strategy, cfg.seed)?;
    let mut flat = model.flatten();
    let mut state = AdamState::new(flat.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut best_flat = flat.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_step = 0usize;
    let mut stall = 0usize;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_step: 0,
        best_val_acc: 0.0,
    };

    let mut order = train_view.indices.clone();
    for step in 1..=cfg.max_steps {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<(Array3<f64>, Array3<f64>, usize)> = chunk
                .iter()
                .map(|&i| (left.sample_f64(i), right.sample_f64(i), left.labels[i]))
                .collect();
            let batch: Vec<(&Array3<f64>, &Array3<f64>, usize)> =
                images.iter().map(|(l, r, y)| (l, r, *y)).collect();
            let (grads, loss) = fused_batch_gradients(&model, &batch, &cfg.class_weights)?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut flat, &grads, &mut state, cfg.learning_rate, 0.9, 0.999, 1e-8)?;
            model.unflatten(&flat);
        }
        let val_acc = fused_accuracy(&model, left, right, &val_view.indices)?;
        history.train_loss.push(loss_sum / train_view.len() as f64);
        history.val_accuracy.push(val_acc);
        if val_acc > best_acc {
            best_acc = val_acc;
            best_flat.copy_from_slice(&flat);
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
    model.unflatten(&best_flat);
    Ok((model, history))
}
