//! Compact convolutional classifier with hand-written reverse-mode
//! gradients, class-weighted cross-entropy, Adam, and patience-based early
//! stopping.

mod adam;
mod layers;
mod train;

pub use adam::{adam_step, AdamState};
pub use layers::Dims;
pub use train::{
    load_model, save_model, train_with_early_stopping, train_with_holdout, DatasetView,
    ImageDataset, TrainConfig, TrainHistory,
};

use std::ops::Range;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::*;

/// Architecture of one classifier tower: conv blocks (3x3 kernels, stride 1,
/// ReLU, 2x2 max-pool) followed by a dense latent layer and a 3-way softmax
/// head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    /// input height, width, channels
    pub input: (usize, usize, usize),
    /// filters per conv block
    pub block_filters: Vec<usize>,
    /// odd kernel size, 3 unless overridden for toy networks
    pub kernel: usize,
    /// width of the penultimate dense layer (the fused embedding z)
    pub latent_dim: usize,
    pub output_dim: usize,
}

impl ConvNetSpec {
    /// The default tower used by the pipeline: 3 blocks of 16/32/64 filters,
    /// 64-wide latent, on 128 x 128 x 3 scalograms.
    pub fn standard() -> Self {
        ConvNetSpec {
            input: (128, 128, 3),
            block_filters: vec![16, 32, 64],
            kernel: 3,
            latent_dim: 64,
            output_dim: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_filters.is_empty() {
            return Err(Error::Validation("need at least one conv block".into()));
        }
        if self.latent_dim < 2 {
            return Err(Error::Validation("latent_dim must be at least 2".into()));
        }
        if self.output_dim != 3 {
            return Err(Error::Validation("output_dim must be 3".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Validation("kernel size must be odd".into()));
        }
        let (mut h, mut w, _) = self.input;
        for (i, _) in self.block_filters.iter().enumerate() {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(Error::Validation(format!(
                    "input too small: spatial size vanishes after block {i}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut take = |len: usize| -> Range<usize> {
            let r = offset..offset + len;
            offset += len;
            r
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut block_dims = Vec::new();
        let mut dims = Dims {
            h: self.input.0,
            w: self.input.1,
            c: self.input.2,
        };
        for &filters in &self.block_filters {
            block_dims.push(dims);
            conv_w.push(take(self.kernel * self.kernel * dims.c * filters));
            conv_b.push(take(filters));
            dims = Dims {
                h: dims.h / 2,
                w: dims.w / 2,
                c: filters,
            };
        }
        let flat_dim = dims.len();
        let dense1_w = take(self.latent_dim * flat_dim);
        let dense1_b = take(self.latent_dim);
        let dense2_w = take(self.output_dim * self.latent_dim);
        let dense2_b = take(self.output_dim);
        Layout {
            conv_w,
            conv_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
            block_dims,
            flat_dim,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub conv_w: Vec<Range<usize>>,
    pub conv_b: Vec<Range<usize>>,
    pub dense1_w: Range<usize>,
    pub dense1_b: Range<usize>,
    pub dense2_w: Range<usize>,
    pub dense2_b: Range<usize>,
    /// input dims of each conv block
    pub block_dims: Vec<Dims>,
    pub flat_dim: usize,
    pub total: usize,
}

/// All parameter tensors of one tower, concatenated in layout order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: ConvNetSpec,
    pub data: Vec<f64>,
    pub seed: u64,
}

impl ModelParams {
    /// He-uniform initialization of the weights, zero biases, from a seeded
    /// ChaCha stream.
    pub fn init(spec: &ConvNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, fan_in: usize, data: &mut Vec<f64>| {
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in &mut data[range] {
                *v = rng.gen_range(-limit..limit);
            }
        };
        for (i, range) in layout.conv_w.iter().enumerate() {
            let fan_in = spec.kernel * spec.kernel * layout.block_dims[i].c;
            fill(range.clone(), fan_in, &mut data);
        }
        fill(layout.dense1_w.clone(), layout.flat_dim, &mut data);
        fill(layout.dense2_w.clone(), spec.latent_dim, &mut data);
        Ok(ModelParams {
            spec: spec.clone(),
            data,
            seed,
        })
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

/// Class-probability vector plus the latent embedding that produced it.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub probs: [f64; 3],
    pub latent: Vec<f64>,
}

impl Posterior {
    pub fn argmax(&self) -> usize {
        argmax3(&self.probs)
    }
}

/// Lowest index wins ties, everywhere a prediction is taken.
pub fn argmax3(scores: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-class weights w_c = max_count / count_c; the majority class gets 1.
pub fn compute_class_weights(counts: &[usize; 3]) -> Result<[f64; 3]> {
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Validation(format!(
            "every class needs samples, got counts {counts:?}"
        )));
    }
    let max = *counts.iter().max().unwrap() as f64;
    Ok([
        max / counts[0] as f64,
        max / counts[1] as f64,
        max / counts[2] as f64,
    ])
}

const LOG_CLAMP: f64 = 1e-12;

/// Weighted cross-entropy: -w_label ln(probs[label]), clamped at 1e-12.
pub fn weighted_cross_entropy(post: &Posterior, label: usize, weights: &[f64; 3]) -> f64 {
    -weights[label] * post.probs[label].max(LOG_CLAMP).ln()
}

pub(crate) struct ForwardCache {
    /// input of each conv block (block 0 holds the image)
    block_in: Vec<Vec<f64>>,
    /// pre-ReLU conv outputs
    conv_pre: Vec<Vec<f64>>,
    pool_arg: Vec<Vec<u32>>,
    flat: Vec<f64>,
    dense1_pre: Vec<f64>,
    pub(crate) latent: Vec<f64>,
    pub(crate) probs: Vec<f64>,
}

pub(crate) fn forward_cached(params: &ModelParams, image: &[f64]) -> Result<ForwardCache> {
    let spec = &params.spec;
    let layout = spec.layout();
    let expected = layout.block_dims[0].len();
    if image.len() != expected {
        return Err(Error::Shape(format!(
            "image has {} values, spec expects {expected}",
            image.len()
        )));
    }
    let n_blocks = spec.block_filters.len();
    let mut block_in = Vec::with_capacity(n_blocks);
    let mut conv_pre = Vec::with_capacity(n_blocks);
    let mut pool_arg = Vec::with_capacity(n_blocks);
    let mut x = image.to_vec();
    for b in 0..n_blocks {
        let dims = layout.block_dims[b];
        let cout = spec.block_filters[b];
        let conv_dims = Dims { c: cout, ..dims };
        let mut pre = vec![0.0; conv_dims.len()];
        conv_forward(
            &x,
            dims,
            &params.data[layout.conv_w[b].clone()],
            &params.data[layout.conv_b[b].clone()],
            spec.kernel,
            cout,
            &mut pre,
        );
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation in conv block {b}"
            )));
        }
        let mut act = pre.clone();
        relu_forward(&mut act);
        let od = conv_dims.pooled();
        let mut pooled = vec![0.0; od.len()];
        let mut arg = vec![0u32; od.len()];
        maxpool_forward(&act, conv_dims, &mut pooled, &mut arg);
        block_in.push(std::mem::replace(&mut x, pooled));
        conv_pre.push(pre);
        pool_arg.push(arg);
    }
    let flat = x;
    let mut dense1_pre = vec![0.0; spec.latent_dim];
    dense_forward(
        &params.data[layout.dense1_w.clone()],
        &params.data[layout.dense1_b.clone()],
        &flat,
        &mut dense1_pre,
    );
    if dense1_pre.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite activation in latent layer".into()));
    }
    let mut latent = dense1_pre.clone();
    relu_forward(&mut latent);
    let mut logits = vec![0.0; spec.output_dim];
    dense_forward(
        &params.data[layout.dense2_w.clone()],
        &params.data[layout.dense2_b.clone()],
        &latent,
        &mut logits,
    );
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite activation in output layer".into()));
    }
    let probs = softmax(&logits);
    Ok(ForwardCache {
        block_in,
        conv_pre,
        pool_arg,
        flat,
        dense1_pre,
        latent,
        probs,
    })
}

/// Runs the classifier on one image.
pub fn forward_pass(params: &ModelParams, image: &Array3<f64>) -> Result<Posterior> {
    let flat = image
        .as_slice()
        .ok_or_else(|| Error::Shape("image must be contiguous".into()))?;
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite image value".into()));
    }
    let cache = forward_cached(params, flat)?;
    Ok(Posterior {
        probs: [cache.probs[0], cache.probs[1], cache.probs[2]],
        latent: cache.latent,
    })
}

/// Backpropagates from d(loss)/d(latent z) through dense1 and the conv
/// stack, accumulating into `grads` (same layout as the parameters).
pub(crate) fn backward_from_latent(
    params: &ModelParams,
    cache: &ForwardCache,
    dlatent: &[f64],
    grads: &mut [f64],
) {
    let spec = &params.spec;
    let layout = spec.layout();
    let mut d = dlatent.to_vec();
    relu_backward(&cache.dense1_pre, &mut d);
    let mut dflat = vec![0.0; layout.flat_dim];
    {
        let (dw_range, db_range) = (layout.dense1_w.clone(), layout.dense1_b.clone());
        // split_at_mut dance to borrow two disjoint grad slices
        let weights = &params.data[dw_range.clone()];
        let (dw, db) = disjoint_mut(grads, dw_range, db_range);
        dense_backward(weights, &cache.flat, &d, dw, db, &mut dflat);
    }
    let mut dpool = dflat;
    for b in (0..spec.block_filters.len()).rev() {
        let dims = layout.block_dims[b];
        let cout = spec.block_filters[b];
        let conv_dims = Dims { c: cout, ..dims };
        let mut dact = vec![0.0; conv_dims.len()];
        maxpool_backward(&dpool, &cache.pool_arg[b], &mut dact);
        relu_backward(&cache.conv_pre[b], &mut dact);
        {
            let (dw, db) = disjoint_mut(grads, layout.conv_w[b].clone(), layout.conv_b[b].clone());
            conv_backward_params(&cache.block_in[b], dims, &dact, spec.kernel, cout, dw, db);
        }
        if b > 0 {
            let mut dinput = vec![0.0; dims.len()];
            conv_backward_input(
                &params.data[layout.conv_w[b].clone()],
                dims,
                &dact,
                spec.kernel,
                cout,
                &mut dinput,
            );
            dpool = dinput;
        }
    }
}

fn disjoint_mut(buf: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start);
    let (head, tail) = buf.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.len()])
}

/// Accumulates the gradient of `scale * w_label * CE(probs, label)` for one
/// sample into `grads`.
pub(crate) fn backward_sample(
    params: &ModelParams,
    cache: &ForwardCache,
    label: usize,
    scale: f64,
    grads: &mut [f64],
) {
    let spec = &params.spec;
    let layout = spec.layout();
    let mut dlogits = vec![0.0; spec.output_dim];
    for k in 0..spec.output_dim {
        let target = if k == label { 1.0 } else { 0.0 };
        dlogits[k] = scale * (cache.probs[k] - target);
    }
    let mut dlatent = vec![0.0; spec.latent_dim];
    {
        let weights = &params.data[layout.dense2_w.clone()];
        let (dw, db) = disjoint_mut(grads, layout.dense2_w.clone(), layout.dense2_b.clone());
        dense_backward(weights, &cache.latent, &dlogits, dw, db, &mut dlatent);
    }
    backward_from_latent(params, cache, &dlatent, grads);
}

/// Labeled image batch for gradient computation.
pub type Sample<'a> = (&'a Array3<f64>, usize);

/// Samples per parallel work unit; fixed so reduction order (and therefore
/// the bits of the result) do not depend on the thread count.
pub(crate) const GRAD_CHUNK: usize = 4;

/// Mean weighted-cross-entropy loss and its gradient over a batch.
pub fn backward_gradients(
    params: &ModelParams,
    batch: &[Sample<'_>],
    weights: &[f64; 3],
) -> Result<(Vec<f64>, f64)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::Validation("batch must not be empty".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let results: Vec<Result<(Vec<f64>, f64)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (image, label) in chunk {
                let flat = image
                    .as_slice()
                    .ok_or_else(|| Error::Shape("image must be contiguous".into()))?;
                let cache = forward_cached(params, flat)?;
                loss += weights[*label] * -(cache.probs[*label].max(LOG_CLAMP).ln()) * scale;
                backward_sample(params, &cache, *label, scale * weights[*label], &mut grads);
            }
            Ok((grads, loss))
        })
        .collect();
    let mut total = params.zeros_like();
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

/// Mean weighted loss only (used by the finite-difference oracle in tests).
pub fn batch_loss(params: &ModelParams, batch: &[Sample<'_>], weights: &[f64; 3]) -> Result<f64> {
    let mut loss = 0.0;
    for (image, label) in batch {
        let post = forward_pass(params, image)?;
        loss += weighted_cross_entropy(&post, *label, weights);
    }
    Ok(loss / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn toy_spec() -> ConvNetSpec {
        ConvNetSpec {
            input: (8, 8, 2),
            block_filters: vec![3, 4],
            kernel: 3,
            latent_dim: 5,
            output_dim: 3,
        }
    }

    fn toy_image(seed: u64, shape: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn class_weights_for_imbalanced_cohorts() {
        let w = compute_class_weights(&[15408, 12048, 21648]).unwrap();
        assert!((w[0] - 1.405).abs() < 0.001, "{w:?}");
        assert!((w[1] - 1.797).abs() < 0.001, "{w:?}");
        assert!((w[2] - 1.0).abs() < 1e-12);

        let w = compute_class_weights(&[11088, 10800, 9600]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 1.027).abs() < 0.001, "{w:?}");
        assert!((w[2] - 1.155).abs() < 0.001, "{w:?}");
    }

    #[test]
    fn equal_counts_give_unit_weights() {
        let w = compute_class_weights(&[100, 100, 100]).unwrap();
        assert_eq!(w, [1.0, 1.0, 1.0]);
        assert!(compute_class_weights(&[5, 0, 5]).is_err());
    }

    #[test]
    fn zeroed_output_layer_gives_uniform_posterior() {
        let spec = toy_spec();
        let mut params = ModelParams::init(&spec, 3).unwrap();
        let layout = spec.layout();
        params.data[layout.dense2_w.clone()].fill(0.0);
        params.data[layout.dense2_b.clone()].fill(0.0);
        let post = forward_pass(&params, &toy_image(1, (8, 8, 2))).unwrap();
        for p in post.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_is_a_simplex_vector() {
        let spec = toy_spec();
        let params = ModelParams::init(&spec, 5).unwrap();
        for seed in 0..8 {
            let post = forward_pass(&params, &toy_image(seed, (8, 8, 2))).unwrap();
            let sum: f64 = post.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(post.probs.iter().all(|&p| p >= 0.0));
            assert_eq!(post.latent.len(), 5);
        }
    }

    /// Hand-traced 1x1-conv network on a 2x2x1 input.
    #[test]
    fn hand_evaluated_tiny_forward() {
        let spec = ConvNetSpec {
            input: (2, 2, 1),
            block_filters: vec![1],
            kernel: 1,
            latent_dim: 2,
            output_dim: 3,
        };
        let mut params = ModelParams::init(&spec, 0).unwrap();
        let layout = spec.layout();
        // conv: y = 2x + 0.5
        params.data[layout.conv_w[0].clone()].copy_from_slice(&[2.0]);
        params.data[layout.conv_b[0].clone()].copy_from_slice(&[0.5]);
        // dense1 (2 x 1): rows [1], [-1]; bias [0, 0.2]
        params.data[layout.dense1_w.clone()].copy_from_slice(&[1.0, -1.0]);
        params.data[layout.dense1_b.clone()].copy_from_slice(&[0.0, 0.2]);
        // dense2 (3 x 2)
        params.data[layout.dense2_w.clone()].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, -1.0, 1.0]);
        params.data[layout.dense2_b.clone()].copy_from_slice(&[0.1, -0.1, 0.0]);

        let image = Array3::from_shape_vec((2, 2, 1), vec![0.3, -0.7, 0.2, 0.1]).unwrap();
        // conv+relu: [1.1, 0, 0.9, 0.7]; pool (2x2 -> 1x1): 1.1
        // dense1 pre: [1.1, -1.1+0.2=-0.9]; relu: [1.1, 0]
        // logits: [1.1+0.1, 0-0.1, -1.1+0]
        let logits = [1.2, -0.1, -1.1];
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let post = forward_pass(&params, &image).unwrap();
        for (got, want) in post.probs.iter().zip(exps.iter().map(|e| e / z)) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(post.latent, vec![1.1, 0.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let post = Posterior {
            probs: [1.0 / 3.0; 3],
            latent: vec![],
        };
        let loss = weighted_cross_entropy(&post, 1, &[1.0, 1.0, 1.0]);
        assert!((loss - 3.0_f64.ln()).abs() < 1e-12);

        let perfect = Posterior {
            probs: [0.0, 1.0, 0.0],
            latent: vec![],
        };
        assert_eq!(weighted_cross_entropy(&perfect, 1, &[1.0, 1.0, 1.0]), 0.0);

        let doubled = weighted_cross_entropy(&post, 1, &[1.0, 2.0, 1.0]);
        assert!((doubled - 2.0 * loss).abs() < 1e-12);
    }

    #[test]
    fn saturated_predictions_have_vanishing_gradients() {
        let spec = toy_spec();
        let mut params = ModelParams::init(&spec, 9).unwrap();
        let layout = spec.layout();
        // enormous bias on class 2 saturates the softmax for any input
        params.data[layout.dense2_w.clone()].fill(0.0);
        params.data[layout.dense2_b.clone()].copy_from_slice(&[-500.0, -500.0, 500.0]);
        let images: Vec<Array3<f64>> = (0..3).map(|s| toy_image(s, (8, 8, 2))).collect();
        let batch: Vec<Sample> = images.iter().map(|im| (im, 2usize)).collect();
        let (grads, loss) = backward_gradients(&params, &batch, &[1.0, 1.0, 1.0]).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(grads.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let spec = toy_spec();
        let params = ModelParams::init(&spec, 12).unwrap();
        let im1 = toy_image(100, (8, 8, 2));
        let im2 = toy_image(200, (8, 8, 2));
        let w = [1.0, 1.5, 2.0];
        let (g1, _) = backward_gradients(&params, &[(&im1, 0)], &w).unwrap();
        let (g2, _) = backward_gradients(&params, &[(&im2, 1)], &w).unwrap();
        let (gb, _) = backward_gradients(&params, &[(&im1, 0), (&im2, 1)], &w).unwrap();
        for ((a, b), c) in g1.iter().zip(g2.iter()).zip(gb.iter()) {
            assert!((0.5 * (a + b) - c).abs() <= 1e-12);
        }
    }

    /// Central finite differences over every parameter of a 2-block toy
    /// network. Gradients near zero are covered by an absolute guard sized
    /// to the h^2 truncation error of the difference quotient.
    #[test]
    fn gradients_match_central_finite_differences() {
        let spec = ConvNetSpec {
            input: (6, 6, 2),
            block_filters: vec![2, 3],
            kernel: 3,
            latent_dim: 4,
            output_dim: 3,
        };
        let params = ModelParams::init(&spec, 42).unwrap();
        let images: Vec<Array3<f64>> = (0..3).map(|s| toy_image(s + 50, (6, 6, 2))).collect();
        let batch: Vec<Sample> = images
            .iter()
            .enumerate()
            .map(|(i, im)| (im, i % 3))
            .collect();
        let weights = [1.405, 1.797, 1.0];
        let (grads, _) = backward_gradients(&params, &batch, &weights).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for idx in 0..params.data.len() {
            let mut p = params.clone();
            p.data[idx] += h;
            let up = batch_loss(&p, &batch, &weights).unwrap();
            p.data[idx] -= 2.0 * h;
            let down = batch_loss(&p, &batch, &weights).unwrap();
            let fd = (up - down) / (2.0 * h);
            let g = grads[idx];
            let err = (fd - g).abs();
            let denom = fd.abs().max(g.abs());
            if denom > 1e-3 {
                worst = worst.max(err / denom);
                assert!(err <= 1e-4 * denom, "param {idx}: grad {g}, fd {fd}");
            } else {
                assert!(err <= 1e-7, "param {idx}: grad {g}, fd {fd}");
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn duplicating_samples_equals_integer_weights() {
        let spec = toy_spec();
        let params = ModelParams::init(&spec, 77).unwrap();
        let im0 = toy_image(7, (8, 8, 2));
        let im1 = toy_image(8, (8, 8, 2));
        // one class-0 sample with weight 3 vs the sample repeated 3 times,
        // same normalization (sum over distinct samples / batch len)
        let weighted: Vec<Sample> = vec![(&im0, 0), (&im1, 1)];
        let (gw, lw) = backward_gradients(&params, &weighted, &[3.0, 1.0, 1.0]).unwrap();
        let duplicated: Vec<Sample> = vec![(&im0, 0), (&im0, 0), (&im0, 0), (&im1, 1)];
        let (gd, ld) = backward_gradients(&params, &duplicated, &[1.0, 1.0, 1.0]).unwrap();
        // mean over 2 with weight 3 = (3 a + b) / 2 ; mean over 4 duplicates = (3 a + b) / 4
        assert!((lw - 2.0 * ld).abs() < 1e-9);
        for (a, b) in gw.iter().zip(gd.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }
}
