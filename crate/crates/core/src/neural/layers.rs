//! Dense/convolution/pooling primitives on flat row-major buffers.
//!
//! Feature maps are (height, width, channel) row-major; conv weights are
//! (kh, kw, cin, cout) row-major so the channel-out loop is contiguous.

/// Feature-map dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn pooled(&self) -> Dims {
        Dims {
            h: self.h / 2,
            w: self.w / 2,
            c: self.c,
        }
    }
}

/// Same-padded stride-1 convolution. `kernel` must be odd.
pub fn conv_forward(
    input: &[f64],
    dims: Dims,
    weights: &[f64],
    bias: &[f64],
    kernel: usize,
    cout: usize,
    out: &mut [f64],
) {
    let pad = kernel / 2;
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    debug_assert_eq!(out.len(), h * w * cout);
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias);
    }
    for oh in 0..h {
        for ow in 0..w {
            let out_base = (oh * w + ow) * cout;
            for kh in 0..kernel {
                let ih = oh + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for kw in 0..kernel {
                    let iw = ow + kw;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let in_base = (ih * w + iw) * cin;
                    let w_base = (kh * kernel + kw) * cin * cout;
                    for ci in 0..cin {
                        let xv = input[in_base + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &weights[w_base + ci * cout..w_base + (ci + 1) * cout];
                        let orow = &mut out[out_base..out_base + cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow.iter()) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients w.r.t. conv weights and bias, accumulated into dw/db.
pub fn conv_backward_params(
    input: &[f64],
    dims: Dims,
    dout: &[f64],
    kernel: usize,
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let pad = kernel / 2;
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    for row in dout.chunks_exact(cout) {
        for (acc, &g) in db.iter_mut().zip(row.iter()) {
            *acc += g;
        }
    }
    for oh in 0..h {
        for ow in 0..w {
            let d_base = (oh * w + ow) * cout;
            for kh in 0..kernel {
                let ih = oh + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for kw in 0..kernel {
                    let iw = ow + kw;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let in_base = (ih * w + iw) * cin;
                    let w_base = (kh * kernel + kw) * cin * cout;
                    for ci in 0..cin {
                        let xv = input[in_base + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &mut dw[w_base + ci * cout..w_base + (ci + 1) * cout];
                        let drow = &dout[d_base..d_base + cout];
                        for (acc, &g) in wrow.iter_mut().zip(drow.iter()) {
                            *acc += xv * g;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the conv input, written into dinput (overwritten).
pub fn conv_backward_input(
    weights: &[f64],
    dims: Dims,
    dout: &[f64],
    kernel: usize,
    cout: usize,
    dinput: &mut [f64],
) {
    let pad = kernel / 2;
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    dinput.fill(0.0);
    for oh in 0..h {
        for ow in 0..w {
            let d_base = (oh * w + ow) * cout;
            for kh in 0..kernel {
                let ih = oh + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for kw in 0..kernel {
                    let iw = ow + kw;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let in_base = (ih * w + iw) * cin;
                    let w_base = (kh * kernel + kw) * cin * cout;
                    for ci in 0..cin {
                        let wrow = &weights[w_base + ci * cout..w_base + (ci + 1) * cout];
                        let drow = &dout[d_base..d_base + cout];
                        let mut acc = 0.0;
                        for (&wv, &g) in wrow.iter().zip(drow.iter()) {
                            acc += wv * g;
                        }
                        dinput[in_base + ci] += acc;
                    }
                }
            }
        }
    }
}

pub fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the sign of the pre-activation (subgradient 0 at 0).
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre.iter()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// (0,0),(0,1),(1,0),(1,1) scan order. argmax stores the flat input index.
pub fn maxpool_forward(input: &[f64], dims: Dims, out: &mut [f64], argmax: &mut [u32]) {
    let od = dims.pooled();
    let (w, c) = (dims.w, dims.c);
    for oh in 0..od.h {
        for ow in 0..od.w {
            for ch in 0..c {
                let mut best_idx = ((2 * oh) * w + 2 * ow) * c + ch;
                let mut best = input[best_idx];
                for (dh, dw) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ((2 * oh + dh) * w + 2 * ow + dw) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (oh * od.w + ow) * c + ch;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub fn maxpool_backward(dout: &[f64], argmax: &[u32], dinput: &mut [f64]) {
    dinput.fill(0.0);
    for (&g, &idx) in dout.iter().zip(argmax.iter()) {
        dinput[idx as usize] += g;
    }
}

/// out = W x + b, W stored row-major (out_dim x in_dim).
pub fn dense_forward(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let in_dim = x.len();
    for (o, (wrow, &b)) in out
        .iter_mut()
        .zip(weights.chunks_exact(in_dim).zip(bias.iter()))
    {
        let mut acc = b;
        for (&wv, &xv) in wrow.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// Accumulates dW, db and writes dx (overwritten).
pub fn dense_backward(
    weights: &[f64],
    x: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let in_dim = x.len();
    dx.fill(0.0);
    for (i, &g) in dout.iter().enumerate() {
        db[i] += g;
        let wrow = &weights[i * in_dim..(i + 1) * in_dim];
        let dwrow = &mut dw[i * in_dim..(i + 1) * in_dim];
        for k in 0..in_dim {
            dwrow[k] += g * x[k];
            dx[k] += g * wrow[k];
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}
