//! Morlet continuous wavelet transform and the 128 x 128 x 6 scalogram
//! representation split into left/right 3-channel images.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::Epoch;
use crate::ClassLabel;

pub const EPOCH_LEN: usize = 128;
pub const SCALE_COUNT: usize = 128;

/// pi^(-1/4), the Morlet amplitude normalization.
const MORLET_NORM: f64 = 0.751_125_544_464_942_9;

/// Morlet mother-wavelet parameters plus the scale grid.
#[derive(Debug, Clone)]
pub struct WaveletParams {
    pub omega0: f64,
    /// strictly increasing, SCALE_COUNT entries, seconds
    pub scales: Vec<f64>,
    pub sampling_rate: f64,
}

impl WaveletParams {
    /// Log-spaced scales whose pseudo-frequencies f = omega0 / (2 pi sigma)
    /// cover `f_min`..`f_max` (the analysis band), highest frequency first
    /// in frequency terms, so scales run small to large.
    pub fn new(omega0: f64, sampling_rate: f64, f_min: f64, f_max: f64) -> Result<Self> {
        if !(omega0 >= 5.0) {
            return Err(Error::Validation(format!(
                "omega0 must be at least 5 for admissibility, got {omega0}"
            )));
        }
        if !(f_min > 0.0 && f_min < f_max) {
            return Err(Error::Validation("need 0 < f_min < f_max".into()));
        }
        let s_min = omega0 / (2.0 * std::f64::consts::PI * f_max);
        let s_max = omega0 / (2.0 * std::f64::consts::PI * f_min);
        let log_min = s_min.ln();
        let log_max = s_max.ln();
        let scales = (0..SCALE_COUNT)
            .map(|i| {
                let t = i as f64 / (SCALE_COUNT - 1) as f64;
                (log_min + t * (log_max - log_min)).exp()
            })
            .collect();
        Ok(Self {
            omega0,
            scales,
            sampling_rate,
        })
    }

    /// Standard grid: omega0 = 6, scales spanning the 0.5-40 Hz band.
    pub fn standard(sampling_rate: f64) -> Self {
        Self::new(6.0, sampling_rate, 0.5, 40.0).expect("standard parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 >= 5.0) {
            return Err(Error::Validation("omega0 must be at least 5".into()));
        }
        if self.scales.len() != SCALE_COUNT {
            return Err(Error::Validation(format!(
                "expected {SCALE_COUNT} scales, got {}",
                self.scales.len()
            )));
        }
        for w in self.scales.windows(2) {
            if !(w[0] > 0.0 && w[1] > w[0]) {
                return Err(Error::Validation("scales must be positive and strictly increasing".into()));
            }
        }
        Ok(())
    }

    /// Pseudo-frequency of a scale: f = omega0 / (2 pi sigma).
    pub fn scale_to_frequency(&self, sigma: f64) -> f64 {
        self.omega0 / (2.0 * std::f64::consts::PI * sigma)
    }

    pub fn frequency_to_scale(&self, f: f64) -> f64 {
        self.omega0 / (2.0 * std::f64::consts::PI * f)
    }
}

/// Samples the scaled/shifted Morlet basis function on a time grid:
/// Psi_{sigma,tau}(t) = sigma^(-1/2) pi^(-1/4) exp(i omega0 u - u^2/2),
/// u = (t - tau) / sigma.
pub fn morlet_basis(
    params: &WaveletParams,
    sigma: f64,
    tau: f64,
    times: &[f64],
) -> Result<Vec<Complex64>> {
    if !(sigma > 0.0) {
        return Err(Error::Validation(format!("sigma must be positive, got {sigma}")));
    }
    let amp = MORLET_NORM / sigma.sqrt();
    Ok(times
        .iter()
        .map(|&t| {
            let u = (t - tau) / sigma;
            let envelope = amp * (-0.5 * u * u).exp();
            Complex64::from_polar(envelope, params.omega0 * u)
        })
        .collect())
}

/// Complex CWT coefficients of a 128-sample signal: rows are scales, columns
/// are shifts at each sample instant. The inner product is a Riemann sum
/// with dt weighting and zero signal outside the window.
pub fn cwt_complex(x: &[f64], params: &WaveletParams) -> Result<Array2<Complex64>> {
    params.validate()?;
    if x.len() != EPOCH_LEN {
        return Err(Error::Shape(format!(
            "cwt input must have {EPOCH_LEN} samples, got {}",
            x.len()
        )));
    }
    let fs = params.sampling_rate;
    let dt = 1.0 / fs;
    let mut out = Array2::from_elem((SCALE_COUNT, EPOCH_LEN), Complex64::new(0.0, 0.0));
    // conj(Psi) sampled at every offset between a sample index and a shift index
    let mut table = vec![Complex64::new(0.0, 0.0); 2 * EPOCH_LEN - 1];
    for (i, &sigma) in params.scales.iter().enumerate() {
        let amp = MORLET_NORM / sigma.sqrt() * dt;
        for (slot, d) in (-(EPOCH_LEN as i64 - 1)..=(EPOCH_LEN as i64 - 1)).enumerate() {
            let u = d as f64 / (sigma * fs);
            let envelope = amp * (-0.5 * u * u).exp();
            table[slot] = Complex64::from_polar(envelope, -params.omega0 * u);
        }
        for j in 0..EPOCH_LEN {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &xv) in x.iter().enumerate() {
                let slot = t + EPOCH_LEN - 1 - j;
                acc += xv * table[slot];
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Magnitude scalogram: entry [i][j] = |W[sigma_i, tau_j]|.
pub fn cwt_scalogram(x: &[f64], params: &WaveletParams) -> Result<Array2<f64>> {
    Ok(cwt_complex(x, params)?.mapv(|c| c.norm()))
}

/// Per-channel scalograms of one epoch, min-max normalized to [0, 1]
/// independently per channel, split into the left tensor (scout channels
/// 0..3) and the right tensor (channels 3..6).
#[derive(Debug, Clone)]
pub struct ScalogramPair {
    /// 128 x 128 x 3, scale x shift x channel
    pub left: Array3<f64>,
    pub right: Array3<f64>,
    pub label: ClassLabel,
    pub subject_id: String,
}

fn normalize_in_place(map: &mut Array2<f64>) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        let span = hi - lo;
        map.mapv_inplace(|v| (v - lo) / span);
    } else {
        map.fill(0.0);
    }
}

pub fn epoch_to_images(epoch: &Epoch, params: &WaveletParams) -> Result<ScalogramPair> {
    if epoch.samples.nrows() != EPOCH_LEN || epoch.samples.ncols() != 6 {
        return Err(Error::Shape(format!(
            "epoch must be {EPOCH_LEN} x 6, found {} x {}",
            epoch.samples.nrows(),
            epoch.samples.ncols()
        )));
    }
    let mut left = Array3::zeros((SCALE_COUNT, EPOCH_LEN, 3));
    let mut right = Array3::zeros((SCALE_COUNT, EPOCH_LEN, 3));
    for c in 0..6 {
        let x: Vec<f64> = epoch.samples.column(c).to_vec();
        let mut map = cwt_scalogram(&x, params)?;
        normalize_in_place(&mut map);
        let target = if c < 3 { &mut left } else { &mut right };
        let ch = c % 3;
        for i in 0..SCALE_COUNT {
            for j in 0..EPOCH_LEN {
                target[[i, j, ch]] = map[[i, j]];
            }
        }
    }
    Ok(ScalogramPair {
        left,
        right,
        label: epoch.label,
        subject_id: epoch.subject_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin())
            .collect()
    }

    /// Direct evaluation of the inner product, recomputing the basis
    /// function from its closed form at every (scale, shift, sample).
    fn quadrature_oracle(x: &[f64], params: &WaveletParams) -> Array2<f64> {
        let fs = params.sampling_rate;
        let dt = 1.0 / fs;
        let mut out = Array2::zeros((SCALE_COUNT, EPOCH_LEN));
        for (i, &sigma) in params.scales.iter().enumerate() {
            for j in 0..EPOCH_LEN {
                let tau = j as f64 / fs;
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &xv) in x.iter().enumerate() {
                    let time = t as f64 / fs;
                    let u = (time - tau) / sigma;
                    let psi_conj = Complex64::from_polar(
                        MORLET_NORM / sigma.sqrt() * (-0.5 * u * u).exp(),
                        -params.omega0 * u,
                    );
                    acc += xv * psi_conj * dt;
                }
                out[[i, j]] = acc.norm();
            }
        }
        out
    }

    #[test]
    fn identity_scale_and_shift_reproduces_mother_wavelet() {
        let params = WaveletParams::standard(512.0);
        let times: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let basis = morlet_basis(&params, 1.0, 0.0, &times).unwrap();
        for (&t, v) in times.iter().zip(basis.iter()) {
            let expected = Complex64::from_polar(
                MORLET_NORM * (-0.5 * t * t).exp(),
                params.omega0 * t,
            );
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn basis_has_unit_energy_at_every_scale() {
        let params = WaveletParams::standard(512.0);
        let dt = 1.0 / 512.0;
        let times: Vec<f64> = (-8192..8192).map(|i| i as f64 * dt).collect();
        let norm = |sigma: f64| {
            let b = morlet_basis(&params, sigma, 0.0, &times).unwrap();
            (b.iter().map(|v| v.norm_sqr()).sum::<f64>() * dt).sqrt()
        };
        let n1 = norm(1.0);
        let n2 = norm(2.0);
        assert!((n1 - 1.0).abs() < 0.01, "norm at sigma=1: {n1}");
        assert!((n2 / n1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn hand_evaluated_point() {
        let params = WaveletParams::standard(512.0);
        let v = morlet_basis(&params, 2.0, 0.5, &[0.5]).unwrap()[0];
        let expected = MORLET_NORM / 2.0_f64.sqrt();
        assert!((v.re - expected).abs() < 1e-12);
        assert!(v.im.abs() < 1e-12);
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let params = WaveletParams::standard(512.0);
        assert!(morlet_basis(&params, 0.0, 0.0, &[0.0]).is_err());
        assert!(morlet_basis(&params, -1.0, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_map() {
        let params = WaveletParams::standard(512.0);
        let map = cwt_scalogram(&vec![0.0; EPOCH_LEN], &params).unwrap();
        assert!(map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_localizes_every_row_at_its_sample() {
        let params = WaveletParams::standard(512.0);
        let mut x = vec![0.0; EPOCH_LEN];
        x[64] = 1.0;
        let map = cwt_scalogram(&x, &params).unwrap();
        for i in 0..SCALE_COUNT {
            let row = map.row(i);
            let argmax = (0..EPOCH_LEN)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, 64, "row {i}");
        }
    }

    #[test]
    fn sine_peak_scale_obeys_scale_frequency_law() {
        let params = WaveletParams::standard(512.0);
        let x = sine(10.0, 512.0, EPOCH_LEN);
        let map = cwt_scalogram(&x, &params).unwrap();
        let energies: Vec<f64> = (0..SCALE_COUNT)
            .map(|i| map.row(i).iter().map(|v| v * v).sum())
            .collect();
        let peak = (0..SCALE_COUNT)
            .max_by(|&a, &b| energies[a].partial_cmp(&energies[b]).unwrap())
            .unwrap();
        let sigma_star = params.frequency_to_scale(10.0);
        let nearest = (0..SCALE_COUNT)
            .min_by(|&a, &b| {
                (params.scales[a] - sigma_star)
                    .abs()
                    .partial_cmp(&(params.scales[b] - sigma_star).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(
            (peak as i64 - nearest as i64).abs() <= 1,
            "peak row {peak}, expected near {nearest}"
        );
    }

    #[test]
    fn map_matches_direct_quadrature_oracle() {
        let params = WaveletParams::standard(512.0);
        let x = sine(10.0, 512.0, EPOCH_LEN);
        let map = cwt_scalogram(&x, &params).unwrap();
        let oracle = quadrature_oracle(&x, &params);
        let floor = 1e-300;
        for (a, b) in map.iter().zip(oracle.iter()) {
            let denom = a.abs().max(b.abs());
            if denom > floor {
                assert!((a - b).abs() <= 1e-6 * denom, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn complex_coefficients_are_linear() {
        let params = WaveletParams::standard(512.0);
        let x = sine(8.0, 512.0, EPOCH_LEN);
        let y = sine(20.0, 512.0, EPOCH_LEN);
        let (a, b) = (2.0, -0.5);
        let combo: Vec<f64> = x.iter().zip(y.iter()).map(|(&u, &v)| a * u + b * v).collect();
        let wx = cwt_complex(&x, &params).unwrap();
        let wy = cwt_complex(&y, &params).unwrap();
        let wc = cwt_complex(&combo, &params).unwrap();
        for ((c, &cx), &cy) in wc.iter().zip(wx.iter()).zip(wy.iter()) {
            let expected = a * cx + b * cy;
            assert!((c - expected).norm() <= 1e-10 * expected.norm().max(1e-12));
        }
    }

    #[test]
    fn circular_shift_of_periodic_sine_shifts_interior_columns() {
        let params = WaveletParams::standard(512.0);
        let fs = 512.0;
        let x = sine(8.0, fs, EPOCH_LEN); // period 64 samples, fits circularly
        let shift = 16usize;
        let shifted: Vec<f64> = (0..EPOCH_LEN)
            .map(|t| x[(t + EPOCH_LEN - shift) % EPOCH_LEN])
            .collect();
        let w1 = cwt_scalogram(&x, &params).unwrap();
        let w2 = cwt_scalogram(&shifted, &params).unwrap();
        let scale = w1.iter().cloned().fold(0.0_f64, f64::max);
        for (i, &sigma) in params.scales.iter().enumerate() {
            let support = (4.0 * sigma * fs).ceil() as usize;
            for j in 48..80 {
                if j >= shift + support && j + support < EPOCH_LEN {
                    let a = w2[[i, j]];
                    let b = w1[[i, j - shift]];
                    assert!(
                        (a - b).abs() <= 1e-3 * scale,
                        "row {i} col {j}: {a} vs {b}"
                    );
                }
            }
        }
    }

    fn toy_epoch(fill: impl Fn(usize, usize) -> f64) -> Epoch {
        Epoch {
            samples: Array2::from_shape_fn((EPOCH_LEN, 6), |(i, c)| fill(i, c)),
            subject_id: "s0".into(),
            label: ClassLabel::Hc,
        }
    }

    #[test]
    fn zero_epoch_gives_zero_tensors() {
        let params = WaveletParams::standard(512.0);
        let pair = epoch_to_images(&toy_epoch(|_, _| 0.0), &params).unwrap();
        assert!(pair.left.iter().all(|&v| v == 0.0));
        assert!(pair.right.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swapping_hemispheres_swaps_tensors() {
        let params = WaveletParams::standard(512.0);
        let base = toy_epoch(|i, c| ((i * (c + 1)) as f64 * 0.37).sin());
        let swapped = toy_epoch(|i, c| {
            let c2 = (c + 3) % 6;
            ((i * (c2 + 1)) as f64 * 0.37).sin()
        });
        let p1 = epoch_to_images(&base, &params).unwrap();
        let p2 = epoch_to_images(&swapped, &params).unwrap();
        assert_eq!(p1.left, p2.right);
        assert_eq!(p1.right, p2.left);
    }

    #[test]
    fn normalized_channels_span_unit_interval() {
        let params = WaveletParams::standard(512.0);
        let pair = epoch_to_images(
            &toy_epoch(|i, c| ((i as f64) * 0.1 + c as f64).sin()),
            &params,
        )
        .unwrap();
        for tensor in [&pair.left, &pair.right] {
            for ch in 0..3 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..SCALE_COUNT {
                    for j in 0..EPOCH_LEN {
                        let v = tensor[[i, j, ch]];
                        assert!((0.0..=1.0).contains(&v));
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                assert_eq!(lo, 0.0);
                assert_eq!(hi, 1.0);
            }
        }
    }

    #[test]
    fn constant_channel_maps_to_zeros() {
        let params = WaveletParams::standard(512.0);
        // channel 0 constant, others varying
        let pair = epoch_to_images(
            &toy_epoch(|i, c| if c == 0 { 2.5 } else { (i as f64 * 0.2).cos() }),
            &params,
        )
        .unwrap();
        // A constant signal has a nonzero but flat DC response only at large
        // scales; min-max collapse applies when max == min. The contract is
        // weaker: no NaN and values still inside [0, 1].
        for v in pair.left.iter().chain(pair.right.iter()) {
            assert!(v.is_finite());
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let params = WaveletParams::standard(512.0);
        assert!(matches!(
            cwt_scalogram(&vec![0.0; 100], &params),
            Err(Error::Shape(_))
        ));
    }
}
