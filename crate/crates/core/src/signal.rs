//! Preprocessing: band-pass filtering, average re-referencing, resampling,
//! and epoch segmentation.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::ScalpRecording;
use crate::scout::{ScoutMatrix, REGION_COUNT};
use crate::ClassLabel;

/// One classification sample: epoch_len x 6 window of scout series
/// (time down the rows, scout channel across the columns).
#[derive(Debug, Clone)]
pub struct Epoch {
    pub samples: Array2<f64>,
    pub subject_id: String,
    pub label: ClassLabel,
}

/// Second-order section, coefficients normalized so a0 = 1.
#[derive(Debug, Clone, Copy)]
struct Sos {
    b: [f64; 3],
    a: [f64; 2], // a1, a2
}

impl Sos {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn response(&self, z: Complex64) -> Complex64 {
        let num = self.b[0] * z * z + self.b[1] * z + self.b[2];
        let den = z * z + self.a[0] * z + self.a[1];
        num / den
    }
}

/// Butterworth band-pass of total order `order` (so `order`/2 prototype
/// poles), designed by bilinear transform with frequency pre-warping and
/// returned as cascaded second-order sections.
fn design_butterworth_bandpass(low: f64, high: f64, order: usize, fs: f64) -> Vec<Sos> {
    let proto_order = order / 2;
    // analog prototype poles, upper half-plane only; conjugates are implied
    let mut upper = Vec::new();
    for k in 0..proto_order {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + proto_order as f64 + 1.0)
            / (2.0 * proto_order as f64);
        let p = Complex64::new(theta.cos(), theta.sin());
        if p.im > 1e-12 {
            upper.push(p);
        }
    }
    let k = 2.0 * fs;
    let w1 = k * (std::f64::consts::PI * low / fs).tan();
    let w2 = k * (std::f64::consts::PI * high / fs).tan();
    let w0sq = w1 * w2;
    let bw = w2 - w1;

    // low-pass -> band-pass: each prototype pole p yields the two roots of
    // s^2 - (p BW) s + w0^2
    let mut sections = Vec::with_capacity(order / 2);
    for &p in &upper {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            // analog section (s - s0)(s - conj(s0)) = s^2 + alpha s + beta
            let alpha = -2.0 * s.re;
            let beta = s.norm_sqr();
            let a0 = k * k + alpha * k + beta;
            let a1 = (-2.0 * k * k + 2.0 * beta) / a0;
            let a2 = (k * k - alpha * k + beta) / a0;
            // one zero at z = 1 and one at z = -1 per section
            sections.push(Sos {
                b: [1.0 / a0, 0.0, -1.0 / a0],
                a: [a1, a2],
            });
        }
    }

    // pin unit gain at the digital image of the analog center frequency
    let omega_c = 2.0 * (w0sq.sqrt() / k).atan();
    let z0 = Complex64::from_polar(1.0, omega_c);
    let total: Complex64 = sections.iter().map(|s| s.response(z0)).product();
    let gain_per_section = (1.0 / total.norm()).powf(1.0 / sections.len() as f64);
    for s in &mut sections {
        s.b[0] *= gain_per_section;
        s.b[2] *= gain_per_section;
    }
    sections
}

/// Direct-form II transposed filtering of one section, with initial state
/// scaled for a steady-state response to a step of amplitude `x0`.
fn filter_section(sos: &Sos, x: &mut [f64], x0: f64) {
    let y_ss = sos.dc_gain() * x0;
    let mut s1 = y_ss - sos.b[0] * x0;
    let mut s2 = sos.b[2] * x0 - sos.a[1] * y_ss;
    for v in x.iter_mut() {
        let xin = *v;
        let y = sos.b[0] * xin + s1;
        s1 = sos.b[1] * xin - sos.a[0] * y + s2;
        s2 = sos.b[2] * xin - sos.a[1] * y;
        *v = y;
    }
}

fn filter_cascade(sections: &[Sos], x: &mut [f64]) {
    let mut x0 = x.first().copied().unwrap_or(0.0);
    for sos in sections {
        filter_section(sos, x, x0);
        x0 *= sos.dc_gain();
    }
}

/// Forward (and optionally backward) application of the cascade over one
/// channel, with odd-reflection padding of 3x the filter order.
fn filter_channel(sections: &[Sos], x: &[f64], order: usize, zero_phase: bool) -> Vec<f64> {
    let pad = 3 * order;
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        ext.push(2.0 * x[0] - x[pad - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..pad {
        ext.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }
    filter_cascade(sections, &mut ext);
    if zero_phase {
        ext.reverse();
        filter_cascade(sections, &mut ext);
        ext.reverse();
    }
    ext[pad..pad + n].to_vec()
}

/// Band-pass filters every channel of a recording.
pub fn butterworth_bandpass(
    rec: &ScalpRecording,
    low: f64,
    high: f64,
    order: usize,
    zero_phase: bool,
) -> Result<ScalpRecording> {
    if !(low > 0.0 && low < high && high < rec.sampling_rate / 2.0) {
        return Err(Error::Validation(format!(
            "band edges ({low}, {high}) invalid for sampling rate {}",
            rec.sampling_rate
        )));
    }
    if order != 4 && order != 8 {
        return Err(Error::Validation(format!(
            "filter order must be 4 or 8, got {order}"
        )));
    }
    let pad = 3 * order;
    if rec.n_samples() <= pad + 1 {
        return Err(Error::Validation(format!(
            "recording too short ({} samples) for padding {pad}",
            rec.n_samples()
        )));
    }
    let sections = design_butterworth_bandpass(low, high, order, rec.sampling_rate);
    let mut data = rec.data.clone();
    for mut row in data.rows_mut() {
        let filtered = filter_channel(&sections, row.as_slice().unwrap(), order, zero_phase);
        for (dst, src) in row.iter_mut().zip(filtered) {
            *dst = src;
        }
    }
    Ok(ScalpRecording {
        data,
        sampling_rate: rec.sampling_rate,
        channel_labels: rec.channel_labels.clone(),
        label: rec.label,
    })
}

/// Subtracts the per-sample channel mean.
pub fn average_rereference(rec: &ScalpRecording) -> Result<ScalpRecording> {
    let m = rec.n_channels();
    if m < 2 {
        return Err(Error::Validation(
            "average reference needs at least 2 channels".into(),
        ));
    }
    let mut data = rec.data.clone();
    for t in 0..data.ncols() {
        let mean: f64 = data.column(t).sum() / m as f64;
        data.column_mut(t).mapv_inplace(|v| v - mean);
    }
    Ok(ScalpRecording {
        data,
        sampling_rate: rec.sampling_rate,
        channel_labels: rec.channel_labels.clone(),
        label: rec.label,
    })
}

/// Half-width of the resampling kernel in input samples.
const RESAMPLE_HALF_WIDTH: usize = 48;

fn blackman(t: f64) -> f64 {
    // t in [-1, 1]
    let x = std::f64::consts::PI * (t + 1.0);
    0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Rational-ratio polyphase resampler: windowed-sinc anti-alias low-pass at
/// 0.45 x target, phase tap tables per output phase, per-output tap-sum
/// normalization so constants are preserved exactly.
pub fn downsample(rec: &ScalpRecording, target: f64) -> Result<ScalpRecording> {
    if !(target > 0.0) {
        return Err(Error::Validation("target rate must be positive".into()));
    }
    if target > rec.sampling_rate {
        return Err(Error::Validation(format!(
            "cannot upsample {} Hz to {} Hz",
            rec.sampling_rate, target
        )));
    }
    if rec.sampling_rate.fract() != 0.0 || target.fract() != 0.0 {
        return Err(Error::Validation(
            "rational resampling requires integer sampling rates".into(),
        ));
    }
    if (target - rec.sampling_rate).abs() < f64::EPSILON {
        return Ok(rec.clone());
    }
    let fi = rec.sampling_rate as u64;
    let fo = target as u64;
    let g = gcd(fi, fo);
    let (l, m) = (fo / g, fi / g);
    let n_in = rec.n_samples();
    let n_out = (n_in as u64 * l / m) as usize;

    let fc = 0.45 * target / rec.sampling_rate; // cycles per input sample
    let k = RESAMPLE_HALF_WIDTH as i64;

    // per-phase taps for offsets d in [-K+1, K]; phase r means the output
    // instant sits r/L input samples after the base sample
    let mut phase_taps: Vec<Vec<f64>> = Vec::with_capacity(l as usize);
    let mut phase_sums: Vec<f64> = Vec::with_capacity(l as usize);
    for r in 0..l {
        let phi = r as f64 / l as f64;
        let taps: Vec<f64> = (-k + 1..=k)
            .map(|d| {
                let tau = d as f64 - phi;
                2.0 * fc * sinc(2.0 * fc * tau) * blackman(tau / k as f64)
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        phase_taps.push(taps);
        phase_sums.push(sum);
    }

    let mut data = Array2::zeros((rec.n_channels(), n_out));
    for (c, row) in rec.data.rows().into_iter().enumerate() {
        let x = row.as_slice().unwrap();
        for j in 0..n_out {
            let num = j as u64 * m;
            let n0 = (num / l) as i64;
            let r = (num % l) as usize;
            let taps = &phase_taps[r];
            let lo = n0 - k + 1;
            let hi = n0 + k;
            let (mut acc, mut wsum) = (0.0, 0.0);
            if lo >= 0 && (hi as usize) < n_in {
                for (t, &w) in taps.iter().enumerate() {
                    acc += w * x[lo as usize + t];
                }
                wsum = phase_sums[r];
            } else {
                for (t, &w) in taps.iter().enumerate() {
                    let idx = lo + t as i64;
                    if idx >= 0 && (idx as usize) < n_in {
                        acc += w * x[idx as usize];
                        wsum += w;
                    }
                }
            }
            data[[c, j]] = acc / wsum;
        }
    }
    Ok(ScalpRecording {
        data,
        sampling_rate: target,
        channel_labels: rec.channel_labels.clone(),
        label: rec.label,
    })
}

/// Cuts the scout matrix into non-overlapping epoch_len x 6 windows,
/// dropping the remainder. Each window is transposed to time x channel.
pub fn segment_epochs(
    sm: &ScoutMatrix,
    epoch_len: usize,
    subject_id: &str,
    label: ClassLabel,
) -> Result<Vec<Epoch>> {
    if epoch_len == 0 {
        return Err(Error::Validation("epoch_len must be positive".into()));
    }
    if epoch_len == 128 && (sm.sampling_rate - 512.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "128-sample epochs require 512 Hz scout series (0.25 s contract), got {} Hz",
            sm.sampling_rate
        )));
    }
    if sm.series.nrows() != REGION_COUNT {
        return Err(Error::Shape(format!(
            "scout matrix must have {REGION_COUNT} rows, found {}",
            sm.series.nrows()
        )));
    }
    let t = sm.series.ncols();
    let count = t / epoch_len;
    let mut epochs = Vec::with_capacity(count);
    for e in 0..count {
        let start = e * epoch_len;
        let mut samples = Array2::zeros((epoch_len, REGION_COUNT));
        for c in 0..REGION_COUNT {
            for i in 0..epoch_len {
                samples[[i, c]] = sm.series[[c, start + i]];
            }
        }
        epochs.push(Epoch {
            samples,
            subject_id: subject_id.to_string(),
            label,
        });
    }
    Ok(epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Single-frequency DFT amplitude of `x[lo..hi]`.
    fn dft_amplitude(x: &[f64], lo: usize, hi: usize, f: f64, fs: f64) -> f64 {
        let n = hi - lo;
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x[lo..hi].iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * f * (lo + i) as f64 / fs;
            acc += v * Complex64::from_polar(1.0, phase);
        }
        2.0 * acc.norm() / n as f64
    }

    fn sine_recording(f: f64, fs: f64, n: usize) -> ScalpRecording {
        let data = Array2::from_shape_fn((1, n), |(_, t)| {
            (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin()
        });
        ScalpRecording::new(data, fs, vec!["ch".into()], None).unwrap()
    }

    #[test]
    fn passband_sine_keeps_unit_amplitude() {
        let fs = 512.0;
        let n = (8.0 * fs) as usize;
        let rec = sine_recording(10.0, fs, n);
        let out = butterworth_bandpass(&rec, 0.5, 40.0, 8, true).unwrap();
        let y = out.data.row(0).to_vec();
        // central 4 s: exactly 40 cycles of 10 Hz
        let amp = dft_amplitude(&y, n / 4, 3 * n / 4, 10.0, fs);
        assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
    }

    #[test]
    fn drift_attenuated_by_40_db() {
        let fs = 512.0;
        let n = (60.0 * fs) as usize;
        let rec = sine_recording(0.05, fs, n);
        let out = butterworth_bandpass(&rec, 0.5, 40.0, 8, true).unwrap();
        let y = out.data.row(0).to_vec();
        // central 40 s: two full cycles of 0.05 Hz
        let in_amp = dft_amplitude(rec.data.row(0).as_slice().unwrap(), n / 6, n / 6 + (40.0 * fs) as usize, 0.05, fs);
        let out_amp = dft_amplitude(&y, n / 6, n / 6 + (40.0 * fs) as usize, 0.05, fs);
        assert!(out_amp / in_amp < 0.01, "attenuation only {}", out_amp / in_amp);
    }

    #[test]
    fn zero_phase_keeps_peak_position() {
        let fs = 512.0;
        let n = (4.0 * fs) as usize;
        let rec = sine_recording(10.0, fs, n);
        let out = butterworth_bandpass(&rec, 0.5, 40.0, 8, true).unwrap();
        let x = rec.data.row(0).to_vec();
        let y = out.data.row(0).to_vec();
        // input peak in a central window, output peak in its neighbourhood
        let window = n / 4..n / 2;
        let dx = window
            .clone()
            .max_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap())
            .unwrap();
        let half_period = (fs / 10.0 / 2.0) as usize;
        let neighbourhood = dx - half_period..dx + half_period;
        let dy = neighbourhood
            .max_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap())
            .unwrap();
        assert!(
            (dx as i64 - dy as i64).abs() <= 1,
            "input peak {dx}, output peak {dy}"
        );
    }

    #[test]
    fn single_pass_magnitude_matches_butterworth_formula() {
        let fs = 512.0;
        let (low, high, order) = (0.5, 40.0, 8);
        let sections = design_butterworth_bandpass(low, high, order, fs);
        let k = 2.0 * fs;
        let w1 = k * (std::f64::consts::PI * low / fs).tan();
        let w2 = k * (std::f64::consts::PI * high / fs).tan();
        for f in [0.1, 0.5, 2.0, 10.0, 25.0, 40.0, 80.0] {
            let omega = 2.0 * std::f64::consts::PI * f / fs;
            let z = Complex64::from_polar(1.0, omega);
            let got: Complex64 = sections.iter().map(|s| s.response(z)).product();
            let w = k * (omega / 2.0).tan();
            let big_omega = (w * w - w1 * w2) / (w * (w2 - w1));
            let expected = 1.0 / (1.0 + big_omega.powi(order as i32)).sqrt();
            assert!(
                (got.norm() - expected).abs() < 1e-9,
                "f={f}: |H|={}, formula {expected}",
                got.norm()
            );
        }
    }

    #[test]
    fn invalid_band_edges_rejected() {
        let rec = sine_recording(10.0, 512.0, 1024);
        assert!(butterworth_bandpass(&rec, 40.0, 0.5, 8, true).is_err());
        assert!(butterworth_bandpass(&rec, 0.5, 300.0, 8, true).is_err());
        assert!(butterworth_bandpass(&rec, 0.5, 40.0, 6, true).is_err());
    }

    #[test]
    fn rereference_leaves_zero_mean_pair_unchanged() {
        let data = Array2::from_shape_fn((2, 8), |(c, _)| if c == 0 { 1.0 } else { -1.0 });
        let rec = ScalpRecording::new(data.clone(), 512.0, vec!["a".into(), "b".into()], None).unwrap();
        let out = average_rereference(&rec).unwrap();
        assert_eq!(out.data, data);
    }

    #[test]
    fn rereference_rejects_common_mode() {
        let mut rng_state = 1u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let base = Array2::from_shape_fn((4, 16), |_| next());
        let shifted = &base + 17.25;
        let labels: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let a = average_rereference(
            &ScalpRecording::new(base, 512.0, labels.clone(), None).unwrap(),
        )
        .unwrap();
        let b = average_rereference(
            &ScalpRecording::new(shifted, 512.0, labels, None).unwrap(),
        )
        .unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rereference_zeroes_column_sums() {
        let mut rng_state = 7u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let data = Array2::from_shape_fn((8, 100), |_| next());
        let labels: Vec<String> = (0..8).map(|i| format!("c{i}")).collect();
        let out = average_rereference(&ScalpRecording::new(data, 512.0, labels, None).unwrap()).unwrap();
        for t in 0..100 {
            assert!(out.data.column(t).sum().abs() < 1e-12);
        }
        assert!(average_rereference(
            &ScalpRecording::new(Array2::zeros((1, 4)), 512.0, vec!["x".into()], None).unwrap()
        )
        .is_err());
    }

    #[test]
    fn downsample_preserves_constants() {
        let data = Array2::from_elem((2, 1000), 3.25);
        let labels = vec!["a".into(), "b".into()];
        let rec = ScalpRecording::new(data, 1000.0, labels, None).unwrap();
        let out = downsample(&rec, 512.0).unwrap();
        assert_eq!(out.n_samples(), 512);
        assert_eq!(out.sampling_rate, 512.0);
        for v in out.data.iter() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_length_formula() {
        let rec = ScalpRecording::new(Array2::zeros((1, 1000)), 1000.0, vec!["x".into()], None).unwrap();
        assert_eq!(downsample(&rec, 512.0).unwrap().n_samples(), 512);
        let rec2 = ScalpRecording::new(Array2::zeros((1, 999)), 1000.0, vec!["x".into()], None).unwrap();
        assert_eq!(downsample(&rec2, 512.0).unwrap().n_samples(), 511);
    }

    #[test]
    fn downsample_keeps_five_hz_tone() {
        let fs = 1000.0;
        let n = 2000;
        let rec = sine_recording(5.0, fs, n);
        let out = downsample(&rec, 512.0).unwrap();
        let y = out.data.row(0).to_vec();
        let n_out = y.len();
        // full DFT sweep: the dominant bin must sit at 5 Hz
        let mut best = (0, 0.0);
        for bin in 1..n_out / 2 {
            let f = bin as f64 * 512.0 / n_out as f64;
            let a = dft_amplitude(&y, 0, n_out, f, 512.0);
            if a > best.1 {
                best = (bin, a);
            }
        }
        let f_peak = best.0 as f64 * 512.0 / n_out as f64;
        assert!((f_peak - 5.0).abs() < 0.3, "peak at {f_peak} Hz");
        let amp = dft_amplitude(&y, 0, n_out, 5.0, 512.0);
        assert!((amp - 1.0).abs() < 0.02, "amplitude {amp}");
    }

    #[test]
    fn upsampling_rejected() {
        let rec = sine_recording(5.0, 512.0, 512);
        assert!(matches!(downsample(&rec, 1000.0), Err(Error::Validation(_))));
    }

    fn scout_fixture(t: usize) -> ScoutMatrix {
        ScoutMatrix {
            series: Array2::from_shape_fn((REGION_COUNT, t), |(c, i)| (c * 1000 + i) as f64),
            sampling_rate: 512.0,
        }
    }

    #[test]
    fn epoch_count_for_five_minutes() {
        let sm = scout_fixture(153_600);
        let epochs = segment_epochs(&sm, 128, "s0", ClassLabel::Hc).unwrap();
        assert_eq!(epochs.len(), 1200);
        assert_eq!(epochs[0].samples.dim(), (128, 6));
    }

    #[test]
    fn short_series_yields_no_epochs() {
        let sm = scout_fixture(127);
        assert!(segment_epochs(&sm, 128, "s0", ClassLabel::Hc).unwrap().is_empty());
    }

    #[test]
    fn epochs_partition_the_prefix() {
        let sm = scout_fixture(300);
        let epochs = segment_epochs(&sm, 128, "s0", ClassLabel::Ad).unwrap();
        assert_eq!(epochs.len(), 2);
        for (e, epoch) in epochs.iter().enumerate() {
            for c in 0..REGION_COUNT {
                for i in 0..128 {
                    assert_eq!(epoch.samples[[i, c]], sm.series[[c, e * 128 + i]]);
                }
            }
        }
    }

    #[test]
    fn epoch_contract_requires_512_hz() {
        let mut sm = scout_fixture(256);
        sm.sampling_rate = 500.0;
        assert!(matches!(
            segment_epochs(&sm, 128, "s0", ClassLabel::Hc),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn filtering_commutes_with_channel_permutation() {
        let fs = 512.0;
        let n = 1024;
        let mut data = Array2::zeros((3, n));
        for c in 0..3 {
            for t in 0..n {
                let tf = t as f64 / fs;
                data[[c, t]] = ((c + 2) as f64 * 5.0 * tf * 2.0 * std::f64::consts::PI).sin();
            }
        }
        let labels: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let rec = ScalpRecording::new(data.clone(), fs, labels.clone(), None).unwrap();
        let filtered = butterworth_bandpass(&rec, 0.5, 40.0, 8, true).unwrap();
        let perm = [2usize, 0, 1];
        let mut pdata = Array2::zeros((3, n));
        for (dst, &src) in perm.iter().enumerate() {
            pdata.row_mut(dst).assign(&data.row(src));
        }
        let prec = ScalpRecording::new(pdata, fs, labels, None).unwrap();
        let pfiltered = butterworth_bandpass(&prec, 0.5, 40.0, 8, true).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for t in 0..n {
                assert_eq!(
                    pfiltered.data[[dst, t]].to_bits(),
                    filtered.data[[src, t]].to_bits()
                );
            }
        }
    }
}
