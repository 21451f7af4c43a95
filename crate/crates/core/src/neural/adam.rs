//! Bias-corrected Adam on flat parameter buffers.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update:
///   m <- b1 m + (1-b1) g          m_hat = m / (1 - b1^t)
///   v <- b2 v + (1-b2) g^2        v_hat = v / (1 - b2^t)
///   p <- p - lr m_hat / (sqrt(v_hat) + eps)
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam buffers disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient in adam step".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut params = vec![1.0, -2.0, 3.0];
        let before = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params, before);
        assert!(state.m.iter().all(|&v| v == 0.0));
        assert!(state.v.iter().all(|&v| v == 0.0));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for &g in &[1e-3, 0.5, -2.0, 40.0] {
            let mut params = vec![0.0];
            let mut state = AdamState::new(1);
            adam_step(&mut params, &[g], &mut state, 0.01, 0.9, 0.999, 1e-8).unwrap();
            let expected = -0.01 * g.signum();
            assert!(
                (params[0] - expected).abs() < 1e-6,
                "g {g}: step {}",
                params[0]
            );
        }
    }

    /// Three iterations on f(w) = w^2 reproduced by an independent scalar
    /// trace of the update rule.
    #[test]
    fn quadratic_iterates_match_hand_trace() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);

        let mut w = 1.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);

            let g_impl = 2.0 * params[0];
            adam_step(&mut params, &[g_impl], &mut state, lr, b1, b2, eps).unwrap();
            assert!((params[0] - w).abs() < 1e-10, "step {t}: {} vs {w}", params[0]);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        assert!(adam_step(&mut params, &[f64::NAN], &mut state, 0.1, 0.9, 0.999, 1e-8).is_err());
    }
}
