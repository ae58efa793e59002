//! ADAM over the flattened parameter vector.
//!
//! Standard bias-corrected form with eps = 1e-8. The optimizer neither knows
//! nor cares about the parameter classes; flag-frozen classes arrive with
//! exactly zero gradients and therefore never move (zero first and second
//! moments give a zero update).

use crate::training::TrainConfig;
use crate::{Error, Result};

const EPS: f64 = 1e-8;

/// First/second moment accumulators plus the step counter.
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected ADAM update of `theta` in place.
pub fn adam_step(
    theta: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if theta.len() != grads.len() || theta.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "theta {} vs grads {} vs state {}",
            theta.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    // b^t decays to ~1e-180 for t near 5*10^4 at beta = 0.98; powi is fine.
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradients_leave_theta_unchanged() {
        let cfg = TrainConfig::default();
        let mut theta = vec![0.3, -1.7, 0.0, 42.0];
        let before = theta.clone();
        let mut st = AdamState::new(4);
        for _ in 0..5 {
            adam_step(&mut theta, &[0.0; 4], &mut st, &cfg).unwrap();
        }
        assert_eq!(theta, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // With zero moments, m_hat = g and v_hat = g^2, so the first update is
        // lr * g / (|g| + eps) = lr * sign(g) up to eps rounding.
        let cfg = TrainConfig::default();
        let mut theta = vec![1.0, -2.0, 0.5];
        let grads = [0.7, -0.02, 3.0];
        let mut st = AdamState::new(3);
        adam_step(&mut theta, &grads, &mut st, &cfg).unwrap();
        let expect = [1.0 - cfg.lr, -2.0 + cfg.lr, 0.5 - cfg.lr];
        for (got, want) in theta.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut theta: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut st = AdamState::new(16);
            for _ in 0..50 {
                let g: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() - 0.5).collect();
                adam_step(&mut theta, &g, &mut st, &cfg).unwrap();
            }
            theta
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mismatched_lengths_error() {
        let cfg = TrainConfig::default();
        let mut theta = vec![0.0; 3];
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut theta, &[0.0; 2], &mut st, &cfg).is_err());
        let mut st2 = AdamState::new(2);
        assert!(adam_step(&mut theta, &[0.0; 3], &mut st2, &cfg).is_err());
    }
}
