//! Adam optimizer over flat parameter vectors.

use crate::error::{Error, Result};

/// Piecewise-constant learning-rate schedule: the base rate is multiplied by
/// `decay` at each milestone step.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    base: f64,
    decay: f64,
    milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            decay: 1.0,
            milestones: Vec::new(),
        }
    }

    /// Step decay by `decay` at the given fractions of `total_steps`.
    pub fn step_decay(base: f64, decay: f64, fractions: &[f64], total_steps: usize) -> Self {
        let milestones = fractions
            .iter()
            .map(|f| (f * total_steps as f64).floor() as usize)
            .collect();
        LrSchedule {
            base,
            decay,
            milestones,
        }
    }

    pub fn rate_at(&self, step: usize) -> f64 {
        let passed = self.milestones.iter().filter(|m| step >= **m).count();
        self.base * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
}

impl AdamHyper {
    pub fn with_schedule(schedule: LrSchedule) -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule,
        }
    }
}

/// First/second moment accumulators for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_len: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }
}

/// One Adam update with bias correction. The learning rate is read from the
/// schedule at the state's current step counter.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam shapes disagree: state {}, params {}, grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    let lr = state.hyper.schedule.rate_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.hyper.beta1, state.hyper.beta2, state.hyper.epsilon);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let hyper = AdamHyper::with_schedule(LrSchedule::constant(0.01));
        let mut state = AdamState::new(3, hyper);
        let mut params = vec![1.0, -2.0, 0.5];
        adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn moments_decay_after_activity() {
        let hyper = AdamHyper::with_schedule(LrSchedule::constant(0.01));
        let mut state = AdamState::new(1, hyper);
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[1.0]).unwrap();
        let m_before = state.first_moments()[0];
        adam_step(&mut state, &mut params, &[0.0]).unwrap();
        let m_after = state.first_moments()[0];
        assert_relative_eq!(m_after, 0.9 * m_before, epsilon = 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate_in_sign_direction() {
        let lr = 0.01;
        let hyper = AdamHyper::with_schedule(LrSchedule::constant(lr));
        let mut state = AdamState::new(2, hyper);
        let mut params = vec![0.0, 0.0];
        adam_step(&mut state, &mut params, &[3.0, -0.2]).unwrap();
        // m_hat = g, v_hat = g^2, so |step| = lr * |g| / (|g| + eps)
        assert_relative_eq!(params[0], -lr * 3.0 / (3.0 + 1e-8), epsilon = 1e-15);
        assert_relative_eq!(params[1], lr * 0.2 / (0.2 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let hyper = AdamHyper::with_schedule(LrSchedule::constant(0.01));
        let mut state = AdamState::new(3, hyper);
        let mut w = vec![1.0, -2.0, 0.5];
        let f0: f64 = w.iter().map(|x| x * x).sum();
        for _ in 0..500 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut state, &mut w, &g).unwrap();
        }
        let f1: f64 = w.iter().map(|x| x * x).sum();
        assert!(f1 < f0 / 100.0, "f went from {f0} to {f1}");
    }

    #[test]
    fn schedule_decays_at_milestones() {
        let s = LrSchedule::step_decay(5e-3, 0.2, &[0.6, 0.85], 1000);
        assert_relative_eq!(s.rate_at(0), 5e-3);
        assert_relative_eq!(s.rate_at(599), 5e-3);
        assert_relative_eq!(s.rate_at(600), 1e-3);
        assert_relative_eq!(s.rate_at(850), 2e-4, epsilon = 1e-18);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let hyper = AdamHyper::with_schedule(LrSchedule::constant(0.01));
        let mut state = AdamState::new(2, hyper);
        let mut params = vec![0.0, 0.0, 0.0];
        assert!(adam_step(&mut state, &mut params, &[1.0, 1.0, 1.0]).is_err());
    }
}
