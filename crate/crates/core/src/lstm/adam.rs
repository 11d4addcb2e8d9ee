use serde::{Deserialize, Serialize};

/// First and second moment estimates, one slot per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected update in place. `step` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &AdamConfig, step: u64) {
    assert!(step >= 1, "adam step index starts at 1");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let c1 = 1.0 - config.beta1.powf(step as f64);
    let c2 = 1.0 - config.beta2.powf(step as f64);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_noop() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default(), 1);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -3.0, 1e-3], &mut s, &cfg, 1);
        for (got, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((got - sign * cfg.learning_rate).abs() < 1e-7 * cfg.learning_rate.max(1.0), "{got}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2);
            for t in 1..=5 {
                adam_step(&mut p, &[0.2 * t as f64, -0.1], &mut s, &cfg, t);
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
