use serde::{Deserialize, Serialize};

use super::MlpNetwork;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// One bias-corrected Adam update. A gradient with any non-finite entry is
/// rejected and leaves both the network and the moments untouched.
pub fn adam_step(net: &mut MlpNetwork, grad: &[f64], state: &mut AdamState) -> Result<()> {
    let params = net.params_mut();
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            context: "adam gradient",
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MlpNetwork {
        let mut net = MlpNetwork::zeros(2, &[]);
        net.params_mut().copy_from_slice(&[1.0, -1.0, 0.5]);
        net
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = tiny();
        let mut st = AdamState::new(AdamConfig::default(), 3);
        adam_step(&mut net, &[2.0, -0.5, 1e-3], &mut st).unwrap();
        // m̂ = g and v̂ = g², so each step is lr * g / (|g| + eps).
        let expect = [1.0 - 1e-3 * 2.0 / (2.0 + 1e-8), -1.0 + 1e-3 * 0.5 / (0.5 + 1e-8), 0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8)];
        for (p, e) in net.params().iter().zip(expect) {
            assert!((p - e).abs() < 1e-14, "{p} vs {e}");
        }
    }

    #[test]
    fn zero_gradient_from_fresh_state() {
        let mut net = tiny();
        let mut st = AdamState::new(AdamConfig::default(), 3);
        adam_step(&mut net, &[0.0; 3], &mut st).unwrap();
        assert_eq!(net.params(), &[1.0, -1.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn moments_decay_on_zero_gradient() {
        let mut net = tiny();
        let mut st = AdamState::new(AdamConfig::default(), 3);
        adam_step(&mut net, &[1.0, 1.0, 1.0], &mut st).unwrap();
        let (m0, v0) = (st.moments().0[0], st.moments().1[0]);
        adam_step(&mut net, &[0.0; 3], &mut st).unwrap();
        assert!((st.moments().0[0] - 0.9 * m0).abs() < 1e-15);
        assert!((st.moments().1[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = tiny();
        let mut st = AdamState::new(AdamConfig::default(), 3);
        let err = adam_step(&mut net, &[f64::NAN, 0.0, 0.0], &mut st).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(net.params(), &[1.0, -1.0, 0.5]);
        assert_eq!(st.step, 0);
    }
}
