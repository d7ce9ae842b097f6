//! Small environments with closed-form answers, used to validate the
//! learning, selection and tuning machinery.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Environment, EnvironmentSpec, StateVector, UncertainParams};
use crate::error::Result;

fn one_dim_spec(id: &str, lo: f64, hi: f64, scale: f64) -> EnvironmentSpec {
    EnvironmentSpec {
        id: id.into(),
        state_names: vec!["s".into()],
        control_names: vec!["u".into()],
        constraint_names: vec!["s_limit".into()],
        horizon: 1,
        sampling_time: 1.0,
        control_lo: vec![lo],
        control_hi: vec![hi],
        constraint_scales: vec![scale],
        disturbance_std: vec![0.0],
    }
}

/// Monotone backoff probe: one step, `s_1 = u + ξ` with `ξ ~ N(mean, std²)`,
/// constraint `g = s`, reward `u`.
///
/// A policy that maximizes `u` subject to the exact constraint model
/// `u + b <= 0` plays `u = -b`, so the episode is feasible iff `ξ <= b` and the
/// satisfaction probability is `Φ((b - mean) / std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackoffProbeConfig {
    pub mean: f64,
    pub std: f64,
    pub control_bounds: [f64; 2],
}

impl Default for BackoffProbeConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            control_bounds: [-5.0, 5.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackoffProbe {
    config: BackoffProbeConfig,
    spec: EnvironmentSpec,
}

impl BackoffProbe {
    pub fn new(config: BackoffProbeConfig) -> Result<Self> {
        let spec = one_dim_spec("synthetic", config.control_bounds[0], config.control_bounds[1], config.std.max(1e-9));
        spec.validate()?;
        Ok(Self { config, spec })
    }

    pub fn config(&self) -> &BackoffProbeConfig {
        &self.config
    }
}

impl Environment for BackoffProbe {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> (StateVector, UncertainParams) {
        let xi = if self.config.std > 0.0 {
            Normal::new(self.config.mean, self.config.std).expect("finite std").sample(rng)
        } else {
            self.config.mean
        };
        (vec![0.0], UncertainParams { values: vec![xi], clamped: 0 })
    }

    fn nominal_initial(&self) -> (StateVector, UncertainParams) {
        (vec![0.0], UncertainParams { values: vec![self.config.mean], clamped: 0 })
    }

    fn transition(&self, _state: &[f64], control: &[f64], params: &[f64], _t: usize) -> Result<StateVector> {
        Ok(vec![control[0] + params[0]])
    }

    fn constraints(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0]]
    }

    fn reward(&self, _t: usize, _state: &[f64], control: &[f64], _next: &[f64]) -> f64 {
        control[0]
    }
}

/// One-step constrained bandit: `s_1 = u + ξ`, reward `1 - (u - peak)²`,
/// constraint `g = s - limit`. The constrained optimum is `u = min(peak, limit)`
/// when `ξ` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub peak: f64,
    pub limit: f64,
    pub noise_std: f64,
    pub control_bounds: [f64; 2],
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            peak: 0.6,
            limit: 0.5,
            noise_std: 0.0,
            control_bounds: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bandit {
    config: BanditConfig,
    spec: EnvironmentSpec,
}

impl Bandit {
    pub fn new(config: BanditConfig) -> Result<Self> {
        let spec = one_dim_spec("bandit", config.control_bounds[0], config.control_bounds[1], 1.0);
        spec.validate()?;
        Ok(Self { config, spec })
    }

    pub fn reward_of(&self, u: f64) -> f64 {
        1.0 - (u - self.config.peak).powi(2)
    }
}

impl Environment for Bandit {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> (StateVector, UncertainParams) {
        let xi = if self.config.noise_std > 0.0 {
            Normal::new(0.0, self.config.noise_std).expect("finite std").sample(rng)
        } else {
            0.0
        };
        (vec![0.0], UncertainParams { values: vec![xi], clamped: 0 })
    }

    fn nominal_initial(&self) -> (StateVector, UncertainParams) {
        (vec![0.0], UncertainParams { values: vec![0.0], clamped: 0 })
    }

    fn transition(&self, _state: &[f64], control: &[f64], params: &[f64], _t: usize) -> Result<StateVector> {
        Ok(vec![control[0] + params[0]])
    }

    fn constraints(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0] - self.config.limit]
    }

    fn reward(&self, _t: usize, _state: &[f64], control: &[f64], _next: &[f64]) -> f64 {
        self.reward_of(control[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rollout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probe_feasible_iff_noise_below_backoff() {
        let env = BackoffProbe::new(BackoffProbeConfig::default()).unwrap();
        let b = 0.7;
        let mut policy = |_: &[f64], _: usize| vec![-b];
        for seed in 0..200 {
            let traj = rollout(&env, &mut policy, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let xi = traj.params.values[0];
            assert_eq!(traj.feasible(), xi <= b);
            assert_eq!(traj.total_reward(), -b);
        }
    }

    #[test]
    fn bandit_reward_peak() {
        let env = Bandit::new(BanditConfig::default()).unwrap();
        assert_eq!(env.reward_of(0.6), 1.0);
        assert!((env.reward_of(0.5) - 0.99).abs() < 1e-12);
        assert_eq!(env.constraints(&[0.5]), vec![0.0]);
    }
}
