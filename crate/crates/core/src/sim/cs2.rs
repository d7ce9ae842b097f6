//! Semi-batch reactor with the series reaction `2A -> B -> 3C`.
//!
//! This is a self-contained stand-in model with the usual state, control,
//! constraint and uncertainty structure. States are `c_A`, `c_B`, `c_C`
//! (mol/L), reactor temperature `T` (K) and volume `Vol` (L). Controls are the
//! feed flowrate `F` (L/h) of pure A at concentration `c_A,in` and the jacket
//! temperature `T_0` (K). Both reactions are first order:
//!
//! ```text
//! r_1 = k_1(T) c_A,   k_1(T) = k_1,ref exp(θ_1 E_u (1/T_ref - 1/T))
//! r_2 = k_2(T) c_B,   k_2(T) = A_2 exp(E_2 (1/T_ref - 1/T))
//!
//! dc_A/dt = -r_1            + F/Vol (c_A,in - c_A)
//! dc_B/dt = r_1 / 2 - r_2   - F/Vol c_B
//! dc_C/dt = 3 r_2           - F/Vol c_C
//! dT/dt   = ΔT_1 r_1 - ΔT_2 r_2 + θ_4 κ / Vol (T_0 - T)
//! dVol/dt = F
//! ```
//!
//! Reaction 1 is exothermic (`ΔT_1 > 0` heats), reaction 2 endothermic. The
//! feed enters at reactor temperature. Uncertain parameters: `θ_1` scales the
//! activation energy of reaction 1, `A_2` is the reaction-2 rate constant at
//! the reference temperature and `θ_4` is the jacket heat-transfer
//! coefficient.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{draw_nonnegative, rk4_step, Environment, EnvironmentSpec, StateVector, UncertainParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiBatchReactorConfig {
    /// Means of `[θ_1, A_2, θ_4]`.
    pub param_mean: [f64; 3],
    /// Variances of `[θ_1, A_2, θ_4]`.
    pub param_variance: [f64; 3],
    /// Reaction-1 rate constant at `t_ref` (1/h).
    pub k1_ref: f64,
    /// Activation temperature unit multiplied by `θ_1` (K).
    pub activation_unit: f64,
    /// Reaction-2 activation temperature `E_2` (K).
    pub e2: f64,
    pub t_ref: f64,
    /// Adiabatic temperature rise per mol/L of A converted (K L/mol).
    pub heat_1: f64,
    /// Temperature drop per mol/L of B converted (K L/mol).
    pub heat_2: f64,
    /// Jacket coupling `κ`: the jacket rate is `θ_4 κ / Vol` (1/h).
    pub jacket_gain: f64,
    /// Feed concentration of A (mol/L).
    pub feed_concentration: f64,
    /// Initial `[c_A, c_B, c_C, T, Vol]`.
    pub initial_state: [f64; 5],
    pub horizon: usize,
    /// Total batch duration (h).
    pub batch_time: f64,
    pub substeps: usize,
    pub feed_bounds: [f64; 2],
    pub jacket_bounds: [f64; 2],
    pub temperature_limit: f64,
    pub volume_limit: f64,
    pub constraint_scales: [f64; 2],
    pub stochastic: bool,
    pub disturbance_std: Vec<f64>,
}

impl Default for SemiBatchReactorConfig {
    fn default() -> Self {
        Self {
            param_mean: [4.0, 0.08, 100.0],
            param_variance: [0.16, 6.4e-5, 100.0],
            k1_ref: 1.0,
            activation_unit: 1000.0,
            e2: 5000.0,
            t_ref: 350.0,
            heat_1: 40.0,
            heat_2: 5.0,
            jacket_gain: 2.0,
            feed_concentration: 4.0,
            initial_state: [0.0, 0.0, 0.0, 290.0, 100.0],
            horizon: 10,
            batch_time: 4.0,
            substeps: 20,
            feed_bounds: [0.0, 250.0],
            jacket_bounds: [280.0, 440.0],
            temperature_limit: 420.0,
            volume_limit: 800.0,
            constraint_scales: [20.0, 100.0],
            stochastic: true,
            disturbance_std: vec![0.0; 5],
        }
    }
}

/// Semi-batch reactor environment (five states, two controls, two constraints).
#[derive(Debug, Clone)]
pub struct SemiBatchReactor {
    config: SemiBatchReactorConfig,
    spec: EnvironmentSpec,
}

impl SemiBatchReactor {
    pub fn new(config: SemiBatchReactorConfig) -> Result<Self> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let spec = EnvironmentSpec {
            id: "cs2".into(),
            state_names: names(&["c_A", "c_B", "c_C", "T", "Vol"]),
            control_names: names(&["F", "T_0"]),
            constraint_names: names(&["temperature", "volume"]),
            horizon: config.horizon,
            sampling_time: config.batch_time / config.horizon.max(1) as f64,
            control_lo: vec![config.feed_bounds[0], config.jacket_bounds[0]],
            control_hi: vec![config.feed_bounds[1], config.jacket_bounds[1]],
            constraint_scales: config.constraint_scales.to_vec(),
            disturbance_std: config.disturbance_std.clone(),
        };
        spec.validate()?;
        if config.substeps == 0 {
            return Err(Error::InvalidArgument("cs2: substeps must be >= 1".into()));
        }
        Ok(Self { config, spec })
    }

    pub fn config(&self) -> &SemiBatchReactorConfig {
        &self.config
    }

    /// Right-hand side of the balances. `params` is `[θ_1, A_2, θ_4]`.
    pub fn derivative(&self, state: &[f64], control: &[f64], params: &[f64], rate: &mut [f64]) -> Result<()> {
        let c = &self.config;
        let (ca, cb, cc, temp, vol) = (state[0], state[1], state[2], state[3], state[4]);
        let (feed, jacket) = (control[0], control[1]);
        let (theta1, a2, theta4) = (params[0], params[1], params[2]);
        if !(vol > 0.0) {
            return Err(Error::DegenerateState(format!("reactor volume {vol} <= 0")));
        }
        if !(temp > 0.0) {
            return Err(Error::DegenerateState(format!("reactor temperature {temp} <= 0")));
        }

        let arrhenius = 1.0 / c.t_ref - 1.0 / temp;
        let k1 = c.k1_ref * (theta1 * c.activation_unit * arrhenius).exp();
        let k2 = a2 * (c.e2 * arrhenius).exp();
        let r1 = k1 * ca;
        let r2 = k2 * cb;
        let dilution = feed / vol;

        rate[0] = -r1 + dilution * (c.feed_concentration - ca);
        rate[1] = 0.5 * r1 - r2 - dilution * cb;
        rate[2] = 3.0 * r2 - dilution * cc;
        rate[3] = c.heat_1 * r1 - c.heat_2 * r2 + theta4 * c.jacket_gain / vol * (jacket - temp);
        rate[4] = feed;
        Ok(())
    }
}

impl Environment for SemiBatchReactor {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> (StateVector, UncertainParams) {
        if !self.config.stochastic {
            return self.nominal_initial();
        }
        let mut clamped = 0;
        let values = self
            .config
            .param_mean
            .iter()
            .zip(&self.config.param_variance)
            .map(|(m, v)| draw_nonnegative(*m, *v, rng, &mut clamped))
            .collect();
        (self.config.initial_state.to_vec(), UncertainParams { values, clamped })
    }

    fn nominal_initial(&self) -> (StateVector, UncertainParams) {
        (
            self.config.initial_state.to_vec(),
            UncertainParams {
                values: self.config.param_mean.to_vec(),
                clamped: 0,
            },
        )
    }

    fn transition(&self, state: &[f64], control: &[f64], params: &[f64], t: usize) -> Result<StateVector> {
        let dt = self.spec.sampling_time;
        rk4_step(
            |x, dx| self.derivative(x, control, params, dx),
            state,
            dt,
            self.config.substeps,
            t as f64 * dt,
        )
    }

    fn constraints(&self, state: &[f64]) -> Vec<f64> {
        vec![
            state[3] - self.config.temperature_limit,
            state[4] - self.config.volume_limit,
        ]
    }

    fn reward(&self, t: usize, _state: &[f64], _control: &[f64], next: &[f64]) -> f64 {
        if t + 1 == self.spec.horizon {
            next[2] * next[4]
        } else {
            0.0
        }
    }
}
