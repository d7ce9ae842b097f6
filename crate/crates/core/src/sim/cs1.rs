//! Fed-batch photoproduction of phycocyanin by *Arthrospira platensis*.
//!
//! States are biomass `c_x` (g/L), nitrate `c_N` (mg/L) and product `c_q`
//! (mg/L); controls are light intensity `I` (µmol/m²/s) and nitrate inflow
//! `F_N` (mg/L/h). Growth and nitrate uptake follow Monod kinetics with light
//! inhibition:
//!
//! ```text
//! dc_x/dt = u_m I/(I + k_s + I²/k_i) c_x c_N/(c_N + K_N) - u_d c_x
//! dc_N/dt = -Y_NX u_m I/(I + k_s + I²/k_i) c_x c_N/(c_N + K_N) + F_N
//! dc_q/dt = k_m I/(I + k_sq + I²/k_iq) c_x - k_d c_q/(c_N + K_Nq)
//! ```
//!
//! The light constants `k_s`, `k_i` and the nitrate half-saturation `K_N` are
//! drawn per episode from Gaussians whose variance is a fixed fraction of the
//! mean. The remaining kinetic constants are fixed at their nominal values.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{draw_nonnegative, rk4_step, Environment, EnvironmentSpec, StateVector, UncertainParams};
use crate::error::{Error, Result};

/// Parameters of the photoproduction model. Defaults are the nominal values
/// of the kinetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotoproductionConfig {
    /// Maximum specific growth rate `u_m` (1/h).
    pub u_m: f64,
    /// Specific decay rate `u_d` (1/h).
    pub u_d: f64,
    /// Nitrate yield `Y_{N/X}` (mg/g).
    pub y_nx: f64,
    /// Product formation constant `k_m` (mg/g/h).
    pub k_m: f64,
    /// Product degradation constant `k_d` (mg/L/h).
    pub k_d: f64,
    pub k_sq: f64,
    pub k_iq: f64,
    /// Product degradation half-saturation `K_Nq` (mg/L).
    pub k_nq: f64,
    pub k_s_mean: f64,
    pub k_i_mean: f64,
    /// Mean of the nitrate half-saturation `K_N` (mg/L).
    pub k_n_mean: f64,
    /// Parameter variance as a fraction of the parameter mean.
    pub param_variance_fraction: f64,
    /// Mean of `[c_x0, c_N0]`.
    pub initial_mean: [f64; 2],
    /// Variance of `[c_x0, c_N0]`.
    pub initial_variance: [f64; 2],
    pub horizon: usize,
    /// Total batch duration (h).
    pub batch_time: f64,
    pub substeps: usize,
    pub light_bounds: [f64; 2],
    pub feed_bounds: [f64; 2],
    /// Upper limit on `c_N` (mg/L).
    pub nitrate_limit: f64,
    /// Upper limit on `c_q / c_x`.
    pub ratio_limit: f64,
    pub constraint_scales: [f64; 2],
    /// When false the initial state and parameters sit at their means.
    pub stochastic: bool,
    pub disturbance_std: Vec<f64>,
}

impl Default for PhotoproductionConfig {
    fn default() -> Self {
        Self {
            u_m: 0.0572,
            u_d: 0.0,
            y_nx: 504.5,
            k_m: 0.00016,
            k_d: 0.281,
            k_sq: 23.51,
            k_iq: 800.0,
            k_nq: 16.89,
            k_s_mean: 178.9,
            k_i_mean: 447.1,
            k_n_mean: 393.1,
            param_variance_fraction: 0.1,
            initial_mean: [1.0, 150.0],
            initial_variance: [1e-3, 22.5],
            horizon: 12,
            batch_time: 240.0,
            substeps: 20,
            light_bounds: [120.0, 400.0],
            feed_bounds: [0.0, 40.0],
            nitrate_limit: 800.0,
            ratio_limit: 0.011,
            constraint_scales: [800.0, 0.1],
            stochastic: true,
            disturbance_std: vec![0.0; 3],
        }
    }
}

/// Photoproduction environment (three states, two controls, two constraints).
#[derive(Debug, Clone)]
pub struct Photoproduction {
    config: PhotoproductionConfig,
    spec: EnvironmentSpec,
}

impl Photoproduction {
    pub fn new(config: PhotoproductionConfig) -> Result<Self> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let spec = EnvironmentSpec {
            id: "cs1".into(),
            state_names: names(&["c_x", "c_N", "c_q"]),
            control_names: names(&["I", "F_N"]),
            constraint_names: names(&["nitrate", "product_ratio"]),
            horizon: config.horizon,
            sampling_time: config.batch_time / config.horizon.max(1) as f64,
            control_lo: vec![config.light_bounds[0], config.feed_bounds[0]],
            control_hi: vec![config.light_bounds[1], config.feed_bounds[1]],
            constraint_scales: config.constraint_scales.to_vec(),
            disturbance_std: config.disturbance_std.clone(),
        };
        spec.validate()?;
        if config.substeps == 0 {
            return Err(Error::InvalidArgument("cs1: substeps must be >= 1".into()));
        }
        Ok(Self { config, spec })
    }

    pub fn config(&self) -> &PhotoproductionConfig {
        &self.config
    }

    /// Right-hand side of the mass balances. `params` is `[k_s, k_i, K_N]`.
    pub fn derivative(&self, state: &[f64], control: &[f64], params: &[f64], rate: &mut [f64]) -> Result<()> {
        let c = &self.config;
        let (cx, cn, cq) = (state[0], state[1], state[2]);
        let (light, feed) = (control[0], control[1]);
        let (k_s, k_i, k_n) = (params[0], params[1], params[2]);

        let monod_den = cn + k_n;
        let product_den = cn + c.k_nq;
        if monod_den.abs() < 1e-12 || product_den.abs() < 1e-12 {
            return Err(Error::DegenerateState(format!(
                "c_N + K_N = {monod_den}, c_N + K_Nq = {product_den}"
            )));
        }
        let light_growth = light / (light + k_s + light * light / k_i);
        let growth = c.u_m * light_growth * cx * cn / monod_den;
        let light_product = light / (light + c.k_sq + light * light / c.k_iq);

        rate[0] = growth - c.u_d * cx;
        rate[1] = -c.y_nx * growth + feed;
        rate[2] = c.k_m * light_product * cx - c.k_d * cq / product_den;
        Ok(())
    }

    pub fn nominal_params(&self) -> Vec<f64> {
        vec![self.config.k_s_mean, self.config.k_i_mean, self.config.k_n_mean]
    }
}

impl Environment for Photoproduction {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> (StateVector, UncertainParams) {
        if !self.config.stochastic {
            return self.nominal_initial();
        }
        let c = &self.config;
        let mut clamped = 0;
        let cx = draw_nonnegative(c.initial_mean[0], c.initial_variance[0], rng, &mut clamped);
        let cn = draw_nonnegative(c.initial_mean[1], c.initial_variance[1], rng, &mut clamped);
        let values = self
            .nominal_params()
            .into_iter()
            .map(|mean| draw_nonnegative(mean, c.param_variance_fraction * mean, rng, &mut clamped))
            .collect();
        (vec![cx, cn, 0.0], UncertainParams { values, clamped })
    }

    fn nominal_initial(&self) -> (StateVector, UncertainParams) {
        let m = self.config.initial_mean;
        (
            vec![m[0], m[1], 0.0],
            UncertainParams {
                values: self.nominal_params(),
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
            state[1] - self.config.nitrate_limit,
            state[2] - self.config.ratio_limit * state[0],
        ]
    }

    fn reward(&self, t: usize, _state: &[f64], _control: &[f64], next: &[f64]) -> f64 {
        if t + 1 == self.spec.horizon {
            next[2]
        } else {
            0.0
        }
    }
}
