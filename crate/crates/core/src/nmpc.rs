//! Nominal shrinking-horizon NMPC baseline.
//!
//! At every step the remaining control sequence `u_t .. u_{t_f - 1}` is
//! optimized on the deterministic model with parameters at their means, and
//! only the first control is applied. Constraints enter as the same soft
//! penalty used by the learned policy (or as hard rejection).

use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::{evolve, EsConfig};
use crate::sim::{ControlVector, Environment, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub es: EsConfig,
    /// `C_j = penalty_scale / constraint_scale_j`.
    pub penalty_scale: f64,
    /// Reject any candidate violating a predicted constraint instead of
    /// penalizing it.
    pub hard_constraints: bool,
    /// Seed each solve with the tail of the previous solution.
    pub warm_start: bool,
    /// Model parameters; `None` uses the environment's nominal values.
    pub parameters: Option<Vec<f64>>,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            es: EsConfig {
                population: 60,
                parents: 12,
                generations: 60,
                ..EsConfig::default()
            },
            penalty_scale: 1e6,
            hard_constraints: false,
            warm_start: true,
            parameters: None,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_scale > 0.0) {
            return Err(Error::Config("nmpc penalty_scale must be positive".into()));
        }
        self.es.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    /// Optimized controls for steps `t .. t_f - 1`.
    pub controls: Vec<ControlVector>,
    pub fitness: f64,
    /// Predicted return of the plan on the nominal model.
    pub predicted_return: f64,
    /// Whether the plan keeps every predicted constraint `<= 0`.
    pub feasible: bool,
}

/// Predicted return and penalized fitness of a flattened control plan.
fn evaluate_plan(env: &dyn Environment, params: &[f64], x: &[f64], t: usize, plan: &[f64], penalties: &[f64], hard: bool) -> (f64, f64, bool) {
    let spec = env.spec();
    let n_u = spec.n_u();
    let mut state = x.to_vec();
    let mut ret = 0.0;
    let mut penalty = 0.0;
    for (k, u) in plan.chunks(n_u).enumerate() {
        let step = t + k;
        let next = match env.transition(&state, u, params, step) {
            Ok(n) => n,
            Err(_) => return (f64::NEG_INFINITY, f64::NEG_INFINITY, false),
        };
        ret += env.reward(step, &state, u, &next);
        for (g, c) in env.constraints(&next).iter().zip(penalties) {
            penalty += c * (-g).min(0.0);
        }
        state = next;
    }
    let feasible = penalty == 0.0;
    let fitness = if hard && !feasible { f64::NEG_INFINITY } else { ret + penalty };
    (fitness, ret, feasible)
}

/// Optimizes the remaining horizon from `(x, t)`.
pub fn nmpc_solve<R: Rng + ?Sized>(
    env: &dyn Environment,
    x: &[f64],
    t: usize,
    config: &NmpcConfig,
    warm: Option<&[ControlVector]>,
    rng: &mut R,
) -> Result<NmpcSolution> {
    let spec = env.spec();
    if t >= spec.horizon {
        return Err(Error::InvalidArgument(format!("nmpc_solve at t = {t} beyond horizon {}", spec.horizon)));
    }
    let params = match &config.parameters {
        Some(p) => p.clone(),
        None => env.nominal_initial().1.values,
    };
    let penalties: Vec<f64> = spec.constraint_scales.iter().map(|s| config.penalty_scale / s).collect();
    let steps = spec.horizon - t;
    let lo: Vec<f64> = spec.control_lo.iter().copied().cycle().take(steps * spec.n_u()).collect();
    let hi: Vec<f64> = spec.control_hi.iter().copied().cycle().take(steps * spec.n_u()).collect();
    let mut seeds = Vec::new();
    if let Some(w) = warm {
        // Pad a short warm start by repeating its last control.
        if let Some(last) = w.last() {
            let mut plan: Vec<f64> = w.iter().take(steps).flatten().copied().collect();
            while plan.len() < steps * spec.n_u() {
                plan.extend_from_slice(last);
            }
            seeds.push(plan);
        }
    }
    let result = evolve(&config.es, &lo, &hi, &seeds, rng, |cands| {
        Ok(cands
            .iter()
            .map(|c| evaluate_plan(env, &params, x, t, c, &penalties, config.hard_constraints).0)
            .collect())
    })?;
    let (fitness, predicted_return, feasible) = evaluate_plan(env, &params, x, t, &result.best, &penalties, config.hard_constraints);
    if !feasible {
        log::debug!("nmpc t = {t}: best plan violates predicted constraints (fitness {fitness:.4e})");
    }
    Ok(NmpcSolution {
        controls: result.best.chunks(spec.n_u()).map(<[f64]>::to_vec).collect(),
        fitness,
        predicted_return,
        feasible,
    })
}

/// Receding-horizon policy around [`nmpc_solve`]. Records the wall time of
/// every solve.
pub struct NmpcPolicy<'a> {
    pub env: &'a dyn Environment,
    pub config: NmpcConfig,
    plan: Option<Vec<ControlVector>>,
    pub solve_times: Vec<f64>,
}

impl<'a> NmpcPolicy<'a> {
    pub fn new(env: &'a dyn Environment, config: NmpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            env,
            config,
            plan: None,
            solve_times: Vec::new(),
        })
    }
}

impl Policy for NmpcPolicy<'_> {
    fn act(&mut self, state: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<ControlVector> {
        if t == 0 {
            self.plan = None;
        }
        let warm = if self.config.warm_start {
            self.plan.as_ref().map(|p| p[1.min(p.len())..].to_vec())
        } else {
            None
        };
        let start = Instant::now();
        let sol = nmpc_solve(self.env, state, t, &self.config, warm.as_deref().filter(|w| !w.is_empty()), rng)?;
        self.solve_times.push(start.elapsed().as_secs_f64());
        let first = sol.controls[0].clone();
        self.plan = Some(sol.controls);
        Ok(first)
    }
}
