//! Stochastic batch-process environments and episode rollouts.
//!
//! An [`Environment`] owns the process model: its dimensions, control box,
//! initial-state and parameter distributions, transition over one sampling
//! interval, path constraints `g_j(x) <= 0` and rewards. [`rollout`] runs one
//! finite-horizon episode under a [`Policy`] and records a [`Trajectory`].

mod cs1;
mod cs2;
mod integrate;
pub mod synthetic;

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use cs1::{Photoproduction, PhotoproductionConfig};
pub use cs2::{SemiBatchReactor, SemiBatchReactorConfig};
pub use integrate::rk4_step;
pub use synthetic::{Bandit, BanditConfig, BackoffProbe, BackoffProbeConfig};

use crate::error::{Error, Result};

/// Process state `x_t`, in the environment's physical units.
pub type StateVector = Vec<f64>;
/// Manipulated inputs `u_t`, inside the environment's control box.
pub type ControlVector = Vec<f64>;

/// One per-episode draw of the uncertain model parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertainParams {
    pub values: Vec<f64>,
    /// Number of Gaussian draws (parameters and initial state) clamped at zero.
    pub clamped: u32,
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub id: String,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub constraint_names: Vec<String>,
    /// Number of control intervals `t_f`.
    pub horizon: usize,
    /// Length of one control interval.
    pub sampling_time: f64,
    pub control_lo: Vec<f64>,
    pub control_hi: Vec<f64>,
    /// Characteristic magnitude of each constraint, used for penalty weights,
    /// tuning step limits and tolerances.
    pub constraint_scales: Vec<f64>,
    /// Standard deviation of an additive per-step state disturbance. All zero
    /// means no disturbance and no random draws during the episode.
    pub disturbance_std: Vec<f64>,
}

impl EnvironmentSpec {
    pub fn n_x(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_u(&self) -> usize {
        self.control_names.len()
    }

    pub fn n_g(&self) -> usize {
        self.constraint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("environment {}: {msg}", self.id)));
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if !(self.sampling_time > 0.0) {
            return bad("sampling time must be > 0".into());
        }
        if self.control_lo.len() != self.n_u() || self.control_hi.len() != self.n_u() {
            return bad("control bounds do not match control dimension".into());
        }
        if self.control_lo.iter().zip(&self.control_hi).any(|(lo, hi)| !(lo < hi)) {
            return bad("control bounds need lo < hi".into());
        }
        if self.constraint_scales.len() != self.n_g() || self.constraint_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("one positive scale per constraint required".into());
        }
        if self.disturbance_std.len() != self.n_x() || self.disturbance_std.iter().any(|s| !(*s >= 0.0)) {
            return bad("one non-negative disturbance std per state required".into());
        }
        Ok(())
    }

    pub fn control_in_bounds(&self, u: &[f64]) -> bool {
        u.len() == self.n_u()
            && u.iter()
                .zip(self.control_lo.iter().zip(&self.control_hi))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn control_range(&self) -> Vec<f64> {
        self.control_lo.iter().zip(&self.control_hi).map(|(lo, hi)| hi - lo).collect()
    }
}

/// A stochastic finite-horizon process model.
///
/// Implementations are immutable; `rollout` may be called concurrently from
/// many threads, each with its own RNG stream.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvironmentSpec;

    /// Draws the initial state `x_0` and the episode's parameter vector.
    fn sample_initial(&self, rng: &mut dyn RngCore) -> (StateVector, UncertainParams);

    /// Distribution means of the initial state and the parameters; the model
    /// a nominal controller plans with.
    fn nominal_initial(&self) -> (StateVector, UncertainParams);

    /// Advances the state over sampling interval `t`.
    fn transition(&self, state: &[f64], control: &[f64], params: &[f64], t: usize) -> Result<StateVector>;

    /// Path constraint values `g_j(x)`; feasible iff every entry is `<= 0`.
    fn constraints(&self, state: &[f64]) -> Vec<f64>;

    /// Reward observed after applying `control` over interval `t`.
    fn reward(&self, t: usize, state: &[f64], control: &[f64], next: &[f64]) -> f64;
}

/// Maps the current state and time index to a control.
pub trait Policy {
    fn act(&mut self, state: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<ControlVector>;
}

impl<F> Policy for F
where
    F: FnMut(&[f64], usize) -> ControlVector,
{
    fn act(&mut self, state: &[f64], t: usize, _rng: &mut dyn RngCore) -> Result<ControlVector> {
        Ok(self(state, t))
    }
}

/// Time-indexed record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `t_f + 1` states, starting at the sampled initial state.
    pub states: Vec<StateVector>,
    /// `t_f` controls.
    pub controls: Vec<ControlVector>,
    /// `t_f` rewards; `rewards[t]` follows `controls[t]`.
    pub rewards: Vec<f64>,
    /// `(t_f + 1) x n_g` constraint values `g_j(states[t])`.
    pub constraint_values: Vec<Vec<f64>>,
    pub params: UncertainParams,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Undiscounted episode return.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Largest value of each constraint over the whole episode.
    pub fn worst_violations(&self) -> Vec<f64> {
        let n_g = self.constraint_values.first().map_or(0, Vec::len);
        (0..n_g)
            .map(|j| self.constraint_values.iter().map(|g| g[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// True when every constraint holds at every time step.
    pub fn feasible(&self) -> bool {
        self.constraint_values.iter().flatten().all(|g| *g <= 0.0)
    }

    /// Writes one row per time step: time, states, controls, reward, g_1..g_ng.
    /// The final row has empty control and reward cells.
    pub fn write_csv<W: Write>(&self, spec: &EnvironmentSpec, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["time".to_string()];
        header.extend(spec.state_names.iter().cloned());
        header.extend(spec.control_names.iter().cloned());
        header.push("reward".into());
        header.extend((1..=spec.n_g()).map(|j| format!("g_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, state) in self.states.iter().enumerate() {
            let mut row = vec![(t as f64 * spec.sampling_time).to_string()];
            row.extend(state.iter().map(f64::to_string));
            match self.controls.get(t) {
                Some(u) => {
                    row.extend(u.iter().map(f64::to_string));
                    row.push(self.rewards[t].to_string());
                }
                None => row.extend(std::iter::repeat(String::new()).take(spec.n_u() + 1)),
            }
            row.extend(self.constraint_values[t].iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, spec: &EnvironmentSpec, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(spec, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Runs one episode: draws the initial state and parameters once, then applies
/// the policy for `t_f` sampling intervals.
pub fn rollout<E, P>(env: &E, policy: &mut P, rng: &mut dyn RngCore) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let spec = env.spec();
    let (x0, params) = env.sample_initial(rng);
    if params.clamped > 0 {
        log::debug!("{}: {} Gaussian draw(s) clamped at zero", spec.id, params.clamped);
    }
    let horizon = spec.horizon;
    let disturbed = spec.disturbance_std.iter().any(|s| *s > 0.0);

    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut constraint_values = Vec::with_capacity(horizon + 1);
    constraint_values.push(env.constraints(&x0));
    states.push(x0);

    for t in 0..horizon {
        let x = &states[t];
        let u = policy.act(x, t, rng)?;
        if !spec.control_in_bounds(&u) {
            return Err(Error::InvalidArgument(format!("policy returned out-of-box control {u:?} at t = {t}")));
        }
        let mut next = env.transition(x, &u, &params.values, t)?;
        if disturbed {
            for (v, sd) in next.iter_mut().zip(&spec.disturbance_std) {
                if *sd > 0.0 {
                    *v += Normal::new(0.0, *sd).expect("checked std").sample(rng);
                }
            }
        }
        rewards.push(env.reward(t, x, &u, &next));
        constraint_values.push(env.constraints(&next));
        controls.push(u);
        states.push(next);
    }

    Ok(Trajectory {
        states,
        controls,
        rewards,
        constraint_values,
        params,
    })
}

/// Environment selection and parameters, as read from an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum EnvironmentConfig {
    Cs1(PhotoproductionConfig),
    Cs2(SemiBatchReactorConfig),
    Synthetic(BackoffProbeConfig),
    Bandit(BanditConfig),
}

impl EnvironmentConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvironmentConfig::Cs1(_) => "cs1",
            EnvironmentConfig::Cs2(_) => "cs2",
            EnvironmentConfig::Synthetic(_) => "synthetic",
            EnvironmentConfig::Bandit(_) => "bandit",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvironmentConfig::Cs1(c) => Box::new(Photoproduction::new(c.clone())?),
            EnvironmentConfig::Cs2(c) => Box::new(SemiBatchReactor::new(c.clone())?),
            EnvironmentConfig::Synthetic(c) => Box::new(BackoffProbe::new(c.clone())?),
            EnvironmentConfig::Bandit(c) => Box::new(Bandit::new(c.clone())?),
        })
    }
}

/// Draws `N(mean, variance)` and clamps negative values at zero, counting clamps.
pub(crate) fn draw_nonnegative(mean: f64, variance: f64, rng: &mut dyn RngCore, clamped: &mut u32) -> f64 {
    let v = if variance > 0.0 {
        Normal::new(mean, variance.sqrt()).expect("finite variance").sample(rng)
    } else {
        mean
    };
    if v < 0.0 {
        *clamped += 1;
        0.0
    } else {
        v
    }
}
