//! Oracle-assisted constrained Q-learning.
//!
//! Each training iteration runs `N` ε-greedy episodes against a snapshot of
//! the networks, turns every finished episode into Monte Carlo return targets
//! for the Q-network and worst-future-constraint targets for the constraint
//! networks, takes minibatch Adam steps on every network, then decays ε and
//! the training backoffs geometrically.

mod bundle;
mod select;

pub use bundle::{g_features, q_features, BackoffVector, GreedyPolicy, PolicyBundle};
pub use select::{fitness, random_control, Selection, SubProblem, Surrogate};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::EsConfig;
use crate::memory::{extract_oracle_targets, extract_q_targets, Datapoint, OracleAlignment, RingBuffer};
use crate::nnet::{adam_step, AdamConfig, AdamState, MlpNetwork, RunningStats, DEFAULT_HUBER_DELTA};
use crate::sim::{rollout, ControlVector, Environment, Policy, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Training iterations `M`.
    pub iterations: usize,
    /// Episodes per iteration `N`.
    pub episodes_per_iteration: usize,
    pub epsilon0: f64,
    /// `D_1`: `ε <- D_1 ε` after every iteration.
    pub epsilon_decay: f64,
    /// `D_2`: `b <- D_2 b` after every iteration.
    pub backoff_decay: f64,
    /// Training backoffs at the first iteration. Empty selects the
    /// environment's preset (see [`default_training_backoffs`]).
    pub initial_backoffs: Vec<f64>,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub q_buffer: usize,
    pub g_buffer: usize,
    /// Q minibatch size `G`.
    pub q_batch: usize,
    /// Constraint minibatch sizes `H_j`; the last entry repeats for further
    /// constraints.
    pub g_batch: Vec<usize>,
    /// Adam steps per network per iteration.
    pub gradient_steps: usize,
    /// `C_j = penalty_scale / constraint_scale_j`.
    pub penalty_scale: f64,
    pub huber_delta: f64,
    pub adam: AdamConfig,
    pub es: EsConfig,
    pub oracle_alignment: OracleAlignment,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            episodes_per_iteration: 100,
            epsilon0: 0.99,
            epsilon_decay: 0.99,
            backoff_decay: 0.995,
            initial_backoffs: Vec::new(),
            gamma: 1.0,
            hidden: vec![200, 200],
            q_buffer: 3000,
            g_buffer: 30000,
            q_batch: 100,
            g_batch: vec![500, 1000],
            gradient_steps: 1,
            penalty_scale: 1e6,
            huber_delta: DEFAULT_HUBER_DELTA,
            adam: AdamConfig::default(),
            es: EsConfig::default(),
            oracle_alignment: OracleAlignment::Future,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) || !(self.backoff_decay > 0.0 && self.backoff_decay <= 1.0) {
            return bad(format!(
                "decay factors must lie in (0, 1], got epsilon_decay = {} and backoff_decay = {}",
                self.epsilon_decay, self.backoff_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return bad(format!("epsilon0 must lie in [0, 1], got {}", self.epsilon0));
        }
        if !(self.penalty_scale > 0.0) {
            return bad("penalty_scale must be positive".into());
        }
        if self.episodes_per_iteration == 0 || self.q_buffer == 0 || self.g_buffer == 0 || self.q_batch == 0 {
            return bad("episodes_per_iteration, buffer sizes and q_batch must be positive".into());
        }
        if self.g_batch.is_empty() || self.g_batch.contains(&0) {
            return bad("g_batch needs at least one positive minibatch size".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.huber_delta > 0.0) {
            return bad("gamma must lie in (0, 1] and huber_delta must be positive".into());
        }
        if self.initial_backoffs.iter().any(|b| !b.is_finite()) {
            return bad("initial_backoffs must be finite".into());
        }
        self.es.validate()
    }

    fn g_batch_for(&self, j: usize) -> usize {
        *self.g_batch.get(j).or(self.g_batch.last()).expect("validated non-empty")
    }
}

/// Training backoffs used when the config leaves them empty: relaxations of
/// `-500` (nitrate) and `-0.05` (product ratio) on the photoproduction batch,
/// `-10 %` of each bound on the reactor, zero elsewhere.
pub fn default_training_backoffs(env_id: &str, n_g: usize) -> Vec<f64> {
    match env_id {
        "cs1" => vec![-500.0, -0.05],
        "cs2" => vec![-42.0, -80.0],
        _ => vec![0.0; n_g],
    }
}

/// Exploration policy: a uniform random control with probability `epsilon`,
/// otherwise the constrained greedy selection with `backoffs`.
pub struct EpsilonGreedy<'a> {
    pub bundle: &'a PolicyBundle,
    pub backoffs: &'a [f64],
    pub epsilon: f64,
    pub es: &'a EsConfig,
}

impl EpsilonGreedy<'_> {
    pub fn choose<R: Rng + ?Sized>(&self, state: &[f64], t: usize, rng: &mut R) -> Result<ControlVector> {
        // ε = 0 draws nothing extra, so it reproduces the greedy stream exactly.
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            return Ok(random_control(&self.bundle.control_lo, &self.bundle.control_hi, rng));
        }
        Ok(self.bundle.sub_problem(self.backoffs).solve(state, t, self.es, rng)?.control)
    }
}

impl Policy for EpsilonGreedy<'_> {
    fn act(&mut self, state: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<ControlVector> {
        self.choose(state, t, rng)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epsilon: f64,
    /// Training backoffs used during this iteration's episodes.
    pub backoffs: Vec<f64>,
    pub q_loss: f64,
    pub g_losses: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    /// Fraction of this iteration's episodes violating any constraint.
    pub violation_rate: f64,
    pub failed_episodes: usize,
    pub q_buffer_len: usize,
    pub g_buffer_len: usize,
}

/// Networks, optimizer state and replay buffers of a training run.
pub struct Trainer<'e> {
    env: &'e dyn Environment,
    pub config: AgentConfig,
    pub bundle: PolicyBundle,
    pub q_data: RingBuffer<Datapoint>,
    pub g_data: RingBuffer<Datapoint>,
    q_adam: AdamState,
    g_adam: Vec<AdamState>,
    q_input_stats: RunningStats,
    g_input_stats: RunningStats,
    q_target_stats: RunningStats,
    g_target_stats: RunningStats,
    pub epsilon: f64,
    pub training_backoffs: Vec<f64>,
    pub iteration: usize,
}

impl<'e> Trainer<'e> {
    pub fn new<R: Rng + ?Sized>(env: &'e dyn Environment, config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spec = env.spec();
        spec.validate()?;
        let n_g = spec.n_g();
        let training_backoffs = if config.initial_backoffs.is_empty() {
            default_training_backoffs(&spec.id, n_g)
        } else {
            config.initial_backoffs.clone()
        };
        if training_backoffs.len() != n_g {
            return Err(Error::Config(format!(
                "initial_backoffs has {} entries, environment `{}` has {n_g} constraints",
                training_backoffs.len(),
                spec.id
            )));
        }
        let bundle = PolicyBundle::new(spec, &config.hidden, config.penalty_scale, config.es.clone(), rng);
        let n_params = bundle.q_net.params().len();
        let input = bundle.q_net.input_dim();
        Ok(Self {
            env,
            q_data: RingBuffer::new(config.q_buffer),
            g_data: RingBuffer::new(config.g_buffer),
            q_adam: AdamState::new(config.adam, n_params),
            g_adam: (0..n_g).map(|_| AdamState::new(config.adam, n_params)).collect(),
            q_input_stats: RunningStats::new(input),
            g_input_stats: RunningStats::new(input),
            q_target_stats: RunningStats::new(1),
            g_target_stats: RunningStats::new(n_g),
            epsilon: config.epsilon0,
            training_backoffs,
            iteration: 0,
            bundle,
            config,
        })
    }

    /// Runs `N` ε-greedy episodes on the current networks. Episodes are
    /// seeded from `rng` up front, so results do not depend on thread count.
    fn collect<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Result<Trajectory>> {
        let seeds: Vec<u64> = (0..self.config.episodes_per_iteration).map(|_| rng.next_u64()).collect();
        let first_episode = (self.iteration * self.config.episodes_per_iteration) as u64;
        seeds
            .par_iter()
            .enumerate()
            .map(|(k, seed)| {
                let mut policy = EpsilonGreedy {
                    bundle: &self.bundle,
                    backoffs: &self.training_backoffs,
                    epsilon: self.epsilon,
                    es: &self.config.es,
                };
                rollout(self.env, &mut policy, &mut ChaCha8Rng::seed_from_u64(*seed)).map_err(|e| Error::Episode {
                    episode: first_episode + k as u64,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    fn store(&mut self, traj: &Trajectory) {
        let horizon = self.bundle.horizon;
        let mut feats = Vec::new();
        for d in extract_q_targets(traj, self.config.gamma) {
            feats.clear();
            q_features(&d.state, d.t, &d.control, &mut feats);
            self.q_input_stats.push(&feats);
            self.q_target_stats.push(&d.targets);
            self.q_data.push(d);
        }
        for d in extract_oracle_targets(traj, self.config.oracle_alignment) {
            feats.clear();
            g_features(&d.state, horizon - d.t, &d.control, &mut feats);
            self.g_input_stats.push(&feats);
            self.g_target_stats.push(&d.targets);
            self.g_data.push(d);
        }
    }

    fn refresh_normalization(&mut self) -> Result<()> {
        let (qm, qs) = (self.q_input_stats.mean().to_vec(), self.q_input_stats.std());
        self.bundle.q_net.set_input_normalization(&qm, &qs)?;
        self.bundle.q_net.set_output_normalization(self.q_target_stats.mean()[0], self.q_target_stats.std()[0]);
        let (gm, gs) = (self.g_input_stats.mean().to_vec(), self.g_input_stats.std());
        let (tm, ts) = (self.g_target_stats.mean().to_vec(), self.g_target_stats.std());
        for (j, net) in self.bundle.constraint_nets.iter_mut().enumerate() {
            net.set_input_normalization(&gm, &gs)?;
            net.set_output_normalization(tm[j], ts[j]);
        }
        Ok(())
    }

    fn fit<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(f64, Vec<f64>)> {
        let horizon = self.bundle.horizon;
        let delta = self.config.huber_delta;
        let mut q_loss = f64::NAN;
        let mut g_losses = vec![f64::NAN; self.bundle.n_g()];
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..self.config.gradient_steps {
            feats.clear();
            targets.clear();
            for d in self.q_data.sample_minibatch(self.config.q_batch, rng)? {
                q_features(&d.state, d.t, &d.control, &mut feats);
                targets.push(d.targets[0]);
            }
            let (loss, grad) = self.bundle.q_net.backward(&feats, &targets, delta)?;
            check_loss(loss, "Q-network", self.iteration)?;
            adam_step(&mut self.bundle.q_net, &grad, &mut self.q_adam)?;
            q_loss = loss;

            for j in 0..self.bundle.n_g() {
                feats.clear();
                targets.clear();
                for d in self.g_data.sample_minibatch(self.config.g_batch_for(j), rng)? {
                    g_features(&d.state, horizon - d.t, &d.control, &mut feats);
                    targets.push(d.targets[j]);
                }
                let net: &mut MlpNetwork = &mut self.bundle.constraint_nets[j];
                let (loss, grad) = net.backward(&feats, &targets, delta)?;
                check_loss(loss, "constraint network", self.iteration)?;
                adam_step(net, &grad, &mut self.g_adam[j])?;
                g_losses[j] = loss;
            }
        }
        Ok((q_loss, g_losses))
    }

    /// One full training iteration (collect, store, fit, decay).
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<IterationRecord> {
        let episodes = self.collect(rng);
        let mut returns = Vec::with_capacity(episodes.len());
        let mut violations = 0;
        let mut failed = 0;
        for ep in episodes {
            match ep {
                Ok(traj) => {
                    returns.push(traj.total_reward());
                    violations += usize::from(!traj.feasible());
                    self.store(&traj);
                }
                Err(e) => {
                    log::warn!("iteration {}: {e}; episode skipped", self.iteration);
                    failed += 1;
                }
            }
        }
        if self.q_data.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "iteration {}: every episode failed, no training data",
                self.iteration
            )));
        }
        self.refresh_normalization()?;
        let (q_loss, g_losses) = self.fit(rng)?;

        let n = returns.len().max(1) as f64;
        let mean_return = returns.iter().sum::<f64>() / n;
        let std_return = (returns.iter().map(|r| (r - mean_return).powi(2)).sum::<f64>() / n).sqrt();
        let record = IterationRecord {
            iteration: self.iteration,
            epsilon: self.epsilon,
            backoffs: self.training_backoffs.clone(),
            q_loss,
            g_losses,
            mean_return,
            std_return,
            violation_rate: violations as f64 / n,
            failed_episodes: failed,
            q_buffer_len: self.q_data.len(),
            g_buffer_len: self.g_data.len(),
        };
        self.epsilon *= self.config.epsilon_decay;
        for b in &mut self.training_backoffs {
            *b *= self.config.backoff_decay;
        }
        self.iteration += 1;
        Ok(record)
    }
}

fn check_loss(loss: f64, which: &str, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("iteration {iteration}: {which} loss became {loss}; aborting training");
        Err(Error::NonFinite("training loss"))
    }
}

/// Result of [`train`]: the trained bundle (deployment backoffs zero) and the
/// per-iteration log.
pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub log: Vec<IterationRecord>,
}

/// Runs `config.iterations` training iterations, calling `on_iteration` after
/// each one.
pub fn train_with<R, F>(env: &dyn Environment, config: &AgentConfig, rng: &mut R, mut on_iteration: F) -> Result<TrainOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&IterationRecord),
{
    let mut trainer = Trainer::new(env, config.clone(), rng)?;
    let mut log = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let record = trainer.step(rng)?;
        on_iteration(&record);
        log.push(record);
    }
    Ok(TrainOutcome {
        bundle: trainer.bundle,
        log,
    })
}

pub fn train<R: Rng + ?Sized>(env: &dyn Environment, config: &AgentConfig, rng: &mut R) -> Result<TrainOutcome> {
    train_with(env, config, rng, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Bandit, BanditConfig};

    #[test]
    fn default_config_is_valid() {
        AgentConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_decay_rejected() {
        let cfg = AgentConfig {
            backoff_decay: 1.5,
            ..AgentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn g_batch_repeats_last() {
        let cfg = AgentConfig {
            g_batch: vec![7],
            ..AgentConfig::default()
        };
        assert_eq!(cfg.g_batch_for(0), 7);
        assert_eq!(cfg.g_batch_for(3), 7);
    }

    #[test]
    fn epsilon_one_is_uniform_and_epsilon_zero_is_greedy() {
        let env = Bandit::new(BanditConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bundle = PolicyBundle::new(env.spec(), &[4], 1e6, EsConfig::default(), &mut rng);
        let es = EsConfig::default();
        let explore = EpsilonGreedy {
            bundle: &bundle,
            backoffs: &[0.0],
            epsilon: 1.0,
            es: &es,
        };
        let u = explore.choose(&[0.0], 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(1);
        let _coin: f64 = replay.random();
        assert_eq!(u, random_control(&[0.0], &[1.0], &mut replay));

        let greedy = EpsilonGreedy { epsilon: 0.0, ..explore };
        let a = greedy.choose(&[0.0], 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = bundle.sub_problem(&[0.0]).solve(&[0.0], 0, &es, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().control;
        assert_eq!(a, b);
    }
}
