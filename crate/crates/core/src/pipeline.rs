//! Train, tune and evaluate stages wired to an [`ExperimentConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{train_with, BackoffVector, GreedyPolicy, IterationRecord, PolicyBundle, TrainOutcome};
use crate::calibrate::{broyden_tune, PolicyModel, TuneConfig, TuneResult};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::eval::{episode_seeds, run_episodes, EvalReport};
use crate::nmpc::{NmpcConfig, NmpcPolicy};
use crate::sim::{Environment, Trajectory};

pub fn train_stage<F: FnMut(&IterationRecord)>(env: &dyn Environment, cfg: &ExperimentConfig, on_iteration: F) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().train);
    train_with(env, &cfg.agent, &mut rng, on_iteration)
}

/// Tunes deployment backoffs and returns a copy of `bundle` carrying them.
pub fn tune_stage(env: &dyn Environment, bundle: &PolicyBundle, tune: &TuneConfig, seed: u64) -> Result<(PolicyBundle, TuneResult)> {
    bundle.check_environment(env.spec())?;
    let result = broyden_tune(&PolicyModel { env, bundle }, tune, seed)?;
    let mut tuned = bundle.clone();
    tuned.backoffs = result.backoffs.clone();
    Ok((tuned, result))
}

/// Which policy to evaluate.
#[derive(Clone, Copy)]
pub enum PolicySource<'a> {
    Bundle(&'a PolicyBundle),
    Nmpc(&'a NmpcConfig),
}

pub struct Evaluation {
    pub report: EvalReport,
    pub trajectories: Vec<Trajectory>,
}

/// Rolls out `n_eval` episodes with seeds `base_seed + i`.
pub fn evaluate(env: &dyn Environment, source: PolicySource<'_>, label: &str, n_eval: usize, base_seed: u64) -> Result<Evaluation> {
    let seeds = episode_seeds(base_seed, n_eval);
    let (trajectories, times, backoffs) = match source {
        PolicySource::Bundle(bundle) => {
            bundle.check_environment(env.spec())?;
            let (tr, times) = run_episodes(env, &seeds, || GreedyPolicy { bundle })?;
            (tr, times, Some(bundle.backoffs.clone()))
        }
        PolicySource::Nmpc(config) => {
            config.validate()?;
            let (tr, times) = run_episodes(env, &seeds, || NmpcPolicy::new(env, config.clone()).expect("validated nmpc config"))?;
            (tr, times, None)
        }
    };
    let mut report = EvalReport::from_trajectories(label, env.spec(), base_seed, &trajectories, &times)?;
    report.backoffs = backoffs.map(|b: BackoffVector| b.0);
    Ok(Evaluation { report, trajectories })
}
