//! Monte Carlo evaluation of a policy: violation probabilities, objective
//! statistics, percentile bands and per-step solve times.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{rollout, ControlVector, Environment, EnvironmentSpec, Policy, Trajectory};

/// Wraps a policy and records the wall time of every `act` call.
pub struct Timed<P> {
    pub inner: P,
    pub times: Vec<f64>,
}

impl<P: Policy> Policy for Timed<P> {
    fn act(&mut self, state: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<ControlVector> {
        let start = Instant::now();
        let u = self.inner.act(state, t, rng);
        self.times.push(start.elapsed().as_secs_f64());
        u
    }
}

/// Seeds of the `n` evaluation episodes: episode `i` uses `base + i`.
pub fn episode_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Rolls out one fresh policy from `make_policy` per seed. Episodes run in
/// parallel; results keep seed order.
pub fn run_episodes<P, F>(env: &dyn Environment, seeds: &[u64], make_policy: F) -> Result<(Vec<Trajectory>, Vec<f64>)>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    let results: Vec<Result<(Trajectory, Vec<f64>)>> = seeds
        .par_iter()
        .map(|seed| {
            let mut policy = Timed {
                inner: make_policy(),
                times: Vec::new(),
            };
            let traj = rollout(env, &mut policy, &mut ChaCha8Rng::seed_from_u64(*seed))
                .map_err(|e| Error::InvalidArgument(format!("evaluation episode with seed {seed} failed: {e}")))?;
            Ok((traj, policy.times))
        })
        .collect();
    let mut trajs = Vec::with_capacity(seeds.len());
    let mut times = Vec::new();
    for r in results {
        let (traj, t) = r?;
        trajs.push(traj);
        times.extend(t);
    }
    Ok((trajs, times))
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p / 100 * n)`, clamped to `1..=n`.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Summary of one policy's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub environment: String,
    pub n_eval: usize,
    pub seed: u64,
    pub constraint_names: Vec<String>,
    /// Fraction of episodes violating each constraint at some step.
    pub violation_probability: Vec<f64>,
    /// Fraction of episodes violating any constraint at some step.
    pub joint_violation_probability: f64,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub solve_time_mean: f64,
    pub solve_time_std: f64,
    pub backoffs: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn from_trajectories(policy: &str, spec: &EnvironmentSpec, seed: u64, trajs: &[Trajectory], solve_times: &[f64]) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::InvalidArgument("evaluation needs at least one trajectory".into()));
        }
        let n = trajs.len() as f64;
        let worst: Vec<Vec<f64>> = trajs.iter().map(Trajectory::worst_violations).collect();
        let violation_probability = (0..spec.n_g())
            .map(|j| worst.iter().filter(|w| w[j] > 0.0).count() as f64 / n)
            .collect();
        let joint = worst.iter().filter(|w| w.iter().any(|g| *g > 0.0)).count() as f64 / n;
        let objectives: Vec<f64> = trajs.iter().map(Trajectory::total_reward).collect();
        let (objective_mean, objective_std) = mean_std(&objectives);
        let (solve_time_mean, solve_time_std) = mean_std(solve_times);
        Ok(Self {
            policy: policy.into(),
            environment: spec.id.clone(),
            n_eval: trajs.len(),
            seed,
            constraint_names: spec.constraint_names.clone(),
            violation_probability,
            joint_violation_probability: joint,
            objective_mean,
            objective_std,
            solve_time_mean,
            solve_time_std,
            backoffs: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Per-time-step percentile bands of every constraint, as CSV with columns
/// `time,constraint,percentile,value`.
pub fn constraint_bands_csv(spec: &EnvironmentSpec, trajs: &[Trajectory], percentiles: &[f64]) -> String {
    bands_csv("constraint", &spec.constraint_names, spec.sampling_time, trajs, percentiles, |tr, t, j| {
        tr.constraint_values[t][j]
    })
}

/// Per-time-step percentile bands of every state, as CSV with columns
/// `time,state,percentile,value`.
pub fn state_bands_csv(spec: &EnvironmentSpec, trajs: &[Trajectory], percentiles: &[f64]) -> String {
    bands_csv("state", &spec.state_names, spec.sampling_time, trajs, percentiles, |tr, t, j| tr.states[t][j])
}

fn bands_csv(
    kind: &str,
    names: &[String],
    dt: f64,
    trajs: &[Trajectory],
    percentiles: &[f64],
    value: impl Fn(&Trajectory, usize, usize) -> f64,
) -> String {
    let mut out = format!("time,{kind},percentile,value\n");
    let steps = trajs.first().map_or(0, |t| t.states.len());
    let mut column = Vec::with_capacity(trajs.len());
    for t in 0..steps {
        for (j, name) in names.iter().enumerate() {
            column.clear();
            column.extend(trajs.iter().map(|tr| value(tr, t, j)));
            column.sort_by(f64::total_cmp);
            for p in percentiles {
                writeln!(out, "{},{name},{p},{}", t as f64 * dt, percentile_nearest_rank(&column, *p)).unwrap();
            }
        }
    }
    out
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub policy: String,
    pub joint_violation_probability: f64,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub violation_probability: Vec<f64>,
}

/// Table of several reports on one environment, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub environment: String,
    pub constraint_names: Vec<String>,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn new(reports: &[EvalReport]) -> Result<Self> {
        if reports.len() < 2 {
            return Err(Error::InvalidArgument(format!("comparison needs at least 2 reports, got {}", reports.len())));
        }
        let env = &reports[0].environment;
        if let Some(r) = reports.iter().find(|r| &r.environment != env || r.constraint_names != reports[0].constraint_names) {
            return Err(Error::InvalidArgument(format!(
                "cannot compare reports from `{env}` and `{}`",
                r.environment
            )));
        }
        Ok(Self {
            environment: env.clone(),
            constraint_names: reports[0].constraint_names.clone(),
            rows: reports
                .iter()
                .map(|r| CompareRow {
                    policy: r.policy.clone(),
                    joint_violation_probability: r.joint_violation_probability,
                    objective_mean: r.objective_mean,
                    objective_std: r.objective_std,
                    violation_probability: r.violation_probability.clone(),
                })
                .collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.policy.len()).max().unwrap_or(0).max("policy".len());
        let mut out = format!("environment: {}\n", self.environment);
        write!(out, "{:<width$}  {:>8}  {:>12}  {:>12}", "policy", "P_v", "objective", "std").unwrap();
        for name in &self.constraint_names {
            write!(out, "  {:>12}", format!("P_v[{name}]")).unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{:<width$}  {:>8.3}  {:>12.6}  {:>12.6}",
                r.policy, r.joint_violation_probability, r.objective_mean, r.objective_std
            )
            .unwrap();
            for p in &r.violation_probability {
                write!(out, "  {p:>12.3}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,joint_pv,objective_mean,objective_std");
        for name in &self.constraint_names {
            write!(out, ",pv_{name}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.policy, r.joint_violation_probability, r.objective_mean, r.objective_std).unwrap();
            for p in &r.violation_probability {
                write!(out, ",{p}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Comparison::to_csv`] output.
    pub fn from_csv(environment: &str, text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("<comparison csv>", m);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split(',').collect();
        if header.len() < 4 || header[..4] != ["policy", "joint_pv", "objective_mean", "objective_std"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let constraint_names: Vec<String> = header[4..]
            .iter()
            .map(|h| h.strip_prefix("pv_").map(str::to_string).ok_or_else(|| bad(format!("bad column `{h}`"))))
            .collect::<Result<_>>()?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad number `{s}`: {e}")));
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(bad(format!("row `{line}` has {} cells, expected {}", cells.len(), header.len())));
            }
            rows.push(CompareRow {
                policy: cells[0].to_string(),
                joint_violation_probability: num(cells[1])?,
                objective_mean: num(cells[2])?,
                objective_std: num(cells[3])?,
                violation_probability: cells[4..].iter().map(|c| num(c)).collect::<Result<_>>()?,
            });
        }
        Ok(Self {
            environment: environment.into(),
            constraint_names,
            rows,
        })
    }
}
