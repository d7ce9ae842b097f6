//! Post-training backoff tuning.
//!
//! For fixed backoffs `b`, the greedy policy is rolled out on `S` sampled
//! episodes. The fraction of episodes whose worst value of constraint `j`
//! stays `<= 0` is the empirical CDF `F̂_{S,j}(0; b)`. Tuning solves
//! `F̂_{S,j}(0; b) - (1 - ω_j) = 0` for all `j` with Broyden's method, reusing
//! the same `S` episode seeds at every iterate (common random numbers).
//!
//! With `ResidualScale::Probit` the solver sees
//! `φ(z_j) (Φ⁻¹(F̂_j) - z_j)`, `z_j = Φ⁻¹(1 - ω_j)`. The roots are the same
//! and the residual agrees with the plain one to first order near them, but
//! saturated marginals (`F̂ = 1`) no longer look close to the target.

mod broyden;

pub use broyden::{broyden_solve, broyden_step, broyden_update, BroydenIterate, BroydenOptions, BroydenOutcome, Matrix};

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::agent::{BackoffVector, EpsilonGreedy, PolicyBundle};
use crate::error::{Error, Result};
use crate::sim::{rollout, Environment};

/// Maps backoffs and an episode seed to the worst value of every constraint
/// along that episode.
pub trait SatisfactionModel: Sync {
    fn n_constraints(&self) -> usize;

    /// Characteristic magnitude of each constraint, used for step sizes.
    fn scales(&self) -> Vec<f64>;

    fn worst_values(&self, backoffs: &[f64], seed: u64) -> Result<Vec<f64>>;
}

/// The greedy policy of a bundle on an environment.
pub struct PolicyModel<'a> {
    pub env: &'a dyn Environment,
    pub bundle: &'a PolicyBundle,
}

impl SatisfactionModel for PolicyModel<'_> {
    fn n_constraints(&self) -> usize {
        self.bundle.n_g()
    }

    fn scales(&self) -> Vec<f64> {
        self.bundle.constraint_scales.clone()
    }

    fn worst_values(&self, backoffs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut policy = EpsilonGreedy {
            bundle: self.bundle,
            backoffs,
            epsilon: 0.0,
            es: &self.bundle.selection,
        };
        Ok(rollout(self.env, &mut policy, &mut ChaCha8Rng::seed_from_u64(seed))?.worst_violations())
    }
}

/// A model given directly as a function, e.g. a closed-form test case.
pub struct FnModel<F> {
    pub scales: Vec<f64>,
    pub f: F,
}

impl<F> SatisfactionModel for FnModel<F>
where
    F: Fn(&[f64], u64) -> Result<Vec<f64>> + Sync,
{
    fn n_constraints(&self) -> usize {
        self.scales.len()
    }

    fn scales(&self) -> Vec<f64> {
        self.scales.clone()
    }

    fn worst_values(&self, backoffs: &[f64], seed: u64) -> Result<Vec<f64>> {
        (self.f)(backoffs, seed)
    }
}

/// `S` episode seeds derived from one base seed; reused at every iterate.
pub fn crn_seeds(base: u64, samples: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..samples).map(|_| rng.next_u64()).collect()
}

/// Empirical satisfaction probabilities from `S` episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionEstimate {
    /// `F̂_{S,j}(0)` per constraint.
    pub marginals: Vec<f64>,
    /// Fraction of episodes satisfying every constraint at every step.
    pub joint: f64,
    pub samples: usize,
    /// Worst value of each constraint, one row per episode.
    pub worst: Vec<Vec<f64>>,
}

impl SatisfactionEstimate {
    /// Counts satisfied episodes. With `smoothing` widths `w_j`, marginals use
    /// the logistic weight `1 / (1 + exp(worst_j / w_j))` instead of the
    /// indicator; the joint value is always the raw count.
    pub fn from_worst(worst: Vec<Vec<f64>>, n_g: usize, smoothing: Option<&[f64]>) -> Result<Self> {
        let s = worst.len();
        if s == 0 {
            return Err(Error::InvalidArgument("satisfaction estimate needs at least one episode".into()));
        }
        if let Some(row) = worst.iter().find(|r| r.len() != n_g) {
            return Err(Error::Dimension {
                context: "worst constraint values",
                expected: n_g,
                actual: row.len(),
            });
        }
        let marginals = (0..n_g)
            .map(|j| {
                let total: f64 = worst
                    .iter()
                    .map(|row| match smoothing {
                        Some(w) => 1.0 / (1.0 + (row[j] / w[j]).exp()),
                        None => f64::from(u8::from(row[j] <= 0.0)),
                    })
                    .sum();
                total / s as f64
            })
            .collect();
        let joint = worst.iter().filter(|row| row.iter().all(|g| *g <= 0.0)).count() as f64 / s as f64;
        Ok(Self {
            marginals,
            joint,
            samples: s,
            worst,
        })
    }
}

/// Rolls out every seed with `backoffs` and estimates satisfaction.
pub fn estimate_satisfaction<M: SatisfactionModel + ?Sized>(
    model: &M,
    backoffs: &[f64],
    seeds: &[u64],
    smoothing: Option<&[f64]>,
) -> Result<SatisfactionEstimate> {
    let n_g = model.n_constraints();
    if backoffs.len() != n_g {
        return Err(Error::Dimension {
            context: "backoffs",
            expected: n_g,
            actual: backoffs.len(),
        });
    }
    let results: Vec<Result<Vec<f64>>> = seeds.par_iter().map(|s| model.worst_values(backoffs, *s)).collect();
    let mut worst = Vec::with_capacity(seeds.len());
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(w) => worst.push(w),
            Err(e) => log::warn!("Monte Carlo episode with seed {seed} failed: {e}"),
        }
    }
    if worst.len() < seeds.len() {
        return Err(Error::InsufficientRollouts {
            succeeded: worst.len(),
            requested: seeds.len(),
        });
    }
    SatisfactionEstimate::from_worst(worst, n_g, smoothing)
}

/// Scale of the residual handed to the Broyden solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScale {
    /// `F̂_j - (1 - ω_j)`.
    #[default]
    Probability,
    /// `φ(z_j) (Φ⁻¹(F̂_j) - z_j)` with `F̂_j` clipped to `[1/(2S), 1 - 1/(2S)]`.
    Probit,
}

impl ResidualScale {
    pub fn apply(self, marginal: f64, target: f64, samples: usize) -> f64 {
        match self {
            ResidualScale::Probability => marginal - target,
            ResidualScale::Probit => {
                let n = Normal::standard();
                let eps = 0.5 / samples.max(1) as f64;
                let z = n.inverse_cdf(target);
                n.pdf(z) * (n.inverse_cdf(marginal.clamp(eps, 1.0 - eps)) - z)
            }
        }
    }
}

/// How the joint risk `ω` is split into per-constraint targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskAllocation {
    /// `ω_j = ω / n_g`, which guarantees joint satisfaction `>= 1 - ω`.
    #[default]
    Bonferroni,
    /// `ω_j = ω` for every constraint.
    Marginal,
}

impl RiskAllocation {
    pub fn targets(self, omega: f64, n_g: usize) -> Vec<f64> {
        let per = match self {
            RiskAllocation::Bonferroni => omega / n_g.max(1) as f64,
            RiskAllocation::Marginal => omega,
        };
        vec![1.0 - per; n_g]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub omega: f64,
    /// Monte Carlo episodes `S` per residual evaluation.
    pub samples: usize,
    /// Residual tolerance; `None` means `1 / S`, the ECDF resolution.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub allocation: RiskAllocation,
    /// Finite-difference step of the initial Jacobian, as a fraction of each
    /// constraint scale.
    pub fd_fraction: f64,
    /// Per-iteration backoff change cap, as a fraction of each constraint scale.
    pub max_step_fraction: f64,
    /// Logistic smoothing width as a fraction of each constraint scale, if any.
    pub smoothing_fraction: Option<f64>,
    pub initial_backoffs: Option<Vec<f64>>,
    /// Steps without progress before restarting from the best point with a
    /// fresh finite-difference Jacobian; `None` never restarts.
    pub restart_after: Option<usize>,
    pub residual_scale: ResidualScale,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            omega: 0.01,
            samples: 1000,
            tol: None,
            max_iter: 20,
            allocation: RiskAllocation::Bonferroni,
            fd_fraction: 0.02,
            max_step_fraction: 0.2,
            smoothing_fraction: None,
            initial_backoffs: None,
            restart_after: Some(3),
            residual_scale: ResidualScale::Probability,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::Config(format!("omega must lie in (0, 1), got {}", self.omega)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::Config("tol must be positive".into()));
            }
        }
        if !(self.fd_fraction > 0.0) || !(self.max_step_fraction > 0.0) {
            return Err(Error::Config("fd_fraction and max_step_fraction must be positive".into()));
        }
        if self.restart_after == Some(0) {
            return Err(Error::Config("restart_after must be at least 1".into()));
        }
        if matches!(self.smoothing_fraction, Some(w) if !(w > 0.0)) {
            return Err(Error::Config("smoothing_fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(1.0 / self.samples as f64)
    }
}

/// One row of the tuning report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneIteration {
    pub backoffs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub marginals: Vec<f64>,
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub backoffs: BackoffVector,
    pub targets: Vec<f64>,
    pub omega: f64,
    pub allocation: RiskAllocation,
    pub samples: usize,
    pub tolerance: f64,
    /// Every residual evaluation in order, including finite-difference probes.
    pub history: Vec<TuneIteration>,
    /// Quasi-Newton steps taken.
    pub iterations: usize,
    pub converged: bool,
    pub jacobian_resets: usize,
    /// Estimate at the returned backoffs.
    pub estimate: SatisfactionEstimate,
}

impl TuneResult {
    pub fn residual_norm(&self) -> f64 {
        self.estimate
            .marginals
            .iter()
            .zip(&self.targets)
            .fold(0.0f64, |m, (f, t)| m.max((f - t).abs()))
    }

    /// Plain-text report: settings, iteration table, outcome.
    pub fn report(&self, constraint_names: &[String]) -> String {
        let mut out = String::new();
        let name = |j: usize| constraint_names.get(j).cloned().unwrap_or_else(|| format!("g_{}", j + 1));
        let n_g = self.targets.len();
        writeln!(out, "omega: {}", self.omega).unwrap();
        writeln!(out, "allocation: {:?}", self.allocation).unwrap();
        writeln!(out, "samples: {}", self.samples).unwrap();
        writeln!(out, "tolerance: {}", self.tolerance).unwrap();
        writeln!(out, "targets: {}", join(&self.targets)).unwrap();
        writeln!(out).unwrap();
        let mut header = vec!["eval".to_string()];
        header.extend((0..n_g).map(|j| format!("b[{}]", name(j))));
        header.extend((0..n_g).map(|j| format!("r[{}]", name(j))));
        header.extend((0..n_g).map(|j| format!("F[{}]", name(j))));
        header.push("joint".into());
        writeln!(out, "{}", header.join("\t")).unwrap();
        for (k, it) in self.history.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(it.backoffs.iter().chain(&it.residuals).chain(&it.marginals).map(|v| format!("{v:.6}")));
            row.push(format!("{:.6}", it.joint));
            writeln!(out, "{}", row.join("\t")).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "final backoffs: {}", join(self.backoffs.as_slice())).unwrap();
        writeln!(out, "final marginals: {}", join(&self.estimate.marginals)).unwrap();
        writeln!(out, "final joint: {}", self.estimate.joint).unwrap();
        writeln!(out, "iterations: {}", self.iterations).unwrap();
        writeln!(out, "status: {}", if self.converged { "converged" } else { "not converged" }).unwrap();
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Broyden tuning of the backoffs of `model` against `1 - ω_j` targets.
/// Every evaluation reuses `crn_seeds(seed, S)`.
///
/// Of all evaluated points (finite-difference probes included), the result is
/// the one with the smallest residual among those whose marginals all reach
/// `target - tol`; if none does, the smallest residual overall.
pub fn broyden_tune<M: SatisfactionModel + ?Sized>(model: &M, config: &TuneConfig, seed: u64) -> Result<TuneResult> {
    config.validate()?;
    let n_g = model.n_constraints();
    if config.samples == 1 {
        log::warn!("tuning with S = 1: every satisfaction estimate is 0 or 1");
    }
    let scales = model.scales();
    let targets = config.allocation.targets(config.omega, n_g);
    let seeds = crn_seeds(seed, config.samples);
    let smoothing: Option<Vec<f64>> = config.smoothing_fraction.map(|w| scales.iter().map(|s| w * s).collect());
    let b0 = config.initial_backoffs.clone().unwrap_or_else(|| vec![0.0; n_g]);
    if b0.len() != n_g {
        return Err(Error::Dimension {
            context: "initial backoffs",
            expected: n_g,
            actual: b0.len(),
        });
    }

    let mut history: Vec<TuneIteration> = Vec::new();
    let mut estimates: Vec<(Vec<f64>, SatisfactionEstimate)> = Vec::new();
    let opts = BroydenOptions {
        tol: config.tolerance(),
        max_iter: config.max_iter,
        max_step: Some(scales.iter().map(|s| config.max_step_fraction * s).collect()),
        initial_jacobian: None,
        fd_step: scales.iter().map(|s| config.fd_fraction * s).collect(),
        reset_diagonal: scales.iter().map(|s| 1.0 / s).collect(),
        restart_after: config.restart_after,
    };
    let outcome = broyden_solve(
        |b| {
            let est = estimate_satisfaction(model, b, &seeds, smoothing.as_deref())?;
            let residuals: Vec<f64> = est.marginals.iter().zip(&targets).map(|(f, t)| f - t).collect();
            log::info!("tune: b = {b:?}, marginals = {:?}, joint = {}", est.marginals, est.joint);
            history.push(TuneIteration {
                backoffs: b.to_vec(),
                residuals: residuals.clone(),
                marginals: est.marginals.clone(),
                joint: est.joint,
            });
            let scaled = est
                .marginals
                .iter()
                .zip(&targets)
                .map(|(f, t)| config.residual_scale.apply(*f, *t, config.samples))
                .collect();
            estimates.push((b.to_vec(), est));
            Ok(scaled)
        },
        &b0,
        &opts,
    )?;
    // Prefer points that meet every target (up to tol): under-satisfying a
    // chance constraint is worse than over-satisfying it.
    let tol = opts.tol;
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let acceptable = |it: &TuneIteration| it.residuals.iter().all(|r| *r >= -tol);
    let pick = |filter: &dyn Fn(&TuneIteration) -> bool| {
        history
            .iter()
            .enumerate()
            .filter(|(_, it)| filter(it))
            .min_by(|a, b| norm(&a.1.residuals).total_cmp(&norm(&b.1.residuals)))
            .map(|(k, _)| k)
    };
    let chosen = pick(&acceptable).or_else(|| pick(&|_| true)).expect("at least one evaluation");
    let (b_final, estimate) = estimates.swap_remove(chosen);
    let converged = norm(&history[chosen].residuals) <= tol;
    if !converged {
        log::warn!(
            "tuning did not reach tolerance {tol} in {} iterations (best residual {:.4})",
            outcome.history.len() - 1,
            norm(&history[chosen].residuals)
        );
    }
    Ok(TuneResult {
        backoffs: BackoffVector(b_final),
        targets,
        omega: config.omega,
        allocation: config.allocation,
        samples: config.samples,
        tolerance: opts.tol,
        history,
        iterations: outcome.history.len() - 1,
        converged,
        jacobian_resets: outcome.resets,
        estimate,
    })
}
