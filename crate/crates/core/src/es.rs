//! Box-constrained (μ+λ) evolution strategy used by both the RL control
//! selection and the NMPC baseline. Maximizes a batch fitness function.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    /// Offspring per generation (λ); also the size of the initial population.
    pub population: usize,
    /// Survivors per generation (μ).
    pub parents: usize,
    pub generations: usize,
    /// Initial mutation standard deviation as a fraction of each box width.
    pub sigma_fraction: f64,
    /// The mutation width halves every this many generations (0 disables).
    pub halve_every: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 40,
            parents: 8,
            generations: 30,
            sigma_fraction: 0.1,
            halve_every: 10,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.parents == 0 || self.parents > self.population {
            return Err(Error::Config(format!(
                "evolution strategy needs 0 < parents <= population, got {} and {}",
                self.parents, self.population
            )));
        }
        if !(self.sigma_fraction > 0.0) {
            return Err(Error::Config("sigma_fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        self.population * (self.generations + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub evaluations: usize,
    /// Best fitness after the initial population and after every generation.
    pub history: Vec<f64>,
}

fn clip(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Runs the strategy on the box `[lo, hi]`.
///
/// `seeds` (clipped into the box) occupy the first slots of the initial
/// population and the rest is drawn uniformly. `fitness` scores a whole batch
/// of candidates; NaN scores rank last. Survivor selection is a stable sort of
/// parents followed by offspring, so ties keep the incumbent.
pub fn evolve<R, F>(config: &EsConfig, lo: &[f64], hi: &[f64], seeds: &[Vec<f64>], rng: &mut R, mut fitness: F) -> Result<EsResult>
where
    R: Rng + ?Sized,
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let dim = lo.len();
    if hi.len() != dim {
        return Err(Error::Dimension {
            context: "search box",
            expected: dim,
            actual: hi.len(),
        });
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::InvalidArgument("search box has lo > hi".into()));
    }
    let mut evaluate = |cands: &[Vec<f64>]| -> Result<Vec<f64>> {
        let f = fitness(cands)?;
        if f.len() != cands.len() {
            return Err(Error::Dimension {
                context: "fitness batch",
                expected: cands.len(),
                actual: f.len(),
            });
        }
        Ok(f.into_iter().map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v }).collect())
    };

    let mut initial: Vec<Vec<f64>> = Vec::with_capacity(config.population);
    for s in seeds.iter().take(config.population) {
        if s.len() != dim {
            return Err(Error::Dimension {
                context: "search seed",
                expected: dim,
                actual: s.len(),
            });
        }
        let mut s = s.clone();
        clip(&mut s, lo, hi);
        initial.push(s);
    }
    while initial.len() < config.population {
        initial.push(lo.iter().zip(hi).map(|(l, h)| if l < h { rng.random_range(*l..=*h) } else { *l }).collect());
    }
    let scores = evaluate(&initial)?;
    let mut evaluations = initial.len();
    let mut pool: Vec<(Vec<f64>, f64)> = initial.into_iter().zip(scores).collect();
    let survivors = |pool: &mut Vec<(Vec<f64>, f64)>| {
        pool.sort_by(|a, b| b.1.total_cmp(&a.1));
        pool.truncate(config.parents);
    };
    survivors(&mut pool);
    let mut history = vec![pool[0].1];

    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    for g in 0..config.generations {
        let halvings = if config.halve_every > 0 { g / config.halve_every } else { 0 };
        let sigma = config.sigma_fraction * 0.5f64.powi(halvings as i32);
        let offspring: Vec<Vec<f64>> = (0..config.population)
            .map(|_| {
                let parent = &pool[rng.random_range(0..pool.len())].0;
                let mut child: Vec<f64> = parent
                    .iter()
                    .zip(&width)
                    .map(|(p, w)| {
                        let z: f64 = StandardNormal.sample(rng);
                        p + sigma * w * z
                    })
                    .collect();
                clip(&mut child, lo, hi);
                child
            })
            .collect();
        let scores = evaluate(&offspring)?;
        evaluations += offspring.len();
        pool.extend(offspring.into_iter().zip(scores));
        survivors(&mut pool);
        history.push(pool[0].1);
    }
    let (best, best_fitness) = pool.swap_remove(0);
    Ok(EsResult {
        best,
        best_fitness,
        evaluations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(center: Vec<f64>) -> impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>> {
        move |c: &[Vec<f64>]| Ok(c.iter().map(|x| -x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).collect())
    }

    #[test]
    fn finds_interior_optimum() {
        let lo = vec![-5.0; 3];
        let hi = vec![5.0; 3];
        let r = evolve(&EsConfig::default(), &lo, &hi, &[], &mut ChaCha8Rng::seed_from_u64(1), sphere(vec![1.0, -2.0, 0.5])).unwrap();
        assert!(r.best_fitness > -1e-2, "{}", r.best_fitness);
        assert_eq!(r.evaluations, 40 * 31);
        assert_eq!(r.history.len(), 31);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn optimum_outside_box_lands_on_boundary() {
        let r = evolve(&EsConfig::default(), &[0.0, 0.0], &[1.0, 1.0], &[], &mut ChaCha8Rng::seed_from_u64(2), sphere(vec![3.0, 0.5])).unwrap();
        assert_eq!(r.best[0], 1.0);
        assert!((r.best[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn seeded_optimum_is_kept() {
        let cfg = EsConfig {
            generations: 5,
            ..EsConfig::default()
        };
        let r = evolve(&cfg, &[-1.0], &[1.0], &[vec![0.25]], &mut ChaCha8Rng::seed_from_u64(3), sphere(vec![0.25])).unwrap();
        assert_eq!(r.best, vec![0.25]);
        assert_eq!(r.best_fitness, 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let run = |s| evolve(&EsConfig::default(), &[0.0; 2], &[1.0; 2], &[], &mut ChaCha8Rng::seed_from_u64(s), sphere(vec![0.3, 0.3])).unwrap();
        assert_eq!(run(7), run(7));
        assert_ne!(run(7).best, run(8).best);
    }

    #[test]
    fn nan_fitness_ranks_last() {
        let r = evolve(&EsConfig::default(), &[0.0], &[1.0], &[], &mut ChaCha8Rng::seed_from_u64(4), |c: &[Vec<f64>]| {
            Ok(c.iter().map(|x| if x[0] > 0.5 { f64::NAN } else { x[0] }).collect())
        })
        .unwrap();
        assert!(r.best[0] <= 0.5 && r.best[0] > 0.45);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = EsConfig {
            parents: 50,
            ..EsConfig::default()
        };
        assert!(evolve(&cfg, &[0.0], &[1.0], &[], &mut ChaCha8Rng::seed_from_u64(0), sphere(vec![0.0])).is_err());
    }
}
