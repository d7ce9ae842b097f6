//! The constrained control-selection sub-problem
//! `max_u Q(x, t, u)  s.t.  G_j(x, t_f - t, u) + b_j <= 0`, solved by the
//! evolution strategy on a penalized fitness.

use rand::Rng;

use crate::error::{Error, Result};
use crate::es::{evolve, EsConfig};

/// Anything that predicts `Q` and the constraint oracles `G_j` for a batch of
/// candidate controls at a fixed `(x, t)`.
pub trait Surrogate: Sync {
    fn n_constraints(&self) -> usize;

    /// Fills `q[i]` and `g[i * n_g + j]` for every candidate `controls[i]`.
    fn predict(&self, state: &[f64], t: usize, controls: &[Vec<f64>], q: &mut [f64], g: &mut [f64]) -> Result<()>;
}

/// Penalized fitness `Q + Σ_j C_j min(0, -(G_j + b_j))`.
pub fn fitness(q: f64, g: &[f64], backoffs: &[f64], penalties: &[f64]) -> f64 {
    q + g
        .iter()
        .zip(backoffs)
        .zip(penalties)
        .map(|((g, b), c)| c * (-(g + b)).min(0.0))
        .sum::<f64>()
}

/// Outcome of one sub-problem solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub control: Vec<f64>,
    pub fitness: f64,
    /// Predicted `Q` at the chosen control.
    pub q: f64,
    /// Whether the chosen control satisfies every tightened surrogate constraint.
    pub feasible: bool,
}

/// A sub-problem instance: surrogate, control box, backoffs and penalty weights.
pub struct SubProblem<'a, S: Surrogate + ?Sized> {
    pub surrogate: &'a S,
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub backoffs: &'a [f64],
    pub penalties: &'a [f64],
}

impl<S: Surrogate + ?Sized> SubProblem<'_, S> {
    fn check(&self) -> Result<()> {
        let n_g = self.surrogate.n_constraints();
        for (context, len) in [("backoffs", self.backoffs.len()), ("penalty weights", self.penalties.len())] {
            if len != n_g {
                return Err(Error::Dimension {
                    context,
                    expected: n_g,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Fitness, predicted Q and feasibility of each candidate.
    pub fn score(&self, state: &[f64], t: usize, controls: &[Vec<f64>]) -> Result<Vec<(f64, f64, bool)>> {
        self.check()?;
        let n_g = self.surrogate.n_constraints();
        let mut q = vec![0.0; controls.len()];
        let mut g = vec![0.0; controls.len() * n_g];
        self.surrogate.predict(state, t, controls, &mut q, &mut g)?;
        Ok((0..controls.len())
            .map(|i| {
                let gi = &g[i * n_g..(i + 1) * n_g];
                let feasible = gi.iter().zip(self.backoffs).all(|(g, b)| g + b <= 0.0);
                (fitness(q[i], gi, self.backoffs, self.penalties), q[i], feasible)
            })
            .collect())
    }

    /// Runs the evolution strategy over the control box.
    pub fn solve<R: Rng + ?Sized>(&self, state: &[f64], t: usize, es: &EsConfig, rng: &mut R) -> Result<Selection> {
        self.check()?;
        let result = evolve(es, self.lo, self.hi, &[], rng, |cands| {
            Ok(self.score(state, t, cands)?.into_iter().map(|s| s.0).collect())
        })?;
        let (fit, q, feasible) = self.score(state, t, std::slice::from_ref(&result.best))?[0];
        if !feasible {
            log::trace!("t = {t}: no surrogate-feasible control found (fitness {fit:.4e})");
        }
        Ok(Selection {
            control: result.best,
            fitness: fit,
            q,
            feasible,
        })
    }
}

/// Uniform draw from the box `[lo, hi]`.
pub fn random_control<R: Rng + ?Sized>(lo: &[f64], hi: &[f64], rng: &mut R) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..=*h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Q = -|u - peak|², G = u_0 - limit.
    struct Rigged {
        peak: Vec<f64>,
        limit: f64,
    }

    impl Surrogate for Rigged {
        fn n_constraints(&self) -> usize {
            1
        }

        fn predict(&self, _: &[f64], _: usize, controls: &[Vec<f64>], q: &mut [f64], g: &mut [f64]) -> Result<()> {
            for (i, u) in controls.iter().enumerate() {
                q[i] = -u.iter().zip(&self.peak).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                g[i] = u[0] - self.limit;
            }
            Ok(())
        }
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(fitness(5.0, &[-1.0, -2.0], &[0.5, 1.0], &[1e4, 1e4]), 5.0);
        assert!((fitness(5.0, &[0.3], &[0.0], &[1e4]) - -2995.0).abs() < 1e-9);
        assert_eq!(fitness(5.0, &[-0.3], &[0.3], &[1e4]), 5.0);
    }

    #[test]
    fn unconstrained_optimum() {
        let s = Rigged {
            peak: vec![0.3, 0.7],
            limit: 10.0,
        };
        let p = SubProblem {
            surrogate: &s,
            lo: &[0.0, 0.0],
            hi: &[1.0, 1.0],
            backoffs: &[0.0],
            penalties: &[1e6],
        };
        let sel = p.solve(&[], 0, &EsConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((sel.control[0] - 0.3).abs() < 0.01 && (sel.control[1] - 0.7).abs() < 0.01);
        assert!(sel.feasible);
    }

    #[test]
    fn constraint_and_backoff_shift_optimum() {
        let s = Rigged {
            peak: vec![0.8, 0.5],
            limit: 0.6,
        };
        for b in [0.0, 0.1, -0.1] {
            let p = SubProblem {
                surrogate: &s,
                lo: &[0.0, 0.0],
                hi: &[1.0, 1.0],
                backoffs: &[b],
                penalties: &[1e6],
            };
            let sel = p.solve(&[], 0, &EsConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!(sel.feasible);
            assert!((sel.control[0] - (0.6 - b)).abs() < 0.01, "b = {b}: {:?}", sel.control);
        }
    }

    #[test]
    fn mismatched_backoffs_rejected() {
        let s = Rigged {
            peak: vec![0.0],
            limit: 0.0,
        };
        let p = SubProblem {
            surrogate: &s,
            lo: &[0.0],
            hi: &[1.0],
            backoffs: &[0.0, 0.0],
            penalties: &[1.0],
        };
        assert!(p.solve(&[], 0, &EsConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
