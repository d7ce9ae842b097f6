//! Broyden's "good" quasi-Newton method for square nonlinear systems.

use crate::error::{Error, Result};

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            data: rows.concat(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Solves `self · x = rhs` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot is negligible relative to the matrix scale.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return None;
        }
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &k| a[i * n + col].abs().total_cmp(&a[k * n + col].abs()))?;
            if a[pivot * n + col].abs() <= 1e-13 * scale {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                b.swap(col, pivot);
            }
            for row in col + 1..n {
                let f = a[row * n + col] / a[col * n + col];
                if f != 0.0 {
                    for k in col..n {
                        a[row * n + k] -= f * a[col * n + k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row * n + row];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Quasi-Newton step `Δb = -B⁻¹ r`, scaled down uniformly so that no
/// component exceeds `max_step[j]` in magnitude. `None` if `B` is singular.
pub fn broyden_step(residual: &[f64], jacobian: &Matrix, max_step: Option<&[f64]>) -> Option<Vec<f64>> {
    let mut step: Vec<f64> = jacobian.solve(residual)?.into_iter().map(|v| -v).collect();
    if let Some(caps) = max_step {
        let ratio = step.iter().zip(caps).map(|(s, c)| s.abs() / c).fold(0.0f64, f64::max);
        if ratio > 1.0 {
            for s in &mut step {
                *s /= ratio;
            }
        }
    }
    Some(step)
}

/// Rank-one update `B <- B + (Δr - B Δb) Δbᵀ / (Δbᵀ Δb)`, after which
/// `B Δb = Δr` holds.
pub fn broyden_update(jacobian: &mut Matrix, db: &[f64], dr: &[f64]) -> Result<()> {
    let denom: f64 = db.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("Broyden update with a zero step".into()));
    }
    let bdb = jacobian.mul_vec(db);
    let n = jacobian.n;
    for i in 0..n {
        let coef = (dr[i] - bdb[i]) / denom;
        for k in 0..n {
            jacobian.data[i * n + k] += coef * db[k];
        }
    }
    Ok(())
}

/// Settings of [`broyden_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct BroydenOptions {
    /// Converged when `max_j |r_j| <= tol`.
    pub tol: f64,
    /// Maximum number of quasi-Newton steps (each costs one residual
    /// evaluation; the finite-difference Jacobian costs `n` more).
    pub max_iter: usize,
    /// Per-component step cap; `None` for undamped steps.
    pub max_step: Option<Vec<f64>>,
    /// Initial Jacobian. `None` builds it by forward differences with
    /// `fd_step`.
    pub initial_jacobian: Option<Matrix>,
    pub fd_step: Vec<f64>,
    /// Diagonal used whenever the Jacobian approximation turns singular.
    pub reset_diagonal: Vec<f64>,
    /// After this many consecutive steps without improving the best residual,
    /// restart from the best iterate with a fresh finite-difference Jacobian.
    /// The solve stops if no progress follows a restart.
    pub restart_after: Option<usize>,
}

/// One evaluated iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct BroydenIterate {
    pub b: Vec<f64>,
    pub residual: Vec<f64>,
}

impl BroydenIterate {
    pub fn norm(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroydenOutcome {
    /// Best iterate by residual max-norm (ties go to the earlier iterate).
    pub best: BroydenIterate,
    /// Every quasi-Newton iterate, starting with the initial point
    /// (finite-difference probes are not listed).
    pub history: Vec<BroydenIterate>,
    pub converged: bool,
    pub resets: usize,
    pub stagnated: bool,
}

/// Finds a root of `residual` from `b0`.
pub fn broyden_solve<F>(mut residual: F, b0: &[f64], opts: &BroydenOptions) -> Result<BroydenOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b0.len();
    let mut eval = |b: &[f64]| -> Result<Vec<f64>> {
        let r = residual(b)?;
        if r.len() != n {
            return Err(Error::Dimension {
                context: "Broyden residual",
                expected: n,
                actual: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual"));
        }
        Ok(r)
    };
    let mut b = b0.to_vec();
    let mut r = eval(&b)?;
    let mut history = vec![BroydenIterate {
        b: b.clone(),
        residual: r.clone(),
    }];
    let done = |it: &BroydenIterate| it.norm() <= opts.tol;
    if done(&history[0]) {
        return Ok(BroydenOutcome {
            best: history[0].clone(),
            history,
            converged: true,
            resets: 0,
            stagnated: false,
        });
    }

    let reset = Matrix::diagonal(&opts.reset_diagonal);
    let mut resets = 0;
    let fd_jacobian = |b: &[f64], r: &[f64], eval: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>| -> Result<Matrix> {
        let mut cols = vec![0.0; n * n];
        for k in 0..n {
            let mut probe = b.to_vec();
            probe[k] += opts.fd_step[k];
            let rk = eval(&probe)?;
            for i in 0..n {
                cols[i * n + k] = (rk[i] - r[i]) / opts.fd_step[k];
            }
        }
        Ok(Matrix { n, data: cols })
    };
    let mut jac = match &opts.initial_jacobian {
        Some(j) => j.clone(),
        None => fd_jacobian(&b, &r, &mut eval)?,
    };

    let mut stagnated = false;
    let mut converged = false;
    let mut best_norm = history[0].norm();
    let mut since_best = 0;
    let mut restarted_at = None;
    for _ in 0..opts.max_iter {
        if opts.restart_after.is_some_and(|k| since_best >= k) {
            // A second restart from the same point would replay the same steps.
            if restarted_at == Some(best_norm) {
                log::info!("Broyden: no progress since the last restart, stopping");
                stagnated = true;
                break;
            }
            restarted_at = Some(best_norm);
            let best = history.iter().min_by(|a, c| a.norm().total_cmp(&c.norm())).expect("non-empty history");
            log::info!("Broyden: no progress in {since_best} steps, restarting from the best iterate");
            b.clone_from(&best.b);
            r.clone_from(&best.residual);
            jac = fd_jacobian(&b, &r, &mut eval)?;
            resets += 1;
            since_best = 0;
        }
        let step = match broyden_step(&r, &jac, opts.max_step.as_deref()) {
            Some(s) => s,
            None => {
                log::info!("Broyden: singular Jacobian approximation, resetting to scaled identity");
                resets += 1;
                jac = reset.clone();
                broyden_step(&r, &jac, opts.max_step.as_deref()).ok_or_else(|| {
                    Error::InvalidArgument("Broyden reset diagonal is singular".into())
                })?
            }
        };
        if step.iter().all(|s| *s == 0.0) {
            stagnated = true;
            break;
        }
        let b_new: Vec<f64> = b.iter().zip(&step).map(|(x, s)| x + s).collect();
        let r_new = eval(&b_new)?;
        let dr: Vec<f64> = r_new.iter().zip(&r).map(|(a, c)| a - c).collect();
        broyden_update(&mut jac, &step, &dr)?;
        b = b_new;
        r = r_new;
        let it = BroydenIterate {
            b: b.clone(),
            residual: r.clone(),
        };
        let finished = done(&it);
        if it.norm() < best_norm {
            best_norm = it.norm();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(it);
        if finished {
            converged = true;
            break;
        }
    }
    let best = history
        .iter()
        .fold(None::<&BroydenIterate>, |acc, it| match acc {
            Some(a) if a.norm() <= it.norm() => Some(a),
            _ => Some(it),
        })
        .expect("history is non-empty")
        .clone();
    Ok(BroydenOutcome {
        converged: converged || done(&best),
        best,
        history,
        resets,
        stagnated,
    })
}
