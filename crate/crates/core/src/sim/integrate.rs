//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// Advances `state` by `dt` with `substeps` equal classical RK4 steps.
///
/// `rate(x, dx)` writes the time derivative at `x` into `dx`; control and
/// parameter values are captured by the closure and held constant over the
/// interval. `t0` is only used to report where a failure happened.
pub fn rk4_step<F>(mut rate: F, state: &[f64], dt: f64, substeps: usize, t0: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::InvalidArgument(format!(
            "rk4 needs dt > 0 and substeps >= 1 (dt = {dt}, substeps = {substeps})"
        )));
    }
    let n = state.len();
    let h = dt / substeps as f64;
    let mut x = state.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for step in 0..substeps {
        let t = t0 + step as f64 * h;
        let mut eval = |x: &[f64], k: &mut [f64], at: f64| -> Result<()> {
            rate(x, k)?;
            if k.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::Integration { time: at })
            }
        };

        eval(&x, &mut k1, t)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        eval(&tmp, &mut k2, t + 0.5 * h)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        eval(&tmp, &mut k3, t + 0.5 * h)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        eval(&tmp, &mut k4, t + h)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Integration { time: t0 + dt })
    }
}
