//! Adaptive L-stable integrator for the linear system dY/dt = Y·Q(t).
//!
//! Five-stage, stiffly accurate SDIRK of order 4 with an embedded order-3
//! solution for error control (Hairer & Wanner, SDIRK4, γ = 1/4). The state is
//! a block of row vectors sharing one step-size sequence, so the same routine
//! solves the master equation (one row) and the forward equation for the
//! transition matrix (six rows).
//!
//! Stage equations are linear in the stage slope; because every generator of
//! the progression-only chain is upper triangular, each stage reduces to a
//! forward substitution.

use crate::error::{Error, Result};
use crate::linalg::{Mat6, Vec6, N};

const GAMMA: f64 = 0.25;
const C: [f64; 5] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
const A: [[f64; 4]; 5] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0],
];
const B: [f64; 5] = [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25];
const B_HAT: [f64; 5] = [59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0];

const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Solves `x · (I − h γ Q) = r` for an upper-triangular `Q`.
#[inline]
fn stage_solve(r: &Vec6, q: &Mat6, hg: f64) -> Vec6 {
    let mut x = [0.0; N];
    for j in 0..N {
        let mut s = r[j];
        for i in 0..j {
            s += x[i] * hg * q[i][j];
        }
        x[j] = s / (1.0 - hg * q[j][j]);
    }
    x
}

#[inline]
fn row_times(v: &Vec6, q: &Mat6) -> Vec6 {
    let mut out = [0.0; N];
    for i in 0..N {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for j in i..N {
            out[j] += vi * q[i][j];
        }
    }
    out
}

/// Integrates `dY/dt = Y Q(t)` from `(t0, y0)` and returns `Y` at each of
/// `outputs`, which must be non-decreasing and not before `t0`.
pub(crate) fn integrate<F>(
    rates: F,
    y0: Vec<Vec6>,
    t0: f64,
    outputs: &[f64],
    tol: Tolerances,
) -> Result<Vec<Vec<Vec6>>>
where
    F: Fn(f64) -> Mat6,
{
    let rows = y0.len();
    let mut y = y0;
    let mut t = t0;
    let mut results = Vec::with_capacity(outputs.len());
    if outputs.is_empty() {
        return Ok(results);
    }

    let q0 = rates(t0);
    let stiffness = (0..N).map(|i| q0[i][i].abs()).fold(0.0, f64::max);
    let mut h = (0.05 / stiffness.max(1e-3)).min(1.0);
    let mut steps = 0usize;

    let mut k = vec![[[0.0; N]; 5]; rows];
    let mut y_new = vec![[0.0; N]; rows];

    for &t_out in outputs {
        if t_out < t {
            return Err(Error::Domain(format!(
                "output times must be non-decreasing from {t0}, got {t_out} after {t}"
            )));
        }
        while t < t_out {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integration {
                    t,
                    reason: "maximum number of steps exceeded".into(),
                });
            }
            let remaining = t_out - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let step = if landing { remaining } else { h };

            let mut finite = true;
            for s in 0..5 {
                let q = rates(t + C[s] * step);
                for r in 0..rows {
                    let mut z = y[r];
                    for (j, &a) in A[s].iter().enumerate().take(s) {
                        if a != 0.0 {
                            for c in 0..N {
                                z[c] += step * a * k[r][j][c];
                            }
                        }
                    }
                    let slope = stage_solve(&row_times(&z, &q), &q, step * GAMMA);
                    finite &= slope.iter().all(|v| v.is_finite());
                    k[r][s] = slope;
                }
            }

            let mut err_sq = 0.0;
            for r in 0..rows {
                for c in 0..N {
                    let mut incr = 0.0;
                    let mut diff = 0.0;
                    for s in 0..5 {
                        incr += B[s] * k[r][s][c];
                        diff += (B[s] - B_HAT[s]) * k[r][s][c];
                    }
                    let next = y[r][c] + step * incr;
                    y_new[r][c] = next;
                    let sc = tol.atol + tol.rtol * y[r][c].abs().max(next.abs());
                    let e = step * diff / sc;
                    err_sq += e * e;
                }
            }
            let err = (err_sq / (rows * N) as f64).sqrt();

            if finite && err <= 1.0 {
                t = if landing { t_out } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.25)).clamp(0.2, 5.0)
                };
                // Do not let a short landing step shrink the next step.
                h = if landing { h.max(step * factor) } else { step * factor };
            } else {
                let factor = if finite {
                    (0.9 * err.powf(-0.25)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h = step * factor;
                if h < 1e-12 * t.abs().max(1.0) {
                    return Err(Error::Integration {
                        t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
        results.push(y.clone());
    }
    Ok(results)
}
