//! Box- and simplex-constrained local minimisation by sequential quadratic
//! programming with finite-difference gradients and a damped BFGS model.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const KKT_TOLERANCE: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpConfig {
    /// Finite-difference step, in units of each variable's bound width.
    pub eps: f64,
    pub ftol: f64,
    pub max_iterations: usize,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            eps: 1e-5,
            ftol: 1e-50,
            max_iterations: 300,
        }
    }
}

impl SqpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.ftol > 0.0 && self.max_iterations > 0) {
            return Err(Error::Domain(format!("SQP settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Feasible set: `lower ≤ x ≤ upper`, and optionally `Σ x[simplex] = 1`.
/// Variables in the simplex range must have bounds `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub simplex: Option<Range<usize>>,
}

impl Constraints {
    fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n {
            return Err(Error::Domain("bounds must be non-empty and of equal length".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Domain("every lower bound must be finite and below its upper bound".into()));
        }
        if let Some(r) = &self.simplex {
            if r.end > n || r.is_empty() || r.clone().any(|i| self.lower[i] != 0.0 || self.upper[i] != 1.0) {
                return Err(Error::Domain("simplex variables must lie inside the vector with bounds [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn in_simplex(&self, i: usize) -> bool {
        self.simplex.as_ref().is_some_and(|r| r.contains(&i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SqpStatus {
    /// Objective change fell below `ftol`.
    ObjectiveChange,
    /// First-order optimality residual fell below tolerance.
    Stationary,
    MaxIterations,
    /// No decrease along the search direction.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: SqpStatus,
    pub converged: bool,
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - tau).max(0.0));
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// Minimiser over the scaled unit box `u ∈ [0, 1]ⁿ`.
struct Scaled<'a, F> {
    f: F,
    c: &'a Constraints,
    evaluations: usize,
    x: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> Scaled<'_, F> {
    fn to_x(&mut self, u: &[f64]) {
        for (i, &ui) in u.iter().enumerate() {
            self.x[i] = if self.c.in_simplex(i) {
                ui
            } else {
                self.c.lower[i] + ui * (self.c.upper[i] - self.c.lower[i])
            };
        }
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evaluations += 1;
        self.to_x(u);
        let v = (self.f)(&self.x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Forward differences, backward where the forward point leaves the box.
    fn gradient(&mut self, u: &[f64], f0: f64, eps: f64) -> Vec<f64> {
        let mut probe = u.to_vec();
        (0..u.len())
            .map(|i| {
                let h = if u[i] + eps <= 1.0 { eps } else { -eps };
                probe[i] = u[i] + h;
                let fi = self.eval(&probe);
                probe[i] = u[i];
                (fi - f0) / h
            })
            .collect()
    }
}

/// Minimises `f` subject to `constraints`, starting from `x0`.
///
/// `f` is also evaluated at finite-difference points that perturb a single
/// simplex coordinate and so sit just off the simplex. An infeasible `x0` is
/// projected onto the feasible set first. The best feasible point seen is
/// returned whatever the outcome.
pub fn minimize<F>(f: F, x0: &[f64], constraints: &Constraints, config: &SqpConfig) -> Result<SqpResult>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    constraints.validate()?;
    let n = constraints.lower.len();
    if x0.len() != n {
        return Err(Error::Domain(format!("start has {} entries, bounds have {n}", x0.len())));
    }
    let group: Vec<usize> = constraints.simplex.clone().map(|r| r.collect()).unwrap_or_default();

    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            let v = if x0[i].is_finite() { x0[i] } else { constraints.lower[i] };
            if constraints.in_simplex(i) {
                v
            } else {
                ((v - constraints.lower[i]) / (constraints.upper[i] - constraints.lower[i])).clamp(0.0, 1.0)
            }
        })
        .collect();
    if let Some(r) = &constraints.simplex {
        project_simplex(&mut u[r.clone()]);
    }

    let mut problem = Scaled {
        f,
        c: constraints,
        evaluations: 0,
        x: vec![0.0; n],
    };
    let mut fu = problem.eval(&u);
    if !fu.is_finite() {
        return Err(Error::Initialization("objective is not finite at the starting point".into()));
    }
    let mut g = problem.gradient(&u, fu, config.eps);
    let mut b = scaled_identity(n, g.iter().fold(1.0f64, |m, v| m.max(v.abs())));
    let mut first_update = true;
    let mut status = SqpStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        if kkt_residual(&g, &u, &group) < KKT_TOLERANCE {
            status = SqpStatus::Stationary;
            break;
        }
        let mut d = solve_qp(&b, &g, &u, &group);
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            // model lost positive curvature along the feasible set: restart it
            b = scaled_identity(n, g.iter().fold(1.0f64, |m, v| m.max(v.abs())));
            first_update = true;
            d = solve_qp(&b, &g, &u, &group);
            slope = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        }
        if d.iter().all(|v| v.abs() < 1e-15) {
            status = SqpStatus::Stationary;
            break;
        }
        let mut alpha = 1.0;
        let mut next = None;
        if slope < 0.0 {
            for _ in 0..MAX_HALVINGS {
                let mut trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| (a + alpha * b).clamp(0.0, 1.0)).collect();
                if !group.is_empty() {
                    let s: f64 = group.iter().map(|&i| trial[i]).sum();
                    group.iter().for_each(|&i| trial[i] /= s);
                }
                let ft = problem.eval(&trial);
                if ft <= fu + ARMIJO * alpha * slope {
                    next = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((u_new, f_new)) = next else {
            status = SqpStatus::LineSearchFailed;
            break;
        };
        let change = fu - f_new;
        let g_new = problem.gradient(&u_new, f_new, config.eps);
        let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if first_update {
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|v| v * v).sum();
            if sy > 0.0 && yy > 0.0 {
                b = scaled_identity(n, yy / sy);
            }
            first_update = false;
        }
        bfgs_update(&mut b, &s, &y);
        u = u_new;
        fu = f_new;
        g = g_new;
        if change.abs() < config.ftol {
            status = SqpStatus::ObjectiveChange;
            break;
        }
    }
    problem.to_x(&u);
    Ok(SqpResult {
        x: problem.x.clone(),
        f: fu,
        iterations,
        evaluations: problem.evaluations,
        status,
        converged: matches!(status, SqpStatus::ObjectiveChange | SqpStatus::Stationary),
    })
}

fn scaled_identity(n: usize, s: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect())
        .collect()
}

/// Powell-damped BFGS update; keeps `b` positive definite.
fn bfgs_update(b: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let n = s.len();
    let bs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i][j] * s[j]).sum()).collect();
    let sbs: f64 = s.iter().zip(&bs).map(|(a, b)| a * b).sum();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(sbs > 1e-300) {
        return;
    }
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r: Vec<f64> = (0..n).map(|i| theta * y[i] + (1.0 - theta) * bs[i]).collect();
    let sr: f64 = s.iter().zip(&r).map(|(a, b)| a * b).sum();
    if !(sr > 1e-300) {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i][j] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

/// Multiplier of the simplex equality from the free simplex coordinates.
fn simplex_multiplier(g: &[f64], u: &[f64], group: &[usize]) -> f64 {
    let free: Vec<f64> = group.iter().filter(|&&i| u[i] > 0.0 && u[i] < 1.0).map(|&i| g[i]).collect();
    if free.is_empty() {
        // all simplex coordinates at bounds: any multiplier between the
        // extreme gradients is admissible; take the midpoint
        let lo = group.iter().map(|&i| g[i]).fold(f64::INFINITY, f64::min);
        let hi = group.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        -(lo + hi) / 2.0
    } else {
        -free.iter().sum::<f64>() / free.len() as f64
    }
}

/// Largest violation of the first-order optimality conditions.
fn kkt_residual(g: &[f64], u: &[f64], group: &[usize]) -> f64 {
    let lambda = if group.is_empty() { 0.0 } else { simplex_multiplier(g, u, group) };
    (0..g.len())
        .map(|i| {
            let r = g[i] + if group.contains(&i) { lambda } else { 0.0 };
            if u[i] <= 0.0 {
                (-r).max(0.0)
            } else if u[i] >= 1.0 {
                r.max(0.0)
            } else {
                r.abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fixed {
    Lower,
    Upper,
}

/// Primal active-set solution of
/// `min g·d + ½ dᵀBd` s.t. `0 ≤ u + d ≤ 1` and `Σ_group d = 0`.
fn solve_qp(b: &[Vec<f64>], g: &[f64], u: &[f64], group: &[usize]) -> Vec<f64> {
    let n = g.len();
    let mut d = vec![0.0; n];
    let mut fixed: Vec<Option<Fixed>> = u
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                Some(Fixed::Lower)
            } else if v >= 1.0 {
                Some(Fixed::Upper)
            } else {
                None
            }
        })
        .collect();
    for _ in 0..(10 * n + 50) {
        let grad: Vec<f64> = (0..n).map(|i| g[i] + (0..n).map(|j| b[i][j] * d[j]).sum::<f64>()).collect();
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let free_group: Vec<usize> = free.iter().copied().filter(|i| group.contains(i)).collect();
        let m = free.len() + usize::from(!free_group.is_empty());
        let mut p = vec![0.0; n];
        let mut lambda = 0.0;
        if m > 0 {
            let mut a = vec![vec![0.0; m]; m];
            let mut rhs = vec![0.0; m];
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    a[r][c] = b[i][j];
                }
                rhs[r] = -grad[i];
            }
            if !free_group.is_empty() {
                let last = m - 1;
                for (r, &i) in free.iter().enumerate() {
                    if group.contains(&i) {
                        a[r][last] = 1.0;
                        a[last][r] = 1.0;
                    }
                }
                let sum: f64 = group.iter().map(|&i| u[i] + d[i]).sum();
                rhs[last] = 1.0 - sum;
            }
            match solve_dense(a, rhs) {
                Some(sol) => {
                    for (r, &i) in free.iter().enumerate() {
                        p[i] = sol[r];
                    }
                    if !free_group.is_empty() {
                        lambda = sol[m - 1];
                    }
                }
                None => return d,
            }
        }
        let scale = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale < 1e-14 {
            // stationary on the working set: release the worst wrong-signed bound
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                let r = grad[i] + if group.contains(&i) { lambda } else { 0.0 };
                let violation = match fixed[i] {
                    Some(Fixed::Lower) => -r,
                    Some(Fixed::Upper) => r,
                    None => continue,
                };
                if violation > 1e-12 && worst.is_none_or(|(_, w)| violation > w) {
                    worst = Some((i, violation));
                }
            }
            match worst {
                Some((i, _)) => fixed[i] = None,
                None => return d,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..n {
            let x = u[i] + d[i];
            let limit = if p[i] < 0.0 {
                (0.0 - x) / p[i]
            } else if p[i] > 0.0 {
                (1.0 - x) / p[i]
            } else {
                continue;
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((i, if p[i] < 0.0 { Fixed::Lower } else { Fixed::Upper }));
            }
        }
        for i in 0..n {
            d[i] += alpha * p[i];
        }
        if let Some((i, side)) = blocking {
            d[i] = if side == Fixed::Lower { -u[i] } else { 1.0 - u[i] };
            fixed[i] = Some(side);
        } else {
            return d;
        }
    }
    d
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box(n: usize) -> Constraints {
        Constraints {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            simplex: None,
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = minimize(|x| (x[0] - 0.3).powi(2), &[0.9], &unit_box(1), &SqpConfig::default()).unwrap();
        assert!((r.x[0] - 0.3).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn start_at_optimum_is_kept() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2);
        let r = minimize(f, &[0.3, 0.6], &unit_box(2), &SqpConfig::default()).unwrap();
        assert_eq!(r.x, vec![0.3, 0.6]);
        assert_eq!(r.f, 0.0);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn active_bounds_and_scaling() {
        // unconstrained optimum (−5, 40) lies outside the box
        let c = Constraints {
            lower: vec![1.0, -2.0],
            upper: vec![500.0, 3.0],
            simplex: None,
        };
        let f = |x: &[f64]| (x[0] + 5.0).powi(2) / 100.0 + (x[1] - 40.0).powi(2);
        let r = minimize(f, &[250.0, 0.0], &c, &SqpConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 3.0).abs() < 1e-6, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock_in_a_box() {
        let c = Constraints {
            lower: vec![-2.0, -2.0],
            upper: vec![2.0, 2.0],
            simplex: None,
        };
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        // forward-difference bias along the curved valley is ~cond(H)·eps,
        // so use a finer step than the default here
        let cfg = SqpConfig {
            eps: 1e-8,
            ..SqpConfig::default()
        };
        let r = minimize(f, &[-1.2, 1.0], &c, &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{r:?}");
    }

    #[test]
    fn simplex_constrained_quadratic() {
        // min Σ (x_i − t_i)² on the simplex: the projection of t
        let target = [0.5, 0.4, 0.3, -0.2];
        let c = Constraints {
            lower: vec![0.0; 4],
            upper: vec![1.0; 4],
            simplex: Some(0..4),
        };
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let r = minimize(f, &[0.25; 4], &c, &SqpConfig::default()).unwrap();
        let mut expected = target;
        project_simplex(&mut expected);
        for (a, b) in r.x.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-5, "{:?} vs {expected:?}", r.x);
        }
        assert!((r.x.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_start_is_projected() {
        let c = Constraints {
            lower: vec![0.0, 0.0, 0.0, 5.0],
            upper: vec![1.0, 1.0, 1.0, 10.0],
            simplex: Some(0..3),
        };
        let r = minimize(|x| x[3] + x[0], &[2.0, -1.0, 0.5, 50.0], &c, &SqpConfig::default()).unwrap();
        assert!((r.x[..3].iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(r.x[0] < 1e-6 && (r.x[3] - 5.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_bad_problems() {
        let f = |x: &[f64]| x[0];
        assert!(minimize(f, &[0.5], &unit_box(1), &SqpConfig { eps: 0.0, ..Default::default() }).is_err());
        assert!(minimize(f, &[0.5, 0.5], &unit_box(1), &SqpConfig::default()).is_err());
        let bad = Constraints {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 2.0],
            simplex: Some(0..2),
        };
        assert!(minimize(f, &[0.5, 0.5], &bad, &SqpConfig::default()).is_err());
        assert!(minimize(|_| f64::NAN, &[0.5], &unit_box(1), &SqpConfig::default()).is_err());
    }

    #[test]
    fn simplex_projection() {
        let mut v = [0.2, 0.2, 0.2];
        project_simplex(&mut v);
        for x in v {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut w = [3.0, 0.0, -1.0];
        project_simplex(&mut w);
        assert_eq!(w, [1.0, 0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn output_feasible_and_never_worse(
            start in prop::collection::vec(0.0..1.0f64, 5),
            target in prop::collection::vec(-0.5..1.5f64, 5),
        ) {
            let c = Constraints { lower: vec![0.0; 5], upper: vec![1.0; 5], simplex: Some(1..5) };
            let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(4) + a * b).sum::<f64>();
            let mut x0 = start.clone();
            project_simplex(&mut x0[1..5]);
            let r = minimize(f, &x0, &c, &SqpConfig::default()).unwrap();
            prop_assert!((r.x[1..].iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(r.f <= f(&x0) + 1e-12);
        }
    }
}
