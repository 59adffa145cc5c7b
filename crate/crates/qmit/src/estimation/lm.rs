//! Damped least squares (Levenberg–Marquardt) with central-difference
//! Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    /// Stop when every gradient component is this orthogonal to the residual.
    pub gtol: f64,
    pub initial_lambda: f64,
    /// Finite-difference step relative to `|p| + typical`.
    pub fd_relative_step: f64,
    /// Residual norm treated as an exact fit, typically a rounding-level
    /// fraction of the data norm.
    pub residual_floor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
            gtol: 1e-13,
            initial_lambda: 1e-3,
            fd_relative_step: f64::EPSILON.cbrt(),
            residual_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Jacobian of the residuals at `params`.
    pub jacobian: DMatrix<f64>,
}

fn norm2(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, p: &[f64], typical: &[f64], rel: f64, m: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = rel * (p[j].abs() + typical[j]);
        q[j] = p[j] + h;
        let up = f(&q);
        q[j] = p[j] - h;
        let down = f(&q);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `‖f(p)‖²` from `p0`. `typical` sets the magnitude below which a
/// parameter is considered zero when choosing difference steps.
pub fn levenberg_marquardt(
    f: impl Fn(&[f64]) -> Vec<f64>,
    p0: &[f64],
    typical: &[f64],
    opts: &LmOptions,
) -> Result<LmSolution> {
    if typical.len() != p0.len() {
        return Err(Error::invalid("typical", "one scale per parameter required"));
    }
    let mut p = p0.to_vec();
    let mut r = f(&p);
    let m = r.len();
    if m < 1 || r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("residuals are empty or not finite at the initial guess".into()));
    }
    let mut cost = norm2(&r);
    let mut lambda = opts.initial_lambda;
    let n = p.len();

    for iter in 1..=opts.max_iterations {
        let jac = jacobian(&f, &p, typical, opts.fd_relative_step, m);
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        let a = jac.transpose() * &jac;

        let rn = cost.sqrt();
        let grad_cos = (0..n)
            .map(|j| {
                let col = a[(j, j)].sqrt();
                if col > 0.0 && rn > 0.0 {
                    g[j].abs() / (col * rn)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if rn <= opts.residual_floor || grad_cos <= opts.gtol {
            return Ok(finish(p, r, iter, jac));
        }

        let max_diag = (0..n).map(|j| a[(j, j)]).fold(0.0, f64::max);
        loop {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&g)));
            if let Some(step) = step {
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                let r_trial = f(&trial);
                let cost_trial = norm2(&r_trial);
                if cost_trial.is_finite() && cost_trial < cost {
                    let reduction = (cost - cost_trial) / cost;
                    let p_norm = trial.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let small_step = step.norm() <= opts.xtol * (p_norm + opts.xtol);
                    p = trial;
                    r = r_trial;
                    cost = cost_trial;
                    lambda = (lambda / 10.0).max(1e-15);
                    if cost.sqrt() <= opts.residual_floor || small_step || reduction <= opts.ftol {
                        let jac = jacobian(&f, &p, typical, opts.fd_relative_step, m);
                        return Ok(finish(p, r, iter, jac));
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no downhill step exists at working precision
                if grad_cos <= 1e-6 {
                    return Ok(finish(p, r, iter, jac));
                }
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual_norm: cost.sqrt(),
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual_norm: cost.sqrt(),
    })
}

fn finish(params: Vec<f64>, residuals: Vec<f64>, iterations: usize, jacobian: DMatrix<f64>) -> LmSolution {
    LmSolution {
        residual_norm: norm2(&residuals).sqrt(),
        params,
        residuals,
        iterations,
        jacobian,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
        let sol = levenberg_marquardt(f, &[-1.2, 1.0], &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!((sol.params[0] - 1.0).abs() < 1e-10);
        assert!((sol.params[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn linear_problem_solved_exactly() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let f = |p: &[f64]| xs.iter().map(|x| p[0] + p[1] * x - (2.0 + 0.5 * x)).collect::<Vec<_>>();
        let sol = levenberg_marquardt(f, &[0.0, 0.0], &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!((sol.params[0] - 2.0).abs() < 1e-10 && (sol.params[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let f = |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        let err = levenberg_marquardt(f, &[-1.2, 1.0], &[1.0, 1.0], &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 2, .. }));
    }
}
