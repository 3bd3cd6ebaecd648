//! Augmented-Lagrangian method of multipliers for equality-constrained programs.
//!
//! Minimizes `f(w) + y^T c(w) + rho/2 |c(w)|^2` with L-BFGS for fixed `(y, rho)`, then
//! updates `y <- y + rho c` and grows `rho` whenever the violation fails to drop by 4x.

use crate::error::{Error, Result};
use crate::solver::lbfgs::{inf_norm, minimize_preconditioned, LbfgsOptions, LbfgsStatus, Preconditioner};

/// An equality-constrained program `min f(w) s.t. c(w) = 0`.
pub trait EqualityProgram {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Objective and constraint values.
    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Objective, constraints and the gradient of `f + v^T c` with `v = y + rho c(w)`.
    fn lagrangian_gradient(&self, w: &[f64], y: &[f64], rho: f64) -> Result<(f64, Vec<f64>, Vec<f64>)>;
    /// Optional initial inverse Hessian for the inner solves at penalty `rho`.
    fn preconditioner(&self, _rho: f64) -> Option<Box<dyn Preconditioner + '_>> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AugLagOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub constraint_tol: f64,
    pub stationarity_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub memory: usize,
}

impl Default for AugLagOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            max_inner: 200,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-6,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugLagResult {
    pub w: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    pub penalty: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub message: String,
}

pub fn solve<P: EqualityProgram>(prog: &P, w0: Vec<f64>, opts: &AugLagOptions) -> Result<AugLagResult> {
    let mut w = w0;
    let mut y = vec![0.0; prog.num_constraints()];
    let mut rho = opts.initial_penalty;
    let (f0, c0) = prog.evaluate(&w)?;
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut prev_violation = inf_norm(&c0);
    let inner = LbfgsOptions {
        memory: opts.memory,
        max_iter: opts.max_inner,
        gtol: opts.stationarity_tol,
        ..Default::default()
    };
    let mut inner_total = 0;
    let mut stalled = 0;
    let mut result = AugLagResult {
        w: w.clone(),
        multipliers: y.clone(),
        objective: f0,
        max_violation: prev_violation,
        stationarity: f64::INFINITY,
        penalty: rho,
        outer_iterations: 0,
        inner_iterations: 0,
        converged: false,
        message: "no iterations".into(),
    };
    for outer in 1..=opts.max_outer {
        let merit = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (f, c, g) = prog.lagrangian_gradient(x, &y, rho)?;
            let value = f + c
                .iter()
                .zip(&y)
                .map(|(ci, yi)| yi * ci + 0.5 * rho * ci * ci)
                .sum::<f64>();
            Ok((value, g))
        };
        let mut pre = prog.preconditioner(rho);
        let r = minimize_preconditioned(merit, w.clone(), &inner, pre.as_deref_mut())?;
        inner_total += r.iterations;
        w = r.x.clone();
        let (f, c) = prog.evaluate(&w)?;
        if !f.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        let violation = inf_norm(&c);
        let stationarity = r.grad_norm();
        result = AugLagResult {
            w: w.clone(),
            multipliers: y.clone(),
            objective: f,
            max_violation: violation,
            stationarity,
            penalty: rho,
            outer_iterations: outer,
            inner_iterations: inner_total,
            converged: false,
            message: String::new(),
        };
        if violation <= opts.constraint_tol && stationarity <= opts.stationarity_tol * (1.0 + f.abs()) {
            result.converged = true;
            result.message = "converged".into();
            return Ok(result);
        }
        if r.status == LbfgsStatus::LineSearchFailed && r.iterations == 0 {
            stalled += 1;
            if stalled >= 3 && violation <= opts.constraint_tol {
                result.message = "line search failed".into();
                return Ok(result);
            }
        } else {
            stalled = 0;
        }
        for (yi, ci) in y.iter_mut().zip(&c) {
            *yi += rho * ci;
        }
        if violation > opts.constraint_tol && violation > 0.25 * prev_violation {
            if rho >= opts.max_penalty && violation > opts.constraint_tol {
                result.message = "penalty limit reached".into();
                return Ok(result);
            }
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_violation = violation;
    }
    result.message = "outer iteration limit".into();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x^2 + 2 y^2 + z^2 s.t. x + y + z = 1, x - z = 0.5
    struct Quadratic;

    impl EqualityProgram for Quadratic {
        fn num_vars(&self) -> usize {
            3
        }
        fn num_constraints(&self) -> usize {
            2
        }
        fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
            let f = w[0] * w[0] + 2.0 * w[1] * w[1] + w[2] * w[2];
            Ok((f, vec![w[0] + w[1] + w[2] - 1.0, w[0] - w[2] - 0.5]))
        }
        fn lagrangian_gradient(&self, w: &[f64], y: &[f64], rho: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let (f, c) = self.evaluate(w)?;
            let v: Vec<f64> = c.iter().zip(y).map(|(ci, yi)| yi + rho * ci).collect();
            let g = vec![
                2.0 * w[0] + v[0] + v[1],
                4.0 * w[1] + v[0],
                2.0 * w[2] + v[0] - v[1],
            ];
            Ok((f, c, g))
        }
    }

    #[test]
    fn solves_equality_qp() {
        let r = solve(&Quadratic, vec![0.0; 3], &AugLagOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        // KKT solution: x = 0.65, y = 0.2, z = 0.15
        assert!((r.w[0] - 0.65).abs() < 1e-5);
        assert!((r.w[1] - 0.2).abs() < 1e-5);
        assert!((r.w[2] - 0.15).abs() < 1e-5);
        assert!(r.max_violation <= 1e-6);
    }

    /// Infeasible: x = 0 and x = 1.
    struct Infeasible;

    impl EqualityProgram for Infeasible {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            2
        }
        fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![w[0], w[0] - 1.0]))
        }
        fn lagrangian_gradient(&self, w: &[f64], y: &[f64], rho: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let (f, c) = self.evaluate(w)?;
            let g = vec![y[0] + rho * c[0] + y[1] + rho * c[1]];
            Ok((f, c, g))
        }
    }

    #[test]
    fn infeasible_program_is_not_converged() {
        let r = solve(&Infeasible, vec![3.0], &AugLagOptions::default()).unwrap();
        assert!(!r.converged);
        assert!(r.max_violation >= 0.5 - 1e-6);
    }
}
