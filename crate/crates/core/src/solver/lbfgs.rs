//! Limited-memory BFGS.
//!
//! The step length comes from a bracketing search on the weak Wolfe conditions: the
//! trial step is halved while sufficient decrease fails and doubled while the slope is
//! still too negative. If the budget runs out, the last point with sufficient decrease
//! is taken.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `max |g_i| <= gtol`.
    pub gtol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant of the weak Wolfe condition.
    pub c2: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            gtol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

impl LbfgsResult {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Replaces the scaled identity as the initial inverse Hessian of the two-loop recursion.
pub trait Preconditioner {
    /// Called at every accepted iterate with the last step and gradient change, if any.
    fn refresh(&mut self, x: &[f64], pair: Option<(&[f64], &[f64])>) -> Result<()>;
    /// Applies the initial inverse Hessian in place.
    fn apply(&self, q: &mut [f64]);
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_preconditioned(f, x0, opts, None)
}

pub fn minimize_preconditioned<F>(
    mut f: F,
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    mut precond: Option<&mut (dyn Preconditioner + '_)>,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;
    if let Some(p) = precond.as_deref_mut() {
        p.refresh(&x, None)?;
    }
    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.gtol {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut d = direction(&g, &history, precond.as_deref());
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let step = if history.is_empty() && precond.is_none() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let accepted = line_search(&mut f, &x, fx, &d, slope, step, opts, &mut evaluations)?;
        let Some((xn, fnew, gn)) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if let Some(p) = precond.as_deref_mut() {
            p.refresh(&xn, Some((&s, &y)))?;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        g = gn;
        iterations += 1;
    }
    if status == LbfgsStatus::MaxIterations && inf_norm(&g) <= opts.gtol {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        grad: g,
        iterations,
        evaluations,
        status,
    })
}

type Point = (Vec<f64>, f64, Vec<f64>);

#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    d: &[f64],
    slope: f64,
    mut step: f64,
    opts: &LbfgsOptions,
    evaluations: &mut usize,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut fallback: Option<Point> = None;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + step * di).collect();
        let (ft, gt) = f(&trial)?;
        *evaluations += 1;
        if !ft.is_finite() || ft > fx + opts.c1 * step * slope {
            hi = step;
        } else if dot(&gt, d) < opts.c2 * slope {
            lo = step;
            fallback = Some((trial, ft, gt));
        } else {
            return Ok(Some((trial, ft, gt)));
        }
        step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
    }
    Ok(fallback)
}

/// Two-loop recursion: `-H g` with the stored curvature pairs.
fn direction(
    g: &[f64],
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    precond: Option<&(dyn Preconditioner + '_)>,
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(p) = precond {
        p.apply(&mut q);
    } else if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
