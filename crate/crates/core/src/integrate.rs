//! Fixed-step classical RK4 on a time grid.

use nalgebra::DVector;

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::ProblemDef;

/// State samples on a grid together with the parameters they were produced with.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<DVector<f64>>,
    params: DVector<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<DVector<f64>>, params: DVector<f64>) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} rows for a grid of {} nodes",
                states.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, states, params })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Column `j` across all nodes.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }
}

/// Integrates `x' = f(x, p, u, t)` from `x_init` at `grid.t0()` with one RK4 step per interval.
pub fn integrate(
    prob: &ProblemDef,
    x_init: &DVector<f64>,
    u: &ControlSignal,
    grid: &TimeGrid,
    p: &DVector<f64>,
) -> Result<Trajectory> {
    let tol = 1e-12 * (1.0 + prob.tf().abs());
    if (grid.t0() - prob.t0()).abs() > tol || (grid.tf() - prob.tf()).abs() > tol {
        return Err(Error::InvalidGrid(format!(
            "grid spans [{}, {}] but the problem horizon is [{}, {}]",
            grid.t0(),
            grid.tf(),
            prob.t0(),
            prob.tf()
        )));
    }
    check_inputs(prob, x_init, u, p)?;
    let states = rk4_states(prob, x_init, u, grid.nodes(), p, 0)?;
    Trajectory::new(grid.clone(), states, p.clone())
}

fn check_inputs(prob: &ProblemDef, x: &DVector<f64>, u: &ControlSignal, p: &DVector<f64>) -> Result<()> {
    let d = prob.dims();
    if x.len() != d.n {
        return Err(Error::InvalidArgument(format!(
            "initial state has length {}, expected {}",
            x.len(),
            d.n
        )));
    }
    if p.len() != d.l {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has length {}, expected {}",
            p.len(),
            d.l
        )));
    }
    if u.dim() != d.m {
        return Err(Error::InvalidArgument(format!(
            "control has {} channels, expected {}",
            u.dim(),
            d.m
        )));
    }
    Ok(())
}

/// RK4 over consecutive `nodes`; `offset` is added to node indices in errors.
pub(crate) fn rk4_states(
    prob: &ProblemDef,
    x_init: &DVector<f64>,
    u: &ControlSignal,
    nodes: &[f64],
    p: &DVector<f64>,
    offset: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut x = x_init.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            node: offset,
            what: "state",
        });
    }
    out.push(x.clone());
    for (i, w) in nodes.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        let tm = a + 0.5 * h;
        let ua = u.eval_within(a, a, b);
        let um = u.eval_within(tm, a, b);
        let ub = u.eval_within(b, a, b);
        let k1 = prob.f(&x, p, &ua, a);
        let k2 = prob.f(&(&x + &k1 * (0.5 * h)), p, &um, tm);
        let k3 = prob.f(&(&x + &k2 * (0.5 * h)), p, &um, tm);
        let k4 = prob.f(&(&x + &k3 * h), p, &ub, b);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                node: offset + i + 1,
                what: "state",
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// State, control and time at the ends and midpoint of one interval of a stored trajectory.
///
/// The midpoint state is the cubic Hermite interpolant built from the end states and
/// their derivatives.
pub(crate) struct Segment {
    pub t: [f64; 3],
    pub x: [DVector<f64>; 3],
    pub u: [DVector<f64>; 3],
}

impl Segment {
    pub fn h(&self) -> f64 {
        self.t[2] - self.t[0]
    }
}

pub(crate) fn segment(
    prob: &ProblemDef,
    states: &[DVector<f64>],
    nodes: &[f64],
    u: &ControlSignal,
    p: &DVector<f64>,
    i: usize,
) -> Segment {
    let (a, b) = (nodes[i], nodes[i + 1]);
    let h = b - a;
    let tm = a + 0.5 * h;
    let ua = u.eval_within(a, a, b);
    let um = u.eval_within(tm, a, b);
    let ub = u.eval_within(b, a, b);
    let xa = &states[i];
    let xb = &states[i + 1];
    let da = prob.f(xa, p, &ua, a);
    let db = prob.f(xb, p, &ub, b);
    let xm = hermite_midpoint(xa, xb, &da, &db, h);
    Segment {
        t: [a, tm, b],
        x: [xa.clone(), xm, xb.clone()],
        u: [ua, um, ub],
    }
}

/// Cubic Hermite interpolant at the interval midpoint.
pub fn hermite_midpoint(
    xa: &DVector<f64>,
    xb: &DVector<f64>,
    da: &DVector<f64>,
    db: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    (xa + xb) * 0.5 + (da - db) * (h / 8.0)
}
