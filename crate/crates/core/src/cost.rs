//! Cost functional and cost-to-go along a stored trajectory.
//!
//! Both use the same per-interval quadrature as the collocation transcription, so the
//! split `J = int_{t0}^{t} L + C(t)` is an identity of partial sums.

use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::integrate::{segment, Trajectory};
use crate::problem::ProblemDef;

/// Per-interval quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// `h/2 (g_a + g_b)`.
    Trapezoidal,
    /// `h/6 (g_a + 4 g_m + g_b)` with the midpoint state from cubic Hermite interpolation.
    #[default]
    HermiteSimpson,
}

/// Running-cost integral over every interval of the trajectory.
pub fn running_cost_segments(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    if !traj.grid().same_as(u.grid()) {
        return Err(Error::GridMismatch);
    }
    let nodes = traj.grid().nodes();
    let p = traj.params();
    let out = (0..traj.grid().intervals())
        .map(|i| match rule {
            Quadrature::Trapezoidal => {
                let (a, b) = (nodes[i], nodes[i + 1]);
                let la = prob.running_cost(&traj.states()[i], &u.eval_within(a, a, b), a);
                let lb = prob.running_cost(&traj.states()[i + 1], &u.eval_within(b, a, b), b);
                0.5 * (b - a) * (la + lb)
            }
            Quadrature::HermiteSimpson => {
                let s = segment(prob, traj.states(), nodes, u, p, i);
                let l: Vec<f64> = (0..3)
                    .map(|j| prob.running_cost(&s.x[j], &s.u[j], s.t[j]))
                    .collect();
                s.h() / 6.0 * (l[0] + 4.0 * l[1] + l[2])
            }
        })
        .collect();
    Ok(out)
}

/// `J = phi(x(tf), tf) + int L dt` with the default quadrature.
pub fn eval_cost(prob: &ProblemDef, traj: &Trajectory, u: &ControlSignal) -> Result<f64> {
    eval_cost_with(prob, traj, u, Quadrature::default())
}

pub fn eval_cost_with(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
) -> Result<f64> {
    let seg = running_cost_segments(prob, traj, u, rule)?;
    Ok(prob.terminal_cost(traj.final_state(), prob.tf()) + seg.iter().sum::<f64>())
}

/// Cost-to-go `C(t) = phi + int_t^tf L` at grid node `t`.
pub fn cost_to_go(prob: &ProblemDef, traj: &Trajectory, u: &ControlSignal, t: f64) -> Result<f64> {
    cost_to_go_with(prob, traj, u, t, Quadrature::default())
}

pub fn cost_to_go_with(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    t: f64,
    rule: Quadrature,
) -> Result<f64> {
    let k = traj.grid().require_index(t)?;
    let seg = running_cost_segments(prob, traj, u, rule)?;
    Ok(prob.terminal_cost(traj.final_state(), prob.tf()) + seg[k..].iter().sum::<f64>())
}

/// Cost-to-go at every node, `C[k]` for node `k`.
pub fn cost_to_go_profile(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    let seg = running_cost_segments(prob, traj, u, rule)?;
    let phi = prob.terminal_cost(traj.final_state(), prob.tf());
    let mut out = vec![0.0; seg.len() + 1];
    let mut acc = 0.0;
    out[seg.len()] = phi;
    for k in (0..seg.len()).rev() {
        acc += seg[k];
        out[k] = phi + acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::integrate::integrate;
    use nalgebra::{DMatrix, DVector};

    fn unforced_lqr() -> ProblemDef {
        ProblemDef::builder("lqr")
            .horizon(0.0, 20.0)
            .initial_state(DVector::from_element(1, 1.0))
            .nominal_params(DVector::from_element(1, -1.0))
            .controls(1)
            .dynamics(|x, p, u, _| DVector::from_element(1, p[0] * x[0] + u[0]))
            .dynamics_x(|_, p, _, _| DMatrix::from_element(1, 1, p[0]))
            .dynamics_p(|x, _, _, _| DMatrix::from_element(1, 1, x[0]))
            .running_cost(|x, u, _| x[0] * x[0] + u[0] * u[0])
            .running_cost_x(|x, _, _| DVector::from_element(1, 2.0 * x[0]))
            .build()
            .unwrap()
    }

    fn solve(prob: &ProblemDef, n: usize) -> (Trajectory, ControlSignal) {
        let g = TimeGrid::uniform(prob.t0(), prob.tf(), n).unwrap();
        let u = ControlSignal::constant(g.clone(), DVector::zeros(1));
        let tr = integrate(prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        (tr, u)
    }

    #[test]
    fn lqr_unforced_cost() {
        let prob = unforced_lqr();
        let (tr, u) = solve(&prob, 101);
        let expected = 0.5 * (1.0 - (-40.0f64).exp());
        assert!((eval_cost(&prob, &tr, &u).unwrap() - expected).abs() < 1e-4);
        let tail = 0.5 * ((-20.0f64).exp() - (-40.0f64).exp());
        assert!((cost_to_go(&prob, &tr, &u, 10.0).unwrap() - tail).abs() < 1e-6);
    }

    #[test]
    fn trapezoidal_needs_finer_grid() {
        let prob = unforced_lqr();
        let (tr, u) = solve(&prob, 1001);
        let c = eval_cost_with(&prob, &tr, &u, Quadrature::Trapezoidal).unwrap();
        assert!((c - 0.5).abs() < 1e-4);
    }

    #[test]
    fn endpoints_of_cost_to_go() {
        let prob = unforced_lqr();
        let (tr, u) = solve(&prob, 51);
        let j = eval_cost(&prob, &tr, &u).unwrap();
        assert_eq!(cost_to_go(&prob, &tr, &u, 0.0).unwrap(), j);
        assert_eq!(cost_to_go(&prob, &tr, &u, 20.0).unwrap(), 0.0);
        assert_eq!(cost_to_go(&prob, &tr, &u, 0.1), Err(Error::NotOnGrid(0.1)));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let prob = unforced_lqr();
        let (tr, _) = solve(&prob, 51);
        let other = ControlSignal::constant(TimeGrid::uniform(0.0, 20.0, 11).unwrap(), DVector::zeros(1));
        assert_eq!(eval_cost(&prob, &tr, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn decomposition_identity() {
        let prob = unforced_lqr();
        let g = TimeGrid::uniform(0.0, 20.0, 81).unwrap();
        let u = ControlSignal::from_fn(g.clone(), Default::default(), |t| {
            DVector::from_element(1, t.sin())
        })
        .unwrap();
        let tr = integrate(&prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        let j = eval_cost(&prob, &tr, &u).unwrap();
        let seg = running_cost_segments(&prob, &tr, &u, Quadrature::default()).unwrap();
        let profile = cost_to_go_profile(&prob, &tr, &u, Quadrature::default()).unwrap();
        let mut head = 0.0;
        for k in 0..g.len() {
            assert!((head + profile[k] - j).abs() <= 1e-9 * (1.0 + j.abs()));
            if k < seg.len() {
                head += seg[k];
            }
        }
    }
}
