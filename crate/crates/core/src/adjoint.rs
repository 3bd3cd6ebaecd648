//! Backward co-state propagation for a fixed control, and numerical checks that the
//! co-states equal the gradients of the cost-to-go for any admissible control.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::adjoint_rhs;
use crate::control::ControlSignal;
use crate::cost::Quadrature;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{integrate, rk4_states, segment, Trajectory};
use crate::problem::{fd_step, ProblemDef};
use crate::stm::transition_with_running_gradient;

type V = DVector<f64>;

/// Default base step for finite-difference gradients of the cost-to-go.
pub const FD_STEP: f64 = 1e-4;

/// Terminal-state feasibility required of a control before its co-states are checked.
pub const ADMISSIBILITY_TOL: f64 = 1e-6;

/// `(lambda, mu)` at every node, anchored at `lambda(tf) = phi_x`, `mu(tf) = 0`.
#[derive(Debug, Clone)]
pub struct CostateTrajectory {
    grid: TimeGrid,
    lambdas: Vec<V>,
    mus: Vec<V>,
}

impl CostateTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lambdas(&self) -> &[V] {
        &self.lambdas
    }

    pub fn mus(&self) -> &[V] {
        &self.mus
    }
}

/// RK4 backwards from `tf` along the stored forward trajectory. States between nodes come
/// from cubic Hermite interpolation of the forward pass.
pub fn propagate_costates(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
) -> Result<CostateTrajectory> {
    if !traj.grid().same_as(u.grid()) {
        return Err(Error::GridMismatch);
    }
    let nodes = traj.grid().nodes();
    let p = traj.params();
    let last = nodes.len() - 1;
    let mut lambda = prob.terminal_cost_x(traj.final_state(), prob.tf());
    let mut mu = V::zeros(prob.dims().l);
    let mut lambdas = vec![V::zeros(0); nodes.len()];
    let mut mus = vec![V::zeros(0); nodes.len()];
    lambdas[last] = lambda.clone();
    mus[last] = mu.clone();
    for i in (0..last).rev() {
        let seg = segment(prob, traj.states(), nodes, u, p, i);
        let h = -seg.h();
        let rate = |j: usize, l: &V| adjoint_rhs(prob, &seg.x[j], p, &seg.u[j], l, seg.t[j]);
        let (l1, m1) = rate(2, &lambda);
        let (l2, m2) = rate(1, &(&lambda + &l1 * (0.5 * h)));
        let (l3, m3) = rate(1, &(&lambda + &l2 * (0.5 * h)));
        let (l4, m4) = rate(0, &(&lambda + &l3 * h));
        lambda += (l1 + (l2 + l3) * 2.0 + l4) * (h / 6.0);
        mu += (m1 + (m2 + m3) * 2.0 + m4) * (h / 6.0);
        if lambda.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                node: i,
                what: "co-state",
            });
        }
        lambdas[i] = lambda.clone();
        mus[i] = mu.clone();
    }
    Ok(CostateTrajectory {
        grid: traj.grid().clone(),
        lambdas,
        mus,
    })
}

/// Cost-to-go at node `eval` after integrating from `x_start` at node `start <= eval`.
fn downstream_cost(
    prob: &ProblemDef,
    u: &ControlSignal,
    nodes: &[f64],
    p: &V,
    x_start: &V,
    start: usize,
    eval: usize,
) -> Result<f64> {
    let sub = &nodes[start..];
    let states = rk4_states(prob, x_start, u, sub, p, start)?;
    let phi = prob.terminal_cost(&states[states.len() - 1], prob.tf());
    let tail: f64 = (eval - start..sub.len() - 1)
        .map(|i| {
            let s = segment(prob, &states, sub, u, p, i);
            let l: Vec<f64> = (0..3)
                .map(|j| prob.running_cost(&s.x[j], &s.u[j], s.t[j]))
                .collect();
            match Quadrature::default() {
                Quadrature::HermiteSimpson => s.h() / 6.0 * (l[0] + 4.0 * l[1] + l[2]),
                Quadrature::Trapezoidal => 0.5 * s.h() * (l[0] + l[2]),
            }
        })
        .sum();
    Ok(phi + tail)
}

/// Perturbation target for [`fd_cost_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    State,
    Parameter,
}

/// Central differences of the cost-to-go at node `t` under the same control tail.
///
/// `h` is the base step; component `i` uses `h (1 + |v_i|)`.
pub fn fd_cost_gradient(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    t: f64,
    wrt: Wrt,
    h: f64,
) -> Result<V> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let k = traj.grid().require_index(t)?;
    match wrt {
        Wrt::State => fd_downstream_gradient(prob, traj, u, k, k, h),
        Wrt::Parameter => {
            let nodes = traj.grid().nodes();
            let x = &traj.states()[k];
            let p0 = traj.params();
            let mut out = V::zeros(p0.len());
            for i in 0..p0.len() {
                let step = fd_step(h, p0[i]);
                let mut pp = p0.clone();
                pp[i] = p0[i] + step;
                let hi = downstream_cost(prob, u, nodes, &pp, x, k, k)
                    .map_err(|_| Error::PerturbationDiverged(format!("p[{i}] + {step:e}")))?;
                pp[i] = p0[i] - step;
                let lo = downstream_cost(prob, u, nodes, &pp, x, k, k)
                    .map_err(|_| Error::PerturbationDiverged(format!("p[{i}] - {step:e}")))?;
                out[i] = (hi - lo) / (2.0 * step);
            }
            Ok(out)
        }
    }
}

/// Gradient of `C(x(t_eval))` with respect to `x(t_start)` by central differences.
pub fn fd_downstream_gradient(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    start: usize,
    eval: usize,
    h: f64,
) -> Result<V> {
    let nodes = traj.grid().nodes();
    let p = traj.params();
    let x0 = &traj.states()[start];
    let mut out = V::zeros(x0.len());
    for i in 0..x0.len() {
        let step = fd_step(h, x0[i]);
        let mut xp = x0.clone();
        xp[i] = x0[i] + step;
        let hi = downstream_cost(prob, u, nodes, p, &xp, start, eval)
            .map_err(|_| Error::PerturbationDiverged(format!("x[{i}]({start}) + {step:e}")))?;
        xp[i] = x0[i] - step;
        let lo = downstream_cost(prob, u, nodes, p, &xp, start, eval)
            .map_err(|_| Error::PerturbationDiverged(format!("x[{i}]({start}) - {step:e}")))?;
        out[i] = (hi - lo) / (2.0 * step);
    }
    Ok(out)
}

/// `C_x(t) = phi_x Gamma(tf, t) + int_t^tf L_x Gamma(s, t) ds`, returned as a column.
pub fn cx_integral_form(prob: &ProblemDef, traj: &Trajectory, u: &ControlSignal, t: f64) -> Result<V> {
    if !traj.grid().same_as(u.grid()) {
        return Err(Error::GridMismatch);
    }
    let k = traj.grid().require_index(t)?;
    let (gamma, q) = transition_with_running_gradient(prob, traj, u, k)?;
    let phi_x = prob.terminal_cost_x(traj.final_state(), prob.tf());
    Ok(gamma.tr_mul(&phi_x) + q)
}

/// Which co-state block a check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Lambda,
    Mu,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Failure {
    pub control: usize,
    pub node: usize,
    pub channel: Channel,
    pub rel_error: f64,
}

/// Worst-case agreement between propagated co-states and differenced cost-to-go gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub tolerance: f64,
    pub nodes: Vec<usize>,
    pub controls: usize,
    pub max_lambda_error: f64,
    pub max_mu_error: f64,
    pub failures: Vec<Theorem1Failure>,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Default check nodes: spread over the horizon, skipping the midpoint where the
/// shipped test controls switch.
pub fn sample_nodes(len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [0.0, 0.1, 0.25, 0.4, 0.6, 0.75, 0.9]
        .iter()
        .map(|f| ((len - 1) as f64 * f).round() as usize)
        .collect();
    out.dedup();
    out
}

fn rel_error(reference: &V, candidate: &V) -> f64 {
    (reference - candidate).amax() / (1.0 + reference.amax())
}

/// Integrates `u` from the nominal initial state and rejects it unless the terminal
/// constraint holds within [`ADMISSIBILITY_TOL`].
pub fn admissible_trajectory(prob: &ProblemDef, u: &ControlSignal) -> Result<Trajectory> {
    let tr = integrate(prob, prob.x0(), u, u.grid(), prob.p0())?;
    if prob.dims().k > 0 {
        let residual = prob.terminal_constraint(tr.final_state(), prob.tf()).amax();
        if !(residual <= ADMISSIBILITY_TOL) {
            return Err(Error::Inadmissible { residual });
        }
    }
    Ok(tr)
}

/// For every control and every sampled node, compares `lambda` and `mu` against central
/// differences of the cost-to-go (step [`FD_STEP`]).
pub fn verify_theorem1(prob: &ProblemDef, controls: &[ControlSignal], tol: f64) -> Result<Theorem1Report> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("no controls to verify".into()));
    }
    let trajectories = controls
        .iter()
        .map(|u| admissible_trajectory(prob, u))
        .collect::<Result<Vec<_>>>()?;
    // (checked nodes, worst lambda error, worst mu error, failures) per control
    type PerControl = (Vec<usize>, f64, f64, Vec<Theorem1Failure>);
    let per_control: Vec<Result<PerControl>> = controls
        .par_iter()
        .zip(trajectories.par_iter())
        .enumerate()
        .map(|(ci, (u, tr))| {
            let costates = propagate_costates(prob, tr, u)?;
            let nodes = sample_nodes(tr.grid().len());
            let mut worst = (0.0f64, 0.0f64);
            let mut failures = Vec::new();
            for &k in &nodes {
                let t = tr.grid().nodes()[k];
                let gl = fd_cost_gradient(prob, tr, u, t, Wrt::State, FD_STEP)?;
                let gm = fd_cost_gradient(prob, tr, u, t, Wrt::Parameter, FD_STEP)?;
                let el = rel_error(&costates.lambdas()[k], &gl);
                let em = rel_error(&costates.mus()[k], &gm);
                worst = (worst.0.max(el), worst.1.max(em));
                for (channel, e) in [(Channel::Lambda, el), (Channel::Mu, em)] {
                    if !(e <= tol) {
                        failures.push(Theorem1Failure {
                            control: ci,
                            node: k,
                            channel,
                            rel_error: e,
                        });
                    }
                }
            }
            Ok((nodes, worst.0, worst.1, failures))
        })
        .collect();
    let mut report = Theorem1Report {
        tolerance: tol,
        nodes: Vec::new(),
        controls: controls.len(),
        max_lambda_error: 0.0,
        max_mu_error: 0.0,
        failures: Vec::new(),
    };
    for r in per_control {
        let (nodes, el, em, failures) = r?;
        report.nodes = nodes;
        report.max_lambda_error = report.max_lambda_error.max(el);
        report.max_mu_error = report.max_mu_error.max(em);
        report.failures.extend(failures);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Interpolation;
    use crate::problems::{scalar_lqr, zermelo, Uncertain};
    use nalgebra::DMatrix;

    fn constant_run(prob: &ProblemDef, n: usize) -> (Trajectory, ControlSignal) {
        let g = TimeGrid::uniform(prob.t0(), prob.tf(), n).unwrap();
        let u = ControlSignal::constant(g.clone(), V::zeros(prob.dims().m));
        let tr = integrate(prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        (tr, u)
    }

    #[test]
    fn zermelo_unforced_closed_form() {
        let prob = zermelo();
        let (tr, u) = constant_run(&prob, 101);
        let cs = propagate_costates(&prob, &tr, &u).unwrap();
        for (k, &t) in tr.grid().nodes().iter().enumerate() {
            assert!((cs.lambdas()[k][0] + 1.0).abs() < 1e-12);
            assert!((cs.lambdas()[k][1] - 10.0 * (t - 1.0)).abs() < 1e-10);
            assert!(cs.mus()[k][0].abs() < 1e-14);
        }
        assert!((cs.lambdas()[0][1] + 10.0).abs() < 1e-10);
    }

    #[test]
    fn terminal_row_is_exact() {
        let prob = zermelo();
        let (tr, u) = constant_run(&prob, 21);
        let cs = propagate_costates(&prob, &tr, &u).unwrap();
        assert_eq!(cs.lambdas()[20], V::from_vec(vec![-1.0, 0.0]));
        assert_eq!(cs.mus()[20], V::zeros(1));
    }

    #[test]
    fn no_costs_no_costates() {
        let prob = ProblemDef::builder("free")
            .horizon(0.0, 2.0)
            .initial_state(V::from_element(2, 1.0))
            .nominal_params(V::from_element(1, 0.5))
            .controls(1)
            .dynamics(|x, p, u, _| V::from_vec(vec![p[0] * x[1] + u[0], -x[0]]))
            .dynamics_x(|_, p, _, _| DMatrix::from_row_slice(2, 2, &[0.0, p[0], -1.0, 0.0]))
            .dynamics_p(|x, _, _, _| DMatrix::from_column_slice(2, 1, &[x[1], 0.0]))
            .build()
            .unwrap();
        let (tr, u) = constant_run(&prob, 41);
        let cs = propagate_costates(&prob, &tr, &u).unwrap();
        assert!(cs.lambdas().iter().all(|l| l.amax() == 0.0));
        assert!(cs.mus().iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn zermelo_fd_gradients_at_start() {
        let prob = zermelo();
        let (tr, u) = constant_run(&prob, 1001);
        let gx = fd_cost_gradient(&prob, &tr, &u, 0.0, Wrt::State, 1e-4).unwrap();
        assert!((gx[0] + 1.0).abs() < 1e-5);
        assert!((gx[1] + 10.0).abs() < 1e-5);
        let gp = fd_cost_gradient(&prob, &tr, &u, 0.0, Wrt::Parameter, 1e-4).unwrap();
        assert!(gp[0].abs() < 1e-5);
    }

    #[test]
    fn identity_terminal_cost_gradient() {
        let prob = ProblemDef::builder("id")
            .horizon(0.0, 1.0)
            .initial_state(V::from_element(1, 0.3))
            .controls(1)
            .dynamics(|_, _, _, _| V::zeros(1))
            .dynamics_x(|_, _, _, _| DMatrix::zeros(1, 1))
            .dynamics_p(|_, _, _, _| DMatrix::zeros(1, 0))
            .terminal_cost(|x, _| x[0])
            .terminal_cost_x(|_, _| V::from_element(1, 1.0))
            .build()
            .unwrap();
        let (tr, u) = constant_run(&prob, 11);
        for &t in tr.grid().nodes() {
            let g = fd_cost_gradient(&prob, &tr, &u, t, Wrt::State, 1e-4).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn fd_rejects_bad_inputs() {
        let prob = zermelo();
        let (tr, u) = constant_run(&prob, 11);
        assert!(fd_cost_gradient(&prob, &tr, &u, 0.05, Wrt::State, 1e-4).is_err());
        assert!(fd_cost_gradient(&prob, &tr, &u, 0.1, Wrt::State, 0.0).is_err());
    }

    #[test]
    fn lqr_costates_match_fine_reference() {
        let prob = scalar_lqr(-1.0, 1.0, Uncertain::A);
        let (tr, u) = constant_run(&prob, 1001);
        let cs = propagate_costates(&prob, &tr, &u).unwrap();
        let (fine_tr, fine_u) = constant_run(&prob, 10001);
        let fine = propagate_costates(&prob, &fine_tr, &fine_u).unwrap();
        for k in (0..1001).step_by(50) {
            let a = &cs.lambdas()[k];
            let b = &fine.lambdas()[10 * k];
            assert!((a - b).amax() < 1e-8 * (1.0 + b.amax()), "node {k}");
            assert!((&cs.mus()[k] - &fine.mus()[10 * k]).amax() < 1e-8);
        }
        // closed form with x = e^{-t}: lambda = e^{-t} - e^{t - 40}
        for k in (0..1001).step_by(100) {
            let t = tr.grid().nodes()[k];
            let exact = (-t).exp() - (t - 40.0).exp();
            assert!((cs.lambdas()[k][0] - exact).abs() < 1e-7);
        }
    }

    #[test]
    fn integral_form_agrees_with_costates() {
        let prob = zermelo();
        let (tr, u) = constant_run(&prob, 101);
        for &t in &[0.0, 0.37, 1.0] {
            let cx = cx_integral_form(&prob, &tr, &u, t).unwrap();
            assert!((cx[0] + 1.0).abs() < 1e-12);
            assert!((cx[1] - 10.0 * (t - 1.0)).abs() < 1e-10);
        }
        assert_eq!(
            cx_integral_form(&prob, &tr, &u, 1.0).unwrap(),
            V::from_vec(vec![-1.0, 0.0])
        );
    }

    #[test]
    fn inadmissible_control_rejected() {
        let prob = zermelo();
        let g = TimeGrid::uniform(0.0, 1.0, 101).unwrap();
        // constant heading ~ asin(0.1) leaves x2(1) = 0.1
        let u = ControlSignal::constant(g, V::from_element(1, 0.1f64.asin()));
        match verify_theorem1(&prob, &[u], 1e-3) {
            Err(Error::Inadmissible { residual }) => assert!((residual - 0.1).abs() < 1e-9),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn verify_small_lqr_set() {
        let prob = scalar_lqr(-1.0, 1.0, Uncertain::B);
        let g = TimeGrid::uniform(0.0, 20.0, 401).unwrap();
        let u = ControlSignal::from_fn(g, Interpolation::PiecewiseLinear, |t| V::from_element(1, t.sin()))
            .unwrap();
        let r = verify_theorem1(&prob, &[u], 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
