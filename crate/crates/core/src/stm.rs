//! State-transition (sensitivity) matrices along a stored trajectory, and the
//! co-state / transition-matrix relation `[dC(x(t))/dx(t')]^T = S(t|t')^T lambda(t)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adjoint::{fd_downstream_gradient, CostateTrajectory};
use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{segment, Trajectory};
use crate::problem::ProblemDef;

type V = DVector<f64>;
type M = DMatrix<f64>;

/// Largest condition number accepted when inverting a transition matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Which state vector the sensitivity matrix refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmLayout {
    /// `x` only, `d = n`.
    Plain,
    /// `[x | p]` with `p' = 0`, `d = n + l`.
    Augmented,
}

/// `S(t_i | t0)` at every grid node.
#[derive(Debug, Clone)]
pub struct StmTrajectory {
    grid: TimeGrid,
    mats: Vec<M>,
    layout: StmLayout,
    n: usize,
}

impl StmTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mats(&self) -> &[M] {
        &self.mats
    }

    pub fn layout(&self) -> StmLayout {
        self.layout
    }

    pub fn at(&self, node: usize) -> &M {
        &self.mats[node]
    }
}

fn system_matrix(prob: &ProblemDef, x: &V, p: &V, u: &V, t: f64, layout: StmLayout) -> M {
    let fx = prob.f_x(x, p, u, t);
    match layout {
        StmLayout::Plain => fx,
        StmLayout::Augmented => {
            let (n, l) = (prob.dims().n, prob.dims().l);
            let mut a = M::zeros(n + l, n + l);
            a.view_mut((0, 0), (n, n)).copy_from(&fx);
            a.view_mut((0, n), (n, l)).copy_from(&prob.f_p(x, p, u, t));
            a
        }
    }
}

fn check_finite(m: &M, node: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            node,
            what: "transition matrix",
        })
    }
}

/// RK4 on `S' = A(t) S`, `S(t0|t0) = I`, with `A` from the Jacobians along `traj`.
pub fn propagate_stm(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    layout: StmLayout,
) -> Result<StmTrajectory> {
    let d = match layout {
        StmLayout::Plain => prob.dims().n,
        StmLayout::Augmented => prob.dims().n + prob.dims().l,
    };
    let nodes = traj.grid().nodes();
    let p = traj.params();
    let mut s = M::identity(d, d);
    let mut mats = Vec::with_capacity(nodes.len());
    mats.push(s.clone());
    for i in 0..traj.grid().intervals() {
        let seg = segment(prob, traj.states(), nodes, u, p, i);
        let a: Vec<M> = (0..3)
            .map(|j| system_matrix(prob, &seg.x[j], p, &seg.u[j], seg.t[j], layout))
            .collect();
        let h = seg.h();
        let k1 = &a[0] * &s;
        let k2 = &a[1] * (&s + &k1 * (0.5 * h));
        let k3 = &a[1] * (&s + &k2 * (0.5 * h));
        let k4 = &a[2] * (&s + &k3 * h);
        s += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        check_finite(&s, i + 1)?;
        mats.push(s.clone());
    }
    Ok(StmTrajectory {
        grid: traj.grid().clone(),
        mats,
        layout,
        n: prob.dims().n,
    })
}

/// Relative transition matrix and the condition number of the inverted factor.
#[derive(Debug, Clone)]
pub struct Transition {
    pub matrix: M,
    pub condition: f64,
}

pub fn condition_number(m: &M) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `S(t_to | t_from) = S(t_to | t0) S(t_from | t0)^{-1}`.
pub fn stm_between(stms: &StmTrajectory, t_from: f64, t_to: f64) -> Result<Transition> {
    let i = stms.grid.require_index(t_from)?;
    let j = stms.grid.require_index(t_to)?;
    between_nodes(stms, i, j)
}

pub(crate) fn between_nodes(stms: &StmTrajectory, from: usize, to: usize) -> Result<Transition> {
    let base = &stms.mats[from];
    let condition = condition_number(base);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond: condition });
    }
    let inv = base
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { cond: condition })?;
    Ok(Transition {
        matrix: &stms.mats[to] * inv,
        condition,
    })
}

/// Forward sweep from node `from` of `Gamma' = f_x Gamma`, `Gamma(t|t) = I`, together with
/// `q' = Gamma^T L_x`. Returns `(Gamma(tf|t), q(tf))`.
pub fn transition_with_running_gradient(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    from: usize,
) -> Result<(M, V)> {
    let n = prob.dims().n;
    let nodes = traj.grid().nodes();
    let p = traj.params();
    let mut gamma = M::identity(n, n);
    let mut q = V::zeros(n);
    for i in from..traj.grid().intervals() {
        let seg = segment(prob, traj.states(), nodes, u, p, i);
        let h = seg.h();
        let a: Vec<M> = (0..3)
            .map(|j| prob.f_x(&seg.x[j], p, &seg.u[j], seg.t[j]))
            .collect();
        let lx: Vec<V> = (0..3)
            .map(|j| prob.running_cost_x(&seg.x[j], &seg.u[j], seg.t[j]))
            .collect();
        let rate = |j: usize, g: &M| (&a[j] * g, g.tr_mul(&lx[j]));
        let (k1, r1) = rate(0, &gamma);
        let (k2, r2) = rate(1, &(&gamma + &k1 * (0.5 * h)));
        let (k3, r3) = rate(1, &(&gamma + &k2 * (0.5 * h)));
        let (k4, r4) = rate(2, &(&gamma + &k3 * h));
        gamma += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        q += (r1 + (r2 + r3) * 2.0 + r4) * (h / 6.0);
        check_finite(&gamma, i + 1)?;
    }
    Ok((gamma, q))
}

/// One checked node pair `(t', t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePairCheck {
    pub from: usize,
    pub to: usize,
    pub rel_error: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StmRelationReport {
    pub tolerance: f64,
    pub checks: Vec<NodePairCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl StmRelationReport {
    pub fn failures(&self) -> Vec<(usize, usize)> {
        self.checks
            .iter()
            .filter(|c| !(c.rel_error <= self.tolerance))
            .map(|c| (c.from, c.to))
            .collect()
    }
}

/// Spread-out node pairs `(t', t)` with `t' <= t`, including `(t0, tf)` and one diagonal pair.
pub fn default_node_pairs(len: usize) -> Vec<(usize, usize)> {
    let at = |f: f64| ((len - 1) as f64 * f).round() as usize;
    let mut pairs = vec![
        (0, len - 1),
        (at(0.2), at(0.6)),
        (at(0.35), at(0.9)),
        (at(0.1), at(0.3)),
        (at(0.7), at(0.7)),
    ];
    pairs.dedup();
    pairs
}

/// Checks `S(t|t')^T lambda(t)` against central differences of `C(x(t), u, t)` with respect
/// to `x(t')`, where the trajectory is re-integrated from the perturbed `x(t')`.
#[allow(clippy::too_many_arguments)]
pub fn verify_costate_stm_relation(
    prob: &ProblemDef,
    traj: &Trajectory,
    u: &ControlSignal,
    costates: &CostateTrajectory,
    stms: &StmTrajectory,
    pairs: &[(usize, usize)],
    tol: f64,
    h: f64,
) -> Result<StmRelationReport> {
    if !stms.grid.same_as(traj.grid()) || !costates.grid().same_as(traj.grid()) {
        return Err(Error::GridMismatch);
    }
    let n = stms.n;
    let mut checks = Vec::with_capacity(pairs.len());
    for &(from, to) in pairs {
        if from > to || to >= traj.grid().len() {
            return Err(Error::InvalidArgument(format!(
                "invalid node pair ({from}, {to})"
            )));
        }
        let rel = between_nodes(stms, from, to)?;
        let s = rel.matrix.view((0, 0), (n, n)).into_owned();
        let predicted = s.tr_mul(&costates.lambdas()[to]);
        let fd = fd_downstream_gradient(prob, traj, u, from, to, h)?;
        let rel_error = (&predicted - &fd).amax() / (1.0 + predicted.amax());
        checks.push(NodePairCheck {
            from,
            to,
            rel_error,
            condition: rel.condition,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(StmRelationReport {
        tolerance: tol,
        passed: checks.iter().all(|c| c.rel_error <= tol),
        checks,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate;
    use crate::problems::zermelo;

    fn decay() -> ProblemDef {
        ProblemDef::builder("decay")
            .horizon(0.0, 1.0)
            .initial_state(V::from_element(1, 1.0))
            .controls(1)
            .dynamics(|x, _, _, _| -x)
            .dynamics_x(|_, _, _, _| M::from_element(1, 1, -1.0))
            .dynamics_p(|_, _, _, _| M::zeros(1, 0))
            .build()
            .unwrap()
    }

    fn run(prob: &ProblemDef, n: usize, layout: StmLayout) -> (Trajectory, ControlSignal, StmTrajectory) {
        let g = TimeGrid::uniform(prob.t0(), prob.tf(), n).unwrap();
        let u = ControlSignal::constant(g.clone(), V::zeros(prob.dims().m));
        let tr = integrate(prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        let s = propagate_stm(prob, &tr, &u, layout).unwrap();
        (tr, u, s)
    }

    #[test]
    fn identity_for_still_dynamics() {
        let prob = ProblemDef::builder("still")
            .horizon(0.0, 1.0)
            .initial_state(V::zeros(2))
            .controls(1)
            .dynamics(|_, _, _, _| V::zeros(2))
            .dynamics_x(|_, _, _, _| M::zeros(2, 2))
            .dynamics_p(|_, _, _, _| M::zeros(2, 0))
            .build()
            .unwrap();
        let (_, _, s) = run(&prob, 11, StmLayout::Plain);
        assert!(s.mats().iter().all(|m| *m == M::identity(2, 2)));
    }

    #[test]
    fn scalar_decay_transition() {
        let (_, _, s) = run(&decay(), 101, StmLayout::Plain);
        assert_eq!(s.at(0), &M::identity(1, 1));
        for (i, &t) in s.grid().nodes().iter().enumerate() {
            assert!((s.at(i)[(0, 0)] - (-t).exp()).abs() < 1e-6);
        }
        let rel = stm_between(&s, 0.3, 0.8).unwrap();
        assert!((rel.matrix[(0, 0)] - (-0.5f64).exp()).abs() < 1e-6);
        let same = stm_between(&s, 0.4, 0.4).unwrap();
        assert!((same.matrix[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn composition_property() {
        let prob = zermelo();
        let g = TimeGrid::uniform(0.0, 1.0, 1001).unwrap();
        let u = ControlSignal::from_fn(g.clone(), Default::default(), |t| {
            V::from_element(1, 0.4 * (3.0 * t).cos())
        })
        .unwrap();
        let tr = integrate(&prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        let s = propagate_stm(&prob, &tr, &u, StmLayout::Augmented).unwrap();
        let a = stm_between(&s, 0.0, 0.3).unwrap().matrix;
        let b = stm_between(&s, 0.3, 0.9).unwrap().matrix;
        let c = stm_between(&s, 0.0, 0.9).unwrap().matrix;
        assert!((&b * &a - c).amax() < 1e-8);
    }

    #[test]
    fn zermelo_unforced_parameter_column_vanishes() {
        let (_, _, s) = run(&zermelo(), 101, StmLayout::Augmented);
        for m in s.mats() {
            assert_eq!(m.shape(), (3, 3));
            assert!(m[(0, 2)].abs() < 1e-15);
            assert!(m[(1, 2)].abs() < 1e-15);
            assert_eq!(m[(2, 2)], 1.0);
        }
    }

    #[test]
    fn ill_conditioning_detected() {
        let prob = ProblemDef::builder("fast")
            .horizon(0.0, 40.0)
            .initial_state(V::from_element(1, 1.0))
            .controls(1)
            .dynamics(|x, _, _, _| -x)
            .dynamics_x(|_, _, _, _| M::from_element(1, 1, -1.0))
            .dynamics_p(|_, _, _, _| M::zeros(1, 0))
            .build()
            .unwrap();
        let (_, _, s) = run(&prob, 401, StmLayout::Plain);
        // a 1x1 matrix always has condition 1; use a 2x2 built from two decays
        assert!(stm_between(&s, 40.0, 0.0).is_ok());
        let mut mats = s.mats().to_vec();
        mats[10] = M::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        let bad = StmTrajectory { mats, ..s };
        assert!(matches!(
            between_nodes(&bad, 10, 0),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn not_on_grid_rejected() {
        let (_, _, s) = run(&decay(), 11, StmLayout::Plain);
        assert_eq!(stm_between(&s, 0.05, 0.5).unwrap_err(), Error::NotOnGrid(0.05));
    }
}
