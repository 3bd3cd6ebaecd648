//! Optimal control problem definition.
//!
//! A [`ProblemDef`] bundles the dynamics `f(x, p, u, t)`, running cost `L(x, u, t)`,
//! terminal cost `phi(x_f, t_f)` and terminal constraint `psi(x_f, t_f)` together with
//! their first derivatives. Jacobians are supplied analytically; the optional control
//! and constraint derivatives fall back to central differences when absent.
//! Gradients of scalar functions are stored as column vectors.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

type V = DVector<f64>;
type M = DMatrix<f64>;

pub type DynamicsFn = Arc<dyn Fn(&V, &V, &V, f64) -> V + Send + Sync>;
pub type DynamicsJacFn = Arc<dyn Fn(&V, &V, &V, f64) -> M + Send + Sync>;
pub type RunningFn = Arc<dyn Fn(&V, &V, f64) -> f64 + Send + Sync>;
pub type RunningGradFn = Arc<dyn Fn(&V, &V, f64) -> V + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&V, f64) -> f64 + Send + Sync>;
pub type TerminalVecFn = Arc<dyn Fn(&V, f64) -> V + Send + Sync>;
pub type TerminalJacFn = Arc<dyn Fn(&V, f64) -> M + Send + Sync>;

/// Problem dimensions: states, controls, parameters, terminal constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
}

/// A fixed-final-time optimal control problem with uncertain parameters.
///
/// Evaluators must be pure; the definition is cheap to clone and safe to share
/// between threads.
#[derive(Clone)]
pub struct ProblemDef {
    name: String,
    dims: Dims,
    t0: f64,
    tf: f64,
    x0: V,
    p0: V,
    f: DynamicsFn,
    f_x: DynamicsJacFn,
    f_p: DynamicsJacFn,
    f_u: Option<DynamicsJacFn>,
    l: RunningFn,
    l_x: RunningGradFn,
    l_u: Option<RunningGradFn>,
    phi: TerminalFn,
    phi_x: TerminalVecFn,
    psi: TerminalVecFn,
    psi_x: Option<TerminalJacFn>,
    u_bounds: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("x0", &self.x0.as_slice())
            .field("p0", &self.p0.as_slice())
            .finish_non_exhaustive()
    }
}

/// Central-difference step for a value of magnitude `v`.
pub(crate) fn fd_step(base: f64, v: f64) -> f64 {
    base * (1.0 + v.abs())
}

/// Central-difference Jacobian of `g` at `x`.
pub(crate) fn fd_jacobian(x: &V, base: f64, g: impl Fn(&V) -> V) -> M {
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = fd_step(base, x[j]);
        xp[j] = x[j] + h;
        let hi = g(&xp);
        xp[j] = x[j] - h;
        let lo = g(&xp);
        xp[j] = x[j];
        cols.push((hi - lo) / (2.0 * h));
    }
    if cols.is_empty() {
        return M::zeros(g(x).len(), 0);
    }
    M::from_columns(&cols)
}

/// Central-difference gradient of scalar `g` at `x`.
pub(crate) fn fd_gradient(x: &V, base: f64, g: impl Fn(&V) -> f64) -> V {
    let mut out = V::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = fd_step(base, x[j]);
        xp[j] = x[j] + h;
        let hi = g(&xp);
        xp[j] = x[j] - h;
        let lo = g(&xp);
        xp[j] = x[j];
        out[j] = (hi - lo) / (2.0 * h);
    }
    out
}

const FD_BASE: f64 = 1e-6;

impl ProblemDef {
    pub fn builder(name: impl Into<String>) -> ProblemBuilder {
        ProblemBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn x0(&self) -> &V {
        &self.x0
    }

    pub fn p0(&self) -> &V {
        &self.p0
    }

    pub fn control_bounds(&self) -> Option<&[(f64, f64)]> {
        self.u_bounds.as_deref()
    }

    /// Copy with a different nominal parameter vector.
    pub fn with_nominal_params(&self, p0: V) -> Result<Self> {
        check_len("p0", self.dims.l, p0.len())?;
        let mut out = self.clone();
        out.p0 = p0;
        Ok(out)
    }

    pub fn f(&self, x: &V, p: &V, u: &V, t: f64) -> V {
        (self.f)(x, p, u, t)
    }

    pub fn f_x(&self, x: &V, p: &V, u: &V, t: f64) -> M {
        (self.f_x)(x, p, u, t)
    }

    pub fn f_p(&self, x: &V, p: &V, u: &V, t: f64) -> M {
        (self.f_p)(x, p, u, t)
    }

    pub fn f_u(&self, x: &V, p: &V, u: &V, t: f64) -> M {
        match &self.f_u {
            Some(g) => g(x, p, u, t),
            None => fd_jacobian(u, FD_BASE, |uu| (self.f)(x, p, uu, t)),
        }
    }

    pub fn running_cost(&self, x: &V, u: &V, t: f64) -> f64 {
        (self.l)(x, u, t)
    }

    pub fn running_cost_x(&self, x: &V, u: &V, t: f64) -> V {
        (self.l_x)(x, u, t)
    }

    pub fn running_cost_u(&self, x: &V, u: &V, t: f64) -> V {
        match &self.l_u {
            Some(g) => g(x, u, t),
            None => fd_gradient(u, FD_BASE, |uu| (self.l)(x, uu, t)),
        }
    }

    pub fn terminal_cost(&self, xf: &V, tf: f64) -> f64 {
        (self.phi)(xf, tf)
    }

    pub fn terminal_cost_x(&self, xf: &V, tf: f64) -> V {
        (self.phi_x)(xf, tf)
    }

    pub fn terminal_constraint(&self, xf: &V, tf: f64) -> V {
        (self.psi)(xf, tf)
    }

    pub fn terminal_constraint_x(&self, xf: &V, tf: f64) -> M {
        match &self.psi_x {
            Some(g) => g(xf, tf),
            None => fd_jacobian(xf, FD_BASE, |xx| (self.psi)(xx, tf)),
        }
    }

    /// Random probe point around the nominal data, used for dimension and Jacobian checks.
    pub(crate) fn probe(&self, rng: &mut ChaCha8Rng) -> Probe {
        let Dims { n, m, l, .. } = self.dims;
        let x = V::from_fn(n, |i, _| self.x0[i] + rng.random_range(-1.0..1.0));
        let p = V::from_fn(l, |i, _| {
            self.p0[i] + 0.5 * (1.0 + self.p0[i].abs()) * rng.random_range(-1.0..1.0)
        });
        let u = V::from_fn(m, |i, _| match &self.u_bounds {
            Some(b) if b[i].0.is_finite() && b[i].1.is_finite() => rng.random_range(b[i].0..=b[i].1),
            _ => rng.random_range(-1.0..1.0),
        });
        let t = rng.random_range(self.t0..=self.tf);
        Probe { x, p, u, t }
    }

    /// Evaluates every evaluator at `probe` and checks output shapes.
    pub(crate) fn check_shapes(&self, probe: &Probe) -> Result<()> {
        let Dims { n, m, l, k } = self.dims;
        let Probe { x, p, u, t } = probe;
        let t = *t;
        check_len("f", n, self.f(x, p, u, t).len())?;
        check_shape("f_x", (n, n), self.f_x(x, p, u, t).shape())?;
        check_shape("f_p", (n, l), self.f_p(x, p, u, t).shape())?;
        if let Some(g) = &self.f_u {
            check_shape("f_u", (n, m), g(x, p, u, t).shape())?;
        }
        check_len("L_x", n, self.running_cost_x(x, u, t).len())?;
        if let Some(g) = &self.l_u {
            check_len("L_u", m, g(x, u, t).len())?;
        }
        check_len("phi_x", n, self.terminal_cost_x(x, t).len())?;
        check_len("psi", k, self.terminal_constraint(x, t).len())?;
        if let Some(g) = &self.psi_x {
            check_shape("psi_x", (k, n), g(x, t).shape())?;
        }
        Ok(())
    }
}

pub(crate) struct Probe {
    pub x: V,
    pub p: V,
    pub u: V,
    pub t: f64,
}

fn check_len(evaluator: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            evaluator,
            expected: format!("length {expected}"),
            got: format!("length {got}"),
        })
    }
}

fn check_shape(evaluator: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            evaluator,
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        })
    }
}

/// Builder for [`ProblemDef`]; `build` validates dimensions on random probes.
#[derive(Default)]
pub struct ProblemBuilder {
    name: String,
    m: usize,
    k: usize,
    horizon: Option<(f64, f64)>,
    x0: Option<V>,
    p0: Option<V>,
    f: Option<DynamicsFn>,
    f_x: Option<DynamicsJacFn>,
    f_p: Option<DynamicsJacFn>,
    f_u: Option<DynamicsJacFn>,
    l: Option<RunningFn>,
    l_x: Option<RunningGradFn>,
    l_u: Option<RunningGradFn>,
    phi: Option<TerminalFn>,
    phi_x: Option<TerminalVecFn>,
    psi: Option<TerminalVecFn>,
    psi_x: Option<TerminalJacFn>,
    u_bounds: Option<Vec<(f64, f64)>>,
}

impl ProblemBuilder {
    pub fn horizon(mut self, t0: f64, tf: f64) -> Self {
        self.horizon = Some((t0, tf));
        self
    }

    pub fn initial_state(mut self, x0: V) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn nominal_params(mut self, p0: V) -> Self {
        self.p0 = Some(p0);
        self
    }

    pub fn controls(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn dynamics(mut self, f: impl Fn(&V, &V, &V, f64) -> V + Send + Sync + 'static) -> Self {
        self.f = Some(Arc::new(f));
        self
    }

    pub fn dynamics_x(mut self, g: impl Fn(&V, &V, &V, f64) -> M + Send + Sync + 'static) -> Self {
        self.f_x = Some(Arc::new(g));
        self
    }

    pub fn dynamics_p(mut self, g: impl Fn(&V, &V, &V, f64) -> M + Send + Sync + 'static) -> Self {
        self.f_p = Some(Arc::new(g));
        self
    }

    pub fn dynamics_u(mut self, g: impl Fn(&V, &V, &V, f64) -> M + Send + Sync + 'static) -> Self {
        self.f_u = Some(Arc::new(g));
        self
    }

    pub fn running_cost(mut self, l: impl Fn(&V, &V, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.l = Some(Arc::new(l));
        self
    }

    pub fn running_cost_x(mut self, g: impl Fn(&V, &V, f64) -> V + Send + Sync + 'static) -> Self {
        self.l_x = Some(Arc::new(g));
        self
    }

    pub fn running_cost_u(mut self, g: impl Fn(&V, &V, f64) -> V + Send + Sync + 'static) -> Self {
        self.l_u = Some(Arc::new(g));
        self
    }

    pub fn terminal_cost(mut self, phi: impl Fn(&V, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.phi = Some(Arc::new(phi));
        self
    }

    pub fn terminal_cost_x(mut self, g: impl Fn(&V, f64) -> V + Send + Sync + 'static) -> Self {
        self.phi_x = Some(Arc::new(g));
        self
    }

    /// Terminal constraint `psi(x_f, t_f) = 0` with `k` components.
    pub fn terminal_constraint(
        mut self,
        k: usize,
        psi: impl Fn(&V, f64) -> V + Send + Sync + 'static,
    ) -> Self {
        self.k = k;
        self.psi = Some(Arc::new(psi));
        self
    }

    pub fn terminal_constraint_x(mut self, g: impl Fn(&V, f64) -> M + Send + Sync + 'static) -> Self {
        self.psi_x = Some(Arc::new(g));
        self
    }

    pub fn control_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.u_bounds = Some(bounds);
        self
    }

    pub fn build(self) -> Result<ProblemDef> {
        let (t0, tf) = self.horizon.ok_or(Error::MissingEvaluator("horizon"))?;
        if !(t0.is_finite() && tf.is_finite()) || t0 >= tf {
            return Err(Error::InvalidArgument(format!(
                "horizon requires t0 < tf, got [{t0}, {tf}]"
            )));
        }
        let x0 = self.x0.ok_or(Error::MissingEvaluator("x0"))?;
        let p0 = self.p0.unwrap_or_else(|| V::zeros(0));
        let dims = Dims {
            n: x0.len(),
            m: self.m,
            l: p0.len(),
            k: self.k,
        };
        if let Some(b) = &self.u_bounds {
            check_len("u_bounds", dims.m, b.len())?;
            if b.iter().any(|&(lo, hi)| !(lo <= hi)) {
                return Err(Error::InvalidArgument("control bound with lo > hi".into()));
            }
        }
        let n = dims.n;
        let prob = ProblemDef {
            name: self.name,
            dims,
            t0,
            tf,
            x0,
            p0,
            f: self.f.ok_or(Error::MissingEvaluator("f"))?,
            f_x: self.f_x.ok_or(Error::MissingEvaluator("f_x"))?,
            f_p: self.f_p.ok_or(Error::MissingEvaluator("f_p"))?,
            f_u: self.f_u,
            l: self.l.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
            l_x: self.l_x.unwrap_or_else(|| Arc::new(move |_, _, _| V::zeros(n))),
            l_u: self.l_u,
            phi: self.phi.unwrap_or_else(|| Arc::new(|_, _| 0.0)),
            phi_x: self.phi_x.unwrap_or_else(|| Arc::new(move |_, _| V::zeros(n))),
            psi: self.psi.unwrap_or_else(|| Arc::new(|_, _| V::zeros(0))),
            psi_x: self.psi_x,
            u_bounds: self.u_bounds,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..3 {
            let probe = prob.probe(&mut rng);
            prob.check_shapes(&probe)?;
        }
        Ok(prob)
    }
}

/// Tolerance above which a Jacobian entry is flagged.
pub const JACOBIAN_TOLERANCE: f64 = 1e-4;

/// Worst relative error found for one user Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub probes: usize,
    pub tolerance: f64,
    pub checks: Vec<JacobianCheck>,
}

impl JacobianReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn max_error(&self, name: &str) -> Option<f64> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.max_rel_error)
    }
}

fn rel_err(user: &M, fd: &M) -> f64 {
    user.iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max)
}

/// Compares the analytic Jacobians against central differences at random probes.
pub fn validate_jacobians(prob: &ProblemDef, probes: usize, seed: u64) -> Result<JacobianReport> {
    if probes == 0 {
        return Err(Error::InvalidArgument("probes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(&'static str, f64)> = vec![("f_x", 0.0), ("f_p", 0.0), ("L_x", 0.0), ("phi_x", 0.0)];
    if prob.f_u.is_some() {
        worst.push(("f_u", 0.0));
    }
    if prob.l_u.is_some() {
        worst.push(("L_u", 0.0));
    }
    if prob.psi_x.is_some() {
        worst.push(("psi_x", 0.0));
    }
    for _ in 0..probes {
        let probe = prob.probe(&mut rng);
        prob.check_shapes(&probe)?;
        let Probe { x, p, u, t } = &probe;
        let t = *t;
        for (name, err) in worst.iter_mut() {
            let e = match *name {
                "f_x" => rel_err(
                    &prob.f_x(x, p, u, t),
                    &fd_jacobian(x, FD_BASE, |xx| prob.f(xx, p, u, t)),
                ),
                "f_p" => rel_err(
                    &prob.f_p(x, p, u, t),
                    &fd_jacobian(p, FD_BASE, |pp| prob.f(x, pp, u, t)),
                ),
                "f_u" => rel_err(
                    &prob.f_u(x, p, u, t),
                    &fd_jacobian(u, FD_BASE, |uu| prob.f(x, p, uu, t)),
                ),
                "L_x" => rel_err(
                    &col(prob.running_cost_x(x, u, t)),
                    &col(fd_gradient(x, FD_BASE, |xx| prob.running_cost(xx, u, t))),
                ),
                "L_u" => rel_err(
                    &col(prob.running_cost_u(x, u, t)),
                    &col(fd_gradient(u, FD_BASE, |uu| prob.running_cost(x, uu, t))),
                ),
                "phi_x" => rel_err(
                    &col(prob.terminal_cost_x(x, t)),
                    &col(fd_gradient(x, FD_BASE, |xx| prob.terminal_cost(xx, t))),
                ),
                "psi_x" => rel_err(
                    &prob.terminal_constraint_x(x, t),
                    &fd_jacobian(x, FD_BASE, |xx| prob.terminal_constraint(xx, t)),
                ),
                _ => unreachable!(),
            };
            *err = err.max(e);
        }
    }
    Ok(JacobianReport {
        probes,
        tolerance: JACOBIAN_TOLERANCE,
        checks: worst
            .into_iter()
            .map(|(name, max_rel_error)| JacobianCheck {
                name,
                max_rel_error,
                passed: max_rel_error <= JACOBIAN_TOLERANCE,
            })
            .collect(),
    })
}

fn col(v: V) -> M {
    let n = v.len();
    M::from_column_slice(n, 1, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> ProblemBuilder {
        ProblemDef::builder("decay")
            .horizon(0.0, 1.0)
            .initial_state(V::from_element(1, 1.0))
            .nominal_params(V::from_element(1, 1.0))
            .controls(1)
            .dynamics(|x, _, _, _| -x)
            .dynamics_x(|_, _, _, _| M::from_element(1, 1, -1.0))
            .dynamics_p(|_, _, _, _| M::zeros(1, 1))
    }

    #[test]
    fn linear_decay_validates_exactly() {
        let prob = decay().build().unwrap();
        let report = validate_jacobians(&prob, 5, 1).unwrap();
        assert!(report.passed());
        assert!(report.max_error("f_x").unwrap() < 1e-9);
    }

    #[test]
    fn wrong_shape_names_the_evaluator() {
        let err = decay()
            .dynamics_p(|_, _, _, _| M::zeros(2, 1))
            .build()
            .unwrap_err();
        match err {
            Error::DimensionMismatch { evaluator, .. } => assert_eq!(evaluator, "f_p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_dynamics_rejected() {
        let err = ProblemDef::builder("x")
            .horizon(0.0, 1.0)
            .initial_state(V::zeros(1))
            .build()
            .unwrap_err();
        assert_eq!(err, Error::MissingEvaluator("f"));
    }

    #[test]
    fn bad_horizon_rejected() {
        assert!(decay().horizon(1.0, 0.0).build().is_err());
    }

    #[test]
    fn default_derivatives_fall_back_to_differences() {
        let prob = decay()
            .running_cost(|x, u, _| x[0] * u[0] + u[0] * u[0])
            .running_cost_x(|_, u, _| V::from_element(1, u[0]))
            .build()
            .unwrap();
        let x = V::from_element(1, 2.0);
        let u = V::from_element(1, 0.5);
        let lu = prob.running_cost_u(&x, &u, 0.0);
        assert!((lu[0] - 3.0).abs() < 1e-8);
        let fu = prob.f_u(&x, prob.p0(), &u, 0.0);
        assert!(fu[(0, 0)].abs() < 1e-10);
    }

    #[test]
    fn zero_probes_rejected() {
        let prob = decay().build().unwrap();
        assert!(validate_jacobians(&prob, 0, 0).is_err());
    }
}
