//! Co-state augmented problem.
//!
//! The uncertain parameters become constant states and the co-state equations
//!
//! ```text
//! lambda' = -f_x^T lambda - L_x^T
//! mu'     = -f_p^T lambda
//! ```
//!
//! are appended to the dynamics, giving the layout `z = [x | p | lambda | mu]` of
//! dimension `2 (n + l)`. Boundary data are `x(t0) = x0`, `p(t0) = p0`,
//! `lambda(tf) = phi_x(x(tf))`, `mu(tf) = 0` and `psi(x(tf)) = 0`. Penalizing
//! `mu^T Q mu` in the running cost desensitizes the cost against `p`, because `mu(t)`
//! is the gradient of the cost-to-go with respect to `p`.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::cost::Quadrature;
use crate::error::{Error, Result};
use crate::integrate::{hermite_midpoint, Trajectory};
use crate::problem::{fd_jacobian, ProblemDef};

type V = DVector<f64>;
type M = DMatrix<f64>;

/// Diagonal, positive semi-definite weight `Q(t) = diag(alpha_1(t), ..., alpha_l(t))`.
#[derive(Clone)]
pub struct WeightSchedule {
    dim: usize,
    diag: Arc<dyn Fn(f64) -> V + Send + Sync>,
    constant: Option<Vec<f64>>,
}

impl std::fmt::Debug for WeightSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.constant {
            Some(c) => write!(f, "WeightSchedule::constant({c:?})"),
            None => write!(f, "WeightSchedule::from_fn(dim = {})", self.dim),
        }
    }
}

impl WeightSchedule {
    pub fn constant(diag: Vec<f64>) -> Result<Self> {
        if let Some(bad) = diag.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "diagonal entry {bad} is not a finite non-negative value"
            )));
        }
        let v = V::from_vec(diag.clone());
        Ok(Self {
            dim: diag.len(),
            diag: Arc::new(move |_| v.clone()),
            constant: Some(diag),
        })
    }

    /// `alpha * I` of size `dim`.
    pub fn scalar(dim: usize, alpha: f64) -> Result<Self> {
        Self::constant(vec![alpha; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self::scalar(dim, 0.0).expect("zero weights are valid")
    }

    /// Time-varying diagonal; non-negativity is checked whenever it is queried.
    pub fn from_fn(dim: usize, diag: impl Fn(f64) -> V + Send + Sync + 'static) -> Self {
        Self {
            dim,
            diag: Arc::new(diag),
            constant: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constant_diag(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }

    pub fn diag_at(&self, t: f64) -> Result<V> {
        let d = (self.diag)(t);
        if d.len() != self.dim {
            return Err(Error::InvalidWeights(format!(
                "schedule returned {} entries, expected {}",
                d.len(),
                self.dim
            )));
        }
        if d.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "negative or non-finite weight at t = {t}"
            )));
        }
        Ok(d)
    }

    /// `mu^T Q(t) mu`.
    pub fn quad_form(&self, mu: &V, t: f64) -> Result<f64> {
        let d = self.diag_at(t)?;
        Ok(mu.iter().zip(d.iter()).map(|(m, a)| a * m * m).sum())
    }
}

/// Index ranges of the augmented state `[x | p | lambda | mu]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugLayout {
    pub n: usize,
    pub l: usize,
}

impl AugLayout {
    pub fn dim(&self) -> usize {
        2 * (self.n + self.l)
    }

    pub fn x(&self) -> Range<usize> {
        0..self.n
    }

    pub fn p(&self) -> Range<usize> {
        self.n..self.n + self.l
    }

    pub fn lambda(&self) -> Range<usize> {
        self.n + self.l..2 * self.n + self.l
    }

    pub fn mu(&self) -> Range<usize> {
        2 * self.n + self.l..self.dim()
    }

    pub fn split(&self, z: &V) -> (V, V, V, V) {
        (
            z.rows_range(self.x()).into_owned(),
            z.rows_range(self.p()).into_owned(),
            z.rows_range(self.lambda()).into_owned(),
            z.rows_range(self.mu()).into_owned(),
        )
    }

    pub fn join(&self, x: &V, p: &V, lambda: &V, mu: &V) -> V {
        let mut z = V::zeros(self.dim());
        z.rows_range_mut(self.x()).copy_from(x);
        z.rows_range_mut(self.p()).copy_from(p);
        z.rows_range_mut(self.lambda()).copy_from(lambda);
        z.rows_range_mut(self.mu()).copy_from(mu);
        z
    }
}

/// `H = L(x, u, t) + lambda^T f(x, p, u, t)`.
pub fn hamiltonian(prob: &ProblemDef, x: &V, p: &V, u: &V, lambda: &V, t: f64) -> f64 {
    prob.running_cost(x, u, t) + lambda.dot(&prob.f(x, p, u, t))
}

/// Co-state rates `(lambda', mu')`.
pub fn adjoint_rhs(prob: &ProblemDef, x: &V, p: &V, u: &V, lambda: &V, t: f64) -> (V, V) {
    let fx = prob.f_x(x, p, u, t);
    let fp = prob.f_p(x, p, u, t);
    let lx = prob.running_cost_x(x, u, t);
    let dlambda = -(fx.tr_mul(lambda)) - lx;
    let dmu = -(fp.tr_mul(lambda));
    (dlambda, dmu)
}

/// How derivatives of the augmented dynamics are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// First-order blocks from the user Jacobians; only the co-state rows' dependence on
    /// `(x, p, u)` (second derivatives of `f` and `L`) is differenced.
    #[default]
    AnalyticChain,
    /// Every block by central differences of the augmented dynamics.
    FiniteDifference,
}

const SECOND_ORDER_STEP: f64 = 1e-6;

/// The augmented problem: base problem, weights and layout.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    base: ProblemDef,
    weights: WeightSchedule,
    layout: AugLayout,
}

impl AugmentedProblem {
    pub fn base(&self) -> &ProblemDef {
        &self.base
    }

    pub fn weights(&self) -> &WeightSchedule {
        &self.weights
    }

    pub fn layout(&self) -> AugLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// `z' = [f, 0, -f_x^T lambda - L_x^T, -f_p^T lambda]`.
    pub fn rhs(&self, z: &V, u: &V, t: f64) -> V {
        let (x, p, lambda, _) = self.layout.split(z);
        let dx = self.base.f(&x, &p, u, t);
        let (dl, dm) = adjoint_rhs(&self.base, &x, &p, u, &lambda, t);
        self.layout.join(&dx, &V::zeros(self.layout.l), &dl, &dm)
    }

    /// `L(x, u, t) + mu^T Q(t) mu`.
    pub fn running_cost(&self, z: &V, u: &V, t: f64) -> Result<f64> {
        let x = z.rows_range(self.layout.x()).into_owned();
        let mu = z.rows_range(self.layout.mu()).into_owned();
        Ok(self.base.running_cost(&x, u, t) + self.weights.quad_form(&mu, t)?)
    }

    /// Gradient of the augmented running cost with respect to `(z, u)`.
    pub fn running_cost_grad(&self, z: &V, u: &V, t: f64) -> Result<(V, V)> {
        let x = z.rows_range(self.layout.x()).into_owned();
        let mu = z.rows_range(self.layout.mu()).into_owned();
        let q = self.weights.diag_at(t)?;
        let mut gz = V::zeros(self.dim());
        gz.rows_range_mut(self.layout.x())
            .copy_from(&self.base.running_cost_x(&x, u, t));
        gz.rows_range_mut(self.layout.mu())
            .copy_from(&(mu.component_mul(&q) * 2.0));
        Ok((gz, self.base.running_cost_u(&x, u, t)))
    }

    pub fn terminal_cost(&self, zf: &V) -> f64 {
        let x = zf.rows_range(self.layout.x()).into_owned();
        self.base.terminal_cost(&x, self.base.tf())
    }

    /// Residual of `x(t0) = x0`, `p(t0) = p0`.
    pub fn initial_residual(&self, z0: &V) -> V {
        let mut r = z0.rows_range(0..self.layout.n + self.layout.l).into_owned();
        let mut rx = r.rows_range_mut(self.layout.x());
        rx -= self.base.x0();
        let mut rp = r.rows_range_mut(self.layout.p());
        rp -= self.base.p0();
        r
    }

    /// Residual of `lambda(tf) = phi_x(x(tf))`, `mu(tf) = 0`.
    pub fn transversality_residual(&self, zf: &V) -> V {
        let (x, _, lambda, mu) = self.layout.split(zf);
        let phi_x = self.base.terminal_cost_x(&x, self.base.tf());
        let mut r = V::zeros(self.layout.n + self.layout.l);
        r.rows_range_mut(0..self.layout.n).copy_from(&(lambda - phi_x));
        r.rows_range_mut(self.layout.n..self.layout.n + self.layout.l)
            .copy_from(&mu);
        r
    }

    /// Jacobian of `lambda(tf) - phi_x(x(tf))` with respect to `x(tf)`, i.e. `-phi_xx`.
    pub fn transversality_x_jacobian(&self, xf: &V) -> M {
        let tf = self.base.tf();
        -fd_jacobian(xf, SECOND_ORDER_STEP, |xx| self.base.terminal_cost_x(xx, tf))
    }

    pub fn terminal_constraint(&self, zf: &V) -> V {
        let x = zf.rows_range(self.layout.x()).into_owned();
        self.base.terminal_constraint(&x, self.base.tf())
    }

    /// Jacobian of [`Self::rhs`] with respect to `(z, u)`, a `D x (D + m)` matrix.
    pub fn rhs_jacobian(&self, z: &V, u: &V, t: f64, mode: DerivativeMode) -> M {
        let d = self.dim();
        let m = u.len();
        match mode {
            DerivativeMode::FiniteDifference => {
                let mut w = V::zeros(d + m);
                w.rows_range_mut(0..d).copy_from(z);
                w.rows_range_mut(d..d + m).copy_from(u);
                fd_jacobian(&w, SECOND_ORDER_STEP, |ww| {
                    let zz = ww.rows_range(0..d).into_owned();
                    let uu = ww.rows_range(d..d + m).into_owned();
                    self.rhs(&zz, &uu, t)
                })
            }
            DerivativeMode::AnalyticChain => self.rhs_jacobian_chain(z, u, t),
        }
    }

    fn rhs_jacobian_chain(&self, z: &V, u: &V, t: f64) -> M {
        let AugLayout { n, l } = self.layout;
        let d = self.dim();
        let m = u.len();
        let (x, p, lambda, _) = self.layout.split(z);
        let fx = self.base.f_x(&x, &p, u, t);
        let fp = self.base.f_p(&x, &p, u, t);
        let fu = self.base.f_u(&x, &p, u, t);
        let mut jac = M::zeros(d, d + m);
        let lr = self.layout.lambda();
        let mr = self.layout.mu();
        jac.view_mut((0, 0), (n, n)).copy_from(&fx);
        jac.view_mut((0, n), (n, l)).copy_from(&fp);
        jac.view_mut((0, d), (n, m)).copy_from(&fu);
        jac.view_mut((lr.start, lr.start), (n, n))
            .copy_from(&(-fx.transpose()));
        jac.view_mut((mr.start, lr.start), (l, n))
            .copy_from(&(-fp.transpose()));

        // co-state rows: differentiate (x, p, u) -> adjoint_rhs with lambda held fixed
        let mut w = V::zeros(n + l + m);
        w.rows_range_mut(0..n).copy_from(&x);
        w.rows_range_mut(n..n + l).copy_from(&p);
        w.rows_range_mut(n + l..n + l + m).copy_from(u);
        let second = fd_jacobian(&w, SECOND_ORDER_STEP, |ww| {
            let xx = ww.rows_range(0..n).into_owned();
            let pp = ww.rows_range(n..n + l).into_owned();
            let uu = ww.rows_range(n + l..n + l + m).into_owned();
            let (dl, dm) = adjoint_rhs(&self.base, &xx, &pp, &uu, &lambda, t);
            let mut out = V::zeros(n + l);
            out.rows_range_mut(0..n).copy_from(&dl);
            out.rows_range_mut(n..n + l).copy_from(&dm);
            out
        });
        jac.view_mut((lr.start, 0), (n + l, n + l))
            .copy_from(&second.view((0, 0), (n + l, n + l)));
        jac.view_mut((lr.start, d), (n + l, m))
            .copy_from(&second.view((0, n + l), (n + l, m)));
        jac
    }
}

/// Assembles the augmented problem after checking `Q` against the parameter count.
pub fn build_augmented(prob: &ProblemDef, weights: WeightSchedule) -> Result<AugmentedProblem> {
    let dims = prob.dims();
    if weights.dim() != dims.l {
        return Err(Error::InvalidWeights(format!(
            "weight schedule has {} entries but the problem has {} parameters",
            weights.dim(),
            dims.l
        )));
    }
    let aug = AugmentedProblem {
        base: prob.clone(),
        weights,
        layout: AugLayout { n: dims.n, l: dims.l },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xa06);
    for _ in 0..3 {
        let probe = prob.probe(&mut rng);
        aug.weights.diag_at(probe.t)?;
        let lambda = probe.x.map(|v| 0.5 - v);
        let mu = V::from_element(dims.l, 0.25);
        let z = aug.layout.join(&probe.x, &probe.p, &lambda, &mu);
        let dz = aug.rhs(&z, &probe.u, probe.t);
        let (dl, dm) = adjoint_rhs(prob, &probe.x, &probe.p, &probe.u, &lambda, probe.t);
        let expect = aug.layout.join(
            &prob.f(&probe.x, &probe.p, &probe.u, probe.t),
            &V::zeros(dims.l),
            &dl,
            &dm,
        );
        if (dz - expect).amax() > 1e-12 {
            return Err(Error::InvalidArgument(
                "augmented dynamics disagree with the co-state equations".into(),
            ));
        }
    }
    Ok(aug)
}

/// Boundary data of the augmented problem; `lambda(tf)` depends on `x(tf)`.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub x0: V,
    pub p0: V,
    pub mu_tf: V,
}

impl AugmentedProblem {
    pub fn boundary(&self) -> BoundaryConditions {
        BoundaryConditions {
            x0: self.base.x0().clone(),
            p0: self.base.p0().clone(),
            mu_tf: V::zeros(self.layout.l),
        }
    }

    /// `lambda(tf)` implied by a terminal state.
    pub fn lambda_tf(&self, xf: &V) -> V {
        self.base.terminal_cost_x(xf, self.base.tf())
    }
}

/// Per-interval integrals of `mu^T Q mu` along an augmented trajectory.
pub fn sensitivity_segments(
    aug: &AugmentedProblem,
    z_traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
    weights: &WeightSchedule,
) -> Result<Vec<f64>> {
    if z_traj.state_dim() != aug.dim() {
        return Err(Error::LayoutMismatch {
            expected: aug.dim(),
            got: z_traj.state_dim(),
        });
    }
    if !z_traj.grid().same_as(u.grid()) {
        return Err(Error::GridMismatch);
    }
    let lay = aug.layout();
    let nodes = z_traj.grid().nodes();
    let zs = z_traj.states();
    let mu_of = |z: &V| z.rows_range(lay.mu()).into_owned();
    (0..z_traj.grid().intervals())
        .map(|i| {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let h = b - a;
            let ga = weights.quad_form(&mu_of(&zs[i]), a)?;
            let gb = weights.quad_form(&mu_of(&zs[i + 1]), b)?;
            Ok(match rule {
                Quadrature::Trapezoidal => 0.5 * h * (ga + gb),
                Quadrature::HermiteSimpson => {
                    let tm = a + 0.5 * h;
                    let da = aug.rhs(&zs[i], &u.eval_within(a, a, b), a);
                    let db = aug.rhs(&zs[i + 1], &u.eval_within(b, a, b), b);
                    let zm = hermite_midpoint(&zs[i], &zs[i + 1], &da, &db, h);
                    let gm = weights.quad_form(&mu_of(&zm), tm)?;
                    h / 6.0 * (ga + 4.0 * gm + gb)
                }
            })
        })
        .collect()
}

/// `J_c = int mu^T Q mu dt` along an augmented trajectory.
pub fn sensitivity_cost(aug: &AugmentedProblem, z_traj: &Trajectory, u: &ControlSignal) -> Result<f64> {
    sensitivity_cost_with(aug, z_traj, u, Quadrature::default())
}

pub fn sensitivity_cost_with(
    aug: &AugmentedProblem,
    z_traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
) -> Result<f64> {
    Ok(sensitivity_segments(aug, z_traj, u, rule, aug.weights())?
        .iter()
        .sum())
}

/// Unweighted sensitivity `int mu^T mu dt`.
pub fn sensitivity_norm(
    aug: &AugmentedProblem,
    z_traj: &Trajectory,
    u: &ControlSignal,
    rule: Quadrature,
) -> Result<f64> {
    let unit = WeightSchedule::scalar(aug.layout().l, 1.0)?;
    Ok(sensitivity_segments(aug, z_traj, u, rule, &unit)?.iter().sum())
}

#[cfg(test)]
fn hamiltonian_x_fd(prob: &ProblemDef, x: &V, p: &V, u: &V, lambda: &V, t: f64) -> V {
    crate::problem::fd_gradient(x, 1e-6, |xx| hamiltonian(prob, xx, p, u, lambda, t))
}
