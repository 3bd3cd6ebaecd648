//! Direct collocation of the augmented two-point boundary-value problem.
//!
//! Decision vector is node-major, `w = [z_0, u_0, z_1, u_1, ..., z_{N-1}, u_{N-1}]`,
//! with `z = [x | p | lambda | mu]`. Constraints, in order:
//!
//! * collocation defects divided by the step, `D` per interval;
//! * `x(t0) = x0`, `p(t0) = p0`;
//! * `lambda(tf) = phi_x(x(tf))`, `mu(tf) = 0`;
//! * `psi(x(tf)) = 0`.
//!
//! The initial values and `mu(tf)` are pinned: they are set in the starting point, their
//! gradient entries are zeroed, so the matching residuals stay exactly zero.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::Serialize;

use crate::augment::{AugmentedProblem, DerivativeMode};
use crate::cost::Quadrature;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::solver::auglag::EqualityProgram;
use crate::solver::lbfgs::Preconditioner;

type V = DVector<f64>;
type M = DMatrix<f64>;

/// Sizes of the transcribed program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProgramSize {
    pub nodes: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub variables: usize,
    pub pinned: usize,
    pub defects: usize,
    pub initial: usize,
    pub transversality: usize,
    pub terminal: usize,
    pub constraints: usize,
}

type Points = Arc<(Vec<Point>, Vec<Point>)>;

/// Last decision vector evaluated with derivatives, shared between the gradient and the
/// preconditioner refresh at the same point.
#[derive(Default)]
struct PointCache(Mutex<Option<(Vec<f64>, Points)>>);

impl Clone for PointCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl std::fmt::Debug for PointCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PointCache")
    }
}

#[derive(Debug, Clone)]
pub struct Transcription {
    aug: AugmentedProblem,
    grid: TimeGrid,
    rule: Quadrature,
    mode: DerivativeMode,
    pinned: Vec<bool>,
    size: ProgramSize,
    warnings: Vec<String>,
    cache: PointCache,
}

/// Everything evaluated at one collocation or midpoint.
struct Point {
    z: V,
    u: V,
    f: V,
    jac: Option<M>,
    running: f64,
    sensitivity: f64,
    grad: Option<(V, V)>,
}

/// Objective split and constraint values at a decision vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terminal: f64,
    pub running: f64,
    pub sensitivity: f64,
    pub constraints: Vec<f64>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.terminal + self.running + self.sensitivity
    }
}

impl Transcription {
    pub fn new(
        aug: AugmentedProblem,
        grid: TimeGrid,
        rule: Quadrature,
        mode: DerivativeMode,
    ) -> Result<Self> {
        let base = aug.base();
        if (grid.t0() - base.t0()).abs() > 1e-12 * (1.0 + base.t0().abs())
            || (grid.tf() - base.tf()).abs() > 1e-12 * (1.0 + base.tf().abs())
        {
            return Err(Error::InvalidGrid(format!(
                "grid spans [{}, {}] but the horizon is [{}, {}]",
                grid.t0(),
                grid.tf(),
                base.t0(),
                base.tf()
            )));
        }
        let dims = base.dims();
        let d = aug.dim();
        let nodes = grid.len();
        let stride = d + dims.m;
        let lay = aug.layout();
        let mut pinned = vec![false; nodes * stride];
        pinned[..dims.n + dims.l].iter_mut().for_each(|b| *b = true);
        let last = (nodes - 1) * stride;
        for j in lay.mu() {
            pinned[last + j] = true;
        }
        let defects = (nodes - 1) * d;
        let size = ProgramSize {
            nodes,
            state_dim: d,
            control_dim: dims.m,
            variables: nodes * stride,
            pinned: pinned.iter().filter(|b| **b).count(),
            defects,
            initial: dims.n + dims.l,
            transversality: dims.n + dims.l,
            terminal: dims.k,
            constraints: defects + 2 * (dims.n + dims.l) + dims.k,
        };
        let mut warnings = Vec::new();
        if size.constraints >= size.variables {
            warnings.push(format!(
                "{} constraints for {} variables: the program has no free directions",
                size.constraints, size.variables
            ));
        }
        Ok(Self {
            aug,
            grid,
            rule,
            mode,
            pinned,
            size,
            warnings,
            cache: PointCache::default(),
        })
    }

    pub fn augmented(&self) -> &AugmentedProblem {
        &self.aug
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn rule(&self) -> Quadrature {
        self.rule
    }

    pub fn size(&self) -> ProgramSize {
        self.size
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    fn stride(&self) -> usize {
        self.size.state_dim + self.size.control_dim
    }

    pub fn pack(&self, z: &[V], u: &[V]) -> Result<Vec<f64>> {
        let (d, m) = (self.size.state_dim, self.size.control_dim);
        if z.len() != self.size.nodes || u.len() != self.size.nodes {
            return Err(Error::GridMismatch);
        }
        let mut w = Vec::with_capacity(self.size.variables);
        for (zi, ui) in z.iter().zip(u) {
            if zi.len() != d {
                return Err(Error::LayoutMismatch {
                    expected: d,
                    got: zi.len(),
                });
            }
            if ui.len() != m {
                return Err(Error::LayoutMismatch {
                    expected: m,
                    got: ui.len(),
                });
            }
            w.extend(zi.iter());
            w.extend(ui.iter());
        }
        Ok(w)
    }

    pub fn unpack(&self, w: &[f64]) -> (Vec<V>, Vec<V>) {
        let (d, s) = (self.size.state_dim, self.stride());
        (0..self.size.nodes)
            .map(|i| {
                let o = i * s;
                (
                    V::from_column_slice(&w[o..o + d]),
                    V::from_column_slice(&w[o + d..o + s]),
                )
            })
            .unzip()
    }

    /// Overwrites the pinned entries of `w` with the boundary data.
    pub fn pin(&self, w: &mut [f64]) {
        let base = self.aug.base();
        let dims = base.dims();
        w[..dims.n].copy_from_slice(base.x0().as_slice());
        w[dims.n..dims.n + dims.l].copy_from_slice(base.p0().as_slice());
        let last = (self.size.nodes - 1) * self.stride();
        for j in self.aug.layout().mu() {
            w[last + j] = 0.0;
        }
    }

    fn point(&self, z: V, u: V, t: f64, derivs: bool) -> Result<Point> {
        let base = self.aug.base();
        let lay = self.aug.layout();
        let x = z.rows_range(lay.x()).into_owned();
        let mu = z.rows_range(lay.mu()).into_owned();
        let f = self.aug.rhs(&z, &u, t);
        let running = base.running_cost(&x, &u, t);
        let sensitivity = self.aug.weights().quad_form(&mu, t)?;
        if !(f.iter().all(|v| v.is_finite()) && running.is_finite() && sensitivity.is_finite()) {
            return Err(Error::NonFiniteObjective);
        }
        let (jac, grad) = if derivs {
            (
                Some(self.aug.rhs_jacobian(&z, &u, t, self.mode)),
                Some(self.aug.running_cost_grad(&z, &u, t)?),
            )
        } else {
            (None, None)
        };
        Ok(Point {
            z,
            u,
            f,
            jac,
            running,
            sensitivity,
            grad,
        })
    }

    fn points(&self, w: &[f64], derivs: bool) -> Result<(Vec<Point>, Vec<Point>)> {
        let (zs, us) = self.unpack(w);
        let t = self.grid.nodes();
        let nodes = zs
            .into_iter()
            .zip(us)
            .zip(t)
            .map(|((z, u), &ti)| self.point(z, u, ti, derivs))
            .collect::<Result<Vec<_>>>()?;
        let mids = match self.rule {
            Quadrature::Trapezoidal => Vec::new(),
            Quadrature::HermiteSimpson => (0..self.grid.intervals())
                .map(|i| {
                    let (a, b) = (&nodes[i], &nodes[i + 1]);
                    let h = t[i + 1] - t[i];
                    let zm = (&a.z + &b.z) * 0.5 + (&a.f - &b.f) * (h / 8.0);
                    let um = (&a.u + &b.u) * 0.5;
                    self.point(zm, um, t[i] + 0.5 * h, derivs)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok((nodes, mids))
    }

    fn derivative_points(&self, w: &[f64]) -> Result<Points> {
        let mut guard = self.cache.0.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((cw, pts)) = guard.as_ref() {
            if cw.as_slice() == w {
                return Ok(pts.clone());
            }
        }
        let pts = Arc::new(self.points(w, true)?);
        *guard = Some((w.to_vec(), pts.clone()));
        Ok(pts)
    }

    fn assemble(&self, nodes: &[Point], mids: &[Point]) -> Evaluation {
        let d = self.size.state_dim;
        let t = self.grid.nodes();
        let mut constraints = Vec::with_capacity(self.size.constraints);
        let (mut running, mut sensitivity) = (0.0, 0.0);
        for i in 0..self.grid.intervals() {
            let h = t[i + 1] - t[i];
            let (a, b) = (&nodes[i], &nodes[i + 1]);
            let defect = match self.rule {
                Quadrature::Trapezoidal => {
                    running += 0.5 * h * (a.running + b.running);
                    sensitivity += 0.5 * h * (a.sensitivity + b.sensitivity);
                    &b.z - &a.z - (&a.f + &b.f) * (0.5 * h)
                }
                Quadrature::HermiteSimpson => {
                    let mp = &mids[i];
                    running += h / 6.0 * (a.running + 4.0 * mp.running + b.running);
                    sensitivity += h / 6.0 * (a.sensitivity + 4.0 * mp.sensitivity + b.sensitivity);
                    &b.z - &a.z - (&a.f + &mp.f * 4.0 + &b.f) * (h / 6.0)
                }
            };
            debug_assert_eq!(defect.len(), d);
            constraints.extend(defect.iter().map(|v| v / h));
        }
        let z0 = &nodes[0].z;
        let zf = &nodes[nodes.len() - 1].z;
        constraints.extend(self.aug.initial_residual(z0).iter());
        constraints.extend(self.aug.transversality_residual(zf).iter());
        constraints.extend(self.aug.terminal_constraint(zf).iter());
        Evaluation {
            terminal: self.aug.terminal_cost(zf),
            running,
            sensitivity,
            constraints,
        }
    }

    pub fn evaluate_split(&self, w: &[f64]) -> Result<Evaluation> {
        self.check_len(w)?;
        let (nodes, mids) = self.points(w, false)?;
        Ok(self.assemble(&nodes, &mids))
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.size.variables {
            return Err(Error::LayoutMismatch {
                expected: self.size.variables,
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Gradient of `objective + v^T constraints`, with pinned entries zeroed.
    fn lagrangian_grad(&self, nodes: &[Point], mids: &[Point], v: &[f64]) -> Vec<f64> {
        let (d, s) = (self.size.state_dim, self.stride());
        let t = self.grid.nodes();
        let mut g = vec![0.0; self.size.variables];
        let add = |g: &mut [f64], i: usize, off: usize, vals: &V| {
            let o = i * s + off;
            g[o..o + vals.len()]
                .iter_mut()
                .zip(vals.iter())
                .for_each(|(gi, vi)| *gi += vi);
        };
        let stack = |gz: &V, gu: &V| {
            let mut out = V::zeros(s);
            out.rows_range_mut(0..d).copy_from(gz);
            out.rows_range_mut(d..s).copy_from(gu);
            out
        };
        for i in 0..self.grid.intervals() {
            let j = i + 1;
            let h = t[j] - t[i];
            let vd = V::from_column_slice(&v[i * d..(i + 1) * d]) / h;
            let (a, b) = (&nodes[i], &nodes[j]);
            let (ja, jb) = (a.jac.as_ref().unwrap(), b.jac.as_ref().unwrap());
            let (ga, gb) = (a.grad.as_ref().unwrap(), b.grad.as_ref().unwrap());
            let (ca, cb) = (stack(&ga.0, &ga.1), stack(&gb.0, &gb.1));
            match self.rule {
                Quadrature::Trapezoidal => {
                    let wa = (ca - ja.tr_mul(&vd)) * (0.5 * h);
                    let wb = (cb - jb.tr_mul(&vd)) * (0.5 * h);
                    add(&mut g, i, 0, &wa);
                    add(&mut g, j, 0, &wb);
                }
                Quadrature::HermiteSimpson => {
                    let mp = &mids[i];
                    let gm = mp.grad.as_ref().unwrap();
                    // adjoint of the midpoint value: objective weight minus defect weight
                    let cm = (stack(&gm.0, &gm.1) - mp.jac.as_ref().unwrap().tr_mul(&vd)) * (4.0 * h / 6.0);
                    let cz = cm.rows_range(0..d).into_owned();
                    let half = &cm * 0.5;
                    let wa = (ca - ja.tr_mul(&vd)) * (h / 6.0) + &half + ja.tr_mul(&cz) * (h / 8.0);
                    let wb = (cb - jb.tr_mul(&vd)) * (h / 6.0) + &half - jb.tr_mul(&cz) * (h / 8.0);
                    add(&mut g, i, 0, &wa);
                    add(&mut g, j, 0, &wb);
                }
            }
            add(&mut g, i, 0, &-&vd);
            add(&mut g, j, 0, &vd);
        }

        let base = self.aug.base();
        let dims = base.dims();
        let lay = self.aug.layout();
        let last = nodes.len() - 1;
        let zf = &nodes[last].z;
        let xf = zf.rows_range(lay.x()).into_owned();
        let mut off = self.size.defects;
        let v0 = V::from_column_slice(&v[off..off + dims.n + dims.l]);
        add(&mut g, 0, 0, &v0);
        off += dims.n + dims.l;
        let vl = V::from_column_slice(&v[off..off + dims.n]);
        let vm = V::from_column_slice(&v[off + dims.n..off + dims.n + dims.l]);
        add(&mut g, last, lay.lambda().start, &vl);
        add(&mut g, last, lay.mu().start, &vm);
        let mut gx = base.terminal_cost_x(&xf, base.tf());
        gx += self.aug.transversality_x_jacobian(&xf).tr_mul(&vl);
        off += dims.n + dims.l;
        if dims.k > 0 {
            let vp = V::from_column_slice(&v[off..off + dims.k]);
            gx += base.terminal_constraint_x(&xf, base.tf()).tr_mul(&vp);
        }
        add(&mut g, last, 0, &gx);

        g.iter_mut().zip(&self.pinned).for_each(|(gi, p)| {
            if *p {
                *gi = 0.0;
            }
        });
        g
    }

    /// Gradient of `objective + v^T c` for an arbitrary weight vector `v`.
    pub fn weighted_gradient(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(w)?;
        if v.len() != self.size.constraints {
            return Err(Error::LayoutMismatch {
                expected: self.size.constraints,
                got: v.len(),
            });
        }
        let pts = self.derivative_points(w)?;
        Ok(self.lagrangian_grad(&pts.0, &pts.1, v))
    }
}

impl Transcription {
    /// Sparse Jacobian of the constraints with pinned columns left out.
    pub fn constraint_jacobian(&self, w: &[f64]) -> Result<CscMatrix<f64>> {
        self.check_len(w)?;
        let pts = self.derivative_points(w)?;
        Ok(self.jacobian_from(&pts.0, &pts.1))
    }

    fn jacobian_from(&self, nodes: &[Point], mids: &[Point]) -> CscMatrix<f64> {
        let (d, s) = (self.size.state_dim, self.stride());
        let t = self.grid.nodes();
        let mut coo = CooMatrix::new(self.size.constraints, self.size.variables);
        let pinned = &self.pinned;
        let put = |coo: &mut CooMatrix<f64>, row: usize, col: usize, block: &M| {
            for c in 0..block.ncols() {
                if pinned[col + c] {
                    continue;
                }
                for r in 0..block.nrows() {
                    let v = block[(r, c)];
                    if v != 0.0 {
                        coo.push(row + r, col + c, v);
                    }
                }
            }
        };
        let mut eye = M::zeros(d, s);
        eye.view_mut((0, 0), (d, d)).fill_with_identity();
        for i in 0..self.grid.intervals() {
            let j = i + 1;
            let h = t[j] - t[i];
            let (ga, gb) = (nodes[i].jac.as_ref().unwrap(), nodes[j].jac.as_ref().unwrap());
            let (mut ba, mut bb) = match self.rule {
                Quadrature::Trapezoidal => (-&eye - ga * (0.5 * h), &eye - gb * (0.5 * h)),
                Quadrature::HermiteSimpson => {
                    let gm = mids[i].jac.as_ref().unwrap();
                    let gmz = gm.columns(0, d);
                    let ca = gm * 0.5 + gmz * ga * (h / 8.0);
                    let cb = gm * 0.5 - gmz * gb * (h / 8.0);
                    (
                        -&eye - ga * (h / 6.0) - ca * (4.0 * h / 6.0),
                        &eye - gb * (h / 6.0) - cb * (4.0 * h / 6.0),
                    )
                }
            };
            ba /= h;
            bb /= h;
            put(&mut coo, i * d, i * s, &ba);
            put(&mut coo, i * d, j * s, &bb);
        }
        let base = self.aug.base();
        let dims = base.dims();
        let lay = self.aug.layout();
        let last = nodes.len() - 1;
        let xf = nodes[last].z.rows_range(lay.x()).into_owned();
        let mut row = self.size.defects;
        put(&mut coo, row, 0, &M::identity(dims.n + dims.l, dims.n + dims.l));
        row += dims.n + dims.l;
        put(&mut coo, row, last * s, &self.aug.transversality_x_jacobian(&xf));
        put(
            &mut coo,
            row,
            last * s + lay.lambda().start,
            &M::identity(dims.n, dims.n),
        );
        put(
            &mut coo,
            row + dims.n,
            last * s + lay.mu().start,
            &M::identity(dims.l, dims.l),
        );
        row += dims.n + dims.l;
        if dims.k > 0 {
            put(
                &mut coo,
                row,
                last * s,
                &base.terminal_constraint_x(&xf, base.tf()),
            );
        }
        CscMatrix::from(&coo)
    }
}

/// `(rho J^T J + sigma I)^{-1}` as the initial inverse Hessian of L-BFGS. `sigma` tracks
/// the curvature along the last step that the penalty term does not explain.
struct PenaltyPreconditioner<'a> {
    trans: &'a Transcription,
    rho: f64,
    sigma: f64,
    jac: Option<CscMatrix<f64>>,
    factor: Option<CscCholesky<f64>>,
}

impl PenaltyPreconditioner<'_> {
    const SIGMA_RANGE: (f64, f64) = (1e-6, 1e6);
}

impl Preconditioner for PenaltyPreconditioner<'_> {
    fn refresh(&mut self, x: &[f64], pair: Option<(&[f64], &[f64])>) -> Result<()> {
        if let (Some((s, y)), Some(jac)) = (pair, &self.jac) {
            let sv = V::from_column_slice(s);
            let js = jac * &sv;
            let ss = sv.norm_squared();
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            if ss > 0.0 {
                let (lo, hi) = Self::SIGMA_RANGE;
                self.sigma = ((sy - self.rho * js.norm_squared()) / ss).clamp(lo, hi);
            }
        }
        let jac = self.trans.constraint_jacobian(x)?;
        let jt = jac.transpose();
        let mut b = (&jt * &jac) * self.rho;
        let n = b.nrows();
        let eye = CscMatrix::identity(n) * self.sigma;
        b = &b + &eye;
        self.factor = CscCholesky::factor(&b).ok();
        self.jac = Some(jac);
        Ok(())
    }

    fn apply(&self, q: &mut [f64]) {
        match &self.factor {
            Some(f) => {
                let r = f.solve(&DMatrix::from_column_slice(q.len(), 1, q));
                q.copy_from_slice(r.as_slice());
            }
            None => q.iter_mut().for_each(|v| *v /= self.sigma),
        }
    }
}

impl EqualityProgram for Transcription {
    fn num_vars(&self) -> usize {
        self.size.variables
    }

    fn num_constraints(&self) -> usize {
        self.size.constraints
    }

    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate_split(w)?;
        Ok((e.objective(), e.constraints))
    }

    fn lagrangian_gradient(&self, w: &[f64], y: &[f64], rho: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_len(w)?;
        let pts = self.derivative_points(w)?;
        let e = self.assemble(&pts.0, &pts.1);
        let v: Vec<f64> = e.constraints.iter().zip(y).map(|(c, yi)| yi + rho * c).collect();
        let g = self.lagrangian_grad(&pts.0, &pts.1, &v);
        Ok((e.objective(), e.constraints, g))
    }

    fn preconditioner(&self, rho: f64) -> Option<Box<dyn Preconditioner + '_>> {
        Some(Box::new(PenaltyPreconditioner {
            trans: self,
            rho,
            sigma: 1.0,
            jac: None,
            factor: None,
        }))
    }
}
