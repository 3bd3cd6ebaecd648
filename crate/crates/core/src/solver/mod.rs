//! Direct transcription of the augmented problem and its solution.
//!
//! [`transcribe`] collocates the augmented dynamics on a uniform grid, [`solve`] runs the
//! augmented-Lagrangian method on the resulting program and [`solve_cdoc`] chains
//! augmentation, transcription, solution and a co-state back-check.

pub mod auglag;
pub mod lbfgs;
pub mod transcription;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::propagate_costates;
use crate::augment::{build_augmented, sensitivity_norm, DerivativeMode, WeightSchedule};
use crate::control::{ControlSignal, Interpolation};
use crate::cost::Quadrature;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, DEFAULT_NODES};
use crate::integrate::Trajectory;
use crate::problem::ProblemDef;

pub use auglag::{AugLagOptions, AugLagResult, EqualityProgram};
pub use transcription::{Evaluation, ProgramSize, Transcription};

type V = DVector<f64>;

/// Relative co-state mismatch above which a solve is flagged as not converged.
pub const COSTATE_CHECK_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub nodes: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub constraint_tol: f64,
    pub stationarity_tol: f64,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    pub memory: usize,
    pub derivatives: DerivativeMode,
    pub quadrature: Quadrature,
    /// Seed for the perturbed extra starts.
    pub seed: u64,
    /// Number of starts; the first is always the cold start.
    pub starts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            max_outer: 50,
            max_inner: 200,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-6,
            penalty_growth: 10.0,
            initial_penalty: 1.0,
            max_penalty: 1e8,
            memory: 12,
            derivatives: DerivativeMode::default(),
            quadrature: Quadrature::default(),
            seed: 0,
            starts: 1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("constraint_tol", self.constraint_tol),
            ("stationarity_tol", self.stationarity_tol),
            ("initial_penalty", self.initial_penalty),
            ("max_penalty", self.max_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty_growth must exceed 1, got {}",
                self.penalty_growth
            )));
        }
        if self.nodes < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                self.nodes
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.memory == 0 || self.starts == 0 {
            return Err(Error::InvalidArgument(
                "iteration limits, memory and starts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn auglag(&self) -> AugLagOptions {
        AugLagOptions {
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            constraint_tol: self.constraint_tol,
            stationarity_tol: self.stationarity_tol,
            initial_penalty: self.initial_penalty,
            penalty_growth: self.penalty_growth,
            max_penalty: self.max_penalty,
            memory: self.memory,
        }
    }
}

/// Cost split of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// Original cost.
    pub cost: f64,
    /// `int mu^T Q mu`.
    pub weighted_sensitivity: f64,
    /// `cost + weighted_sensitivity`.
    pub desensitized: f64,
    /// `int mu^T mu`, independent of the weights.
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub converged: bool,
    pub message: String,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Largest residual of the program, with defects divided by the step.
    pub max_violation: f64,
    /// Largest collocation defect before division by the step.
    pub defect_violation: f64,
    pub boundary_violation: f64,
    pub terminal_violation: f64,
    pub stationarity: f64,
    pub penalty: f64,
    /// Relative mismatch against backward co-state propagation, when checked.
    pub costate_mismatch: Option<f64>,
    pub start: usize,
    pub size: ProgramSize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DesensitizedSolution {
    pub problem: String,
    pub control: ControlSignal,
    /// Augmented trajectory `[x | p | lambda | mu]` at the grid nodes.
    pub augmented: Trajectory,
    pub costs: CostBreakdown,
    pub diagnostics: SolverDiagnostics,
}

impl DesensitizedSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.augmented.grid()
    }

    fn block(&self, range: std::ops::Range<usize>) -> Vec<V> {
        self.augmented
            .states()
            .iter()
            .map(|z| z.rows_range(range.clone()).into_owned())
            .collect()
    }

    /// The state part as a plain trajectory with the nominal parameters.
    pub fn state_trajectory(&self) -> Trajectory {
        let n = self.dims().0;
        let p = self.augmented.params().clone();
        Trajectory::new(self.grid().clone(), self.block(0..n), p).expect("consistent layout")
    }

    /// `(n, l)`.
    fn dims(&self) -> (usize, usize) {
        let l = self.augmented.params().len();
        ((self.augmented.state_dim() - 2 * l) / 2, l)
    }

    pub fn states(&self) -> Vec<V> {
        self.block(0..self.dims().0)
    }

    pub fn params(&self) -> Vec<V> {
        let (n, l) = self.dims();
        self.block(n..n + l)
    }

    pub fn lambdas(&self) -> Vec<V> {
        let (n, l) = self.dims();
        self.block(n + l..2 * n + l)
    }

    pub fn mus(&self) -> Vec<V> {
        let (n, l) = self.dims();
        self.block(2 * n + l..2 * (n + l))
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }
}

/// Starting point for [`solve`].
#[derive(Debug, Clone)]
pub enum InitialGuess {
    /// `x = x0`, `p = p0`, `lambda` linear from zero to `phi_x(x0)`, `mu = 0`, `u = 0`.
    Cold,
    /// Augmented trajectory and control, interpolated onto the solve grid.
    Warm {
        augmented: Trajectory,
        control: ControlSignal,
    },
}

impl InitialGuess {
    pub fn from_solution(sol: &DesensitizedSolution) -> Self {
        Self::Warm {
            augmented: sol.augmented.clone(),
            control: sol.control.clone(),
        }
    }
}

pub fn transcribe(aug: crate::augment::AugmentedProblem, opts: &SolverOptions) -> Result<Transcription> {
    opts.validate()?;
    let grid = TimeGrid::uniform(aug.base().t0(), aug.base().tf(), opts.nodes)?;
    Transcription::new(aug, grid, opts.quadrature, opts.derivatives)
}

fn cold_start(trans: &Transcription) -> Result<Vec<f64>> {
    let m = trans.size().control_dim;
    trans.pack(&straight_line(trans), &vec![V::zeros(m); trans.grid().len()])
}

/// `x = x0`, `p = p0`, `lambda` linear from zero to `phi_x(x0)`, `mu = 0`.
fn straight_line(trans: &Transcription) -> Vec<V> {
    let aug = trans.augmented();
    let base = aug.base();
    let lay = aug.layout();
    let lam_f = aug.lambda_tf(base.x0());
    let (t0, tf) = (base.t0(), base.tf());
    trans
        .grid()
        .nodes()
        .iter()
        .map(|&t| {
            let s = (t - t0) / (tf - t0);
            lay.join(base.x0(), base.p0(), &(&lam_f * s), &V::zeros(base.dims().l))
        })
        .collect()
}

fn interpolate(traj: &Trajectory, t: f64) -> V {
    let g = traj.grid();
    let i = g.interval_containing(t);
    let (a, b) = (g.nodes()[i], g.nodes()[i + 1]);
    let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
    &traj.states()[i] * (1.0 - s) + &traj.states()[i + 1] * s
}

fn warm_start(trans: &Transcription, augmented: &Trajectory, control: &ControlSignal) -> Result<Vec<f64>> {
    if augmented.state_dim() != trans.augmented().dim() {
        return Err(Error::LayoutMismatch {
            expected: trans.augmented().dim(),
            got: augmented.state_dim(),
        });
    }
    let nodes = trans.grid().nodes();
    let zs: Vec<V> = nodes.iter().map(|&t| interpolate(augmented, t)).collect();
    let us: Vec<V> = nodes.iter().map(|&t| control.eval(t)).collect();
    trans.pack(&zs, &us)
}

fn perturbed(w: &[f64], trans: &Transcription, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = trans.size();
    let stride = size.state_dim + size.control_dim;
    let mut out = w.to_vec();
    for i in 0..size.nodes {
        for j in 0..size.control_dim {
            out[i * stride + size.state_dim + j] += rng.random_range(-1.0..1.0);
        }
    }
    out
}

fn package(trans: &Transcription, r: &AugLagResult, start: usize, tol: f64) -> Result<DesensitizedSolution> {
    let aug = trans.augmented();
    let base = aug.base();
    let (zs, us) = trans.unpack(&r.w);
    let grid = trans.grid().clone();
    let augmented = Trajectory::new(grid.clone(), zs, base.p0().clone())?;
    let control = ControlSignal::new(grid, us, Interpolation::PiecewiseLinear)?;
    let e = trans.evaluate_split(&r.w)?;
    let size = trans.size();
    let amax = |s: &[f64]| s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c = &e.constraints;
    let bnd = size.defects..size.defects + size.initial + size.transversality;
    let t = trans.grid().nodes();
    let raw_defect = c[..size.defects]
        .chunks(size.state_dim)
        .enumerate()
        .fold(0.0f64, |m, (i, blk)| m.max((t[i + 1] - t[i]) * amax(blk)));
    let cost = e.terminal + e.running;
    let costs = CostBreakdown {
        cost,
        weighted_sensitivity: e.sensitivity,
        desensitized: cost + e.sensitivity,
        sensitivity: sensitivity_norm(aug, &augmented, &control, trans.rule())?,
    };
    let mut converged = r.converged;
    let mut message = r.message.clone();
    if converged && raw_defect > tol {
        converged = false;
        message = format!("unscaled defect {raw_defect:.3e} above tolerance");
    }
    Ok(DesensitizedSolution {
        problem: base.name().to_string(),
        control,
        augmented,
        costs,
        diagnostics: SolverDiagnostics {
            converged,
            message,
            outer_iterations: r.outer_iterations,
            inner_iterations: r.inner_iterations,
            max_violation: r.max_violation,
            defect_violation: raw_defect,
            boundary_violation: amax(&c[bnd.clone()]),
            terminal_violation: amax(&c[bnd.end..]),
            stationarity: r.stationarity,
            penalty: r.penalty,
            costate_mismatch: None,
            start,
            size,
            warnings: trans.warnings().to_vec(),
        },
    })
}

/// Solves a transcribed program. Deterministic for fixed inputs, options and seed.
pub fn solve(
    trans: &Transcription,
    init: &InitialGuess,
    opts: &SolverOptions,
) -> Result<DesensitizedSolution> {
    opts.validate()?;
    let mut w0 = match init {
        InitialGuess::Cold => cold_start(trans)?,
        InitialGuess::Warm { augmented, control } => warm_start(trans, augmented, control)?,
    };
    trans.pin(&mut w0);
    let al = opts.auglag();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<DesensitizedSolution> = None;
    for start in 0..opts.starts {
        let w = if start == 0 {
            w0.clone()
        } else {
            perturbed(&w0, trans, &mut rng)
        };
        let r = auglag::solve(trans, w, &al)?;
        let sol = package(trans, &r, start, opts.constraint_tol)?;
        let better = match &best {
            None => true,
            Some(b) => match (sol.converged(), b.converged()) {
                (true, false) => true,
                (false, true) => false,
                _ => sol.costs.desensitized < b.costs.desensitized,
            },
        };
        if better {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Relative mismatch between the solved co-states and backward propagation along `(x*, u*)`.
pub fn costate_mismatch(prob: &ProblemDef, sol: &DesensitizedSolution) -> Result<f64> {
    let traj = sol.state_trajectory();
    let prop = propagate_costates(prob, &traj, &sol.control)?;
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for (a, b) in sol.lambdas().iter().zip(prop.lambdas()) {
        err = err.max((a - b).amax());
        scale = scale.max(b.amax());
    }
    for (a, b) in sol.mus().iter().zip(prop.mus()) {
        err = err.max((a - b).amax());
        scale = scale.max(b.amax());
    }
    Ok(err / (1.0 + scale))
}

/// Augments, transcribes and solves, then checks the co-states against backward propagation.
pub fn solve_cdoc(
    prob: &ProblemDef,
    weights: WeightSchedule,
    opts: &SolverOptions,
) -> Result<DesensitizedSolution> {
    let aug = build_augmented(prob, weights)?;
    let trans = transcribe(aug, opts)?;
    let mut sol = solve(&trans, &InitialGuess::Cold, opts)?;
    let mismatch = costate_mismatch(prob, &sol)?;
    sol.diagnostics.costate_mismatch = Some(mismatch);
    if mismatch > COSTATE_CHECK_TOL {
        sol.diagnostics.converged = false;
        sol.diagnostics.message = format!("co-state back-check failed: relative mismatch {mismatch:.3e}");
    }
    Ok(sol)
}
