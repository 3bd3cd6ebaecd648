//! Executable checks of the co-state results on a fixed family of admissible, non-optimal
//! probe controls: co-states against differenced cost-to-go gradients, the transition-matrix
//! integral form, and the `S(t|t')^T lambda(t)` relation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{
    admissible_trajectory, cx_integral_form, propagate_costates, sample_nodes, verify_theorem1,
    Theorem1Report, FD_STEP,
};
use crate::control::{ControlSignal, Interpolation};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::ProblemDef;
use crate::stm::{
    default_node_pairs, propagate_stm, verify_costate_stm_relation, StmLayout, StmRelationReport,
};

type V = DVector<f64>;

/// Fewest admissible probe controls a suite accepts.
pub const MIN_PROBES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Theorem1,
    Stm,
    All,
}

impl Suite {
    fn runs_costates(self) -> bool {
        matches!(self, Suite::Theorem1 | Suite::All)
    }

    fn runs_stm(self) -> bool {
        matches!(self, Suite::Stm | Suite::All)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1" => Ok(Suite::Theorem1),
            "stm" => Ok(Suite::Stm),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite `{other}` (expected theorem1, stm or all)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Theorem1 => "theorem1",
            Suite::Stm => "stm",
            Suite::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub nodes: usize,
    pub fd_step: f64,
    /// Relative tolerance of the finite-difference comparisons.
    pub tolerance: f64,
    /// Relative tolerance between the integral form and the propagated co-states.
    pub integral_tolerance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            nodes: 1001,
            fd_step: FD_STEP,
            tolerance: 1e-3,
            integral_tolerance: 1e-6,
        }
    }
}

/// A labelled probe control.
#[derive(Debug, Clone)]
pub struct Probe {
    pub label: String,
    pub control: ControlSignal,
}

/// Candidate probes on `grid`: `c + a sin(2 pi k s)` in normalized time `s`, applied to every
/// control channel. Each is odd about the midpoint (up to the offset), so headings of the
/// form `sin(u)` integrate to zero, which keeps shore-return constraints satisfied.
/// Inadmissible candidates are dropped.
pub fn probe_controls(prob: &ProblemDef, grid: &TimeGrid) -> Result<Vec<Probe>> {
    const CANDIDATES: [(f64, f64, f64); 6] = [
        (0.0, 0.0, 1.0),
        (0.0, 0.5, 1.0),
        (0.0, 1.0, 1.0),
        (0.0, 0.3, 2.0),
        (0.0, 0.8, 3.0),
        (std::f64::consts::PI, 0.6, 1.0),
    ];
    let (t0, tf) = (prob.t0(), prob.tf());
    let m = prob.dims().m;
    let mut out = Vec::new();
    for (c, a, k) in CANDIDATES {
        let u = ControlSignal::from_fn(grid.clone(), Interpolation::PiecewiseLinear, |t| {
            let s = (t - t0) / (tf - t0);
            V::from_element(m, c + a * (2.0 * std::f64::consts::PI * k * s).sin())
        })?;
        match admissible_trajectory(prob, &u) {
            Ok(_) => out.push(Probe {
                label: format!("{c:.4} + {a} sin(2 pi {k} s)"),
                control: u,
            }),
            Err(Error::Inadmissible { .. }) | Err(Error::Diverged { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if out.len() < MIN_PROBES {
        return Err(Error::InvalidArgument(format!(
            "only {} admissible probe controls for `{}`, need {MIN_PROBES}",
            out.len(),
            prob.name()
        )));
    }
    Ok(out)
}

/// Worst relative gap between the integral form of `C_x` and the propagated `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralFormReport {
    pub tolerance: f64,
    pub nodes: Vec<usize>,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StmSuiteReport {
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub per_probe: Vec<StmRelationReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub problem: String,
    pub suite: Suite,
    pub options: VerifyOptions,
    pub probes: Vec<String>,
    pub theorem1: Option<Theorem1Report>,
    pub integral_form: Option<IntegralFormReport>,
    pub stm: Option<StmSuiteReport>,
    pub passed: bool,
}

pub fn integral_form_check(prob: &ProblemDef, probes: &[Probe], tol: f64) -> Result<IntegralFormReport> {
    let worst = probes
        .par_iter()
        .map(|probe| {
            let u = &probe.control;
            let tr = admissible_trajectory(prob, u)?;
            let cs = propagate_costates(prob, &tr, u)?;
            let mut worst = 0.0f64;
            for k in sample_nodes(tr.grid().len()) {
                let t = tr.grid().nodes()[k];
                let lam = &cs.lambdas()[k];
                let gamma = cx_integral_form(prob, &tr, u, t)?;
                worst = worst.max((lam - gamma).amax() / (1.0 + lam.amax()));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(IntegralFormReport {
        tolerance: tol,
        nodes: sample_nodes(probes[0].control.grid().len()),
        max_rel_error: worst,
        passed: worst <= tol,
    })
}

pub fn stm_check(prob: &ProblemDef, probes: &[Probe], tol: f64, h: f64) -> Result<StmSuiteReport> {
    let per_probe = probes
        .par_iter()
        .map(|probe| {
            let u = &probe.control;
            let tr = admissible_trajectory(prob, u)?;
            let cs = propagate_costates(prob, &tr, u)?;
            let stms = propagate_stm(prob, &tr, u, StmLayout::Plain)?;
            let pairs = default_node_pairs(tr.grid().len());
            verify_costate_stm_relation(prob, &tr, u, &cs, &stms, &pairs, tol, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = per_probe.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(StmSuiteReport {
        tolerance: tol,
        max_rel_error,
        passed: per_probe.iter().all(|r| r.passed),
        per_probe,
    })
}

/// Runs `suite` on the probe family over a uniform grid of `opts.nodes` nodes.
pub fn run_suite(prob: &ProblemDef, suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let grid = TimeGrid::uniform(prob.t0(), prob.tf(), opts.nodes)?;
    let probes = probe_controls(prob, &grid)?;
    let controls: Vec<ControlSignal> = probes.iter().map(|p| p.control.clone()).collect();
    let (theorem1, integral_form) = if suite.runs_costates() {
        (
            Some(verify_theorem1(prob, &controls, opts.tolerance)?),
            Some(integral_form_check(prob, &probes, opts.integral_tolerance)?),
        )
    } else {
        (None, None)
    };
    let stm = if suite.runs_stm() {
        Some(stm_check(prob, &probes, opts.tolerance, opts.fd_step)?)
    } else {
        None
    };
    let passed = theorem1.as_ref().is_none_or(|r| r.passed())
        && integral_form.as_ref().is_none_or(|r| r.passed)
        && stm.as_ref().is_none_or(|r| r.passed);
    Ok(VerifyReport {
        problem: prob.name().to_string(),
        suite,
        options: *opts,
        probes: probes.into_iter().map(|p| p.label).collect(),
        theorem1,
        integral_form,
        stm,
        passed,
    })
}
