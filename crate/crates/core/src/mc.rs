//! Monte-Carlo dispersion under constant parameter perturbations, and weight sweeps.
//!
//! # Sampler
//!
//! Draw `j` of sample `s` (for `l` parameters) uses the counter `c = s * l + j` and
//!
//! ```text
//! x = seed + (c + 1) * 0x9E3779B97F4A7C15          (wrapping)
//! x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//! x = (x ^ (x >> 27)) * 0x94D049BB133111EB
//! x =  x ^ (x >> 31)
//! u = (x >> 11) * 2^-53                             in [0, 1)
//! ```
//!
//! which is the SplitMix64 output function evaluated at a counter, so any draw can be
//! reproduced independently of the others. The value is `p0 + |p0| f (2u - 1)`, or
//! `f (2u - 1)` when `p0 = 0`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::WeightSchedule;
use crate::control::ControlSignal;
use crate::cost::eval_cost;
use crate::error::{Error, Result};
use crate::integrate::{integrate, Trajectory};
use crate::problem::ProblemDef;
use crate::solver::{solve_cdoc, DesensitizedSolution, SolverOptions};

type V = DVector<f64>;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for counter `counter` under `seed`.
pub fn splitmix64(seed: u64, counter: u64) -> u64 {
    let mut x = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in `[0, 1)` from the top 53 bits.
pub fn unit_uniform(seed: u64, counter: u64) -> f64 {
    (splitmix64(seed, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` independent uniform draws per component over `p0 (1 +- fraction)`.
pub fn sample_parameters(p0: &V, fraction: f64, n: usize, seed: u64) -> Result<Vec<V>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let l = p0.len() as u64;
    Ok((0..n as u64)
        .map(|s| {
            V::from_iterator(
                p0.len(),
                p0.iter().enumerate().map(|(j, &c)| {
                    let u = unit_uniform(seed, s * l + j as u64);
                    let half_width = if c == 0.0 { fraction } else { c.abs() * fraction };
                    c + half_width * (2.0 * u - 1.0)
                }),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`); zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        let first = *values.first()?;
        let n = values.len() as f64;
        // shifted sums keep identical values exact
        let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Some(Self {
            count: values.len(),
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        })
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

/// Outcome of one open-loop re-simulation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub params: V,
    /// `None` when the simulation diverged or the cost is not finite.
    pub cost: Option<f64>,
    pub trajectory: Option<Trajectory>,
    pub failure: Option<String>,
}

impl Sample {
    pub fn final_state(&self) -> Option<&V> {
        self.trajectory.as_ref().map(|t| t.final_state())
    }
}

#[derive(Debug, Clone)]
pub struct DispersionStats {
    pub samples: Vec<Sample>,
    pub nominal_cost: f64,
    /// Over the samples that did not diverge; `None` if all did.
    pub cost: Option<Summary>,
    /// One summary per state component at `tf`.
    pub final_state: Vec<Summary>,
    pub excluded: usize,
}

impl DispersionStats {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn simulate(prob: &ProblemDef, u: &ControlSignal, p: &V) -> Result<(Trajectory, f64)> {
    let traj = integrate(prob, prob.x0(), u, u.grid(), p)?;
    let cost = eval_cost(prob, &traj, u)?;
    if !cost.is_finite() || traj.final_state().iter().any(|v| !v.is_finite()) {
        return Err(Error::PerturbationDiverged(format!(
            "non-finite outcome for p = {:?}",
            p.as_slice()
        )));
    }
    Ok((traj, cost))
}

/// Re-simulates the fixed control under every parameter draw.
///
/// Samples run concurrently and are returned in draw order; diverged samples are kept
/// with their failure and left out of the summaries.
pub fn evaluate_dispersion(prob: &ProblemDef, u: &ControlSignal, draws: &[V]) -> Result<DispersionStats> {
    let dims = prob.dims();
    if let Some(bad) = draws.iter().find(|p| p.len() != dims.l) {
        return Err(Error::DimensionMismatch {
            evaluator: "parameter draw",
            expected: dims.l.to_string(),
            got: bad.len().to_string(),
        });
    }
    let (_, nominal_cost) = simulate(prob, u, prob.p0())?;
    let samples: Vec<Sample> = draws
        .par_iter()
        .map(|p| match simulate(prob, u, p) {
            Ok((traj, cost)) => Sample {
                params: p.clone(),
                cost: Some(cost),
                trajectory: Some(traj),
                failure: None,
            },
            Err(e) => Sample {
                params: p.clone(),
                cost: None,
                trajectory: None,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let costs: Vec<f64> = samples.iter().filter_map(|s| s.cost).collect();
    let finals: Vec<&V> = samples.iter().filter_map(|s| s.final_state()).collect();
    let final_state = (0..dims.n)
        .filter_map(|j| Summary::of(&finals.iter().map(|x| x[j]).collect::<Vec<_>>()))
        .collect();
    Ok(DispersionStats {
        excluded: samples.len() - costs.len(),
        cost: Summary::of(&costs),
        final_state,
        nominal_cost,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub weight: f64,
    pub cost: f64,
    pub weighted_sensitivity: f64,
    pub sensitivity: f64,
    pub desensitized: f64,
}

/// A weight whose solve did not converge.
#[derive(Debug, Clone)]
pub struct ExcludedSolve {
    pub weight: f64,
    pub solution: DesensitizedSolution,
}

#[derive(Debug, Clone)]
pub struct TradeoffCurve {
    /// Converged solves in ascending weight order.
    pub points: Vec<TradeoffPoint>,
    pub solutions: Vec<DesensitizedSolution>,
    pub excluded: Vec<ExcludedSolve>,
}

impl TradeoffCurve {
    /// Pairs of weights violating the weighted-sum ordering: cost non-decreasing and
    /// `int mu^T mu` non-increasing in the weight, with slack `1e-4 (1 + |value|)`.
    pub fn ordering_violations(&self) -> Vec<String> {
        let slack = |v: f64| 1e-4 * (1.0 + v.abs());
        let mut out = Vec::new();
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                if b.cost < a.cost - slack(a.cost) {
                    out.push(format!(
                        "cost drops from {} at weight {} to {} at weight {}",
                        a.cost, a.weight, b.cost, b.weight
                    ));
                }
                if b.sensitivity > a.sensitivity + slack(a.sensitivity) {
                    out.push(format!(
                        "sensitivity rises from {} at weight {} to {} at weight {}",
                        a.sensitivity, a.weight, b.sensitivity, b.weight
                    ));
                }
            }
        }
        out
    }

    pub fn is_ordered(&self) -> bool {
        self.ordering_violations().is_empty()
    }

    /// `(weight, solver message)` of every excluded solve.
    pub fn excluded_weights(&self) -> Vec<(f64, &str)> {
        self.excluded
            .iter()
            .map(|e| (e.weight, e.solution.diagnostics.message.as_str()))
            .collect()
    }
}

/// Solves with `Q = alpha I` for every weight, concurrently.
pub fn sweep_weights(prob: &ProblemDef, weights: &[f64], opts: &SolverOptions) -> Result<TradeoffCurve> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("no weights given".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!(
            "weight {w} is negative or not finite"
        )));
    }
    if weights.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidWeights("weights must be ascending".into()));
    }
    let l = prob.dims().l;
    let solved: Vec<(f64, DesensitizedSolution)> = weights
        .par_iter()
        .map(|&w| Ok((w, solve_cdoc(prob, WeightSchedule::scalar(l, w)?, opts)?)))
        .collect::<Result<_>>()?;
    let mut curve = TradeoffCurve {
        points: Vec::new(),
        solutions: Vec::new(),
        excluded: Vec::new(),
    };
    for (w, sol) in solved {
        if sol.converged() {
            curve.points.push(TradeoffPoint {
                weight: w,
                cost: sol.costs.cost,
                weighted_sensitivity: sol.costs.weighted_sensitivity,
                sensitivity: sol.costs.sensitivity,
                desensitized: sol.costs.desensitized,
            });
            curve.solutions.push(sol);
        } else {
            curve.excluded.push(ExcludedSolve {
                weight: w,
                solution: sol,
            });
        }
    }
    Ok(curve)
}
