use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Rule used to evaluate a control between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    PiecewiseLinear,
    ZeroOrderHold,
}

/// Control samples on a time grid.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
    interp: Interpolation,
}

impl ControlSignal {
    pub fn new(grid: TimeGrid, values: Vec<DVector<f64>>, interp: Interpolation) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "control has {} samples for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::InvalidArgument("ragged control samples".into()));
        }
        Ok(Self { grid, values, interp })
    }

    /// Samples `f(t)` at every node.
    pub fn from_fn(grid: TimeGrid, interp: Interpolation, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        Self::new(grid, values, interp)
    }

    pub fn constant(grid: TimeGrid, value: DVector<f64>) -> Self {
        let values = vec![value; grid.len()];
        Self {
            grid,
            values,
            interp: Interpolation::PiecewiseLinear,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interp
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Checks every node against per-channel `(lo, hi)` bounds.
    pub fn check_bounds(&self, bounds: &[(f64, f64)]) -> Result<()> {
        for (node, v) in self.values.iter().enumerate() {
            for (channel, (&x, &(lo, hi))) in v.iter().zip(bounds).enumerate() {
                if x < lo || x > hi {
                    return Err(Error::BoundViolation {
                        node,
                        channel,
                        value: x,
                    });
                }
            }
        }
        Ok(())
    }

    /// Value at `t`, right-continuous at nodes for zero-order hold.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let i = self.grid.interval_containing(t);
        self.eval_piece(i, t)
    }

    /// Value at `t` using the control piece active on the open interval `(a, b)`.
    ///
    /// Integrators call this with `[a, b]` one of their steps so that a zero-order-hold
    /// control contributes its left value at the step's right end.
    pub fn eval_within(&self, t: f64, a: f64, b: f64) -> DVector<f64> {
        let i = self.grid.interval_containing(0.5 * (a + b));
        self.eval_piece(i, t)
    }

    fn eval_piece(&self, i: usize, t: f64) -> DVector<f64> {
        match self.interp {
            Interpolation::ZeroOrderHold => self.values[i].clone(),
            Interpolation::PiecewiseLinear => {
                let (ta, tb) = (self.grid.nodes()[i], self.grid.nodes()[i + 1]);
                let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
                &self.values[i] * (1.0 - s) + &self.values[i + 1] * s
            }
        }
    }

    /// Copy with every channel wrapped to `(-pi, pi]`.
    pub fn wrapped_angles(&self) -> Self {
        let values = self.values.iter().map(|v| v.map(wrap_angle)).collect();
        Self {
            grid: self.grid.clone(),
            values,
            interp: self.interp,
        }
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
