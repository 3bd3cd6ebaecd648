//! Built-in problems: Zermelo navigation with a linear shear current and the scalar
//! linear-quadratic regulator in its four uncertainty regimes.

use nalgebra::{DMatrix, DVector};

use crate::problem::ProblemDef;

/// Nominal current gradient of the Zermelo problem.
pub const ZERMELO_P0: f64 = 10.0;

/// Zermelo navigation: `x1' = cos u + p x2`, `x2' = sin u`, maximize `x1(1)` with
/// `x(0) = 0` and `x2(1) = 0`.
///
/// The heading is left unbounded; `cos` and `sin` are periodic.
pub fn zermelo() -> ProblemDef {
    zermelo_with(ZERMELO_P0)
}

pub fn zermelo_with(p0: f64) -> ProblemDef {
    ProblemDef::builder("zermelo")
        .horizon(0.0, 1.0)
        .initial_state(DVector::zeros(2))
        .nominal_params(DVector::from_element(1, p0))
        .controls(1)
        .dynamics(|x, p, u, _| DVector::from_vec(vec![u[0].cos() + p[0] * x[1], u[0].sin()]))
        .dynamics_x(|_, p, _, _| DMatrix::from_row_slice(2, 2, &[0.0, p[0], 0.0, 0.0]))
        .dynamics_p(|x, _, _, _| DMatrix::from_column_slice(2, 1, &[x[1], 0.0]))
        .dynamics_u(|_, _, u, _| DMatrix::from_column_slice(2, 1, &[-u[0].sin(), u[0].cos()]))
        .running_cost(|_, _, _| 0.0)
        .running_cost_x(|_, _, _| DVector::zeros(2))
        .running_cost_u(|_, _, _| DVector::zeros(1))
        .terminal_cost(|x, _| -x[0])
        .terminal_cost_x(|_, _| DVector::from_vec(vec![-1.0, 0.0]))
        .terminal_constraint(1, |x, _| DVector::from_element(1, x[1]))
        .terminal_constraint_x(|_, _| DMatrix::from_row_slice(1, 2, &[0.0, 1.0]))
        .build()
        .expect("zermelo definition is consistent")
}

/// Which coefficient of `x' = a x + b u` is the uncertain parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Uncertain {
    A,
    B,
}

/// Scalar LQR data: `x' = a x + b u`, `L = (R1 x^2 + R2 u^2) / 2`, `x(0) = 1`, `tf = 20`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLqrSpec {
    pub a: f64,
    pub b: f64,
    pub uncertain: Uncertain,
    pub r1: f64,
    pub r2: f64,
    pub x0: f64,
    pub tf: f64,
}

impl ScalarLqrSpec {
    pub fn new(a: f64, b: f64, uncertain: Uncertain) -> Self {
        Self {
            a,
            b,
            uncertain,
            r1: 2.0,
            r2: 2.0,
            x0: 1.0,
            tf: 20.0,
        }
    }

    pub fn build(&self) -> ProblemDef {
        let Self {
            a,
            b,
            uncertain,
            r1,
            r2,
            x0,
            tf,
        } = *self;
        // coefficients (a, b) given the parameter vector
        let coeffs = move |p: &DVector<f64>| match uncertain {
            Uncertain::A => (p[0], b),
            Uncertain::B => (a, p[0]),
        };
        let p0 = match uncertain {
            Uncertain::A => a,
            Uncertain::B => b,
        };
        let name = match uncertain {
            Uncertain::A => "lqr-a",
            Uncertain::B => "lqr-b",
        };
        ProblemDef::builder(name)
            .horizon(0.0, tf)
            .initial_state(DVector::from_element(1, x0))
            .nominal_params(DVector::from_element(1, p0))
            .controls(1)
            .dynamics(move |x, p, u, _| {
                let (a, b) = coeffs(p);
                DVector::from_element(1, a * x[0] + b * u[0])
            })
            .dynamics_x(move |_, p, _, _| DMatrix::from_element(1, 1, coeffs(p).0))
            .dynamics_p(move |x, _, u, _| {
                let d = match uncertain {
                    Uncertain::A => x[0],
                    Uncertain::B => u[0],
                };
                DMatrix::from_element(1, 1, d)
            })
            .dynamics_u(move |_, p, _, _| DMatrix::from_element(1, 1, coeffs(p).1))
            .running_cost(move |x, u, _| 0.5 * (r1 * x[0] * x[0] + r2 * u[0] * u[0]))
            .running_cost_x(move |x, _, _| DVector::from_element(1, r1 * x[0]))
            .running_cost_u(move |_, u, _| DVector::from_element(1, r2 * u[0]))
            .build()
            .expect("scalar LQR definition is consistent")
    }
}

pub fn scalar_lqr(a0: f64, b0: f64, uncertain: Uncertain) -> ProblemDef {
    ScalarLqrSpec::new(a0, b0, uncertain).build()
}

/// A registered problem with its Monte-Carlo perturbation fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub name: &'static str,
    pub description: &'static str,
    /// Relative half-width of the parameter draws (absolute when the nominal value is 0).
    pub fraction: f64,
}

pub const REGIMES: [Regime; 5] = [
    Regime {
        name: "zermelo",
        description: "Zermelo navigation, current gradient p0 = 10 uncertain",
        fraction: 0.1,
    },
    Regime {
        name: "lqr-b",
        description: "scalar LQR, a = -1, input gain b0 = 1 uncertain",
        fraction: 0.2,
    },
    Regime {
        name: "lqr-a-stable",
        description: "scalar LQR, b = 1, a0 = -1 uncertain",
        fraction: 0.2,
    },
    Regime {
        name: "lqr-a-unstable",
        description: "scalar LQR, b = 1, a0 = 0.1 uncertain",
        fraction: 0.2,
    },
    Regime {
        name: "lqr-a-marginal",
        description: "scalar LQR, b = 1, a0 = 0 uncertain, draws in [-0.2, 0.2]",
        fraction: 0.2,
    },
];

pub fn regime(name: &str) -> Option<Regime> {
    REGIMES.iter().copied().find(|r| r.name == name)
}

/// Spec of a registered LQR regime.
pub fn lqr_regime(name: &str) -> Option<ScalarLqrSpec> {
    match name {
        "lqr-b" => Some(ScalarLqrSpec::new(-1.0, 1.0, Uncertain::B)),
        "lqr-a-stable" => Some(ScalarLqrSpec::new(-1.0, 1.0, Uncertain::A)),
        "lqr-a-unstable" => Some(ScalarLqrSpec::new(0.1, 1.0, Uncertain::A)),
        "lqr-a-marginal" => Some(ScalarLqrSpec::new(0.0, 1.0, Uncertain::A)),
        _ => None,
    }
}

/// Looks up a registered problem by name.
pub fn by_name(name: &str) -> Option<ProblemDef> {
    match name {
        "zermelo" => Some(zermelo()),
        other => lqr_regime(other).map(|s| {
            let mut prob = s.build();
            prob.set_name(other);
            prob
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::adjoint_rhs;
    use crate::problem::validate_jacobians;

    #[test]
    fn zermelo_dimensions() {
        let d = zermelo().dims();
        assert_eq!((d.n, d.m, d.l, d.k), (2, 1, 1, 1));
    }

    #[test]
    fn builtins_pass_jacobian_validation() {
        for r in REGIMES {
            let prob = by_name(r.name).unwrap();
            let report = validate_jacobians(&prob, 20, 7).unwrap();
            assert!(report.passed(), "{}: {:?}", r.name, report);
            for c in &report.checks {
                assert!(
                    c.max_rel_error < 1e-6,
                    "{} {}: {}",
                    r.name,
                    c.name,
                    c.max_rel_error
                );
            }
        }
    }

    #[test]
    fn zermelo_with_broken_parameter_jacobian_fails() {
        let good = zermelo();
        let broken = ProblemDef::builder("zermelo-broken")
            .horizon(0.0, 1.0)
            .initial_state(DVector::zeros(2))
            .nominal_params(DVector::from_element(1, 10.0))
            .controls(1)
            .dynamics(move |x, p, u, t| good.f(x, p, u, t))
            .dynamics_x(|_, p, _, _| DMatrix::from_row_slice(2, 2, &[0.0, p[0], 0.0, 0.0]))
            .dynamics_p(|_, _, _, _| DMatrix::zeros(2, 1))
            .build()
            .unwrap();
        let report = validate_jacobians(&broken, 5, 3).unwrap();
        assert_eq!(report.failures(), vec!["f_p"]);
    }

    #[test]
    fn zermelo_adjoint_equations_symbolically() {
        let prob = zermelo();
        for &(x1, x2, p, u, l1, l2) in &[
            (0.1, 0.3, 10.0, 0.2, -1.0, 0.5),
            (2.0, -1.2, 9.3, -2.0, 0.7, -3.0),
        ] {
            let x = DVector::from_vec(vec![x1, x2]);
            let lam = DVector::from_vec(vec![l1, l2]);
            let (dl, dm) = adjoint_rhs(
                &prob,
                &x,
                &DVector::from_element(1, p),
                &DVector::from_element(1, u),
                &lam,
                0.0,
            );
            assert_eq!(dl[0], 0.0);
            assert_eq!(dl[1], -l1 * p);
            assert_eq!(dm[0], -l1 * x2);
        }
    }

    #[test]
    fn lqr_parameter_costate_rates() {
        let x = DVector::from_element(1, 0.8);
        let u = DVector::from_element(1, -0.3);
        let lam = DVector::from_element(1, 1.7);
        let b = scalar_lqr(-1.0, 1.0, Uncertain::B);
        let (_, dm) = adjoint_rhs(&b, &x, b.p0(), &u, &lam, 0.0);
        assert!((dm[0] - (-1.7 * -0.3)).abs() < 1e-15);
        let a = scalar_lqr(-1.0, 1.0, Uncertain::A);
        let (_, dm) = adjoint_rhs(&a, &x, a.p0(), &u, &lam, 0.0);
        assert!((dm[0] - (-1.7 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn registry_nominal_values() {
        let p0 = |n: &str| by_name(n).unwrap().p0()[0];
        assert_eq!(p0("zermelo"), 10.0);
        assert_eq!(p0("lqr-b"), 1.0);
        assert_eq!(p0("lqr-a-stable"), -1.0);
        assert_eq!(p0("lqr-a-unstable"), 0.1);
        assert_eq!(p0("lqr-a-marginal"), 0.0);
        assert!(by_name("mars-landing").is_none());
        assert_eq!(by_name("lqr-a-unstable").unwrap().name(), "lqr-a-unstable");
    }

    #[test]
    fn zermelo_unforced_is_feasible() {
        use crate::control::ControlSignal;
        use crate::grid::TimeGrid;
        use crate::integrate::integrate;
        let prob = zermelo();
        let g = TimeGrid::uniform(0.0, 1.0, 101).unwrap();
        let u = ControlSignal::constant(g.clone(), DVector::zeros(1));
        let tr = integrate(&prob, prob.x0(), &u, &g, prob.p0()).unwrap();
        assert_eq!(prob.terminal_constraint(tr.final_state(), 1.0)[0], 0.0);
        for (s, &t) in tr.states().iter().zip(g.nodes()) {
            assert_eq!(s[1], 0.0);
            assert!((s[0] - t).abs() < 1e-12);
        }
    }
}
