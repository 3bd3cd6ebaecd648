use std::sync::OnceLock;

use cdoc_core::mc::{evaluate_dispersion, sample_parameters, sweep_weights, DispersionStats, TradeoffCurve};
use cdoc_core::problems::{by_name, regime};
use cdoc_core::solver::SolverOptions;

const SEED: u64 = 20_180_122;
const ZERMELO_WEIGHTS: [f64; 5] = [0.0, 1.0, 100.0, 1000.0, 10_000.0];

fn zermelo_curve() -> &'static TradeoffCurve {
    static C: OnceLock<TradeoffCurve> = OnceLock::new();
    C.get_or_init(|| {
        sweep_weights(
            &by_name("zermelo").unwrap(),
            &ZERMELO_WEIGHTS,
            &SolverOptions::default(),
        )
        .unwrap()
    })
}

fn dispersions(name: &str, curve: &TradeoffCurve) -> Vec<DispersionStats> {
    let prob = by_name(name).unwrap();
    let r = regime(name).unwrap();
    let draws = sample_parameters(prob.p0(), r.fraction, 100, SEED).unwrap();
    curve
        .solutions
        .iter()
        .map(|s| evaluate_dispersion(&prob, &s.control, &draws).unwrap())
        .collect()
}

fn lqr_pair(name: &str) -> (TradeoffCurve, Vec<DispersionStats>) {
    let curve = sweep_weights(&by_name(name).unwrap(), &[0.0, 1000.0], &SolverOptions::default()).unwrap();
    assert!(
        curve.excluded.is_empty(),
        "{name}: {:?}",
        curve.excluded_weights()
    );
    assert!(curve.is_ordered(), "{name}: {:?}", curve.ordering_violations());
    let d = dispersions(name, &curve);
    (curve, d)
}

fn max_shore_distance(curve: &TradeoffCurve, i: usize) -> f64 {
    curve.solutions[i]
        .states()
        .iter()
        .map(|x| x[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn zermelo_sweep_is_ordered_and_hugs_the_shore() {
    let c = zermelo_curve();
    assert!(c.excluded.is_empty(), "{:?}", c.excluded_weights());
    assert_eq!(c.points.len(), 5);
    assert!(c.is_ordered(), "{:?}", c.ordering_violations());
    for i in 1..5 {
        assert!(max_shore_distance(c, i) <= max_shore_distance(c, i - 1) + 1e-6);
        assert!(c.points[i].weighted_sensitivity.is_finite());
    }
    assert!(c.points[4].sensitivity <= 0.05 * c.points[0].sensitivity);
}

#[test]
fn zermelo_downstream_spread_shrinks_with_weight() {
    let d = dispersions("zermelo", zermelo_curve());
    let spread: Vec<f64> = d.iter().map(|s| s.final_state[0].std).collect();
    assert!(spread[4] < spread[0], "{spread:?}");
    assert!(spread.windows(2).all(|w| w[1] <= w[0]), "{spread:?}");
    assert!(d.iter().all(|s| s.excluded == 0 && s.len() == 100));
}

#[test]
fn input_gain_uncertainty() {
    let (curve, d) = lqr_pair("lqr-b");
    assert!(d[1].cost.unwrap().std < d[0].cost.unwrap().std);
    assert!(curve.points[1].cost > curve.points[0].cost);
}

#[test]
fn stable_drift_uncertainty_trades_nominal_cost_for_spread() {
    let (_, d) = lqr_pair("lqr-a-stable");
    let (lo, hi) = (d[0].cost.unwrap(), d[1].cost.unwrap());
    assert!(hi.spread() < lo.spread());
    assert!(d[1].nominal_cost > d[0].nominal_cost);
}

#[test]
fn unstable_and_marginal_drift() {
    for name in ["lqr-a-unstable", "lqr-a-marginal"] {
        let (_, d) = lqr_pair(name);
        for s in &d {
            assert_eq!(s.len(), 100);
            assert_eq!(
                s.excluded,
                s.samples.iter().filter(|x| x.failure.is_some()).count()
            );
        }
        assert!(d[1].cost.unwrap().std < d[0].cost.unwrap().std, "{name}");
    }
}

#[test]
fn dispersion_is_bitwise_repeatable() {
    let c = zermelo_curve();
    let prob = by_name("zermelo").unwrap();
    let a = sample_parameters(prob.p0(), 0.1, 100, SEED).unwrap();
    let b = sample_parameters(prob.p0(), 0.1, 100, SEED).unwrap();
    assert_eq!(a, b);
    let u = &c.solutions[2].control;
    let x = evaluate_dispersion(&prob, u, &a).unwrap();
    let y = evaluate_dispersion(&prob, u, &b).unwrap();
    let bits = |s: &DispersionStats| {
        s.samples
            .iter()
            .map(|v| v.cost.unwrap().to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&x), bits(&y));
    assert_eq!(x.cost, y.cost);
    assert_ne!(sample_parameters(prob.p0(), 0.1, 100, SEED + 1).unwrap(), a);
}

#[test]
fn blown_up_draws_are_excluded_and_counted() {
    use cdoc_core::control::ControlSignal;
    use cdoc_core::grid::TimeGrid;
    use cdoc_core::problem::ProblemDef;
    use nalgebra::{DMatrix, DVector};
    // x' = p x^2 from x(0) = 1 escapes to infinity at t = 1 / p
    let prob = ProblemDef::builder("escape")
        .horizon(0.0, 1.0)
        .initial_state(DVector::from_element(1, 1.0))
        .nominal_params(DVector::from_element(1, 0.5))
        .controls(1)
        .dynamics(|x, p, u, _| DVector::from_element(1, p[0] * x[0] * x[0] + u[0]))
        .dynamics_x(|x, p, _, _| DMatrix::from_element(1, 1, 2.0 * p[0] * x[0]))
        .dynamics_p(|x, _, _, _| DMatrix::from_element(1, 1, x[0] * x[0]))
        .dynamics_u(|_, _, _, _| DMatrix::from_element(1, 1, 1.0))
        .running_cost(|x, _, _| x[0] * x[0])
        .build()
        .unwrap();
    let u = ControlSignal::constant(TimeGrid::uniform(0.0, 1.0, 201).unwrap(), DVector::zeros(1));
    let draws: Vec<DVector<f64>> = [0.2, 0.6, 4.0, 0.4, 50.0]
        .iter()
        .map(|&p| DVector::from_element(1, p))
        .collect();
    let s = evaluate_dispersion(&prob, &u, &draws).unwrap();
    assert_eq!(s.len(), 5);
    let failed: Vec<usize> = (0..5).filter(|&i| s.samples[i].failure.is_some()).collect();
    assert_eq!(failed, vec![2, 4]);
    assert_eq!(s.excluded, 2);
    assert_eq!(s.cost.unwrap().count, 3);
}
