use std::fs;
use std::path::PathBuf;

use cdoc_core::mc::{evaluate_dispersion, sample_parameters, sweep_weights, Summary};
use cdoc_core::problem::ProblemDef;
use cdoc_core::solver::{solve_cdoc, CostBreakdown, DesensitizedSolution, SolverDiagnostics};
use cdoc_core::verify::{run_suite, VerifyReport};
use serde::Serialize;

use crate::config::{params_of, RunConfig};
use crate::exit::Failure;
use crate::output::{indexed, num, wraps_controls, write_json, write_trajectory, GridInfo, Provenance};

pub const DEFAULT_SWEEP: [f64; 5] = [0.0, 1.0, 100.0, 1000.0, 10_000.0];

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Costs {
    #[serde(rename = "J")]
    pub cost: f64,
    #[serde(rename = "Jc")]
    pub weighted_sensitivity: f64,
    #[serde(rename = "Js")]
    pub desensitized: f64,
    /// `int mu^T mu`, independent of the weight.
    pub sensitivity: f64,
}

impl From<CostBreakdown> for Costs {
    fn from(c: CostBreakdown) -> Self {
        Self {
            cost: c.cost,
            weighted_sensitivity: c.weighted_sensitivity,
            desensitized: c.desensitized,
            sensitivity: c.sensitivity,
        }
    }
}

#[derive(Serialize)]
struct SolutionReport<'a> {
    problem: &'a str,
    nominal_params: Vec<f64>,
    weight: Vec<f64>,
    converged: bool,
    costs: Costs,
    controls_wrapped: bool,
    diagnostics: &'a SolverDiagnostics,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn solver_grid(prob: &ProblemDef, cfg: &RunConfig) -> GridInfo {
    GridInfo {
        t0: prob.t0(),
        tf: prob.tf(),
        nodes: cfg.solver.nodes,
    }
}

fn solve_at_weight(prob: &ProblemDef, cfg: &RunConfig) -> Result<(DesensitizedSolution, Vec<f64>), Failure> {
    cfg.solver.validate()?;
    let l = prob.dims().l;
    let diag = cfg.weight_diagonal(l)?;
    if diag.len() != l {
        return Err(Failure::usage(format!(
            "weight has {} diagonal entries, problem has {l} parameters",
            diag.len()
        )));
    }
    let sol = solve_cdoc(prob, cfg.weight_schedule(l)?, &cfg.solver)?;
    Ok((sol, diag))
}

fn non_convergence(sol: &DesensitizedSolution) -> Failure {
    Failure::not_met(format!("solve did not converge: {}", sol.diagnostics.message))
}

pub fn solve(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let prob = cfg.problem()?;
    let (sol, weight) = solve_at_weight(&prob, cfg)?;
    let dir = out_dir(cfg)?;
    let prov = Provenance::new("solve", cfg, solver_grid(&prob, cfg));
    let report = SolutionReport {
        problem: prob.name(),
        nominal_params: params_of(prob.p0()),
        weight,
        converged: sol.converged(),
        costs: sol.costs.into(),
        controls_wrapped: wraps_controls(prob.name()),
        diagnostics: &sol.diagnostics,
    };
    write_json(&dir.join("solution.json"), &prov, &report)?;
    write_trajectory(&dir.join("trajectory.csv"), &sol)?;
    println!(
        "{}: J = {} Jc = {} Js = {} ({})",
        prob.name(),
        num(sol.costs.cost),
        num(sol.costs.weighted_sensitivity),
        num(sol.costs.desensitized),
        sol.diagnostics.message
    );
    if !sol.converged() {
        return Err(non_convergence(&sol));
    }
    Ok(dir)
}

#[derive(Serialize)]
struct SweepRow {
    weight: f64,
    converged: bool,
    message: String,
    costs: Costs,
    trajectory: String,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    problem: &'a str,
    weights: &'a [f64],
    rows: Vec<SweepRow>,
    ordered: bool,
    ordering_violations: Vec<String>,
}

pub fn trajectory_file(weight: f64) -> String {
    format!("trajectory_w{}.csv", num(weight))
}

pub fn sweep(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let prob = cfg.problem()?;
    cfg.solver.validate()?;
    let weights = cfg.weights.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    if weights.is_empty() {
        return Err(Failure::usage("empty weight list"));
    }
    if weights.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::usage("weights must be distinct"));
    }
    let curve = sweep_weights(&prob, &weights, &cfg.solver)?;
    let dir = out_dir(cfg)?;
    let mut rows: Vec<(f64, &DesensitizedSolution)> = curve
        .points
        .iter()
        .zip(&curve.solutions)
        .map(|(p, s)| (p.weight, s))
        .chain(curve.excluded.iter().map(|e| (e.weight, &e.solution)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut w = csv::Writer::from_path(dir.join("tradeoff.csv"))?;
    w.write_record(["weight", "J", "Jc", "converged", "sensitivity"])?;
    let mut report_rows = Vec::with_capacity(rows.len());
    for &(weight, sol) in &rows {
        let file = trajectory_file(weight);
        write_trajectory(&dir.join(&file), sol)?;
        w.write_record([
            num(weight),
            num(sol.costs.cost),
            num(sol.costs.weighted_sensitivity),
            sol.converged().to_string(),
            num(sol.costs.sensitivity),
        ])?;
        report_rows.push(SweepRow {
            weight,
            converged: sol.converged(),
            message: sol.diagnostics.message.clone(),
            costs: sol.costs.into(),
            trajectory: file,
        });
    }
    w.flush()?;
    let violations = curve.ordering_violations();
    let prov = Provenance::new("sweep", cfg, solver_grid(&prob, cfg));
    let report = SweepReport {
        problem: prob.name(),
        weights: &weights,
        rows: report_rows,
        ordered: violations.is_empty(),
        ordering_violations: violations.clone(),
    };
    write_json(&dir.join("sweep.json"), &prov, &report)?;
    for (weight, sol) in &rows {
        println!(
            "{}: weight {} J = {} Jc = {} ({})",
            prob.name(),
            num(*weight),
            num(sol.costs.cost),
            num(sol.costs.weighted_sensitivity),
            sol.diagnostics.message
        );
    }
    if !curve.excluded.is_empty() {
        let ws: Vec<String> = curve.excluded.iter().map(|e| num(e.weight)).collect();
        return Err(Failure::not_met(format!(
            "solves did not converge at weights {}",
            ws.join(", ")
        )));
    }
    if !violations.is_empty() {
        return Err(Failure::not_met(format!(
            "trade-off curve is not ordered: {}",
            violations.join("; ")
        )));
    }
    Ok(dir)
}

#[derive(Serialize)]
struct SampleFailure {
    draw: usize,
    message: String,
}

#[derive(Serialize)]
struct McReport<'a> {
    problem: &'a str,
    nominal_params: Vec<f64>,
    weight: Vec<f64>,
    samples: usize,
    fraction: f64,
    seed: u64,
    solve_converged: bool,
    solve_message: &'a str,
    solve_costs: Costs,
    nominal_cost: f64,
    cost: Option<Summary>,
    final_state: Vec<Summary>,
    excluded: usize,
    failures: Vec<SampleFailure>,
}

pub fn montecarlo(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let prob = cfg.problem()?;
    let n = cfg.montecarlo.samples;
    if n == 0 {
        return Err(Failure::usage("need at least one sample"));
    }
    let fraction = cfg.fraction()?;
    let draws = sample_parameters(prob.p0(), fraction, n, cfg.seed)?;
    let (sol, weight) = solve_at_weight(&prob, cfg)?;
    let stats = evaluate_dispersion(&prob, &sol.control, &draws)?;
    let dir = out_dir(cfg)?;
    let (nx, l) = (prob.dims().n, prob.dims().l);

    let mut w = csv::Writer::from_path(dir.join("mc_samples.csv"))?;
    let header: Vec<String> = std::iter::once("draw".to_string())
        .chain(indexed("p", l))
        .chain(std::iter::once("cost".to_string()))
        .chain(indexed("xf", nx))
        .chain(std::iter::once("diverged".to_string()))
        .collect();
    w.write_record(&header)?;
    for (i, s) in stats.samples.iter().enumerate() {
        let finals: Vec<String> = match s.final_state() {
            Some(x) => x.iter().map(|v| num(*v)).collect(),
            None => vec![String::new(); nx],
        };
        let row: Vec<String> = std::iter::once(i.to_string())
            .chain(s.params.iter().map(|v| num(*v)))
            .chain(std::iter::once(s.cost.map(num).unwrap_or_default()))
            .chain(finals)
            .chain(std::iter::once(s.cost.is_none().to_string()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("mc_trajectories.csv"))?;
    let header: Vec<String> = ["draw".to_string(), "t".to_string()]
        .into_iter()
        .chain(indexed("x", nx))
        .collect();
    w.write_record(&header)?;
    for (i, s) in stats.samples.iter().enumerate() {
        let (Some(tr), Some(_)) = (&s.trajectory, s.cost) else {
            continue;
        };
        for (t, x) in tr.grid().nodes().iter().zip(tr.states()) {
            let row: Vec<String> = [i.to_string(), num(*t)]
                .into_iter()
                .chain(x.iter().map(|v| num(*v)))
                .collect();
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let failures = stats
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.failure.as_ref().map(|m| SampleFailure {
                draw: i,
                message: m.clone(),
            })
        })
        .collect();
    let report = McReport {
        problem: prob.name(),
        nominal_params: params_of(prob.p0()),
        weight,
        samples: n,
        fraction,
        seed: cfg.seed,
        solve_converged: sol.converged(),
        solve_message: &sol.diagnostics.message,
        solve_costs: sol.costs.into(),
        nominal_cost: stats.nominal_cost,
        cost: stats.cost,
        final_state: stats.final_state.clone(),
        excluded: stats.excluded,
        failures,
    };
    let prov = Provenance::new("montecarlo", cfg, solver_grid(&prob, cfg));
    write_json(&dir.join("mc_summary.json"), &prov, &report)?;
    match stats.cost {
        Some(c) => println!(
            "{}: {} draws, cost mean {} std {} range [{}, {}], {} excluded",
            prob.name(),
            n,
            num(c.mean),
            num(c.std),
            num(c.min),
            num(c.max),
            stats.excluded
        ),
        None => println!("{}: all {} draws diverged", prob.name(), n),
    }
    if !sol.converged() {
        return Err(non_convergence(&sol));
    }
    Ok(dir)
}

pub fn verify(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let suite = cfg.verify.suite()?;
    let opts = cfg.verify.options()?;
    let prob = cfg.problem()?;
    let report: VerifyReport = run_suite(&prob, suite, &opts)?;
    let dir = out_dir(cfg)?;
    let grid = GridInfo {
        t0: prob.t0(),
        tf: prob.tf(),
        nodes: opts.nodes,
    };
    let prov = Provenance::new("verify", cfg, grid);
    write_json(&dir.join("verify.json"), &prov, &report)?;
    let mut worst = Vec::new();
    if let Some(r) = &report.theorem1 {
        worst.push(format!("lambda {}", num(r.max_lambda_error)));
        worst.push(format!("mu {}", num(r.max_mu_error)));
    }
    if let Some(r) = &report.integral_form {
        worst.push(format!("integral form {}", num(r.max_rel_error)));
    }
    if let Some(r) = &report.stm {
        worst.push(format!("transition {}", num(r.max_rel_error)));
    }
    println!(
        "{} [{}]: {} ({})",
        prob.name(),
        suite,
        if report.passed { "pass" } else { "FAIL" },
        worst.join(", ")
    );
    if !report.passed {
        return Err(Failure::not_met("verification tolerances not met"));
    }
    Ok(dir)
}
