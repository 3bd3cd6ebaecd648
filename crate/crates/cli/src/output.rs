//! CSV and JSON writers. Every JSON file starts with a provenance block; CSV files sit next
//! to a JSON file of the same run that carries it.

use std::fs;
use std::path::Path;

use cdoc_core::control::wrap_angle;
use cdoc_core::solver::DesensitizedSolution;
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::Failure;

pub const TOOL: &str = "cdoc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub t0: f64,
    pub tf: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub grid: GridInfo,
}

impl<'a> Provenance<'a> {
    pub fn new(command: &'static str, config: &'a RunConfig, grid: GridInfo) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            config,
            seed: config.seed,
            grid,
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: &'a Provenance<'a>,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance<'_>, body: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(&Document { provenance, body })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
pub fn num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// Headings are periodic; report them in `(-pi, pi]`.
pub fn wraps_controls(problem: &str) -> bool {
    problem == "zermelo"
}

/// `t, x.., p.., lambda.., mu.., u..` at every grid node.
pub fn write_trajectory(path: &Path, sol: &DesensitizedSolution) -> Result<(), Failure> {
    let z = &sol.augmented;
    let l = sol.params()[0].len();
    let n = z.state_dim() / 2 - l;
    let m = sol.control.dim();
    let wrap = wraps_controls(&sol.problem);
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(indexed("x", n))
        .chain(indexed("p", l))
        .chain(indexed("lambda", n))
        .chain(indexed("mu", l))
        .chain(indexed("u", m))
        .collect();
    w.write_record(&header)?;
    for ((t, zi), ui) in sol
        .grid()
        .nodes()
        .iter()
        .zip(z.states())
        .zip(sol.control.values())
    {
        let row: Vec<String> = std::iter::once(num(*t))
            .chain(zi.iter().map(|v| num(*v)))
            .chain(ui.iter().map(|v| num(if wrap { wrap_angle(*v) } else { *v })))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.1,
            1e-7,
            -2.5e-300,
            12345.678,
            1e20,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits(), "{v}");
        }
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1e-7), "1e-7");
    }
}
