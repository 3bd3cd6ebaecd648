//! Run configuration: TOML (or JSON, by extension) naming a registered problem with optional
//! coefficient overrides, plus weights, solver options, Monte-Carlo and verification settings.

use std::path::{Path, PathBuf};

use cdoc_core::augment::WeightSchedule;
use cdoc_core::problem::ProblemDef;
use cdoc_core::problems::{lqr_regime, regime, zermelo_with, ZERMELO_P0};
use cdoc_core::solver::SolverOptions;
use cdoc_core::verify::{Suite, VerifyOptions};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::exit::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the Monte-Carlo draws.
    #[serde(default)]
    pub seed: u64,
    /// Desensitization weight: a scalar `alpha` (`Q = alpha I`) or the diagonal of `Q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSpec>,
    /// Scalar weights of a sweep, ascending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Output directory; not echoed, so runs written to different places compare equal.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

/// A registered problem and coefficient overrides. Zermelo accepts `p0`; the regulators
/// accept `a`, `b`, `r1`, `r2`, `x0` and `tf`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    /// Relative half-width of the draws; the problem's registered value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suite: String,
    pub nodes: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    pub integral_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let d = VerifyOptions::default();
        Self {
            suite: Suite::All.to_string(),
            nodes: d.nodes,
            fd_step: d.fd_step,
            tolerance: d.tolerance,
            integral_tolerance: d.integral_tolerance,
        }
    }
}

impl VerifyConfig {
    pub fn suite(&self) -> Result<Suite, Failure> {
        self.suite
            .parse()
            .map_err(|e: cdoc_core::Error| Failure::usage(e.to_string()))
    }

    pub fn options(&self) -> Result<VerifyOptions, Failure> {
        if self.nodes < 3 {
            return Err(Failure::usage(format!(
                "verify.nodes must be at least 3, got {}",
                self.nodes
            )));
        }
        for (name, v) in [
            ("fd_step", self.fd_step),
            ("tolerance", self.tolerance),
            ("integral_tolerance", self.integral_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::usage(format!("verify.{name} must be positive, got {v}")));
            }
        }
        Ok(VerifyOptions {
            nodes: self.nodes,
            fd_step: self.fd_step,
            tolerance: self.tolerance,
            integral_tolerance: self.integral_tolerance,
        })
    }
}

impl RunConfig {
    pub fn for_problem(name: &str) -> Self {
        Self {
            seed: 0,
            weight: None,
            weights: None,
            out: None,
            problem: ProblemConfig {
                name: name.to_string(),
                ..Default::default()
            },
            solver: SolverOptions::default(),
            montecarlo: MonteCarloConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    /// A registered problem name, or a `.toml` / `.json` file.
    pub fn resolve(target: &str) -> Result<Self, Failure> {
        if regime(target).is_some() {
            return Ok(Self::for_problem(target));
        }
        let path = Path::new(target);
        let looks_like_file = path.extension().is_some() || target.contains(std::path::MAIN_SEPARATOR);
        if !looks_like_file && !path.exists() {
            return Err(Failure::usage(format!(
                "`{target}` is neither a registered problem ({}) nor a config file",
                registered().join(", ")
            )));
        }
        Self::load(path)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => toml::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn problem(&self) -> Result<ProblemDef, Failure> {
        self.problem.build()
    }

    /// Weight schedule for a problem with `dim` parameters; zero when unset.
    pub fn weight_schedule(&self, dim: usize) -> Result<WeightSchedule, Failure> {
        let diag = match &self.weight {
            None => vec![0.0; dim],
            Some(WeightSpec::Scalar(a)) => vec![*a; dim],
            Some(WeightSpec::Diagonal(d)) => d.clone(),
        };
        WeightSchedule::constant(diag).map_err(|e| Failure::usage(e.to_string()))
    }

    pub fn weight_diagonal(&self, dim: usize) -> Result<Vec<f64>, Failure> {
        let w = self.weight_schedule(dim)?;
        Ok(w.constant_diag().map(<[f64]>::to_vec).unwrap_or_default())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn fraction(&self) -> Result<f64, Failure> {
        let f = match self.montecarlo.fraction {
            Some(f) => f,
            None => regime(&self.problem.name).map(|r| r.fraction).unwrap_or(0.1),
        };
        if !(f > 0.0 && f <= 1.0) {
            return Err(Failure::usage(format!("fraction must lie in (0, 1], got {f}")));
        }
        Ok(f)
    }
}

pub fn registered() -> Vec<&'static str> {
    cdoc_core::problems::REGIMES.iter().map(|r| r.name).collect()
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemDef, Failure> {
        let finite = |name: &str, v: Option<f64>| match v {
            Some(x) if !x.is_finite() => Err(Failure::usage(format!("problem.{name} must be finite"))),
            _ => Ok(v),
        };
        for (name, v) in [
            ("p0", self.p0),
            ("a", self.a),
            ("b", self.b),
            ("r1", self.r1),
            ("r2", self.r2),
            ("x0", self.x0),
            ("tf", self.tf),
        ] {
            finite(name, v)?;
        }
        if self.name == "zermelo" {
            let extra = [
                ("a", self.a),
                ("b", self.b),
                ("r1", self.r1),
                ("r2", self.r2),
                ("x0", self.x0),
                ("tf", self.tf),
            ];
            if let Some((name, _)) = extra.iter().find(|(_, v)| v.is_some()) {
                return Err(Failure::usage(format!(
                    "zermelo accepts only the p0 override, got `{name}`"
                )));
            }
            return Ok(zermelo_with(self.p0.unwrap_or(ZERMELO_P0)));
        }
        let Some(mut spec) = lqr_regime(&self.name) else {
            return Err(Failure::usage(format!(
                "unknown problem `{}` (registered: {})",
                self.name,
                registered().join(", ")
            )));
        };
        if self.p0.is_some() {
            return Err(Failure::usage(format!(
                "{} takes coefficient overrides `a` / `b`, not `p0`",
                self.name
            )));
        }
        spec.a = self.a.unwrap_or(spec.a);
        spec.b = self.b.unwrap_or(spec.b);
        spec.r1 = self.r1.unwrap_or(spec.r1);
        spec.r2 = self.r2.unwrap_or(spec.r2);
        spec.x0 = self.x0.unwrap_or(spec.x0);
        spec.tf = self.tf.unwrap_or(spec.tf);
        if !(spec.tf > 0.0) {
            return Err(Failure::usage(format!(
                "problem.tf must be positive, got {}",
                spec.tf
            )));
        }
        if !(spec.r2 > 0.0) || spec.r1 < 0.0 {
            return Err(Failure::usage(
                "problem.r2 must be positive and r1 non-negative".to_string(),
            ));
        }
        let mut prob = spec.build();
        prob.set_name(&self.name);
        Ok(prob)
    }
}

/// Nominal parameter vector as a plain list, for reports.
pub fn params_of(p: &DVector<f64>) -> Vec<f64> {
    p.iter().copied().collect()
}
