//! Time integration.
//!
//! Mechanics (`k = 1`) runs as a semi-explicit differential-algebraic system:
//! classical fourth-order Runge-Kutta where every stage acceleration comes
//! from the constrained multiplier solve, with periodic post-step projection
//! of the velocities back onto the constraint surface. (1+1)-dimensional
//! field theories (`k = 2`, time plus one space direction) go through the
//! method of lines in `rod`.

mod io;
mod ode;
mod rod;

pub use io::{fmt_g17, read_solution, write_solution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, VariableBinding};
use crate::model::{FieldPoint, ModelSpec};

/// Spatial boundary handling for `k = 2` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// One-sided second-order stencils at the ends.
    Free,
    /// End nodes held fixed in time.
    Clamped,
    /// Wrap-around stencils.
    Periodic,
}

/// Per-step diagnostics stored with a solution.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub time: f64,
    /// Energy; for `k = 2` the spatial integral of the density.
    pub energy: f64,
    /// Largest constraint violation over the grid.
    pub phi_max: f64,
    /// Momentum components per declared symmetry section (k values each);
    /// spatially integrated for `k = 2`.
    pub momentum: Vec<DVector<f64>>,
}

/// A discretized solution: states on a uniform time grid (times a uniform
/// space grid for `k = 2`), multipliers and diagnostics per node.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub n: usize,
    pub k: usize,
    pub times: Vec<f64>,
    /// Space nodes; a single entry 0.0 for `k = 1`.
    pub space: Vec<f64>,
    /// `states[t][s]`.
    pub states: Vec<Vec<FieldPoint>>,
    /// `multipliers[t][s]`, each `m x k` in the engine's reaction sign
    /// convention.
    pub multipliers: Vec<Vec<DMatrix<f64>>>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Per-node energy (density for `k = 2`) and constraint violation,
    /// indexed like `states`.
    pub node_energy: Vec<Vec<f64>>,
    pub node_phi: Vec<Vec<f64>>,
    /// Set when the run stopped early; carries the abort reason and time.
    pub aborted: Option<String>,
}

impl FieldSolution {
    pub fn step_count(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn node_count(&self) -> usize {
        self.space.len()
    }

    pub fn max_phi(&self) -> f64 {
        self.diagnostics
            .iter()
            .fold(0.0f64, |acc, d| acc.max(d.phi_max))
    }

    /// Largest deviation between the stored first-direction velocities and
    /// central time differences of the stored coordinates (interior steps).
    pub fn prolongation_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        if self.times.len() < 3 {
            return 0.0;
        }
        let h = self.times[1] - self.times[0];
        for t in 1..self.times.len() - 1 {
            for s in 0..self.space.len() {
                let qp = self.states[t + 1][s].q();
                let qm = self.states[t - 1][s].q();
                let v = self.states[t][s].v().column(0).into_owned();
                let fd = (qp - qm) / (2.0 * h);
                worst = worst.max((fd - v).amax());
            }
        }
        worst
    }
}

/// Initial data: plain numbers for mechanics, expressions of the arc-length
/// variable `s` for field runs (numbers are accepted there too).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInitial {
    pub q: Vec<serde_json::Value>,
    pub v: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSimConfig {
    pub t_end: f64,
    pub h: f64,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub boundary: Option<BoundaryCondition>,
    pub initial: RawInitial,
    #[serde(default)]
    pub projection_every: Option<usize>,
    #[serde(default)]
    pub drift_tol: Option<f64>,
    #[serde(default)]
    pub feas_tol: Option<f64>,
}

/// Validated simulation configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_end: f64,
    pub h: f64,
    /// Spatial nodes (k = 2).
    pub nodes: usize,
    /// Spatial extent (k = 2).
    pub length: f64,
    pub boundary: BoundaryCondition,
    pub initial_q: Vec<expr::ExprAst>,
    pub initial_v: Vec<expr::ExprAst>,
    pub projection_every: usize,
    pub drift_tol: f64,
    pub feas_tol: f64,
}

fn initial_entry(value: &serde_json::Value, what: &str) -> Result<expr::ExprAst> {
    match value {
        serde_json::Value::Number(x) => Ok(expr::ExprAst::Const(x.as_f64().ok_or_else(
            || Error::Config(format!("{what}: non-finite number")),
        )?)),
        serde_json::Value::String(src) => {
            expr::parse(src).map_err(|e| Error::Config(format!("{what}: {e}")))
        }
        other => Err(Error::Config(format!(
            "{what}: expected number or expression string, got {other}"
        ))),
    }
}

impl SimConfig {
    pub fn from_json_str(text: &str, model: &ModelSpec) -> Result<Self> {
        let raw: RawSimConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("sim config: {e}")))?;
        SimConfig::from_raw(&raw, model)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>, model: &ModelSpec) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        SimConfig::from_json_str(&text, model)
    }

    pub fn from_raw(raw: &RawSimConfig, model: &ModelSpec) -> Result<Self> {
        if !(raw.h > 0.0) {
            return Err(Error::Config("h must be positive".into()));
        }
        if !(raw.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        let k = model.k();
        let (nodes, length, boundary) = if k == 1 {
            (1, 0.0, BoundaryCondition::Free)
        } else {
            let nodes = raw
                .nodes
                .ok_or_else(|| Error::Config("nodes is required for field runs".into()))?;
            if nodes < 5 {
                return Err(Error::Config(
                    "nodes must be at least 5 for the second-derivative stencils".into(),
                ));
            }
            let length = raw
                .length
                .ok_or_else(|| Error::Config("length is required for field runs".into()))?;
            if !(length > 0.0) {
                return Err(Error::Config("length must be positive".into()));
            }
            (
                nodes,
                length,
                raw.boundary.unwrap_or(BoundaryCondition::Free),
            )
        };
        let parse_block = |vals: &[serde_json::Value], what: &str| -> Result<Vec<expr::ExprAst>> {
            vals.iter()
                .enumerate()
                .map(|(i, v)| initial_entry(v, &format!("initial.{what}[{i}]")))
                .collect()
        };
        let initial_q = parse_block(&raw.initial.q, "q")?;
        let initial_v = parse_block(&raw.initial.v, "v")?;
        if k == 1 && (initial_q.len() != model.n() || initial_v.len() != model.n()) {
            return Err(Error::Config(format!(
                "initial data must carry n={} entries for q and v",
                model.n()
            )));
        }
        Ok(SimConfig {
            t_end: raw.t_end,
            h: raw.h,
            nodes,
            length,
            boundary,
            initial_q,
            initial_v,
            projection_every: raw.projection_every.unwrap_or(1),
            drift_tol: raw.drift_tol.unwrap_or(1e-6),
            feas_tol: raw.feas_tol.unwrap_or(1e-8),
        })
    }

    /// Evaluate an initial-data expression at arc length `s` under the
    /// model's parameters.
    pub(crate) fn eval_profile(
        &self,
        model: &ModelSpec,
        ast: &expr::ExprAst,
        s: f64,
    ) -> Result<f64> {
        let mut binding = VariableBinding::new();
        binding.add_slot("s".into(), 0)?;
        for (name, &value) in model.parameters() {
            binding.add_param(name, value);
        }
        expr::evaluate(ast, &binding, &[s])
    }
}

/// Dispatch on the number of base directions.
pub fn integrate(model: &ModelSpec, config: &SimConfig) -> Result<FieldSolution> {
    match model.k() {
        1 => integrate_k1(model, config),
        2 => integrate_1plus1(model, config),
        k => Err(Error::Config(format!(
            "integration supports k = 1 and k = 2, model has k = {k}"
        ))),
    }
}

/// Mechanics integrator, `k = 1`.
pub fn integrate_k1(model: &ModelSpec, config: &SimConfig) -> Result<FieldSolution> {
    ode::integrate_k1(model, config)
}

/// Method-of-lines integrator for rod-shaped `k = 2` models.
pub fn integrate_1plus1(model: &ModelSpec, config: &SimConfig) -> Result<FieldSolution> {
    rod::integrate_1plus1(model, config)
}
