//! Model definition and ingestion.
//!
//! A model fixes the configuration dimension `n`, the number of base
//! directions `k`, a Lagrangian over the velocity bundle, `m` constraint
//! functions with their reaction-form mode, optional symmetry sections and
//! named real parameters. Everything downstream evaluates pointwise at a
//! [`FieldPoint`] through the flattening convention below.
//!
//! Flattening: a point `(q, v)` packs into one vector as `q1..qn` followed by
//! the velocity block grouped by direction, `r(i, A) = (A-1)*n + i` with
//! 1-based indices. The same layout applies to tangent vectors, Hessian
//! blocks and CSV columns.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, BinOp, BoundExpr, ExprAst, VariableBinding};
use crate::hyperdual::Scalar;

/// 0-based index of `v^i_A` inside the flattened velocity block.
pub fn vindex(n: usize, i: usize, a: usize) -> usize {
    a * n + i
}

/// Slot names in flattening order: `q1..qn`, then `v<i>_<A>` grouped by `A`.
pub fn slot_names(n: usize, k: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(n + n * k);
    for i in 1..=n {
        names.push(format!("q{i}"));
    }
    for a in 1..=k {
        for i in 1..=n {
            names.push(format!("v{i}_{a}"));
        }
    }
    names
}

/// A point of the velocity bundle: base coordinates plus `k` velocity vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPoint {
    q: DVector<f64>,
    /// `n x k`; column `A` is the velocity vector in direction `A`.
    v: DMatrix<f64>,
}

impl FieldPoint {
    pub fn new(q: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() != q.len() {
            return Err(Error::Dimension(format!(
                "velocity rows {} != configuration dimension {}",
                v.nrows(),
                q.len()
            )));
        }
        let p = FieldPoint { q, v };
        if !p.q.iter().chain(p.v.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "field point".into(),
            });
        }
        Ok(p)
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        FieldPoint {
            q: DVector::zeros(n),
            v: DMatrix::zeros(n, k),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn k(&self) -> usize {
        self.v.ncols()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn q_mut(&mut self) -> &mut DVector<f64> {
        &mut self.q
    }

    pub fn v_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.v
    }

    /// Pack into the flat layout `(q | v)`; the column-major storage of the
    /// velocity matrix realises `r(i, A) = (A-1)*n + i` directly.
    pub fn flatten(&self) -> DVector<f64> {
        let n = self.n();
        let nk = n * self.k();
        let mut out = DVector::zeros(n + nk);
        out.rows_mut(0, n).copy_from(&self.q);
        out.rows_mut(n, nk)
            .copy_from(&DVector::from_column_slice(self.v.as_slice()));
        out
    }

    pub fn from_flat(n: usize, k: usize, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != n + n * k {
            return Err(Error::Dimension(format!(
                "flat vector length {} != {}",
                flat.len(),
                n + n * k
            )));
        }
        let q = DVector::from_iterator(n, flat.rows(0, n).iter().copied());
        let v = DMatrix::from_column_slice(n, k, flat.rows(n, n * k).as_slice());
        FieldPoint::new(q, v)
    }
}

/// Element of the tangent space at a point of the velocity bundle, stored in
/// the flat `(dq | dv)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(DVector<f64>);

impl TangentVector {
    pub fn new(n: usize, k: usize, data: DVector<f64>) -> Result<Self> {
        if data.len() != n + n * k {
            return Err(Error::Dimension(format!(
                "tangent vector length {} != {}",
                data.len(),
                n + n * k
            )));
        }
        Ok(TangentVector(data))
    }

    pub fn from_raw(data: DVector<f64>) -> Self {
        TangentVector(data)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn q_block(&self, n: usize) -> DVector<f64> {
        self.0.rows(0, n).into_owned()
    }

    pub fn v_block(&self, n: usize) -> DVector<f64> {
        self.0.rows(n, self.0.len() - n).into_owned()
    }
}

/// How reaction forms are produced: by differentiating the constraints with
/// respect to the velocities, or from an explicit `m x k x n` table.
#[derive(Debug, Clone)]
pub enum ConstraintFormMode {
    Chetaev,
    Explicit(Vec<Vec<Vec<ExprAst>>>),
}

impl ConstraintFormMode {
    pub fn is_chetaev(&self) -> bool {
        matches!(self, ConstraintFormMode::Chetaev)
    }
}

/// A named section: `n` component expressions of `(q, v)` generating a vector
/// field on the configuration space.
#[derive(Debug, Clone)]
pub struct SymmetrySection {
    pub name: String,
    pub components: Vec<ExprAst>,
}

/// Base 1-forms of a distribution on the configuration space, kept when a
/// model was built as k copies of a distribution; the subspace checks need
/// them separately from the induced constraints.
#[derive(Debug, Clone)]
pub struct DistributionData {
    pub forms: Vec<Vec<ExprAst>>,
    bound: Vec<Vec<BoundExpr>>,
}

impl DistributionData {
    /// Evaluate base form `alpha` component `i` at the flat values.
    pub fn form_at(&self, alpha: usize, i: usize, values: &[f64]) -> Result<f64> {
        self.bound[alpha][i].eval(values)
    }

    pub fn base_count(&self) -> usize {
        self.bound.len()
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    n: usize,
    k: usize,
    lagrangian: ExprAst,
    constraints: Vec<ExprAst>,
    form_mode: ConstraintFormMode,
    symmetries: Vec<SymmetrySection>,
    parameters: BTreeMap<String, f64>,

    binding: VariableBinding,
    bound_lagrangian: BoundExpr,
    bound_constraints: Vec<BoundExpr>,
    bound_forms: Option<Vec<Vec<Vec<BoundExpr>>>>,
    bound_symmetries: Vec<Vec<BoundExpr>>,
    distribution: Option<DistributionData>,
}

fn parse_var_name(name: &str) -> Option<(char, usize, usize)> {
    // q<digits> or v<digits>_<digits>, 1-based.
    let bytes = name.as_bytes();
    if bytes.is_empty() {
        return None;
    }
    match bytes[0] {
        b'q' => {
            let rest = &name[1..];
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                rest.parse().ok().map(|i| ('q', i, 0))
            } else {
                None
            }
        }
        b'v' => {
            let rest = &name[1..];
            let (i_part, a_part) = rest.split_once('_')?;
            if i_part.is_empty()
                || a_part.is_empty()
                || !i_part.bytes().all(|b| b.is_ascii_digit())
                || !a_part.bytes().all(|b| b.is_ascii_digit())
            {
                return None;
            }
            Some(('v', i_part.parse().ok()?, a_part.parse().ok()?))
        }
        _ => None,
    }
}

impl ModelSpec {
    /// Validate and bind all parts of a model.
    pub fn new(
        name: String,
        n: usize,
        k: usize,
        lagrangian: ExprAst,
        constraints: Vec<ExprAst>,
        form_mode: ConstraintFormMode,
        symmetries: Vec<SymmetrySection>,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::Schema("n and k must be positive".into()));
        }
        let m = constraints.len();
        if m > n * k {
            return Err(Error::Schema(format!(
                "{m} constraints exceed the fiber dimension {}",
                n * k
            )));
        }
        for pname in parameters.keys() {
            if parse_var_name(pname).is_some() {
                return Err(Error::Schema(format!(
                    "parameter name '{pname}' collides with a coordinate name"
                )));
            }
        }

        let mut binding = VariableBinding::from_slots(slot_names(n, k))?;
        for (pname, &value) in &parameters {
            binding.add_param(pname, value);
        }

        let check = |ast: &ExprAst, what: &str| -> Result<()> {
            for var in ast.variables() {
                match parse_var_name(&var) {
                    Some(('q', i, _)) if (1..=n).contains(&i) => {}
                    Some(('v', i, a)) if (1..=n).contains(&i) && (1..=k).contains(&a) => {}
                    Some(_) => {
                        return Err(Error::Schema(format!(
                            "{what}: coordinate '{var}' out of range for n={n}, k={k}"
                        )))
                    }
                    None => {
                        if !parameters.contains_key(&var) {
                            return Err(Error::Schema(format!(
                                "{what}: undeclared variable '{var}'"
                            )));
                        }
                    }
                }
            }
            Ok(())
        };

        check(&lagrangian, "lagrangian")?;
        for (idx, c) in constraints.iter().enumerate() {
            check(c, &format!("constraint {}", idx + 1))?;
        }
        if let ConstraintFormMode::Explicit(table) = &form_mode {
            if table.len() != m {
                return Err(Error::Schema(format!(
                    "explicit form table has {} rows, expected m={m}",
                    table.len()
                )));
            }
            for (alpha, row) in table.iter().enumerate() {
                if row.len() != k {
                    return Err(Error::Schema(format!(
                        "explicit form row {} has {} direction blocks, expected k={k}",
                        alpha + 1,
                        row.len()
                    )));
                }
                for (a, block) in row.iter().enumerate() {
                    if block.len() != n {
                        return Err(Error::Schema(format!(
                            "explicit form row {}, direction {} has {} entries, expected n={n}",
                            alpha + 1,
                            a + 1,
                            block.len()
                        )));
                    }
                    for e in block {
                        check(e, &format!("explicit form row {}", alpha + 1))?;
                    }
                }
            }
        }
        for s in &symmetries {
            if s.components.len() != n {
                return Err(Error::Schema(format!(
                    "symmetry section '{}' has {} components, expected n={n}",
                    s.name,
                    s.components.len()
                )));
            }
            for e in &s.components {
                check(e, &format!("symmetry section '{}'", s.name))?;
            }
        }

        let bound_lagrangian = binding.bind(&lagrangian)?;
        let bound_constraints = constraints
            .iter()
            .map(|c| binding.bind(c))
            .collect::<Result<Vec<_>>>()?;
        let bound_forms = match &form_mode {
            ConstraintFormMode::Chetaev => None,
            ConstraintFormMode::Explicit(table) => Some(
                table
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|block| {
                                block.iter().map(|e| binding.bind(e)).collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let bound_symmetries = symmetries
            .iter()
            .map(|s| {
                s.components
                    .iter()
                    .map(|e| binding.bind(e))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ModelSpec {
            name,
            n,
            k,
            lagrangian,
            constraints,
            form_mode,
            symmetries,
            parameters,
            binding,
            bound_lagrangian,
            bound_constraints,
            bound_forms,
            bound_symmetries,
            distribution: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.constraints.len()
    }
    /// Dimension of the tangent space at a bundle point, `n + n k`.
    pub fn dim(&self) -> usize {
        self.n + self.n * self.k
    }
    pub fn lagrangian(&self) -> &ExprAst {
        &self.lagrangian
    }
    pub fn constraints(&self) -> &[ExprAst] {
        &self.constraints
    }
    pub fn form_mode(&self) -> &ConstraintFormMode {
        &self.form_mode
    }
    pub fn symmetries(&self) -> &[SymmetrySection] {
        &self.symmetries
    }
    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }
    pub fn binding(&self) -> &VariableBinding {
        &self.binding
    }
    pub fn distribution(&self) -> Option<&DistributionData> {
        self.distribution.as_ref()
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }

    /// New model with replaced parameter values (sweeps re-bind everything).
    pub fn with_parameters(&self, parameters: BTreeMap<String, f64>) -> Result<Self> {
        let mut spec = ModelSpec::new(
            self.name.clone(),
            self.n,
            self.k,
            self.lagrangian.clone(),
            self.constraints.clone(),
            self.form_mode.clone(),
            self.symmetries.clone(),
            parameters,
        )?;
        spec.distribution = match &self.distribution {
            Some(d) => Some(bind_distribution(&spec.binding, d.forms.clone())?),
            None => None,
        };
        Ok(spec)
    }

    pub fn eval_lagrangian<S: Scalar>(&self, values: &[S]) -> Result<S> {
        self.bound_lagrangian.eval(values)
    }

    pub fn eval_constraint<S: Scalar>(&self, alpha: usize, values: &[S]) -> Result<S> {
        self.bound_constraints[alpha].eval(values)
    }

    /// Explicit form coefficient, `None` in Chetaev mode.
    pub fn eval_explicit_form(
        &self,
        alpha: usize,
        a: usize,
        i: usize,
        values: &[f64],
    ) -> Option<Result<f64>> {
        self.bound_forms
            .as_ref()
            .map(|t| t[alpha][a][i].eval(values))
    }

    pub fn section_by_name(&self, name: &str) -> Option<usize> {
        self.symmetries.iter().position(|s| s.name == name)
    }

    pub fn eval_section_component<S: Scalar>(
        &self,
        section: usize,
        component: usize,
        values: &[S],
    ) -> Result<S> {
        self.bound_symmetries[section][component].eval(values)
    }

    /// Constraint values at a point.
    pub fn constraint_values(&self, w: &FieldPoint) -> Result<DVector<f64>> {
        let flat = w.flatten();
        let vals = flat.as_slice();
        let mut out = DVector::zeros(self.m());
        for alpha in 0..self.m() {
            out[alpha] = self.eval_constraint(alpha, vals)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RawModel::from_spec(self)).expect("model serialization")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&RawModel::from_spec(self)).expect("model serialization")
    }
}

// ---------------------------------------------------------------------------
// File ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawModel {
    name: String,
    n: usize,
    k: usize,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    lagrangian: String,
    #[serde(default)]
    constraints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint_forms: Option<RawForms>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    symmetries: Vec<RawSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawForms {
    mode: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    forms: Vec<Vec<Vec<String>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSection {
    name: String,
    components: Vec<String>,
}

impl RawModel {
    fn from_spec(spec: &ModelSpec) -> RawModel {
        RawModel {
            name: spec.name.clone(),
            n: spec.n,
            k: spec.k,
            parameters: spec.parameters.clone(),
            lagrangian: spec.lagrangian.to_string(),
            constraints: spec.constraints.iter().map(|c| c.to_string()).collect(),
            constraint_forms: Some(match &spec.form_mode {
                ConstraintFormMode::Chetaev => RawForms {
                    mode: "chetaev".into(),
                    forms: Vec::new(),
                },
                ConstraintFormMode::Explicit(table) => RawForms {
                    mode: "explicit".into(),
                    forms: table
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|block| block.iter().map(|e| e.to_string()).collect())
                                .collect()
                        })
                        .collect(),
                },
            }),
            symmetries: spec
                .symmetries
                .iter()
                .map(|s| RawSection {
                    name: s.name.clone(),
                    components: s.components.iter().map(|e| e.to_string()).collect(),
                })
                .collect(),
        }
    }
}

fn parse_field(src: &str, what: &str) -> Result<ExprAst> {
    expr::parse(src).map_err(|e| Error::Schema(format!("{what}: {e}")))
}

/// Parse a model from JSON text.
pub fn load_model_str(text: &str) -> Result<ModelSpec> {
    let raw: RawModel =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("model file: {e}")))?;
    let lagrangian = parse_field(&raw.lagrangian, "lagrangian")?;
    let constraints = raw
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| parse_field(c, &format!("constraint {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let form_mode = match raw.constraint_forms {
        None => ConstraintFormMode::Chetaev,
        Some(f) => match f.mode.as_str() {
            "chetaev" => ConstraintFormMode::Chetaev,
            "explicit" => {
                let table = f
                    .forms
                    .iter()
                    .enumerate()
                    .map(|(alpha, row)| {
                        row.iter()
                            .map(|block| {
                                block
                                    .iter()
                                    .map(|s| {
                                        parse_field(s, &format!("form row {}", alpha + 1))
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                ConstraintFormMode::Explicit(table)
            }
            other => {
                return Err(Error::Schema(format!(
                    "constraint_forms.mode must be 'chetaev' or 'explicit', got '{other}'"
                )))
            }
        },
    };
    let symmetries = raw
        .symmetries
        .iter()
        .map(|s| {
            Ok(SymmetrySection {
                name: s.name.clone(),
                components: s
                    .components
                    .iter()
                    .map(|c| parse_field(c, &format!("symmetry '{}'", s.name)))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelSpec::new(
        raw.name,
        raw.n,
        raw.k,
        lagrangian,
        constraints,
        form_mode,
        symmetries,
        raw.parameters,
    )
}

/// Load a model from a JSON file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_model_str(&text)
}

// ---------------------------------------------------------------------------
// Builders for the standard constraint families
// ---------------------------------------------------------------------------

fn sum_terms(terms: Vec<ExprAst>) -> ExprAst {
    let mut acc: Option<ExprAst> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => {
                if let ExprAst::Neg(inner) = t {
                    ExprAst::Bin(BinOp::Sub, Box::new(a), inner)
                } else {
                    ExprAst::Bin(BinOp::Add, Box::new(a), Box::new(t))
                }
            }
        });
    }
    acc.unwrap_or(ExprAst::Const(0.0))
}

fn is_zero(e: &ExprAst) -> bool {
    matches!(e, ExprAst::Const(v) if *v == 0.0)
}

fn coeff_times_var(coeff: &ExprAst, var: String) -> ExprAst {
    match coeff {
        ExprAst::Const(c) if *c == 1.0 => ExprAst::Var(var),
        ExprAst::Const(c) if *c == -1.0 => ExprAst::Neg(Box::new(ExprAst::Var(var))),
        ExprAst::Neg(inner) => ExprAst::Neg(Box::new(ExprAst::Bin(
            BinOp::Mul,
            inner.clone(),
            Box::new(ExprAst::Var(var)),
        ))),
        other => ExprAst::Bin(
            BinOp::Mul,
            Box::new(other.clone()),
            Box::new(ExprAst::Var(var)),
        ),
    }
}

fn check_base_expr(e: &ExprAst, n: usize, params: &BTreeMap<String, f64>, what: &str) -> Result<()> {
    for var in e.variables() {
        match parse_var_name(&var) {
            Some(('q', i, _)) if (1..=n).contains(&i) => {}
            _ if params.contains_key(&var) => {}
            _ => {
                return Err(Error::Schema(format!(
                    "{what}: '{var}' is not a base coordinate or parameter"
                )))
            }
        }
    }
    Ok(())
}

fn bind_distribution(
    binding: &VariableBinding,
    forms: Vec<Vec<ExprAst>>,
) -> Result<DistributionData> {
    let bound = forms
        .iter()
        .map(|row| row.iter().map(|e| binding.bind(e)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(DistributionData { forms, bound })
}

/// Linear constraints from an `m x k x n` coefficient table over the base:
/// constraint `alpha` is the sum over directions of the pairing of row
/// `mu[alpha][B]` with the direction-`B` velocities. Reaction forms follow the
/// velocity-gradient rule, which reproduces the table itself.
pub fn build_linear_constraint_model(
    base: &ModelSpec,
    mu: &[Vec<Vec<ExprAst>>],
) -> Result<ModelSpec> {
    if base.m() != 0 {
        return Err(Error::Schema(
            "linear-constraint builder requires an unconstrained base model".into(),
        ));
    }
    let (n, k) = (base.n(), base.k());
    for (alpha, row) in mu.iter().enumerate() {
        if row.len() != k || row.iter().any(|block| block.len() != n) {
            return Err(Error::Dimension(format!(
                "mu row {} must be k x n = {k} x {n}",
                alpha + 1
            )));
        }
        for block in row {
            for e in block {
                check_base_expr(e, n, base.parameters(), "mu entry")?;
            }
        }
    }
    let constraints: Vec<ExprAst> = mu
        .iter()
        .map(|row| {
            let mut terms = Vec::new();
            for (a, block) in row.iter().enumerate() {
                for (i, coeff) in block.iter().enumerate() {
                    if !is_zero(coeff) {
                        terms.push(coeff_times_var(coeff, format!("v{}_{}", i + 1, a + 1)));
                    }
                }
            }
            sum_terms(terms)
        })
        .collect();
    ModelSpec::new(
        base.name().to_string(),
        n,
        k,
        base.lagrangian().clone(),
        constraints,
        ConstraintFormMode::Chetaev,
        base.symmetries().to_vec(),
        base.parameters().clone(),
    )
}

/// Constraint submanifold made of k copies of one distribution on the base:
/// every velocity direction is required to lie in the kernel of the given
/// 1-forms. Produces `base_forms.len() * k` constraints and remembers the
/// base forms for the subspace checks.
pub fn build_distribution_model(
    base: &ModelSpec,
    base_forms: &[Vec<ExprAst>],
) -> Result<ModelSpec> {
    let (n, k) = (base.n(), base.k());
    let mut mu = Vec::new();
    for row in base_forms {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "distribution form must have n={n} components, got {}",
                row.len()
            )));
        }
        for a in 0..k {
            let mut blocks = vec![vec![ExprAst::Const(0.0); n]; k];
            blocks[a] = row.clone();
            mu.push(blocks);
        }
    }
    let mut spec = build_linear_constraint_model(base, &mu)?;
    spec.distribution = Some(bind_distribution(&spec.binding, base_forms.to_vec())?);
    Ok(spec)
}

/// Constraints induced by a connection on a fibred splitting of the base
/// coordinates: the first `n - m` coordinates are base-like, the last `m`
/// fibre-like, and each fibre velocity is matched to minus the Christoffel
/// pairing with the base velocities.
pub fn build_connection_constraint_model(
    base: &ModelSpec,
    christoffel: &[Vec<ExprAst>],
) -> Result<ModelSpec> {
    let (n, k) = (base.n(), base.k());
    let m = christoffel.len();
    if m >= n {
        return Err(Error::Dimension(format!(
            "{m} fibre coordinates leave no base coordinates in dimension {n}"
        )));
    }
    let nb = n - m;
    for row in christoffel {
        if row.len() != nb {
            return Err(Error::Dimension(format!(
                "Christoffel row must have {nb} entries, got {}",
                row.len()
            )));
        }
        for e in row {
            check_base_expr(e, n, base.parameters(), "Christoffel entry")?;
        }
    }
    // mu row for (alpha, A): dq^{nb+alpha} + Gamma^alpha_a dq^a on direction A.
    let mut mu = Vec::new();
    for (alpha, row) in christoffel.iter().enumerate() {
        for a_dir in 0..k {
            let mut blocks = vec![vec![ExprAst::Const(0.0); n]; k];
            for (a_base, gamma) in row.iter().enumerate() {
                blocks[a_dir][a_base] = gamma.clone();
            }
            blocks[a_dir][nb + alpha] = ExprAst::Const(1.0);
            mu.push(blocks);
        }
    }
    build_linear_constraint_model(base, &mu)
}

// ---------------------------------------------------------------------------
// Builtin models
// ---------------------------------------------------------------------------

fn p(src: &str) -> ExprAst {
    expr::parse(src).expect("builtin expression")
}

fn unconstrained(
    name: &str,
    n: usize,
    k: usize,
    lagrangian: &str,
    parameters: &[(&str, f64)],
) -> ModelSpec {
    ModelSpec::new(
        name.into(),
        n,
        k,
        p(lagrangian),
        Vec::new(),
        ConstraintFormMode::Chetaev,
        Vec::new(),
        parameters
            .iter()
            .map(|&(pn, pv)| (pn.to_string(), pv))
            .collect(),
    )
    .expect("builtin model")
}

fn cosserat_model() -> ModelSpec {
    let lagrangian = "rho/2*(v1_1^2 + v2_1^2) + alpha/2*v3_1^2 - beta/2*v3_2^2 \
                      - K/2*(v4_2^2 + v5_2^2) + q6*(q4 - v1_2) + q7*(q5 - v2_2)";
    let constraints = vec![p("v1_1 + R*v3_1*v2_2"), p("v2_1 - R*v3_1*v1_2")];
    // Reaction forms from the source model, not the velocity-gradient rule:
    // the second direction blocks are zero.
    let zero_block = || vec![ExprAst::Const(0.0); 7];
    let mut form1_t = vec![ExprAst::Const(0.0); 7];
    form1_t[0] = ExprAst::Const(1.0);
    form1_t[2] = p("R*v2_2");
    let mut form2_t = vec![ExprAst::Const(0.0); 7];
    form2_t[1] = ExprAst::Const(1.0);
    form2_t[2] = p("-R*v1_2");
    let forms = vec![vec![form1_t, zero_block()], vec![form2_t, zero_block()]];
    let symmetries = vec![SymmetrySection {
        name: "main".into(),
        components: vec![
            p("-R*v2_2"),
            p("R*v1_2"),
            ExprAst::Const(1.0),
            ExprAst::Const(0.0),
            ExprAst::Const(0.0),
            ExprAst::Const(0.0),
            ExprAst::Const(0.0),
        ],
    }];
    ModelSpec::new(
        "cosserat".into(),
        7,
        2,
        p(lagrangian),
        constraints,
        ConstraintFormMode::Explicit(forms),
        symmetries,
        [
            ("rho".to_string(), 1.0),
            ("alpha".to_string(), 1.0),
            ("beta".to_string(), 1.0),
            ("K".to_string(), 1.0),
            ("R".to_string(), 1.0),
        ]
        .into_iter()
        .collect(),
    )
    .expect("cosserat model")
}

fn knife_edge_model() -> ModelSpec {
    let mut base = unconstrained(
        "knife_edge",
        3,
        1,
        "0.5*(v1_1^2 + v2_1^2 + v3_1^2)",
        &[],
    );
    base = ModelSpec::new(
        base.name().to_string(),
        3,
        1,
        base.lagrangian().clone(),
        Vec::new(),
        ConstraintFormMode::Chetaev,
        vec![SymmetrySection {
            name: "rotation".into(),
            components: vec![ExprAst::Const(0.0), ExprAst::Const(0.0), ExprAst::Const(1.0)],
        }],
        BTreeMap::new(),
    )
    .expect("knife edge base");
    build_distribution_model(&base, &[vec![p("sin(q3)"), p("-cos(q3)"), ExprAst::Const(0.0)]])
        .expect("knife edge model")
}

fn free_particle_model() -> ModelSpec {
    ModelSpec::new(
        "free_particle".into(),
        2,
        1,
        p("0.5*(v1_1^2 + v2_1^2)"),
        Vec::new(),
        ConstraintFormMode::Chetaev,
        vec![
            SymmetrySection {
                name: "e1".into(),
                components: vec![ExprAst::Const(1.0), ExprAst::Const(0.0)],
            },
            SymmetrySection {
                name: "e2".into(),
                components: vec![ExprAst::Const(0.0), ExprAst::Const(1.0)],
            },
        ],
        BTreeMap::new(),
    )
    .expect("free particle model")
}

fn flat_connection_model() -> ModelSpec {
    let base = unconstrained("flat_connection", 2, 1, "0.5*(v1_1^2 + v2_1^2)", &[]);
    build_connection_constraint_model(&base, &[vec![ExprAst::Const(0.0)]])
        .expect("flat connection model")
}

/// Named builtin fixtures.
pub fn builtin(name: &str) -> Result<ModelSpec> {
    Ok(match name {
        "cosserat" => cosserat_model(),
        "free_particle" => free_particle_model(),
        "knife_edge" => knife_edge_model(),
        "harmonic" => unconstrained("harmonic", 1, 1, "0.5*v1_1^2 - 0.5*q1^2", &[]),
        "flat_connection" => flat_connection_model(),
        other => return Err(Error::UnknownBuiltin(other.to_string())),
    })
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = [
    "cosserat",
    "free_particle",
    "knife_edge",
    "harmonic",
    "flat_connection",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn flattening_follows_direction_major_order() {
        let names = slot_names(2, 3);
        assert_eq!(
            names,
            vec!["q1", "q2", "v1_1", "v2_1", "v1_2", "v2_2", "v1_3", "v2_3"]
        );
        // r(i, A) = (A-1) n + i with 1-based indices.
        assert_eq!(vindex(2, 0, 0), 0);
        assert_eq!(vindex(2, 1, 0), 1);
        assert_eq!(vindex(2, 0, 1), 2);
    }

    #[test]
    fn flatten_round_trip() {
        let q = DVector::from_row_slice(&[1.0, 2.0]);
        let v = DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 4.0, 6.0]);
        let w = FieldPoint::new(q, v).unwrap();
        let flat = w.flatten();
        assert_eq!(flat.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = FieldPoint::from_flat(2, 2, &flat).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn cosserat_builtin_shape() {
        let m = builtin("cosserat").unwrap();
        assert_eq!((m.n(), m.k(), m.m()), (7, 2, 2));
        assert!(!m.form_mode().is_chetaev());
        assert_eq!(m.parameter("R"), Some(1.0));
        assert_eq!(m.constraints()[0].to_string(), "v1_1+R*v3_1*v2_2");
        assert_eq!(m.constraints()[1].to_string(), "v2_1-R*v3_1*v1_2");
        assert_eq!(m.symmetries()[0].name, "main");
    }

    #[test]
    fn free_particle_loads_from_json() {
        let text = r#"{
            "name": "free",
            "n": 2,
            "k": 1,
            "lagrangian": "0.5*(v1_1^2+v2_1^2)",
            "constraints": []
        }"#;
        let m = load_model_str(text).unwrap();
        assert_eq!((m.n(), m.k(), m.m()), (2, 1, 0));
        assert!(m.form_mode().is_chetaev());
    }

    #[test]
    fn explicit_arity_mismatch_names_row() {
        let text = r#"{
            "name": "bad",
            "n": 2,
            "k": 1,
            "lagrangian": "0.5*(v1_1^2+v2_1^2)",
            "constraints": ["v1_1"],
            "constraint_forms": {"mode": "explicit", "forms": [[["1"]]]}
        }"#;
        let err = load_model_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn undeclared_variable_rejected() {
        let text = r#"{
            "name": "bad",
            "n": 1,
            "k": 1,
            "lagrangian": "0.5*v1_1^2 - mass*q1"
        }"#;
        let err = load_model_str(text).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn out_of_range_coordinate_rejected() {
        let text = r#"{
            "name": "bad",
            "n": 1,
            "k": 1,
            "lagrangian": "0.5*v1_2^2"
        }"#;
        assert!(load_model_str(text).is_err());
    }

    #[test]
    fn linear_builder_single_form() {
        let base = unconstrained("t", 2, 1, "0.5*(v1_1^2+v2_1^2)", &[]);
        let mu = vec![vec![vec![ExprAst::Const(1.0), ExprAst::Const(0.0)]]];
        let m = build_linear_constraint_model(&base, &mu).unwrap();
        assert_eq!(m.m(), 1);
        assert_eq!(m.constraints()[0].to_string(), "v1_1");
    }

    #[test]
    fn knife_edge_constraint_text() {
        let m = builtin("knife_edge").unwrap();
        assert_eq!(m.m(), 1);
        assert_eq!(m.constraints()[0].to_string(), "sin(q3)*v1_1-cos(q3)*v2_1");
        assert!(m.distribution().is_some());
    }

    #[test]
    fn distribution_builder_k_copies() {
        let base = unconstrained("t", 2, 2, "0.5*(v1_1^2+v2_1^2+v1_2^2+v2_2^2)", &[]);
        let m = build_distribution_model(&base, &[vec![parse("q1").unwrap(), ExprAst::Const(1.0)]])
            .unwrap();
        assert_eq!(m.m(), 2);
        assert_eq!(m.constraints()[0].to_string(), "q1*v1_1+v2_1");
        assert_eq!(m.constraints()[1].to_string(), "q1*v1_2+v2_2");
    }

    #[test]
    fn connection_builder_instances() {
        // Flat connection: fibre velocities vanish.
        let base = unconstrained("t", 2, 1, "0.5*(v1_1^2+v2_1^2)", &[]);
        let m = build_connection_constraint_model(&base, &[vec![ExprAst::Const(0.0)]]).unwrap();
        assert_eq!(m.constraints()[0].to_string(), "v2_1");

        // Position-dependent Christoffel symbol.
        let m = build_connection_constraint_model(&base, &[vec![parse("q1").unwrap()]]).unwrap();
        assert_eq!(m.constraints()[0].to_string(), "q1*v1_1+v2_1");

        // Two copies for k = 2 with a constant coefficient.
        let base2 = unconstrained(
            "t2",
            2,
            2,
            "0.5*(v1_1^2+v2_1^2+v1_2^2+v2_2^2)",
            &[("c", 0.7)],
        );
        let m = build_connection_constraint_model(&base2, &[vec![parse("c").unwrap()]]).unwrap();
        assert_eq!(m.m(), 2);
        assert_eq!(m.constraints()[0].to_string(), "c*v1_1+v2_1");
        assert_eq!(m.constraints()[1].to_string(), "c*v1_2+v2_2");
    }

    #[test]
    fn constraint_count_bound_enforced() {
        let err = ModelSpec::new(
            "bad".into(),
            1,
            1,
            p("0.5*v1_1^2"),
            vec![p("v1_1"), p("q1*v1_1")],
            ConstraintFormMode::Chetaev,
            Vec::new(),
            BTreeMap::new(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn parameter_name_collision_rejected() {
        let err = ModelSpec::new(
            "bad".into(),
            1,
            1,
            p("0.5*v1_1^2"),
            Vec::new(),
            ConstraintFormMode::Chetaev,
            Vec::new(),
            [("q1".to_string(), 1.0)].into_iter().collect(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn model_json_round_trip() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let text = m.to_json_string();
            let back = load_model_str(&text).unwrap();
            assert_eq!(back.n(), m.n());
            assert_eq!(back.k(), m.k());
            assert_eq!(back.m(), m.m());
            assert_eq!(back.lagrangian().to_string(), m.lagrangian().to_string());
        }
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pack_unpack_inverse(
                n in 1usize..5,
                k in 1usize..4,
                seed in proptest::collection::vec(-10.0f64..10.0, 30)
            ) {
                let q = DVector::from_iterator(n, seed.iter().copied().take(n));
                let v = DMatrix::from_iterator(n, k, seed.iter().copied().cycle().skip(n).take(n * k));
                let w = FieldPoint::new(q, v).unwrap();
                let back = FieldPoint::from_flat(n, k, &w.flatten()).unwrap();
                prop_assert_eq!(back, w);
            }
        }
    }
}
