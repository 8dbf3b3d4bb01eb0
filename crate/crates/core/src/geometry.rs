//! Pointwise geometric objects at a bundle point: derivative jets of the
//! Lagrangian and constraints, the energy, the stack of two-forms, reaction
//! forms, the constraint distribution and the compatibility matrix.
//!
//! All derivatives are exact hyperdual passes; one pass per derivative pair,
//! with Hessian symmetry enforced by averaging the transposed passes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hyperdual::HyperDual;
use crate::linalg;
use crate::model::{vindex, ConstraintFormMode, FieldPoint, ModelSpec, TangentVector};

/// Default reciprocal-condition threshold for regularity and compatibility.
pub const DEFAULT_RCOND_TOL: f64 = 1e-10;

/// Value and derivatives of the Lagrangian at a point, in the flat layout.
#[derive(Debug, Clone)]
pub struct LagrangianJet {
    pub value: f64,
    /// dL/dq, length n.
    pub dldq: DVector<f64>,
    /// dL/dv in the flat velocity layout; these are both the coefficients of
    /// the one-forms theta^A and the momenta of the Legendre map.
    pub dldv: DVector<f64>,
    /// d2L/dv dv, (nk) x (nk), symmetrized.
    pub hess_vv: DMatrix<f64>,
    /// d2L/dq dv, n rows (q index) by nk columns (flat v index).
    pub hess_qv: DMatrix<f64>,
    /// E_L = v . dL/dv - L.
    pub energy: f64,
}

fn finite_or(context: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: context.into(),
        })
    }
}

/// Evaluate value, gradient and the (v,v)/(q,v) Hessian blocks of the
/// Lagrangian at `w`.
pub fn jet(model: &ModelSpec, w: &FieldPoint) -> Result<LagrangianJet> {
    let n = model.n();
    let nk = n * model.k();
    let flat = w.flatten();
    let mut hd: Vec<HyperDual> = flat.iter().map(|&x| HyperDual::constant(x)).collect();

    let value = model.eval_lagrangian::<f64>(flat.as_slice())?;
    finite_or("lagrangian value", value)?;

    let mut dldq = DVector::zeros(n);
    let mut dldv = DVector::zeros(nk);
    let mut hess_vv = DMatrix::zeros(nk, nk);
    let mut hess_qv = DMatrix::zeros(n, nk);

    // (v, v) passes; the full square of pairs, averaged below.
    for a in 0..nk {
        for b in 0..nk {
            hd[n + a].d1 = 1.0;
            hd[n + b].d2 = 1.0;
            let out = model.eval_lagrangian(&hd)?;
            hd[n + a].d1 = 0.0;
            hd[n + b].d2 = 0.0;
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    context: "lagrangian v-derivatives".into(),
                });
            }
            hess_vv[(a, b)] = out.d12;
            if a == b {
                dldv[a] = out.d1;
            }
        }
    }
    hess_vv = (&hess_vv + hess_vv.transpose()) * 0.5;

    // (q, v) passes.
    for j in 0..n {
        for a in 0..nk {
            hd[j].d1 = 1.0;
            hd[n + a].d2 = 1.0;
            let out = model.eval_lagrangian(&hd)?;
            hd[j].d1 = 0.0;
            hd[n + a].d2 = 0.0;
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    context: "lagrangian q-derivatives".into(),
                });
            }
            hess_qv[(j, a)] = out.d12;
            if a == 0 {
                dldq[j] = out.d1;
            }
        }
    }

    let vflat = flat.rows(n, nk);
    let energy = vflat.dot(&dldv) - value;

    Ok(LagrangianJet {
        value,
        dldq,
        dldv,
        hess_vv,
        hess_qv,
        energy,
    })
}

/// First velocity derivatives of the Lagrangian only (the momenta); cheaper
/// than a full jet when no second derivatives are needed.
pub fn momenta(model: &ModelSpec, w: &FieldPoint) -> Result<DVector<f64>> {
    let n = model.n();
    let nk = n * model.k();
    let flat = w.flatten();
    let mut hd: Vec<HyperDual> = flat.iter().map(|&x| HyperDual::constant(x)).collect();
    let mut dldv = DVector::zeros(nk);
    for pair_start in (0..nk).step_by(2) {
        hd[n + pair_start].d1 = 1.0;
        let second = pair_start + 1;
        if second < nk {
            hd[n + second].d2 = 1.0;
        }
        let out = model.eval_lagrangian(&hd)?;
        hd[n + pair_start].d1 = 0.0;
        dldv[pair_start] = out.d1;
        if second < nk {
            hd[n + second].d2 = 0.0;
            dldv[second] = out.d2;
        }
    }
    for x in dldv.iter() {
        finite_or("momenta", *x)?;
    }
    Ok(dldv)
}

/// Energy at a point, `v . dL/dv - L`.
pub fn energy(model: &ModelSpec, w: &FieldPoint) -> Result<f64> {
    let n = model.n();
    let nk = n * model.k();
    let flat = w.flatten();
    let value = model.eval_lagrangian::<f64>(flat.as_slice())?;
    let dldv = momenta(model, w)?;
    finite_or("energy", flat.rows(n, nk).dot(&dldv) - value)
}

/// Differential of the energy in the flat layout, assembled from the jet.
pub fn energy_differential(model: &ModelSpec, w: &FieldPoint, jet: &LagrangianJet) -> DVector<f64> {
    let n = model.n();
    let nk = n * model.k();
    let flat = w.flatten();
    let vflat = flat.rows(n, nk).into_owned();
    let mut out = DVector::zeros(n + nk);
    // dE/dq = v . d2L/dq dv - dL/dq
    out.rows_mut(0, n)
        .copy_from(&(&jet.hess_qv * &vflat - &jet.dldq));
    // dE/dv = v . d2L/dv dv
    out.rows_mut(n, nk)
        .copy_from(&(jet.hess_vv.transpose() * &vflat));
    out
}

/// Regularity of the velocity Hessian, reported rather than thrown.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    /// Reciprocal condition number of the velocity Hessian.
    pub condition: f64,
    pub tolerance: f64,
    pub hessian_rank: usize,
    /// Dimension of the numerical kernel; nonzero for degenerate models.
    pub null_dimension: usize,
}

pub fn regularity(model: &ModelSpec, w: &FieldPoint, tol: f64) -> Result<RegularityReport> {
    let j = jet(model, w)?;
    let nk = model.n() * model.k();
    let condition = linalg::rcond(&j.hess_vv);
    let rank = linalg::rank(&j.hess_vv);
    Ok(RegularityReport {
        regular: condition > tol,
        condition,
        tolerance: tol,
        hessian_rank: rank,
        null_dimension: nk - rank,
    })
}

/// The k two-forms at a point, as antisymmetric matrices on the flat tangent
/// basis `(dq | dv)`.
#[derive(Debug, Clone)]
pub struct OmegaStack {
    pub n: usize,
    pub k: usize,
    pub omegas: Vec<DMatrix<f64>>,
}

impl OmegaStack {
    pub fn dim(&self) -> usize {
        self.n + self.n * self.k
    }

    /// Covector from contracting one tangent vector into form `a`.
    pub fn contract_single(&self, a: usize, x: &DVector<f64>) -> DVector<f64> {
        self.omegas[a].transpose() * x
    }

    /// Covector of the summed contraction of a k-tuple of tangent vectors,
    /// direction A into form A.
    pub fn contract(&self, vectors: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (a, x) in vectors.iter().enumerate() {
            out += self.contract_single(a, x);
        }
        out
    }

    /// Orthonormal basis of the intersection of the kernels of all forms.
    pub fn common_kernel(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut stacked = DMatrix::zeros(d * self.k, d);
        for (a, m) in self.omegas.iter().enumerate() {
            stacked.view_mut((a * d, 0), (d, d)).copy_from(m);
        }
        linalg::nullspace(&stacked)
    }
}

/// Assemble the two-form stack from the Hessian blocks of the jet.
pub fn omega_stack(model: &ModelSpec, w: &FieldPoint) -> Result<OmegaStack> {
    let j = jet(model, w)?;
    Ok(omega_stack_from_jet(model, &j))
}

pub fn omega_stack_from_jet(model: &ModelSpec, jet: &LagrangianJet) -> OmegaStack {
    let n = model.n();
    let k = model.k();
    let nk = n * k;
    let dim = n + nk;
    let mut omegas = Vec::with_capacity(k);
    for a in 0..k {
        let mut m = DMatrix::zeros(dim, dim);
        // q-q block, antisymmetrized explicitly.
        for i in 0..n {
            for jq in 0..n {
                m[(i, jq)] =
                    jet.hess_qv[(jq, vindex(n, i, a))] - jet.hess_qv[(i, vindex(n, jq, a))];
            }
        }
        // q-v block and its negative transpose; no v-v block.
        for i in 0..n {
            for b in 0..k {
                for jv in 0..n {
                    let h = jet.hess_vv[(vindex(n, i, a), vindex(n, jv, b))];
                    m[(i, n + vindex(n, jv, b))] = h;
                    m[(n + vindex(n, jv, b), i)] = -h;
                }
            }
        }
        omegas.push(m);
    }
    OmegaStack { n, k, omegas }
}

/// Reaction-form coefficients at a point: an `m x nk` matrix whose row
/// `alpha` is the flattened semi-basic form. In Chetaev mode the row is the
/// velocity gradient of the constraint; in explicit mode the table is
/// evaluated as given.
pub fn reaction_forms(model: &ModelSpec, w: &FieldPoint) -> Result<DMatrix<f64>> {
    let n = model.n();
    let k = model.k();
    let nk = n * k;
    let m = model.m();
    let flat = w.flatten();
    let mut eta = DMatrix::zeros(m, nk);
    match model.form_mode() {
        ConstraintFormMode::Chetaev => {
            let mut hd: Vec<HyperDual> = flat.iter().map(|&x| HyperDual::constant(x)).collect();
            for alpha in 0..m {
                for pair_start in (0..nk).step_by(2) {
                    hd[n + pair_start].d1 = 1.0;
                    let second = pair_start + 1;
                    if second < nk {
                        hd[n + second].d2 = 1.0;
                    }
                    let out = model.eval_constraint(alpha, &hd)?;
                    hd[n + pair_start].d1 = 0.0;
                    eta[(alpha, pair_start)] = out.d1;
                    if second < nk {
                        hd[n + second].d2 = 0.0;
                        eta[(alpha, second)] = out.d2;
                    }
                }
            }
        }
        ConstraintFormMode::Explicit(_) => {
            for alpha in 0..m {
                for a in 0..k {
                    for i in 0..n {
                        let value = model
                            .eval_explicit_form(alpha, a, i, flat.as_slice())
                            .expect("explicit mode")?;
                        eta[(alpha, vindex(n, i, a))] = value;
                    }
                }
            }
        }
    }
    for x in eta.iter() {
        finite_or("reaction forms", *x)?;
    }
    Ok(eta)
}

/// Constraint values, differentials, reaction forms, constraint distribution
/// and compatibility data at one point.
#[derive(Debug, Clone)]
pub struct ConstraintPackage {
    /// Constraint values, length m.
    pub phi: DVector<f64>,
    /// Full differentials, m rows of length n + nk.
    pub dphi: DMatrix<f64>,
    /// Reaction forms, m rows of length nk (flat layout).
    pub eta: DMatrix<f64>,
    /// Vertical components of the constraint-distribution generators,
    /// m rows of length nk; the q-components vanish by construction.
    pub z: DMatrix<f64>,
    /// Compatibility matrix C[alpha][beta] = Z_alpha(Phi_beta).
    pub compat: DMatrix<f64>,
    /// Inverse of the compatibility matrix; absent when ill-conditioned.
    pub compat_inverse: Option<DMatrix<f64>>,
    pub compat_rcond: f64,
    pub eta_rank: usize,
}

impl ConstraintPackage {
    pub fn is_compatible(&self) -> bool {
        self.compat_inverse.is_some()
    }

    pub fn max_violation(&self) -> f64 {
        self.phi.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }

    /// Generator `alpha` as a full tangent vector (vertical).
    pub fn z_tangent(&self, n: usize, alpha: usize) -> TangentVector {
        let nk = self.z.ncols();
        let mut data = DVector::zeros(n + nk);
        data.rows_mut(n, nk)
            .copy_from(&self.z.row(alpha).transpose());
        TangentVector::from_raw(data)
    }
}

/// Gradient of one constraint at the flat values: value plus full gradient.
fn constraint_gradient(
    model: &ModelSpec,
    alpha: usize,
    hd: &mut [HyperDual],
) -> Result<(f64, DVector<f64>)> {
    let dim = hd.len();
    let mut grad = DVector::zeros(dim);
    let mut value = 0.0;
    for pair_start in (0..dim).step_by(2) {
        hd[pair_start].d1 = 1.0;
        let second = pair_start + 1;
        if second < dim {
            hd[second].d2 = 1.0;
        }
        let out = model.eval_constraint(alpha, &*hd)?;
        hd[pair_start].d1 = 0.0;
        grad[pair_start] = out.d1;
        if second < dim {
            hd[second].d2 = 0.0;
            grad[second] = out.d2;
        }
        value = out.re;
    }
    if !value.is_finite() || !grad.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("constraint {} gradient", alpha + 1),
        });
    }
    Ok((value, grad))
}

/// Constraint values and full differentials at a point, without any solve.
pub fn constraint_jet(model: &ModelSpec, w: &FieldPoint) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = model.dim();
    let m = model.m();
    let flat = w.flatten();
    let mut phi = DVector::zeros(m);
    let mut dphi = DMatrix::zeros(m, dim);
    let mut hd: Vec<HyperDual> = flat.iter().map(|&x| HyperDual::constant(x)).collect();
    for alpha in 0..m {
        let (value, grad) = constraint_gradient(model, alpha, &mut hd)?;
        phi[alpha] = value;
        dphi.set_row(alpha, &grad.transpose());
    }
    Ok((phi, dphi))
}

pub fn constraint_package(model: &ModelSpec, w: &FieldPoint) -> Result<ConstraintPackage> {
    let j = jet(model, w)?;
    constraint_package_from_jet(model, w, &j)
}

pub fn constraint_package_from_jet(
    model: &ModelSpec,
    w: &FieldPoint,
    jet: &LagrangianJet,
) -> Result<ConstraintPackage> {
    let n = model.n();
    let nk = n * model.k();
    let m = model.m();

    let (phi, dphi) = constraint_jet(model, w)?;

    let eta = reaction_forms(model, w)?;
    let eta_rank = linalg::rank(&eta);
    if m > 0 && eta_rank < m {
        return Err(Error::RankDeficient {
            rank: eta_rank,
            expected: m,
        });
    }

    // One factorization of the velocity Hessian, reused for all generators.
    let mut z = DMatrix::zeros(m, nk);
    if m > 0 {
        let hess_rcond = linalg::rcond(&jet.hess_vv);
        if hess_rcond <= DEFAULT_RCOND_TOL {
            return Err(Error::SingularHessian { rcond: hess_rcond });
        }
        let lu = jet.hess_vv.clone().lu();
        for alpha in 0..m {
            let rhs = eta.row(alpha).transpose();
            let sol = lu
                .solve(&rhs)
                .ok_or(Error::SingularHessian { rcond: hess_rcond })?;
            z.set_row(alpha, &sol.transpose());
        }
    }

    // C[alpha][beta] = Z_alpha(Phi_beta); Z is vertical so only the velocity
    // block of dPhi enters.
    let dphi_v = dphi.columns(n, nk).into_owned();
    let compat = &z * dphi_v.transpose();
    let compat_rcond = if m == 0 { 1.0 } else { linalg::rcond(&compat) };
    let compat_inverse = if m == 0 {
        Some(DMatrix::zeros(0, 0))
    } else if compat_rcond > DEFAULT_RCOND_TOL {
        compat.clone().try_inverse()
    } else {
        None
    };

    Ok(ConstraintPackage {
        phi,
        dphi,
        eta,
        z,
        compat,
        compat_inverse,
        compat_rcond,
        eta_rank,
    })
}
