//! Decomposition machinery at compatible points: the complementary projector
//! pair onto the tangent space of the constraint submanifold and the
//! constraint distribution, the pointwise coefficient solves for free and
//! constrained second-order fields, and projection of free solutions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    self, constraint_package_from_jet, energy_differential, jet, omega_stack_from_jet,
    ConstraintPackage, LagrangianJet,
};
use crate::linalg;
use crate::model::{vindex, FieldPoint, ModelSpec};

/// Default membership tolerance for "on the constraint submanifold".
pub const DEFAULT_FEAS_TOL: f64 = 1e-8;

/// Complementary projectors at one point: `p` maps onto the tangent space of
/// the constraint submanifold, `q = I - p` onto the constraint distribution.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl ProjectorPair {
    /// Apply the k-fold extension: project each component vector.
    pub fn project_components(&self, vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
        vectors.iter().map(|x| &self.p * x).collect()
    }
}

/// Second-order coefficients of a candidate k-vector field: row `A` holds the
/// flat-layout coefficients over the velocity block; the base components are
/// the velocities themselves and stay implicit.
#[derive(Debug, Clone)]
pub struct KVectorCoefficients {
    n: usize,
    k: usize,
    /// k rows by nk columns.
    pub accel: DMatrix<f64>,
}

impl KVectorCoefficients {
    pub fn new(n: usize, k: usize, accel: DMatrix<f64>) -> Self {
        debug_assert_eq!(accel.nrows(), k);
        debug_assert_eq!(accel.ncols(), n * k);
        KVectorCoefficients { n, k, accel }
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        KVectorCoefficients::new(n, k, DMatrix::zeros(k, n * k))
    }

    /// Full tangent vectors `(v_A | accel_A)`, one per direction.
    pub fn assemble(&self, w: &FieldPoint) -> Vec<DVector<f64>> {
        let n = self.n;
        let nk = n * self.k;
        let flat = w.flatten();
        (0..self.k)
            .map(|a| {
                let mut x = DVector::zeros(n + nk);
                for i in 0..n {
                    x[i] = flat[n + vindex(n, i, a)];
                }
                x.rows_mut(n, nk).copy_from(&self.accel.row(a).transpose());
                x
            })
            .collect()
    }

    /// Largest asymmetry `|(xi_A)^i_B - (xi_B)^i_A|`; recorded, not enforced.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.k {
            for b in 0..self.k {
                for i in 0..self.n {
                    let d =
                        (self.accel[(a, vindex(self.n, i, b))] - self.accel[(b, vindex(self.n, i, a))]).abs();
                    worst = worst.max(d);
                }
            }
        }
        worst
    }

    /// For mechanics (`k = 1`): the acceleration vector.
    pub fn accel_k1(&self) -> DVector<f64> {
        debug_assert_eq!(self.k, 1);
        self.accel.row(0).transpose()
    }
}

/// Lagrange multipliers, one per constraint and direction.
#[derive(Debug, Clone)]
pub struct Multipliers {
    /// m rows by k columns.
    pub lambda: DMatrix<f64>,
}

impl Multipliers {
    pub fn zeros(m: usize, k: usize) -> Self {
        Multipliers {
            lambda: DMatrix::zeros(m, k),
        }
    }

    /// For mechanics (`k = 1`): the multiplier column.
    pub fn column_k1(&self) -> DVector<f64> {
        debug_assert_eq!(self.lambda.ncols(), 1);
        self.lambda.column(0).into_owned()
    }
}

/// The projector pair at a compatible point.
pub fn projectors(model: &ModelSpec, w: &FieldPoint) -> Result<ProjectorPair> {
    let j = jet(model, w)?;
    let pkg = constraint_package_from_jet(model, w, &j)?;
    projectors_from_package(model, &pkg)
}

pub fn projectors_from_package(
    model: &ModelSpec,
    pkg: &ConstraintPackage,
) -> Result<ProjectorPair> {
    let dim = model.dim();
    let n = model.n();
    let m = model.m();
    let cinv = pkg
        .compat_inverse
        .as_ref()
        .ok_or(Error::Incompatible {
            rcond: pkg.compat_rcond,
        })?;
    let mut q = DMatrix::zeros(dim, dim);
    for alpha in 0..m {
        let z = pkg.z_tangent(n, alpha);
        let zv = z.as_vector();
        for beta in 0..m {
            let c = cinv[(alpha, beta)];
            for r in 0..dim {
                for col in 0..dim {
                    q[(r, col)] += c * zv[r] * pkg.dphi[(beta, col)];
                }
            }
        }
    }
    let p = DMatrix::identity(dim, dim) - &q;
    Ok(ProjectorPair { p, q })
}

/// Right-hand side of the Euler-Lagrange coefficient rows:
/// `dL/dq_i - sum_{j,A} d2L/dq^j dv^i_A v^j_A`.
fn el_rhs(model: &ModelSpec, w: &FieldPoint, jet: &LagrangianJet) -> DVector<f64> {
    let n = model.n();
    let k = model.k();
    let flat = w.flatten();
    let mut rhs = jet.dldq.clone();
    for i in 0..n {
        let mut acc = 0.0;
        for a in 0..k {
            for j in 0..n {
                acc += jet.hess_qv[(j, vindex(n, i, a))] * flat[n + vindex(n, j, a)];
            }
        }
        rhs[i] -= acc;
    }
    rhs
}

// Symmetric acceleration parametrisation: unknowns are (j, {A <= B}) pairs;
// off-diagonal pairs carry a sqrt(2) scaling so the Euclidean norm of the
// parameter vector equals the Frobenius norm of the full coefficient array.
struct SymmetricParam {
    n: usize,
    k: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymmetricParam {
    fn new(n: usize, k: usize) -> Self {
        let mut pairs = Vec::new();
        for a in 0..k {
            for b in a..k {
                pairs.push((a, b));
            }
        }
        SymmetricParam { n, k, pairs }
    }

    fn len(&self) -> usize {
        self.n * self.pairs.len()
    }

    fn scale(&self, pair: usize) -> f64 {
        let (a, b) = self.pairs[pair];
        if a == b {
            1.0
        } else {
            std::f64::consts::SQRT_2
        }
    }

    fn col(&self, j: usize, pair: usize) -> usize {
        pair * self.n + j
    }

    /// Coefficient of parameter (j, pair) in the row contracted with
    /// `weight(A, flat v index)`, already including the scaling.
    fn expand(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let mut accel = DMatrix::zeros(self.k, self.n * self.k);
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            for j in 0..self.n {
                let value = params[self.col(j, p)] / self.scale(p);
                accel[(a, vindex(self.n, j, b))] = value;
                accel[(b, vindex(self.n, j, a))] = value;
            }
        }
        accel
    }
}

/// Free second-order coefficient solve. For `k = 1` the system is square and
/// solved exactly; for `k > 1` it is underdetermined and the returned
/// representative is the minimum-Frobenius-norm symmetric solution.
pub fn free_sopde(model: &ModelSpec, w: &FieldPoint) -> Result<KVectorCoefficients> {
    let j = jet(model, w)?;
    free_sopde_from_jet(model, w, &j)
}

pub fn free_sopde_from_jet(
    model: &ModelSpec,
    w: &FieldPoint,
    jet: &LagrangianJet,
) -> Result<KVectorCoefficients> {
    let n = model.n();
    let k = model.k();
    let rhs = el_rhs(model, w, jet);
    if k == 1 {
        let accel = linalg::solve_square(&jet.hess_vv, &rhs, "free second-order solve")?;
        return Ok(KVectorCoefficients::new(
            n,
            1,
            DMatrix::from_rows(&[accel.transpose()]),
        ));
    }
    let param = SymmetricParam::new(n, k);
    let mut design = DMatrix::zeros(n, param.len());
    for i in 0..n {
        for (p, &(a, b)) in param.pairs.iter().enumerate() {
            for j in 0..n {
                let mut c = jet.hess_vv[(vindex(n, i, a), vindex(n, j, b))];
                if a != b {
                    c += jet.hess_vv[(vindex(n, i, b), vindex(n, j, a))];
                }
                design[(i, param.col(j, p))] = c / param.scale(p);
            }
        }
    }
    let params = linalg::min_norm_solve(&design, &rhs)?;
    Ok(KVectorCoefficients::new(n, k, param.expand(&params)))
}

/// Constrained coefficient-and-multiplier solve at a point of the constraint
/// submanifold: Euler-Lagrange rows with reaction forcing plus tangency of
/// every direction. Square and exact for `k = 1`; minimum-norm least squares
/// over the symmetric coefficients and multipliers for `k > 1`.
pub fn constrained_sopde_multiplier(
    model: &ModelSpec,
    w: &FieldPoint,
) -> Result<(KVectorCoefficients, Multipliers)> {
    let j = jet(model, w)?;
    let pkg = constraint_package_from_jet(model, w, &j)?;
    let violation = pkg.max_violation();
    if violation > DEFAULT_FEAS_TOL {
        return Err(Error::OffManifold {
            max_phi: violation,
            tol: DEFAULT_FEAS_TOL,
        });
    }
    constrained_accel(model, w, &j, &pkg.dphi, &pkg.eta)
}

/// The augmented solve without the membership check; integrators call this at
/// intermediate stage points that sit slightly off the submanifold.
pub fn constrained_accel(
    model: &ModelSpec,
    w: &FieldPoint,
    jet: &LagrangianJet,
    dphi: &DMatrix<f64>,
    eta: &DMatrix<f64>,
) -> Result<(KVectorCoefficients, Multipliers)> {
    let n = model.n();
    let k = model.k();
    let nk = n * k;
    let m = model.m();
    if m == 0 {
        return Ok((free_sopde_from_jet(model, w, jet)?, Multipliers::zeros(0, k)));
    }
    let flat = w.flatten();
    let rhs_el = el_rhs(model, w, jet);
    let dphi_q = dphi.columns(0, n);
    let dphi_v = dphi.columns(n, nk);

    if k == 1 {
        // Square system in (accel, lambda).
        let size = n + m;
        let mut a = DMatrix::zeros(size, size);
        let mut b = DVector::zeros(size);
        a.view_mut((0, 0), (n, n)).copy_from(&jet.hess_vv);
        for i in 0..n {
            for alpha in 0..m {
                a[(i, n + alpha)] = eta[(alpha, i)];
            }
            b[i] = rhs_el[i];
        }
        for alpha in 0..m {
            for j in 0..n {
                a[(n + alpha, j)] = dphi_v[(alpha, j)];
            }
            let mut drift = 0.0;
            for j in 0..n {
                drift += dphi_q[(alpha, j)] * flat[n + j];
            }
            b[n + alpha] = -drift;
        }
        let sol = linalg::solve_square(&a, &b, "constrained second-order solve")?;
        let accel = DMatrix::from_rows(&[sol.rows(0, n).transpose()]);
        let lambda = DMatrix::from_iterator(m, 1, sol.rows(n, m).iter().copied());
        return Ok((
            KVectorCoefficients::new(n, 1, accel),
            Multipliers { lambda },
        ));
    }

    let param = SymmetricParam::new(n, k);
    let na = param.len();
    let cols = na + m * k;
    let rows = n + m * k;
    let mut design = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    // Euler-Lagrange rows.
    for i in 0..n {
        for (p, &(a, b)) in param.pairs.iter().enumerate() {
            for j in 0..n {
                let mut c = jet.hess_vv[(vindex(n, i, a), vindex(n, j, b))];
                if a != b {
                    c += jet.hess_vv[(vindex(n, i, b), vindex(n, j, a))];
                }
                design[(i, param.col(j, p))] = c / param.scale(p);
            }
        }
        for alpha in 0..m {
            for b in 0..k {
                design[(i, na + alpha * k + b)] = eta[(alpha, vindex(n, i, b))];
            }
        }
        rhs[i] = rhs_el[i];
    }
    // Tangency rows: direction A annihilates every constraint differential.
    for alpha in 0..m {
        for a_dir in 0..k {
            let r = n + alpha * k + a_dir;
            for (p, &(a, b)) in param.pairs.iter().enumerate() {
                for j in 0..n {
                    // The pair {a, b} feeds this row only through the slots
                    // it shares with the row's direction.
                    let mut c = 0.0;
                    if a == a_dir {
                        c += dphi_v[(alpha, vindex(n, j, b))];
                    }
                    if b == a_dir && a != b {
                        c += dphi_v[(alpha, vindex(n, j, a))];
                    }
                    design[(r, param.col(j, p))] = c / param.scale(p);
                }
            }
            let mut drift = 0.0;
            for j in 0..n {
                drift += dphi_q[(alpha, j)] * flat[n + vindex(n, j, a_dir)];
            }
            rhs[r] = -drift;
        }
    }
    let sol = linalg::min_norm_solve(&design, &rhs)?;
    let accel = param.expand(&sol.rows(0, na).into_owned());
    let mut lambda = DMatrix::zeros(m, k);
    for alpha in 0..m {
        for b in 0..k {
            lambda[(alpha, b)] = sol[na + alpha * k + b];
        }
    }
    Ok((
        KVectorCoefficients::new(n, k, accel),
        Multipliers { lambda },
    ))
}

/// Project the free solution onto the tangent space of the constraint
/// submanifold; the base blocks are untouched because the constraint
/// distribution is vertical, so the result is again second-order.
pub fn project_free_solution(model: &ModelSpec, w: &FieldPoint) -> Result<KVectorCoefficients> {
    let j = jet(model, w)?;
    let pkg = constraint_package_from_jet(model, w, &j)?;
    let free = free_sopde_from_jet(model, w, &j)?;
    let pair = projectors_from_package(model, &pkg)?;
    let n = model.n();
    let k = model.k();
    let nk = n * k;
    let projected = pair.project_components(&free.assemble(w));
    let mut accel = DMatrix::zeros(k, nk);
    for (a, x) in projected.iter().enumerate() {
        accel.set_row(a, &x.rows(n, nk).transpose());
    }
    Ok(KVectorCoefficients::new(n, k, accel))
}

/// Euler-Lagrange residual rows for given coefficients and multipliers:
/// zero exactly when `(accel, lambda)` solves the constrained equations.
pub fn el_residual(
    model: &ModelSpec,
    w: &FieldPoint,
    jet: &LagrangianJet,
    eta: &DMatrix<f64>,
    kvec: &KVectorCoefficients,
    multipliers: &Multipliers,
) -> DVector<f64> {
    let n = model.n();
    let k = model.k();
    let m = model.m();
    let mut res = -el_rhs(model, w, jet);
    for i in 0..n {
        for a in 0..k {
            for b in 0..k {
                for j in 0..n {
                    res[i] += jet.hess_vv[(vindex(n, i, a), vindex(n, j, b))]
                        * kvec.accel[(a, vindex(n, j, b))];
                }
            }
        }
        for alpha in 0..m {
            for b in 0..k {
                res[i] += multipliers.lambda[(alpha, b)] * eta[(alpha, vindex(n, i, b))];
            }
        }
    }
    res
}

/// Defect covector of a candidate k-vector against the geometric field
/// equation: the summed contraction into the form stack minus the energy
/// differential. For solutions it lies in the span of the reaction forms.
pub fn defect_covector(
    model: &ModelSpec,
    w: &FieldPoint,
    jet: &LagrangianJet,
    kvec: &KVectorCoefficients,
) -> DVector<f64> {
    let st = omega_stack_from_jet(model, jet);
    let de = energy_differential(model, w, jet);
    st.contract(&kvec.assemble(w)) - de
}

/// Embed the reaction forms as covectors supported on the base block:
/// columns `s_(alpha, B)` with q-components `eta^B_alpha` and zero velocity
/// components.
pub fn reaction_span(model: &ModelSpec, eta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.n();
    let k = model.k();
    let m = model.m();
    let dim = model.dim();
    let mut span = DMatrix::zeros(dim, m * k);
    for alpha in 0..m {
        for b in 0..k {
            for i in 0..n {
                span[(i, alpha * k + b)] = eta[(alpha, vindex(n, i, b))];
            }
        }
    }
    span
}

/// Norm of the component of `covector` orthogonal to the reaction span.
pub fn offspan_norm(model: &ModelSpec, eta: &DMatrix<f64>, covector: &DVector<f64>) -> f64 {
    let span = reaction_span(model, eta);
    let basis = linalg::column_span(&span);
    let resid = covector - &basis * (basis.transpose() * covector);
    resid.norm()
}

/// Multipliers recovered a posteriori from the defect of a projected
/// solution, by least squares against the embedded reaction forms.
pub fn recover_multipliers(
    model: &ModelSpec,
    w: &FieldPoint,
    kvec: &KVectorCoefficients,
) -> Result<Multipliers> {
    let j = jet(model, w)?;
    let eta = geometry::reaction_forms(model, w)?;
    let defect = defect_covector(model, w, &j, kvec);
    let span = reaction_span(model, &eta);
    let coeffs = linalg::min_norm_solve(&span, &defect)?;
    // The geometric defect of a solution equals + lambda . eta with the same
    // multipliers that force the Euler-Lagrange rows.
    let m = model.m();
    let k = model.k();
    let mut lambda = DMatrix::zeros(m, k);
    for alpha in 0..m {
        for b in 0..k {
            lambda[(alpha, b)] = coeffs[alpha * k + b];
        }
    }
    Ok(Multipliers { lambda })
}

/// Newton projection of a seed point onto the constraint submanifold,
/// correcting velocities only (minimum-norm update per step).
pub fn feasible_point(model: &ModelSpec, seed: &FieldPoint, tol: f64) -> Result<FieldPoint> {
    let n = model.n();
    let nk = n * model.k();
    let m = model.m();
    let mut w = seed.clone();
    if m == 0 {
        return Ok(w);
    }
    for _ in 0..50 {
        let (phi, dphi) = geometry::constraint_jet(model, &w)?;
        let max = phi.amax();
        if max <= tol {
            return Ok(w);
        }
        let jv = dphi.columns(n, nk).into_owned();
        let gram = &jv * jv.transpose();
        let coeff = linalg::solve_square(&gram, &phi, "feasibility Newton step")?;
        let delta = jv.transpose() * coeff;
        let mut flat = w.flatten();
        for r in 0..nk {
            flat[n + r] -= delta[r];
        }
        w = FieldPoint::from_flat(model.n(), model.k(), &flat)?;
    }
    let (phi, _) = geometry::constraint_jet(model, &w)?;
    Err(Error::NoConvergence {
        context: "feasibility projection".into(),
        iterations: 50,
        residual: phi.amax(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, load_model_str};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn point(n: usize, k: usize, vals: &[f64]) -> FieldPoint {
        FieldPoint::from_flat(n, k, &DVector::from_row_slice(vals)).unwrap()
    }

    fn random_feasible(model: &ModelSpec, rng: &mut ChaCha8Rng) -> FieldPoint {
        loop {
            let dim = model.dim();
            let flat = DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-1.0..1.0)));
            let seed = FieldPoint::from_flat(model.n(), model.k(), &flat).unwrap();
            if let Ok(w) = feasible_point(model, &seed, 1e-12) {
                return w;
            }
        }
    }

    #[test]
    fn no_constraints_gives_identity_projector() {
        let m = builtin("free_particle").unwrap();
        let w = point(2, 1, &[0.0, 0.0, 1.0, 2.0]);
        let pair = projectors(&m, &w).unwrap();
        assert_abs_diff_eq!(
            (pair.p.clone() - DMatrix::identity(4, 4)).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(pair.q.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn single_velocity_constraint_projector_is_matrix_unit() {
        let m = load_model_str(
            r#"{"name":"s","n":2,"k":1,
                "lagrangian":"0.5*(v1_1^2+v2_1^2)",
                "constraints":["v1_1"]}"#,
        )
        .unwrap();
        let w = point(2, 1, &[0.0, 0.0, 0.0, 0.7]);
        let pair = projectors(&m, &w).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        expected[(2, 2)] = 1.0;
        assert_abs_diff_eq!((pair.q.clone() - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn projector_algebra_on_fixtures() {
        let models = [builtin("knife_edge").unwrap(), builtin("flat_connection").unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for m in &models {
            for _ in 0..10 {
                let w = random_feasible(m, &mut rng);
                let pair = projectors(m, &w).unwrap();
                let dim = m.dim();
                let idem_p = (&pair.p * &pair.p - &pair.p).amax();
                let idem_q = (&pair.q * &pair.q - &pair.q).amax();
                let pq = (&pair.p * &pair.q).amax();
                let sum = (&pair.p + &pair.q - DMatrix::identity(dim, dim)).amax();
                assert!(idem_p < 1e-10, "P^2 = P: {idem_p}");
                assert!(idem_q < 1e-10, "Q^2 = Q: {idem_q}");
                assert!(pq < 1e-10, "PQ = 0: {pq}");
                assert!(sum < 1e-12, "P + Q = I: {sum}");
                assert_eq!(linalg::rank(&pair.q), m.m());
                assert_eq!(linalg::rank(&pair.p), dim - m.m());
            }
        }
    }

    #[test]
    fn free_solve_harmonic_acceleration() {
        let m = builtin("harmonic").unwrap();
        let w = point(1, 1, &[0.7, -0.3]);
        let kv = free_sopde(&m, &w).unwrap();
        assert_abs_diff_eq!(kv.accel_k1()[0], -0.7, epsilon = 1e-12);
    }

    #[test]
    fn free_solve_free_particle_is_zero() {
        let m = builtin("free_particle").unwrap();
        let w = point(2, 1, &[0.1, 0.2, 1.0, -2.0]);
        let kv = free_sopde(&m, &w).unwrap();
        assert_abs_diff_eq!(kv.accel.norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn free_solve_minimum_norm_k2() {
        // One field equation, (xi_1)^1_1 + (xi_2)^1_2 = 0; the minimum-norm
        // symmetric representative is identically zero.
        let m = load_model_str(
            r#"{"name":"f","n":1,"k":2,"lagrangian":"0.5*(v1_1^2+v1_2^2)"}"#,
        )
        .unwrap();
        let w = point(1, 2, &[0.3, 1.0, -1.0]);
        let kv = free_sopde(&m, &w).unwrap();
        assert_abs_diff_eq!(kv.accel.norm(), 0.0, epsilon = 1e-13);
        assert_eq!(kv.symmetry_defect(), 0.0);
    }

    #[test]
    fn constrained_solve_trivial_on_satisfied_constraint() {
        let m = load_model_str(
            r#"{"name":"s","n":2,"k":1,
                "lagrangian":"0.5*(v1_1^2+v2_1^2)",
                "constraints":["v1_1"]}"#,
        )
        .unwrap();
        let w = point(2, 1, &[0.0, 0.0, 0.0, 0.9]);
        let (kv, mult) = constrained_sopde_multiplier(&m, &w).unwrap();
        assert_abs_diff_eq!(kv.accel.norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mult.lambda.norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn constrained_reduces_to_free_without_constraints() {
        let m = builtin("harmonic").unwrap();
        let w = point(1, 1, &[0.4, 0.9]);
        let (kv, mult) = constrained_sopde_multiplier(&m, &w).unwrap();
        let free = free_sopde(&m, &w).unwrap();
        assert_abs_diff_eq!((kv.accel - free.accel).norm(), 0.0, epsilon = 1e-14);
        assert_eq!(mult.lambda.len(), 0);
    }

    #[test]
    fn off_manifold_point_rejected() {
        let m = builtin("knife_edge").unwrap();
        let w = point(3, 1, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // phi = sin(0)*0 - cos(0)*1 = -1.
        assert!(matches!(
            constrained_sopde_multiplier(&m, &w),
            Err(Error::OffManifold { .. })
        ));
    }

    #[test]
    fn knife_edge_tangency_and_projection_agreement() {
        let m = builtin("knife_edge").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_feasible(&m, &mut rng);
            let (kv, mult) = constrained_sopde_multiplier(&m, &w).unwrap();
            let projected = project_free_solution(&m, &w).unwrap();
            // Both characterizations produce the same accelerations.
            assert!(
                (kv.accel.clone() - projected.accel.clone()).amax() < 1e-10,
                "multiplier vs projector route"
            );
            // Tangency: the projected vector annihilates the constraint
            // differential.
            let j = jet(&m, &w).unwrap();
            let pkg = constraint_package_from_jet(&m, &w, &j).unwrap();
            for x in projected.assemble(&w) {
                let t = (pkg.dphi.clone() * &x).amax();
                assert!(t < 1e-10, "tangency {t}");
            }
            // Multiplier consistency through the Euler-Lagrange rows.
            let res = el_residual(&m, &w, &j, &pkg.eta, &kv, &mult);
            assert!(res.amax() < 1e-10, "EL residual {}", res.amax());
            // Recovered multipliers match the solved ones.
            let rec = recover_multipliers(&m, &w, &projected).unwrap();
            assert!((rec.lambda - mult.lambda).amax() < 1e-9);
        }
    }

    #[test]
    fn projection_theorem_defect_in_reaction_span() {
        let m = builtin("knife_edge").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let w = random_feasible(&m, &mut rng);
            let j = jet(&m, &w).unwrap();
            let eta = geometry::reaction_forms(&m, &w).unwrap();
            let projected = project_free_solution(&m, &w).unwrap();
            let defect = defect_covector(&m, &w, &j, &projected);
            let off = offspan_norm(&m, &eta, &defect);
            assert!(off < 1e-9, "off-span component {off}");
        }
    }

    #[test]
    fn dalembert_pairing_vanishes_on_admissible_lifts() {
        // Variation fields annihilated by the reaction forms do no work
        // against the Euler-Lagrange defect of the constrained solution.
        let m = builtin("knife_edge").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let w = random_feasible(&m, &mut rng);
            let j = jet(&m, &w).unwrap();
            let projected = project_free_solution(&m, &w).unwrap();
            let defect = defect_covector(&m, &w, &j, &projected);
            // Admissible base field: Z = f(q) (cos q3, sin q3, 0) + g(q) e3
            // satisfies eta(Z) = 0; complete lift has dv-block dZ/dq . v_A.
            let flat = w.flatten();
            let (q1, q3) = (flat[0], flat[2]);
            let f = 0.5 + q1 * q1;
            let g = (2.0 * q1).sin();
            let z = [f * q3.cos(), f * q3.sin(), g];
            // dZ/dq rows.
            let dz = [
                [2.0 * q1 * q3.cos(), 0.0, -f * q3.sin()],
                [2.0 * q1 * q3.sin(), 0.0, f * q3.cos()],
                [2.0 * (2.0 * q1).cos(), 0.0, 0.0],
            ];
            let mut lift = DVector::zeros(6);
            for i in 0..3 {
                lift[i] = z[i];
                let mut dv = 0.0;
                for jq in 0..3 {
                    dv += dz[i][jq] * flat[3 + jq];
                }
                lift[3 + i] = dv;
            }
            let pairing = defect.dot(&lift).abs();
            assert!(pairing < 1e-9, "d'Alembert pairing {pairing}");
        }
    }

    #[test]
    fn feasible_point_converges_on_knife_edge() {
        let m = builtin("knife_edge").unwrap();
        let seed = point(3, 1, &[0.3, -0.8, 1.1, 0.5, 0.5, 0.2]);
        let w = feasible_point(&m, &seed, 1e-12).unwrap();
        let phi = m.constraint_values(&w).unwrap();
        assert!(phi.amax() < 1e-12);
        // q untouched by the velocity-only Newton.
        assert_abs_diff_eq!((w.q() - seed.q()).norm(), 0.0, epsilon = 1e-15);
    }
}
