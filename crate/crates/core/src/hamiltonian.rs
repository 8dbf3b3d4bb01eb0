//! Covelocity-side machinery: the fiber-derivative (Legendre) map, its Newton
//! inverse, the Hamiltonian, and residuals of the transported equations on
//! mechanics solutions.
//!
//! The Hamiltonian is never formed symbolically; all of its derivatives are
//! central finite differences through the Newton inverse, with warm starts
//! along trajectories.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::FieldSolution;
use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg;
use crate::model::{vindex, FieldPoint, ModelSpec};

/// Convergence target for the Newton inversion.
pub const NEWTON_TOL: f64 = 1e-13;
/// Acceptance bound on the final Newton residual.
pub const INVERSE_TOL: f64 = 1e-10;
/// Step for finite differences of the Hamiltonian.
pub const FD_STEP: f64 = 1e-6;

/// A point of the covelocity bundle: base coordinates plus k momentum
/// covectors, flattened like the velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint {
    pub q: DVector<f64>,
    /// `n x k`; column `A` holds the direction-`A` momenta.
    pub p: DMatrix<f64>,
}

impl CotangentPoint {
    pub fn flatten_p(&self) -> DVector<f64> {
        DVector::from_column_slice(self.p.as_slice())
    }
}

/// Fiber derivative: momenta are the velocity gradient of the Lagrangian.
pub fn legendre(model: &ModelSpec, w: &FieldPoint) -> Result<CotangentPoint> {
    let dldv = geometry::momenta(model, w)?;
    Ok(CotangentPoint {
        q: w.q().clone(),
        p: DMatrix::from_column_slice(model.n(), model.k(), dldv.as_slice()),
    })
}

/// Newton inversion of the fiber derivative at fixed base point: solve
/// `dL/dv(q, v) = p` for `v`, using the velocity Hessian as Jacobian.
pub fn legendre_inverse(
    model: &ModelSpec,
    cp: &CotangentPoint,
    guess: Option<&FieldPoint>,
) -> Result<FieldPoint> {
    let n = model.n();
    let k = model.k();
    let target = cp.flatten_p();
    let mut w = match guess {
        Some(g) => FieldPoint::new(cp.q.clone(), g.v().clone())?,
        None => FieldPoint::new(cp.q.clone(), DMatrix::zeros(n, k))?,
    };
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let jet = geometry::jet(model, &w)?;
        let defect = &jet.dldv - &target;
        residual = defect.amax();
        if residual <= NEWTON_TOL {
            return Ok(w);
        }
        let step = jet.hess_vv.clone().lu().solve(&defect).ok_or_else(|| {
            Error::SingularSystem {
                context: format!(
                    "Legendre inversion Jacobian at q = {:?}",
                    cp.q.as_slice()
                ),
                rcond: linalg::rcond(&jet.hess_vv),
            }
        })?;
        let mut v = w.v().clone();
        for a in 0..k {
            for i in 0..n {
                v[(i, a)] -= step[vindex(n, i, a)];
            }
        }
        w = FieldPoint::new(cp.q.clone(), v)?;
    }
    if residual <= INVERSE_TOL {
        return Ok(w);
    }
    Err(Error::NoConvergence {
        context: format!("Legendre inversion at q = {:?}", cp.q.as_slice()),
        iterations: 50,
        residual,
    })
}

/// Hamiltonian at a covelocity point, as the energy through the inverse
/// fiber derivative. Both defining expressions are evaluated and must agree.
pub fn hamiltonian_value(
    model: &ModelSpec,
    cp: &CotangentPoint,
    guess: Option<&FieldPoint>,
) -> Result<f64> {
    let w = legendre_inverse(model, cp, guess)?;
    let energy = geometry::energy(model, &w)?;
    // Second route: v . p - L at the recovered velocities.
    let flat = w.flatten();
    let n = model.n();
    let nk = n * model.k();
    let value = model.eval_lagrangian::<f64>(flat.as_slice())?;
    let pairing = flat.rows(n, nk).dot(&cp.flatten_p()) - value;
    let difference = (energy - pairing).abs();
    if difference > 1e-10 {
        return Err(Error::Inconsistent {
            context: "hamiltonian value".into(),
            difference,
        });
    }
    Ok(energy)
}

/// Gradient of the Hamiltonian in the momenta by central differences,
/// warm-started from a known preimage.
pub fn hamiltonian_p_gradient(
    model: &ModelSpec,
    cp: &CotangentPoint,
    warm: &FieldPoint,
) -> Result<DVector<f64>> {
    let n = model.n();
    let k = model.k();
    let mut grad = DVector::zeros(n * k);
    for a in 0..k {
        for i in 0..n {
            let mut plus = cp.clone();
            plus.p[(i, a)] += FD_STEP;
            let mut minus = cp.clone();
            minus.p[(i, a)] -= FD_STEP;
            let hp = hamiltonian_value(model, &plus, Some(warm))?;
            let hm = hamiltonian_value(model, &minus, Some(warm))?;
            grad[vindex(n, i, a)] = (hp - hm) / (2.0 * FD_STEP);
        }
    }
    Ok(grad)
}

/// Gradient of the Hamiltonian in the base coordinates by central
/// differences.
pub fn hamiltonian_q_gradient(
    model: &ModelSpec,
    cp: &CotangentPoint,
    warm: &FieldPoint,
) -> Result<DVector<f64>> {
    let n = model.n();
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        let mut plus = cp.clone();
        plus.q[i] += FD_STEP;
        let mut minus = cp.clone();
        minus.q[i] -= FD_STEP;
        let hp = hamiltonian_value(model, &plus, Some(warm))?;
        let hm = hamiltonian_value(model, &minus, Some(warm))?;
        grad[i] = (hp - hm) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

/// Largest deviation in the transport identity for the constraint gradients:
/// the momentum gradient of the transported constraints, contracted with the
/// velocity Hessian, recovers the velocity gradient of the originals.
pub fn transport_identity(model: &ModelSpec, w: &FieldPoint) -> Result<f64> {
    let n = model.n();
    let k = model.k();
    let nk = n * k;
    let m = model.m();
    let cp = legendre(model, w)?;
    let jet = geometry::jet(model, w)?;
    let (_, dphi) = geometry::constraint_jet(model, w)?;
    let dphi_v = dphi.columns(n, nk).into_owned();
    let mut worst = 0.0f64;
    for alpha in 0..m {
        // dPsi_alpha/dp by finite differences through the inverse map.
        let mut dpsi = DVector::zeros(nk);
        for r in 0..nk {
            let (i, a) = (r % n, r / n);
            let mut plus = cp.clone();
            plus.p[(i, a)] += FD_STEP;
            let mut minus = cp.clone();
            minus.p[(i, a)] -= FD_STEP;
            let wp = legendre_inverse(model, &plus, Some(w))?;
            let wm = legendre_inverse(model, &minus, Some(w))?;
            let pp = model.eval_constraint::<f64>(alpha, wp.flatten().as_slice())?;
            let pm = model.eval_constraint::<f64>(alpha, wm.flatten().as_slice())?;
            dpsi[r] = (pp - pm) / (2.0 * FD_STEP);
        }
        // Contract with the velocity Hessian (the inverse of the momentum
        // Hessian of H) and compare with dPhi/dv.
        let recovered = jet.hess_vv.transpose() * dpsi;
        for r in 0..nk {
            worst = worst.max((recovered[r] - dphi_v[(alpha, r)]).abs());
        }
    }
    Ok(worst)
}

/// Residuals of the transported equations along a mechanics solution. The
/// velocity equation compares the momentum gradient of H with the stored
/// velocities; the force equation balances the base gradient of H against
/// the reaction term and the time derivative of the momenta.
#[derive(Debug, Clone)]
pub struct HamiltonResidualReport {
    /// Interior time values.
    pub times: Vec<f64>,
    /// Per interior node, per velocity slot.
    pub first: Vec<DVector<f64>>,
    /// Per interior node, per base slot.
    pub second: Vec<DVector<f64>>,
    pub first_max: f64,
    pub second_max: f64,
}

pub fn hamilton_residual(model: &ModelSpec, sol: &FieldSolution) -> Result<HamiltonResidualReport> {
    if model.k() != 1 || sol.k != 1 {
        return Err(Error::Config(
            "transported-equation residuals are computed on mechanics solutions".into(),
        ));
    }
    if sol.times.len() < 3 {
        return Err(Error::Config(
            "hamiltonian residual needs at least three time levels".into(),
        ));
    }
    let n = model.n();
    let m = model.m();
    let nt = sol.times.len();
    let h = sol.times[1] - sol.times[0];

    // Momenta along the trajectory.
    let mut momenta = Vec::with_capacity(nt);
    for t in 0..nt {
        momenta.push(legendre(model, &sol.states[t][0])?);
    }

    let mut times = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut first_max = 0.0f64;
    let mut second_max = 0.0f64;
    for t in 1..nt - 1 {
        let w = &sol.states[t][0];
        let cp = &momenta[t];
        let dh_dp = hamiltonian_p_gradient(model, cp, w)?;
        let dh_dq = hamiltonian_q_gradient(model, cp, w)?;
        let flat = w.flatten();

        let mut r1 = DVector::zeros(n);
        for i in 0..n {
            r1[i] = dh_dp[i] - flat[n + i];
        }

        let (_, dphi) = geometry::constraint_jet(model, w)?;
        let lambda = &sol.multipliers[t][0];
        let mut r2 = DVector::zeros(n);
        for i in 0..n {
            let dp_dt = (momenta[t + 1].p[(i, 0)] - momenta[t - 1].p[(i, 0)]) / (2.0 * h);
            let mut reaction = 0.0;
            for alpha in 0..m {
                reaction += lambda[(alpha, 0)] * dphi[(alpha, n + i)];
            }
            r2[i] = dh_dq[i] + reaction + dp_dt;
        }

        first_max = first_max.max(r1.amax());
        second_max = second_max.max(r2.amax());
        times.push(sol.times[t]);
        first.push(r1);
        second.push(r2);
    }
    Ok(HamiltonResidualReport {
        times,
        first,
        second,
        first_max,
        second_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_k1, BoundaryCondition, SimConfig};
    use crate::expr::ExprAst;
    use crate::model::{builtin, load_model_str};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_point(model: &ModelSpec, rng: &mut ChaCha8Rng) -> FieldPoint {
        let dim = model.dim();
        let flat = DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-1.0..1.0)));
        FieldPoint::from_flat(model.n(), model.k(), &flat).unwrap()
    }

    #[test]
    fn free_particle_momenta_equal_velocities() {
        let m = builtin("free_particle").unwrap();
        let w = FieldPoint::from_flat(2, 1, &DVector::from_row_slice(&[0.1, 0.2, 1.5, -0.5]))
            .unwrap();
        let cp = legendre(&m, &w).unwrap();
        assert_abs_diff_eq!((cp.p.column(0) - w.v().column(0)).norm(), 0.0, epsilon = 1e-14);
        let back = legendre_inverse(&m, &cp, None).unwrap();
        assert_abs_diff_eq!((back.v() - w.v()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nonlinear_fiber_map_round_trips() {
        // p = v + v^3 is strictly monotone; Newton needs real iterations.
        let m = load_model_str(
            r#"{"name":"quartic","n":1,"k":1,"lagrangian":"0.5*v1_1^2 + 0.25*v1_1^4"}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = random_point(&m, &mut rng);
            let cp = legendre(&m, &w).unwrap();
            let back = legendre_inverse(&m, &cp, None).unwrap();
            let dist = (back.flatten() - w.flatten()).norm();
            assert!(dist < 1e-10, "round trip distance {dist}");
        }
    }

    #[test]
    fn hamiltonian_matches_energy_on_fiber_image() {
        let models = [
            builtin("free_particle").unwrap(),
            builtin("harmonic").unwrap(),
            builtin("knife_edge").unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in &models {
            for _ in 0..20 {
                let w = random_point(m, &mut rng);
                let cp = legendre(m, &w).unwrap();
                let h = hamiltonian_value(m, &cp, Some(&w)).unwrap();
                let e = geometry::energy(m, &w).unwrap();
                assert_abs_diff_eq!(h, e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn harmonic_hamiltonian_closed_form() {
        let m = builtin("harmonic").unwrap();
        let cp = CotangentPoint {
            q: DVector::from_row_slice(&[0.7]),
            p: DMatrix::from_row_slice(1, 1, &[1.3]),
        };
        let h = hamiltonian_value(&m, &cp, None).unwrap();
        assert_abs_diff_eq!(h, 0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_fiber_map_reports_singular_jacobian() {
        let m = builtin("cosserat").unwrap();
        let w = FieldPoint::zeros(7, 2);
        let cp = legendre(&m, &w).unwrap();
        assert!(matches!(
            legendre_inverse(&m, &cp, Some(&w)),
            Err(Error::SingularSystem { .. })
        ));
    }

    fn config_k1(t_end: f64, h: f64, q: &[f64], v: &[f64]) -> SimConfig {
        SimConfig {
            t_end,
            h,
            nodes: 1,
            length: 0.0,
            boundary: BoundaryCondition::Free,
            initial_q: q.iter().map(|&x| ExprAst::Const(x)).collect(),
            initial_v: v.iter().map(|&x| ExprAst::Const(x)).collect(),
            projection_every: 1,
            drift_tol: 1e-6,
            feas_tol: 1e-8,
        }
    }

    #[test]
    fn free_particle_residuals_vanish() {
        let m = builtin("free_particle").unwrap();
        let sol = integrate_k1(&m, &config_k1(0.5, 1e-2, &[0.0, 0.0], &[1.0, 2.0])).unwrap();
        let rep = hamilton_residual(&m, &sol).unwrap();
        assert!(rep.first_max < 1e-8, "first {}", rep.first_max);
        assert!(rep.second_max < 1e-8, "second {}", rep.second_max);
    }

    #[test]
    fn harmonic_residuals_at_grid_order() {
        let m = builtin("harmonic").unwrap();
        let sol = integrate_k1(&m, &config_k1(1.0, 1e-3, &[1.0], &[0.0])).unwrap();
        let rep = hamilton_residual(&m, &sol).unwrap();
        assert!(rep.first_max < 1e-8, "first {}", rep.first_max);
        // The force equation carries the grid derivative of p.
        assert!(rep.second_max < 1e-5, "second {}", rep.second_max);
    }

    #[test]
    fn knife_edge_transport() {
        let m = builtin("knife_edge").unwrap();
        let sol =
            integrate_k1(&m, &config_k1(1.0, 1e-3, &[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0])).unwrap();
        let rep = hamilton_residual(&m, &sol).unwrap();
        assert!(rep.first_max < 1e-8, "first {}", rep.first_max);
        assert!(rep.second_max < 1e-5, "second {}", rep.second_max);
        // The constraint-gradient transport identity holds at FD accuracy.
        let worst = transport_identity(&m, &sol.states[10][0]).unwrap();
        assert!(worst < 1e-6, "transport identity {worst}");
    }
}
