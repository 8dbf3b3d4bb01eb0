//! Mechanics integration (`k = 1`): RK4 with stage accelerations from the
//! constrained multiplier solve and post-step velocity projection.

use nalgebra::{DMatrix, DVector};

use super::{FieldSolution, SimConfig, StepDiagnostics};
use crate::error::{Error, Result};
use crate::geometry;
use crate::model::{FieldPoint, ModelSpec};
use crate::projector;

struct StageEval {
    accel: DVector<f64>,
    lambda: DVector<f64>,
}

fn stage(model: &ModelSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<StageEval> {
    let w = FieldPoint::new(q.clone(), DMatrix::from_column_slice(q.len(), 1, v.as_slice()))?;
    let jet = geometry::jet(model, &w)?;
    let (_, dphi) = geometry::constraint_jet(model, &w)?;
    let eta = geometry::reaction_forms(model, &w)?;
    let (kvec, mult) = projector::constrained_accel(model, &w, &jet, &dphi, &eta)?;
    Ok(StageEval {
        accel: kvec.accel_k1(),
        lambda: if model.m() > 0 {
            mult.column_k1()
        } else {
            DVector::zeros(0)
        },
    })
}

fn diagnostics(
    model: &ModelSpec,
    time: f64,
    w: &FieldPoint,
) -> Result<StepDiagnostics> {
    let energy = geometry::energy(model, w)?;
    let phi = model.constraint_values(w)?;
    let flat = w.flatten();
    let dldv = geometry::momenta(model, w)?;
    let momentum = (0..model.symmetries().len())
        .map(|sec| {
            let mut j = DVector::zeros(model.k());
            for a in 0..model.k() {
                for i in 0..model.n() {
                    let xi = model.eval_section_component::<f64>(sec, i, flat.as_slice())?;
                    j[a] += dldv[crate::model::vindex(model.n(), i, a)] * xi;
                }
            }
            Ok(j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepDiagnostics {
        time,
        energy,
        phi_max: phi.amax(),
        momentum,
    })
}

pub fn integrate_k1(model: &ModelSpec, config: &SimConfig) -> Result<FieldSolution> {
    if model.k() != 1 {
        return Err(Error::Config("integrate_k1 requires a k = 1 model".into()));
    }
    let n = model.n();
    let q0: Vec<f64> = config
        .initial_q
        .iter()
        .map(|e| config.eval_profile(model, e, 0.0))
        .collect::<Result<_>>()?;
    let v0: Vec<f64> = config
        .initial_v
        .iter()
        .map(|e| config.eval_profile(model, e, 0.0))
        .collect::<Result<_>>()?;
    let mut q = DVector::from_vec(q0);
    let mut v = DVector::from_vec(v0);

    let w0 = FieldPoint::new(q.clone(), DMatrix::from_column_slice(n, 1, v.as_slice()))?;
    let phi0 = model.constraint_values(&w0)?;
    if phi0.amax() > config.feas_tol {
        return Err(Error::Config(format!(
            "initial data violates the constraints: max |phi| = {:.3e} > {:.3e}",
            phi0.amax(),
            config.feas_tol
        )));
    }

    let steps = (config.t_end / config.h).round() as usize;
    if steps == 0 {
        return Err(Error::Config("t_end shorter than one step".into()));
    }
    let h = config.h;

    let mut sol = FieldSolution {
        n,
        k: 1,
        times: Vec::with_capacity(steps + 1),
        space: vec![0.0],
        states: Vec::with_capacity(steps + 1),
        multipliers: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps + 1),
        node_energy: Vec::with_capacity(steps + 1),
        node_phi: Vec::with_capacity(steps + 1),
        aborted: None,
    };

    let record = |time: f64,
                  q: &DVector<f64>,
                  v: &DVector<f64>,
                  sol: &mut FieldSolution|
     -> Result<()> {
        let w = FieldPoint::new(q.clone(), DMatrix::from_column_slice(n, 1, v.as_slice()))?;
        let st = stage(model, q, v)?;
        let diag = diagnostics(model, time, &w)?;
        sol.times.push(time);
        sol.node_energy.push(vec![diag.energy]);
        sol.node_phi.push(vec![diag.phi_max]);
        sol.diagnostics.push(diag);
        sol.states.push(vec![w]);
        sol.multipliers
            .push(vec![DMatrix::from_column_slice(model.m(), 1, st.lambda.as_slice())]);
        Ok(())
    };

    record(0.0, &q, &v, &mut sol)?;

    for step in 1..=steps {
        let t = (step - 1) as f64 * h;
        let result = (|| -> Result<(DVector<f64>, DVector<f64>)> {
            let k1 = stage(model, &q, &v)?;
            let k2 = stage(model, &(&q + &v * (h / 2.0)), &(&v + &k1.accel * (h / 2.0)))?;
            let v2 = &v + &k1.accel * (h / 2.0);
            let k3 = stage(model, &(&q + &v2 * (h / 2.0)), &(&v + &k2.accel * (h / 2.0)))?;
            let v3 = &v + &k2.accel * (h / 2.0);
            let k4 = stage(model, &(&q + &v3 * h), &(&v + &k3.accel * h))?;
            let qdot =
                (&v + (&v + &k1.accel * (h / 2.0)) * 2.0 + (&v + &k2.accel * (h / 2.0)) * 2.0
                    + (&v + &k3.accel * h))
                    / 6.0;
            let vdot = (&k1.accel + &k2.accel * 2.0 + &k3.accel * 2.0 + &k4.accel) / 6.0;
            Ok((&q + qdot * h, &v + vdot * h))
        })();
        let (qn, vn) = match result {
            Ok(x) => x,
            Err(e) => {
                sol.aborted = Some(format!("t = {t}: {e}"));
                return Ok(sol);
            }
        };
        q = qn;
        v = vn;

        // Post-step velocity projection onto the constraint surface.
        if model.m() > 0
            && config.projection_every > 0
            && step % config.projection_every == 0
        {
            let w = FieldPoint::new(q.clone(), DMatrix::from_column_slice(n, 1, v.as_slice()))?;
            match projector::feasible_point(model, &w, 1e-13) {
                Ok(projected) => {
                    v = projected.v().column(0).into_owned();
                }
                Err(e) => {
                    sol.aborted = Some(format!("t = {}: projection failed: {e}", step as f64 * h));
                    return Ok(sol);
                }
            }
        }

        if let Err(e) = record(step as f64 * h, &q, &v, &mut sol) {
            sol.aborted = Some(format!("t = {}: {e}", step as f64 * h));
            return Ok(sol);
        }
        let phi_max = sol.diagnostics.last().unwrap().phi_max;
        if phi_max > config.drift_tol {
            sol.aborted = Some(format!(
                "t = {}: constraint drift {phi_max:.3e} exceeds tolerance {:.3e}",
                step as f64 * h,
                config.drift_tol
            ));
            return Ok(sol);
        }
    }
    Ok(sol)
}
