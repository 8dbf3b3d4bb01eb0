//! Method-of-lines integration of the rolling-rod field equations (`k = 2`,
//! direction 1 = time, direction 2 = arc length).
//!
//! The integrator accepts models whose non-evolving fields can be eliminated
//! algebraically in the rod pattern: fields 4 and 5 are the spatial
//! derivatives of the centerline, fields 6 and 7 carry the bending response
//! `-K` times their second spatial derivatives. Anything else is rejected
//! with a diagnostic. Spatial derivatives are second-order central
//! differences (one-sided at free ends, wrapped under periodic conditions);
//! each step performs one linear solve over all nodes for the accelerations
//! and multipliers, block-diagonal because the differentiated constraints
//! couple neighbours only through already-known state stencils.

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};

use super::{BoundaryCondition, FieldSolution, SimConfig, StepDiagnostics};
use crate::error::{Error, Result};
use crate::model::{builtin, FieldPoint, ModelSpec};

#[derive(Debug, Clone, Copy)]
struct RodParams {
    rho: f64,
    alpha: f64,
    beta: f64,
    stiffness: f64,
    radius: f64,
}

/// Structural match against the rod builtin: same dimensions, same canonical
/// expression text for the Lagrangian, constraints and explicit form table
/// (parameter values are free to differ).
fn detect(model: &ModelSpec) -> Result<RodParams> {
    let reference = builtin("cosserat").expect("builtin");
    let shape_matches = model.n() == reference.n()
        && model.k() == reference.k()
        && model.m() == reference.m()
        && model.lagrangian().to_string() == reference.lagrangian().to_string()
        && model
            .constraints()
            .iter()
            .map(|c| c.to_string())
            .eq(reference.constraints().iter().map(|c| c.to_string()));
    if !shape_matches {
        return Err(Error::Config(
            "the (1+1) integrator supports rod-shaped models only: fields 4..7 \
             must be algebraically eliminable as in the builtin 'cosserat'"
                .into(),
        ));
    }
    let param = |name: &str| {
        model
            .parameter(name)
            .ok_or_else(|| Error::Config(format!("rod model must define parameter '{name}'")))
    };
    Ok(RodParams {
        rho: param("rho")?,
        alpha: param("alpha")?,
        beta: param("beta")?,
        stiffness: param("K")?,
        radius: param("R")?,
    })
}

/// Finite-difference operators on the spatial grid.
struct Stencil {
    nodes: usize,
    ds: f64,
    bc: BoundaryCondition,
}

impl Stencil {
    fn d1(&self, f: &[f64], out: &mut [f64]) {
        let m = self.nodes;
        let ds = self.ds;
        match self.bc {
            BoundaryCondition::Periodic => {
                for j in 0..m {
                    let jp = (j + 1) % m;
                    let jm = (j + m - 1) % m;
                    out[j] = (f[jp] - f[jm]) / (2.0 * ds);
                }
            }
            _ => {
                out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * ds);
                for j in 1..m - 1 {
                    out[j] = (f[j + 1] - f[j - 1]) / (2.0 * ds);
                }
                out[m - 1] = (3.0 * f[m - 1] - 4.0 * f[m - 2] + f[m - 3]) / (2.0 * ds);
            }
        }
    }

    fn d2(&self, f: &[f64], out: &mut [f64]) {
        let m = self.nodes;
        let ds2 = self.ds * self.ds;
        match self.bc {
            BoundaryCondition::Periodic => {
                for j in 0..m {
                    let jp = (j + 1) % m;
                    let jm = (j + m - 1) % m;
                    out[j] = (f[jp] - 2.0 * f[j] + f[jm]) / ds2;
                }
            }
            _ => {
                out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / ds2;
                for j in 1..m - 1 {
                    out[j] = (f[j + 1] - 2.0 * f[j] + f[j - 1]) / ds2;
                }
                out[m - 1] =
                    (2.0 * f[m - 1] - 5.0 * f[m - 2] + 4.0 * f[m - 3] - f[m - 4]) / ds2;
            }
        }
    }
}

/// Evolving state: centerline coordinates, torsion angle and their rates.
#[derive(Debug, Clone)]
struct RodState {
    x: Vec<f64>,
    y: Vec<f64>,
    th: Vec<f64>,
    xd: Vec<f64>,
    yd: Vec<f64>,
    thd: Vec<f64>,
}

impl RodState {
    fn zeros(m: usize) -> Self {
        RodState {
            x: vec![0.0; m],
            y: vec![0.0; m],
            th: vec![0.0; m],
            xd: vec![0.0; m],
            yd: vec![0.0; m],
            thd: vec![0.0; m],
        }
    }

    fn axpy(&mut self, c: f64, other: &RodDeriv) {
        let m = self.x.len();
        for j in 0..m {
            self.x[j] += c * other.xd[j];
            self.y[j] += c * other.yd[j];
            self.th[j] += c * other.thd[j];
            self.xd[j] += c * other.xdd[j];
            self.yd[j] += c * other.ydd[j];
            self.thd[j] += c * other.thdd[j];
        }
    }
}

#[derive(Debug, Clone)]
struct RodDeriv {
    xd: Vec<f64>,
    yd: Vec<f64>,
    thd: Vec<f64>,
    xdd: Vec<f64>,
    ydd: Vec<f64>,
    thdd: Vec<f64>,
    /// Source-form multipliers per node (lambda, mu).
    lambda: Vec<(f64, f64)>,
}

/// Spatially derived quantities of a state.
struct Derived {
    xp: Vec<f64>,
    yp: Vec<f64>,
    q6: Vec<f64>,
    q7: Vec<f64>,
    q6s: Vec<f64>,
    q7s: Vec<f64>,
    thpp: Vec<f64>,
    xdp: Vec<f64>,
    ydp: Vec<f64>,
}

fn derive(st: &Stencil, state: &RodState, kk: f64) -> Derived {
    let m = st.nodes;
    let mut d = Derived {
        xp: vec![0.0; m],
        yp: vec![0.0; m],
        q6: vec![0.0; m],
        q7: vec![0.0; m],
        q6s: vec![0.0; m],
        q7s: vec![0.0; m],
        thpp: vec![0.0; m],
        xdp: vec![0.0; m],
        ydp: vec![0.0; m],
    };
    st.d1(&state.x, &mut d.xp);
    st.d1(&state.y, &mut d.yp);
    // Bending response fields from the eliminated coordinates:
    // q6 = -K (q4)'' with q4 = x', and likewise for q7.
    let mut tmp = vec![0.0; m];
    st.d2(&d.xp, &mut tmp);
    for j in 0..m {
        d.q6[j] = -kk * tmp[j];
    }
    st.d2(&d.yp, &mut tmp);
    for j in 0..m {
        d.q7[j] = -kk * tmp[j];
    }
    st.d1(&d.q6, &mut d.q6s);
    st.d1(&d.q7, &mut d.q7s);
    st.d2(&state.th, &mut d.thpp);
    st.d1(&state.xd, &mut d.xdp);
    st.d1(&state.yd, &mut d.ydp);
    d
}

/// One evaluation of the semi-discrete right-hand side: per node, the three
/// evolution rows plus the two time-differentiated constraints solved
/// together for (xdd, ydd, thdd, lambda, mu). The multipliers here follow
/// the source sign convention (reaction on the right-hand side).
fn rhs(
    st: &Stencil,
    p: &RodParams,
    state: &RodState,
    clamp_ends: bool,
) -> Result<RodDeriv> {
    let m = st.nodes;
    let d = derive(st, state, p.stiffness);
    let mut out = RodDeriv {
        xd: state.xd.clone(),
        yd: state.yd.clone(),
        thd: state.thd.clone(),
        xdd: vec![0.0; m],
        ydd: vec![0.0; m],
        thdd: vec![0.0; m],
        lambda: vec![(0.0, 0.0); m],
    };
    let r = p.radius;
    for j in 0..m {
        // Unknowns u = (xdd, ydd, thdd, lambda, mu).
        let a = Matrix5::new(
            p.rho, 0.0, 0.0, -1.0, 0.0, //
            0.0, p.rho, 0.0, 0.0, -1.0, //
            0.0, 0.0, p.alpha, -r * d.yp[j], r * d.xp[j], //
            1.0, 0.0, r * d.yp[j], 0.0, 0.0, //
            0.0, 1.0, -r * d.xp[j], 0.0, 0.0,
        );
        let b = Vector5::new(
            d.q6s[j],
            d.q7s[j],
            p.beta * d.thpp[j],
            -r * state.thd[j] * d.ydp[j],
            r * state.thd[j] * d.xdp[j],
        );
        let lu = a.lu();
        let u = lu.solve(&b).ok_or_else(|| Error::SingularSystem {
            context: format!("rod node {j}"),
            rcond: 0.0,
        })?;
        out.xdd[j] = u[0];
        out.ydd[j] = u[1];
        out.thdd[j] = u[2];
        out.lambda[j] = (u[3], u[4]);
    }
    if clamp_ends {
        for j in [0, m - 1] {
            out.xd[j] = 0.0;
            out.yd[j] = 0.0;
            out.thd[j] = 0.0;
            out.xdd[j] = 0.0;
            out.ydd[j] = 0.0;
            out.thdd[j] = 0.0;
        }
    }
    Ok(out)
}

/// Exact projection of nodal velocities onto the (velocity-linear) rolling
/// constraints: one minimum-norm correction per node.
fn project_velocities(st: &Stencil, p: &RodParams, state: &mut RodState) {
    let m = st.nodes;
    let mut xp = vec![0.0; m];
    let mut yp = vec![0.0; m];
    st.d1(&state.x, &mut xp);
    st.d1(&state.y, &mut yp);
    let r = p.radius;
    for j in 0..m {
        // Constraint rows in (xd, yd, thd): (1, 0, R yp) and (0, 1, -R xp).
        let g1 = [1.0, 0.0, r * yp[j]];
        let g2 = [0.0, 1.0, -r * xp[j]];
        let c1 = state.xd[j] + r * state.thd[j] * yp[j];
        let c2 = state.yd[j] - r * state.thd[j] * xp[j];
        // Gram matrix of the two rows.
        let a11 = 1.0 + g1[2] * g1[2];
        let a12 = g1[2] * g2[2];
        let a22 = 1.0 + g2[2] * g2[2];
        let det = a11 * a22 - a12 * a12;
        let w1 = (a22 * c1 - a12 * c2) / det;
        let w2 = (a11 * c2 - a12 * c1) / det;
        state.xd[j] -= w1 * g1[0] + w2 * g2[0];
        state.yd[j] -= w1 * g1[1] + w2 * g2[1];
        state.thd[j] -= w1 * g1[2] + w2 * g2[2];
    }
}

/// Full bundle point at one node, with the eliminated fields and both
/// velocity blocks reconstructed from the spatial stencils.
fn node_points(
    st: &Stencil,
    p: &RodParams,
    state: &RodState,
) -> Result<(Vec<FieldPoint>, Derived)> {
    let m = st.nodes;
    let d = derive(st, state, p.stiffness);
    // Time derivatives of the eliminated fields.
    let mut q4d = vec![0.0; m];
    let mut q5d = vec![0.0; m];
    st.d1(&state.xd, &mut q4d);
    st.d1(&state.yd, &mut q5d);
    let mut q6d = vec![0.0; m];
    let mut q7d = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    st.d2(&q4d, &mut tmp);
    for j in 0..m {
        q6d[j] = -p.stiffness * tmp[j];
    }
    st.d2(&q5d, &mut tmp);
    for j in 0..m {
        q7d[j] = -p.stiffness * tmp[j];
    }
    // Spatial derivatives of every stored field.
    let mut q4p = vec![0.0; m];
    let mut q5p = vec![0.0; m];
    let mut q6p = vec![0.0; m];
    let mut q7p = vec![0.0; m];
    let mut thp = vec![0.0; m];
    st.d2(&state.x, &mut q4p); // (q4)' = x''
    st.d2(&state.y, &mut q5p);
    st.d1(&d.q6, &mut q6p);
    st.d1(&d.q7, &mut q7p);
    st.d1(&state.th, &mut thp);

    let mut points = Vec::with_capacity(m);
    for j in 0..m {
        let q = DVector::from_row_slice(&[
            state.x[j],
            state.y[j],
            state.th[j],
            d.xp[j],
            d.yp[j],
            d.q6[j],
            d.q7[j],
        ]);
        let v = DMatrix::from_columns(&[
            DVector::from_row_slice(&[
                state.xd[j],
                state.yd[j],
                state.thd[j],
                q4d[j],
                q5d[j],
                q6d[j],
                q7d[j],
            ]),
            DVector::from_row_slice(&[
                d.xp[j],
                d.yp[j],
                thp[j],
                q4p[j],
                q5p[j],
                q6p[j],
                q7p[j],
            ]),
        ]);
        points.push(FieldPoint::new(q, v)?);
    }
    Ok((points, d))
}

fn energy_density(model: &ModelSpec, w: &FieldPoint) -> Result<f64> {
    crate::geometry::energy(model, w)
}

pub fn integrate_1plus1(model: &ModelSpec, config: &SimConfig) -> Result<FieldSolution> {
    let p = detect(model)?;
    let m = config.nodes;
    let ds = match config.boundary {
        BoundaryCondition::Periodic => config.length / m as f64,
        _ => config.length / (m - 1) as f64,
    };
    let st = Stencil {
        nodes: m,
        ds,
        bc: config.boundary,
    };
    let clamp_ends = config.boundary == BoundaryCondition::Clamped;
    let space: Vec<f64> = (0..m).map(|j| j as f64 * ds).collect();

    // Initial profiles: index 1..3 are the evolving fields; a full list of
    // n profiles is allowed, with the eliminated entries recomputed.
    let need = |list: &Vec<crate::expr::ExprAst>, what: &str| -> Result<()> {
        if list.len() == 3 || list.len() == model.n() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "initial.{what} must carry 3 (evolving fields) or n={} profiles",
                model.n()
            )))
        }
    };
    need(&config.initial_q, "q")?;
    need(&config.initial_v, "v")?;

    let mut state = RodState::zeros(m);
    for j in 0..m {
        let s = space[j];
        state.x[j] = config.eval_profile(model, &config.initial_q[0], s)?;
        state.y[j] = config.eval_profile(model, &config.initial_q[1], s)?;
        state.th[j] = config.eval_profile(model, &config.initial_q[2], s)?;
        state.xd[j] = config.eval_profile(model, &config.initial_v[0], s)?;
        state.yd[j] = config.eval_profile(model, &config.initial_v[1], s)?;
        state.thd[j] = config.eval_profile(model, &config.initial_v[2], s)?;
    }
    // Rolling constraints are linear in the rates; one exact projection
    // reconciles analytic initial profiles with the grid derivatives.
    project_velocities(&st, &p, &mut state);

    let steps = (config.t_end / config.h).round() as usize;
    if steps == 0 {
        return Err(Error::Config("t_end shorter than one step".into()));
    }
    let h = config.h;

    let mut sol = FieldSolution {
        n: model.n(),
        k: 2,
        times: Vec::with_capacity(steps + 1),
        space: space.clone(),
        states: Vec::with_capacity(steps + 1),
        multipliers: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps + 1),
        node_energy: Vec::with_capacity(steps + 1),
        node_phi: Vec::with_capacity(steps + 1),
        aborted: None,
    };

    let record = |time: f64, state: &RodState, sol: &mut FieldSolution| -> Result<()> {
        let (points, _) = node_points(&st, &p, state)?;
        let deriv = rhs(&st, &p, state, clamp_ends)?;
        let weight = match config.boundary {
            BoundaryCondition::Periodic => vec![ds; m],
            _ => {
                let mut w = vec![ds; m];
                w[0] = 0.5 * ds;
                w[m - 1] = 0.5 * ds;
                w
            }
        };
        let mut energy = 0.0;
        let mut phi_max = 0.0f64;
        let mut energies = Vec::with_capacity(m);
        let mut phis = Vec::with_capacity(m);
        let sections = model.symmetries().len();
        let mut momentum = vec![DVector::zeros(model.k()); sections];
        for (j, w) in points.iter().enumerate() {
            let density = energy_density(model, w)?;
            energies.push(density);
            energy += weight[j] * density;
            let phi = model.constraint_values(w)?.amax();
            phis.push(phi);
            phi_max = phi_max.max(phi);
            if sections > 0 {
                let flat = w.flatten();
                let dldv = crate::geometry::momenta(model, w)?;
                for (sec, acc) in momentum.iter_mut().enumerate() {
                    for a in 0..model.k() {
                        for i in 0..model.n() {
                            let xi =
                                model.eval_section_component::<f64>(sec, i, flat.as_slice())?;
                            acc[a] +=
                                weight[j] * dldv[crate::model::vindex(model.n(), i, a)] * xi;
                        }
                    }
                }
            }
        }
        // Engine-convention multipliers: the source-form reaction appears on
        // the right-hand side, so the stored value flips sign; only the
        // time-direction column is nonzero for the rod's reaction forms.
        let mults = (0..m)
            .map(|j| {
                let mut lam = DMatrix::zeros(model.m(), model.k());
                lam[(0, 0)] = -deriv.lambda[j].0;
                lam[(1, 0)] = -deriv.lambda[j].1;
                lam
            })
            .collect();
        sol.times.push(time);
        sol.states.push(points);
        sol.multipliers.push(mults);
        sol.node_energy.push(energies);
        sol.node_phi.push(phis);
        sol.diagnostics.push(StepDiagnostics {
            time,
            energy,
            phi_max,
            momentum,
        });
        Ok(())
    };

    record(0.0, &state, &mut sol)?;

    for step in 1..=steps {
        let t = (step - 1) as f64 * h;
        let result = (|| -> Result<RodState> {
            let k1 = rhs(&st, &p, &state, clamp_ends)?;
            let mut s2 = state.clone();
            s2.axpy(h / 2.0, &k1);
            let k2 = rhs(&st, &p, &s2, clamp_ends)?;
            let mut s3 = state.clone();
            s3.axpy(h / 2.0, &k2);
            let k3 = rhs(&st, &p, &s3, clamp_ends)?;
            let mut s4 = state.clone();
            s4.axpy(h, &k3);
            let k4 = rhs(&st, &p, &s4, clamp_ends)?;
            let mut next = state.clone();
            next.axpy(h / 6.0, &k1);
            next.axpy(h / 3.0, &k2);
            next.axpy(h / 3.0, &k3);
            next.axpy(h / 6.0, &k4);
            Ok(next)
        })();
        state = match result {
            Ok(s) => s,
            Err(e) => {
                sol.aborted = Some(format!("t = {t}: {e}"));
                return Ok(sol);
            }
        };
        if config.projection_every > 0 && step % config.projection_every == 0 {
            project_velocities(&st, &p, &mut state);
        }
        if let Err(e) = record(step as f64 * h, &state, &mut sol) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rod_config(
        t_end: f64,
        h: f64,
        nodes: usize,
        length: f64,
        boundary: BoundaryCondition,
        q: [&str; 3],
        v: [&str; 3],
    ) -> SimConfig {
        SimConfig {
            t_end,
            h,
            nodes,
            length,
            boundary,
            initial_q: q.iter().map(|s| crate::expr::parse(s).unwrap()).collect(),
            initial_v: v.iter().map(|s| crate::expr::parse(s).unwrap()).collect(),
            projection_every: 1,
            drift_tol: 1e-6,
            feas_tol: 1e-8,
        }
    }

    #[test]
    fn non_rod_model_rejected() {
        let m = crate::model::load_model_str(
            r#"{"name":"other","n":1,"k":2,"lagrangian":"0.5*(v1_1^2 - v1_2^2)"}"#,
        )
        .unwrap();
        let cfg = rod_config(
            0.1,
            0.01,
            8,
            1.0,
            BoundaryCondition::Free,
            ["0", "0", "0"],
            ["0", "0", "0"],
        );
        assert!(matches!(
            integrate_1plus1(&m, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn straight_rod_at_rest_is_stationary() {
        let m = builtin("cosserat").unwrap();
        let cfg = rod_config(
            0.05,
            5e-3,
            16,
            1.0,
            BoundaryCondition::Free,
            ["s", "0", "0"],
            ["0", "0", "0"],
        );
        let sol = integrate_1plus1(&m, &cfg).unwrap();
        assert!(sol.aborted.is_none());
        let last = sol.states.last().unwrap();
        for (j, w) in last.iter().enumerate() {
            assert_abs_diff_eq!(w.q()[0], sol.space[j], epsilon = 1e-12);
            assert_abs_diff_eq!(w.q()[1], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(w.q()[2], 0.0, epsilon = 1e-12);
        }
        // Multipliers vanish at equilibrium, up to roundoff amplified by the
        // composed 1/ds^3 stencils.
        for lam in sol.multipliers.last().unwrap() {
            assert_abs_diff_eq!(lam.amax(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn uniform_spin_rolls_sideways() {
        // Straight rod along x spinning at uniform rate: the constraints
        // force a rigid translation in y at speed R omega.
        let m = builtin("cosserat").unwrap();
        let omega = 0.7;
        let cfg = rod_config(
            0.2,
            2e-3,
            16,
            1.0,
            BoundaryCondition::Free,
            ["s", "0", "0"],
            ["0", "0.7", "0.7"],
        );
        // Initial xd=0; yd = R*omega with R=1; thd = omega.
        let sol = integrate_1plus1(&m, &cfg).unwrap();
        assert!(sol.aborted.is_none(), "{:?}", sol.aborted);
        let last = sol.states.last().unwrap();
        let t_end = *sol.times.last().unwrap();
        for (j, w) in last.iter().enumerate() {
            assert_abs_diff_eq!(w.q()[0], sol.space[j], epsilon = 1e-10);
            assert_abs_diff_eq!(w.q()[1], omega * t_end, epsilon = 1e-10);
            assert_abs_diff_eq!(w.q()[2], omega * t_end, epsilon = 1e-10);
            assert_abs_diff_eq!(w.v()[(1, 0)], omega, epsilon = 1e-12);
        }
        assert!(sol.max_phi() < 1e-12);
    }

    #[test]
    fn periodic_loop_stays_feasible_and_conserves_energy_scale() {
        let m = builtin("cosserat").unwrap();
        let two_pi = std::f64::consts::TAU;
        let cfg = rod_config(
            0.05,
            2.5e-4,
            32,
            two_pi,
            BoundaryCondition::Periodic,
            ["cos(s)", "sin(s)", "0.2*sin(s)"],
            ["0", "0", "0.3*cos(s)"],
        );
        let sol = integrate_1plus1(&m, &cfg).unwrap();
        assert!(sol.aborted.is_none(), "{:?}", sol.aborted);
        assert!(sol.max_phi() < 1e-10, "phi {}", sol.max_phi());
        // The stored first prolongation is consistent to grid order.
        assert!(sol.prolongation_residual() < 1e-3);
    }
}
