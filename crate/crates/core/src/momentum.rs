//! Momentum map diagnostics: admissibility of symmetry sections against the
//! reaction forms, momentum components along solutions, and the residual of
//! the balance law satisfied by admissible symmetries.

use nalgebra::DVector;

use crate::dynamics::FieldSolution;
use crate::error::{Error, Result};
use crate::geometry;
use crate::hyperdual::HyperDual;
use crate::model::{vindex, FieldPoint, ModelSpec};

pub const ANNIHILATION_TOL: f64 = 1e-10;

/// Momentum components at one point, one value per base direction.
#[derive(Debug, Clone)]
pub struct MomentumValue {
    pub components: DVector<f64>,
}

/// Section values at a point.
fn section_values(model: &ModelSpec, section: usize, flat: &[f64]) -> Result<DVector<f64>> {
    let n = model.n();
    let mut xi = DVector::zeros(n);
    for i in 0..n {
        xi[i] = model.eval_section_component::<f64>(section, i, flat)?;
    }
    Ok(xi)
}

/// Momentum pairing `J^A = dL/dv^i_A . xi^i`.
pub fn momentum_components(
    model: &ModelSpec,
    w: &FieldPoint,
    section: usize,
) -> Result<MomentumValue> {
    let flat = w.flatten();
    let dldv = geometry::momenta(model, w)?;
    let xi = section_values(model, section, flat.as_slice())?;
    let mut components = DVector::zeros(model.k());
    for a in 0..model.k() {
        for i in 0..model.n() {
            components[a] += dldv[vindex(model.n(), i, a)] * xi[i];
        }
    }
    Ok(MomentumValue { components })
}

/// Largest contraction of the section's generated vector field with the
/// reaction forms over the sample; sections pass when every reaction form
/// annihilates them.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AnnihilationReport {
    pub max_contraction: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn annihilation_check(
    model: &ModelSpec,
    section: usize,
    points: &[FieldPoint],
    tol: f64,
) -> Result<AnnihilationReport> {
    let n = model.n();
    let mut worst = 0.0f64;
    for w in points {
        let flat = w.flatten();
        let eta = geometry::reaction_forms(model, w)?;
        let xi = section_values(model, section, flat.as_slice())?;
        for alpha in 0..model.m() {
            for a in 0..model.k() {
                let mut c = 0.0;
                for i in 0..n {
                    c += eta[(alpha, vindex(n, i, a))] * xi[i];
                }
                worst = worst.max(c.abs());
            }
        }
    }
    Ok(AnnihilationReport {
        max_contraction: worst,
        tolerance: tol,
        pass: worst < tol,
    })
}

/// Largest value of the complete-lift derivative of the Lagrangian along the
/// section over the sample: `xi^i dL/dq^i + v^j_A dxi^i/dq^j dL/dv^i_A`.
/// The balance law assumes this vanishes; it is checked, never assumed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SymmetryReport {
    pub max_lie_derivative: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn symmetry_check(
    model: &ModelSpec,
    section: usize,
    points: &[FieldPoint],
    tol: f64,
) -> Result<SymmetryReport> {
    let n = model.n();
    let k = model.k();
    let mut worst = 0.0f64;
    for w in points {
        let flat = w.flatten();
        let jet = geometry::jet(model, w)?;
        let xi = section_values(model, section, flat.as_slice())?;
        // dxi^i/dq^j by one hyperdual pass per (i, j).
        let mut hd: Vec<HyperDual> = flat.iter().map(|&x| HyperDual::constant(x)).collect();
        let mut lie = 0.0;
        for i in 0..n {
            lie += xi[i] * jet.dldq[i];
        }
        for jq in 0..n {
            hd[jq].d1 = 1.0;
            for i in 0..n {
                let dxi = model.eval_section_component::<HyperDual>(section, i, &hd)?.d1;
                for a in 0..k {
                    lie += flat[n + vindex(n, jq, a)] * dxi * jet.dldv[vindex(n, i, a)];
                }
            }
            hd[jq].d1 = 0.0;
        }
        worst = worst.max(lie.abs());
    }
    Ok(SymmetryReport {
        max_lie_derivative: worst,
        tolerance: tol,
        pass: worst < tol,
    })
}

/// Residual of the momentum balance law on a stored solution, by central
/// differences over interior grid nodes: the divergence of the momentum
/// components minus the pairing of the momenta with the grid derivative of
/// the section along the solution.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    /// Interior time values.
    pub times: Vec<f64>,
    /// Interior space values (a single 0.0 for mechanics).
    pub space: Vec<f64>,
    /// `values[t][s]` over the interior grid.
    pub values: Vec<Vec<f64>>,
    pub max_abs: f64,
    pub rms: f64,
}

pub fn momentum_residual(
    model: &ModelSpec,
    sol: &FieldSolution,
    section: usize,
) -> Result<ResidualSeries> {
    let n = model.n();
    let k = model.k();
    if sol.times.len() < 3 {
        return Err(Error::Config(
            "momentum residual needs at least three time levels".into(),
        ));
    }
    if k == 2 && sol.space.len() < 3 {
        return Err(Error::Config(
            "momentum residual needs at least three space nodes".into(),
        ));
    }
    let nt = sol.times.len();
    let ns = sol.space.len();
    let ht = sol.times[1] - sol.times[0];
    let hs = if k == 2 { sol.space[1] - sol.space[0] } else { 1.0 };

    // Momenta, section values and momentum components on the full grid.
    let mut j_grid: Vec<Vec<DVector<f64>>> = vec![vec![DVector::zeros(k); ns]; nt];
    let mut xi_grid: Vec<Vec<DVector<f64>>> = vec![vec![DVector::zeros(n); ns]; nt];
    let mut dldv_grid: Vec<Vec<DVector<f64>>> = vec![vec![DVector::zeros(n * k); ns]; nt];
    for t in 0..nt {
        for s in 0..ns {
            let w = &sol.states[t][s];
            let flat = w.flatten();
            let dldv = geometry::momenta(model, w)?;
            let xi = section_values(model, section, flat.as_slice())?;
            let mut j = DVector::zeros(k);
            for a in 0..k {
                for i in 0..n {
                    j[a] += dldv[vindex(n, i, a)] * xi[i];
                }
            }
            j_grid[t][s] = j;
            xi_grid[t][s] = xi;
            dldv_grid[t][s] = dldv;
        }
    }

    let (s_lo, s_hi) = if k == 2 { (1, ns - 1) } else { (0, ns) };
    let mut values = Vec::new();
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for t in 1..nt - 1 {
        let mut row = Vec::new();
        for s in s_lo..s_hi {
            // Divergence of the momentum components.
            let mut lhs = (j_grid[t + 1][s][0] - j_grid[t - 1][s][0]) / (2.0 * ht);
            if k == 2 {
                lhs += (j_grid[t][s + 1][1] - j_grid[t][s - 1][1]) / (2.0 * hs);
            }
            // Pairing with the grid derivative of the section along the
            // solution, direction by direction.
            let mut rhs = 0.0;
            for i in 0..n {
                let dxi_t = (xi_grid[t + 1][s][i] - xi_grid[t - 1][s][i]) / (2.0 * ht);
                rhs += dldv_grid[t][s][vindex(n, i, 0)] * dxi_t;
                if k == 2 {
                    let dxi_s = (xi_grid[t][s + 1][i] - xi_grid[t][s - 1][i]) / (2.0 * hs);
                    rhs += dldv_grid[t][s][vindex(n, i, 1)] * dxi_s;
                }
            }
            let r = lhs - rhs;
            max_abs = max_abs.max(r.abs());
            sum_sq += r * r;
            count += 1;
            row.push(r);
        }
        values.push(row);
    }
    Ok(ResidualSeries {
        times: sol.times[1..nt - 1].to_vec(),
        space: if k == 2 {
            sol.space[s_lo..s_hi].to_vec()
        } else {
            vec![0.0]
        },
        values,
        max_abs,
        rms: (sum_sq / count.max(1) as f64).sqrt(),
    })
}
