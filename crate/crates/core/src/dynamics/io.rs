//! Solution serialization: comma-separated, LF line endings, header row,
//! `%.17g` float formatting, fixed column order.
//!
//! Mechanics runs produce one row per step; field runs use long format with
//! one row per (t, s) node.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{FieldSolution, StepDiagnostics};
use crate::error::{Error, Result};
use crate::model::FieldPoint;

/// Format a float the way C's `%.17g` does: up to 17 significant digits,
/// trailing zeros trimmed, scientific notation outside the fixed-point range.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let exp = x.abs().log10().floor() as i32;
    let use_sci = exp < -4 || exp >= 17;
    let mut s = if use_sci {
        let mut t = format!("{:.*e}", 16, x);
        // Trim trailing zeros in the mantissa.
        if let Some(epos) = t.find('e') {
            let (mant, expn) = t.split_at(epos);
            let mant = mant.trim_end_matches('0').trim_end_matches('.');
            t = format!("{mant}{expn}");
        }
        t
    } else {
        let decimals = (16 - exp).max(0) as usize;
        let t = format!("{:.*}", decimals, x);
        let t = if t.contains('.') {
            t.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            t
        };
        t
    };
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn header(sol: &FieldSolution) -> String {
    let mut cols = Vec::new();
    cols.push("t".to_string());
    if sol.k == 2 {
        cols.push("s".to_string());
    }
    for i in 1..=sol.n {
        cols.push(format!("q{i}"));
    }
    for a in 1..=sol.k {
        for i in 1..=sol.n {
            cols.push(format!("v{i}_{a}"));
        }
    }
    let m = sol
        .multipliers
        .first()
        .and_then(|row| row.first())
        .map(|l| l.nrows())
        .unwrap_or(0);
    if sol.k == 1 {
        for alpha in 1..=m {
            cols.push(format!("lambda_{alpha}"));
        }
    } else {
        for a in 1..=sol.k {
            for alpha in 1..=m {
                cols.push(format!("lambda_{alpha}_{a}"));
            }
        }
    }
    cols.push("E_L".to_string());
    cols.push("phi_max".to_string());
    cols.join(",")
}

/// Write a solution as CSV. Deterministic: fixed field order, `%.17g`
/// formatting, LF endings.
pub fn write_solution(sol: &FieldSolution, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", header(sol))?;
    for (ti, &t) in sol.times.iter().enumerate() {
        for (si, &s) in sol.space.iter().enumerate() {
            let w = &sol.states[ti][si];
            let lam = &sol.multipliers[ti][si];
            let mut fields = Vec::new();
            fields.push(fmt_g17(t));
            if sol.k == 2 {
                fields.push(fmt_g17(s));
            }
            let flat = w.flatten();
            for x in flat.iter() {
                fields.push(fmt_g17(*x));
            }
            if sol.k == 1 {
                for alpha in 0..lam.nrows() {
                    fields.push(fmt_g17(lam[(alpha, 0)]));
                }
            } else {
                for a in 0..sol.k {
                    for alpha in 0..lam.nrows() {
                        fields.push(fmt_g17(lam[(alpha, a)]));
                    }
                }
            }
            // Per-node energy (density for field runs) and violation.
            fields.push(fmt_g17(sol.node_energy[ti][si]));
            fields.push(fmt_g17(sol.node_phi[ti][si]));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

/// Read a solution CSV produced by [`write_solution`]. The model dimensions
/// are recovered from the header.
pub fn read_solution(path: impl AsRef<Path>) -> Result<FieldSolution> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io("empty solution file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let has_s = cols.get(1) == Some(&"s");
    let n = cols.iter().filter(|c| c.starts_with('q')).count();
    let k = if has_s { 2 } else { 1 };
    let v_count = cols
        .iter()
        .filter(|c| c.starts_with('v') && c.contains('_'))
        .count();
    if v_count != n * k {
        return Err(Error::Io(format!(
            "solution header carries {v_count} velocity columns, expected {}",
            n * k
        )));
    }
    let m = cols.iter().filter(|c| c.starts_with("lambda_")).count() / k;

    let base = 1 + usize::from(has_s);
    let mut times: Vec<f64> = Vec::new();
    let mut space: Vec<f64> = Vec::new();
    let mut states: Vec<Vec<FieldPoint>> = Vec::new();
    let mut multipliers: Vec<Vec<DMatrix<f64>>> = Vec::new();
    let mut diagnostics: Vec<StepDiagnostics> = Vec::new();
    let mut node_energy: Vec<Vec<f64>> = Vec::new();
    let mut node_phi: Vec<Vec<f64>> = Vec::new();

    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Io(format!("line {}: {e}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        if parts.len() != cols.len() {
            return Err(Error::Io(format!(
                "line {}: {} fields, expected {}",
                lineno + 2,
                parts.len(),
                cols.len()
            )));
        }
        let t = parts[0];
        let s = if has_s { parts[1] } else { 0.0 };
        let flat = DVector::from_row_slice(&parts[base..base + n + n * k]);
        let w = FieldPoint::from_flat(n, k, &flat)?;
        let lam_vals = &parts[base + n + n * k..base + n + n * k + m * k];
        let mut lam = DMatrix::zeros(m, k);
        for a in 0..k {
            for alpha in 0..m {
                lam[(alpha, a)] = lam_vals[a * m + alpha];
            }
        }
        let energy = parts[parts.len() - 2];
        let phi = parts[parts.len() - 1];

        let new_time = times.last().map(|&lt| t != lt).unwrap_or(true);
        if new_time {
            times.push(t);
            states.push(Vec::new());
            multipliers.push(Vec::new());
            node_energy.push(Vec::new());
            node_phi.push(Vec::new());
            diagnostics.push(StepDiagnostics {
                time: t,
                energy: 0.0,
                phi_max: 0.0,
                momentum: Vec::new(),
            });
        }
        if times.len() == 1 {
            space.push(s);
        }
        let d = diagnostics.last_mut().unwrap();
        d.energy += energy;
        d.phi_max = d.phi_max.max(phi);
        states.last_mut().unwrap().push(w);
        multipliers.last_mut().unwrap().push(lam);
        node_energy.last_mut().unwrap().push(energy);
        node_phi.last_mut().unwrap().push(phi);
    }
    if space.is_empty() {
        space.push(0.0);
    }
    Ok(FieldSolution {
        n,
        k,
        times,
        space,
        states,
        multipliers,
        diagnostics,
        node_energy,
        node_phi,
        aborted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_formats_cleanly() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        // 17 significant digits expose the binary values, as %.17g does.
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-8");
        // Dyadic values print exactly.
        assert_eq!(fmt_g17(2f64.powi(-23)), "1.1920928955078125e-7");
        assert_eq!(fmt_g17(1.5e20), "1.5e20");
    }

    #[test]
    fn g17_round_trips_doubles() {
        let values = [
            std::f64::consts::PI,
            1.0 / 3.0,
            -6.02e23,
            1e-300,
            123456789.123456789,
            f64::MIN_POSITIVE,
        ];
        for &x in &values {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x, back, "{x} -> {s}");
        }
    }
}
