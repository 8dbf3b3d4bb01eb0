//! SVD-backed helpers shared by the geometry, projector and subspace code.
//!
//! Rank decisions follow the usual `N * eps * sigma_max` cutoff; subspaces are
//! always carried as orthonormal column bases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition number `sigma_min / sigma_max`; 0 for a zero matrix.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    if max == 0.0 {
        return 0.0;
    }
    // Thin SVD of a wide matrix misses kernel directions; a wide matrix with
    // full row rank is treated by its row-space conditioning, which is what
    // every caller wants.
    let min = svd.singular_values.min();
    min / max
}

fn rank_threshold(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max
}

/// Numerical rank with the default threshold.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    if max == 0.0 {
        return 0;
    }
    let tol = rank_threshold(m, max);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Orthonormal basis for the column span of `m`.
pub fn column_span(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 || m.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let max = svd.singular_values.max();
    if max == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let tol = rank_threshold(m, max);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Orthonormal basis for the kernel of `m` (vectors x with m x = 0).
pub fn nullspace(m: &DMatrix<f64>) -> DMatrix<f64> {
    let ncols = m.ncols();
    if ncols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad with zero rows so the thin SVD carries a full set of right singular
    // vectors even for wide inputs.
    let nrows = m.nrows().max(ncols);
    let mut padded = DMatrix::zeros(nrows, ncols);
    padded.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = padded.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    let max = svd.singular_values.max();
    let tol = if max == 0.0 {
        f64::INFINITY
    } else {
        rank_threshold(&padded, max)
    };
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| !(svd.singular_values[i] > tol))
        .collect();
    let mut out = DMatrix::zeros(ncols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &v_t.row(i).transpose());
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b` via the pseudo-inverse.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, rank_threshold(a, svd.singular_values.max()))
        .map_err(|e| Error::SingularSystem {
            context: format!("least squares ({e})"),
            rcond: rcond(a),
        })
}

/// Exact solve of a square system with an explicit conditioning report.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    a.clone().lu().solve(b).ok_or_else(|| Error::SingularSystem {
        context: context.to_string(),
        rcond: rcond(a),
    })
}

/// Orthonormal basis of the intersection of two subspaces given by
/// orthonormal bases, via the kernel of the stacked complement projectors.
pub fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    debug_assert_eq!(b.nrows(), n);
    let pa = DMatrix::identity(n, n) - a * a.transpose();
    let pb = DMatrix::identity(n, n) - b * b.transpose();
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&pa);
    stacked.view_mut((n, 0), (n, n)).copy_from(&pb);
    nullspace(&stacked)
}

/// Largest residual of projecting the columns of `inner` onto the span of
/// `outer` (an orthonormal basis). Zero means `inner` is contained in `outer`.
pub fn containment_residual(inner: &DMatrix<f64>, outer: &DMatrix<f64>) -> f64 {
    if inner.ncols() == 0 {
        return 0.0;
    }
    let proj = outer * (outer.transpose() * inner);
    let resid = inner - proj;
    resid
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max)
}

/// Spectral distance between two subspaces: the 2-norm of the difference of
/// their orthogonal projectors.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let pa = a * a.transpose();
    let pb = b * b.transpose();
    let diff: DMatrix<f64> = pa - pb;
    if n == 0 {
        return 0.0;
    }
    diff.svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nullspace_of_wide_matrix() {
        // x + y + z = 0 in R^3: kernel dimension 2.
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ns = nullspace(&m);
        assert_eq!(ns.ncols(), 2);
        let residual = (&m * &ns).norm();
        assert_abs_diff_eq!(residual, 0.0, epsilon = 1e-14);
        let gram = ns.transpose() * &ns;
        assert_abs_diff_eq!((gram - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn min_norm_picks_shortest_solution() {
        // Single equation x + y = 2; minimum-norm solution is (1, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[2.0]);
        let x = min_norm_solve(&a, &b).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn intersection_of_planes() {
        // span{e1,e2} and span{e2,e3} intersect in span{e2}.
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let inter = intersect(&a, &b);
        assert_eq!(inter.ncols(), 1);
        assert_abs_diff_eq!(inter[(0, 0)].abs(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inter[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inter[(2, 0)].abs(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn containment_detects_non_subspace()
    {
        let outer = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let inside = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let outside = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(containment_residual(&inside, &outer) < 1e-14);
        assert!(containment_residual(&outside, &outer) > 0.5);
    }
}
