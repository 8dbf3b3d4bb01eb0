//! Linear algebra of k-symplectic vector spaces: the stacked-form orthogonal
//! of a subspace, isotropy classification, structure validity, and the
//! distribution-induced subspace checks at points of a constrained model.
//!
//! Every subspace is carried as an orthonormal column basis with SVD rank
//! decisions; dimensions are never inferred by counting, since the stacked
//! orthogonal does not complement dimensions the way a single symplectic
//! form does.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg;
use crate::model::{FieldPoint, ModelSpec};

pub const INCLUSION_TOL: f64 = 1e-10;
pub const FORM_TOL: f64 = 1e-12;

/// A finite-dimensional space with k antisymmetric forms and a distinguished
/// subspace.
#[derive(Debug, Clone)]
pub struct KSymplecticSpace {
    dim: usize,
    forms: Vec<DMatrix<f64>>,
    v: Subspace,
}

/// A subspace carried as an orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Orthonormalize a spanning set; the dimension is its numerical rank.
    pub fn from_spanning(columns: &DMatrix<f64>) -> Subspace {
        Subspace {
            basis: linalg::column_span(columns),
        }
    }

    pub fn from_orthonormal(basis: DMatrix<f64>) -> Subspace {
        Subspace { basis }
    }

    pub fn full(n: usize) -> Subspace {
        Subspace {
            basis: DMatrix::identity(n, n),
        }
    }

    pub fn zero(n: usize) -> Subspace {
        Subspace {
            basis: DMatrix::zeros(n, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Residual of this subspace inside `other`; zero means contained.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        linalg::containment_residual(&self.basis, &other.basis)
    }

    pub fn contained_in(&self, other: &Subspace) -> bool {
        self.containment_residual(other) < INCLUSION_TOL
    }

    pub fn intersect(&self, other: &Subspace) -> Subspace {
        Subspace {
            basis: linalg::intersect(&self.basis, &other.basis),
        }
    }

    pub fn distance(&self, other: &Subspace) -> f64 {
        linalg::subspace_distance(&self.basis, &other.basis)
    }
}

/// Validity of the two structure axioms, reported with residuals.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StructureReport {
    /// Largest form value on pairs from the distinguished subspace.
    pub v_isotropy_residual: f64,
    /// Dimension of the common kernel of all forms.
    pub common_kernel_dim: usize,
    pub valid: bool,
}

impl KSymplecticSpace {
    pub fn new(forms: Vec<DMatrix<f64>>, v: Subspace) -> Result<Self> {
        if forms.is_empty() {
            return Err(Error::Dimension("at least one form is required".into()));
        }
        let dim = forms[0].nrows();
        for (a, f) in forms.iter().enumerate() {
            if f.nrows() != dim || f.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "form {} is {}x{}, expected {dim}x{dim}",
                    a + 1,
                    f.nrows(),
                    f.ncols()
                )));
            }
            let asym = (f + f.transpose()).amax();
            if asym > FORM_TOL {
                return Err(Error::Dimension(format!(
                    "form {} is not antisymmetric (residual {asym:.3e})",
                    a + 1
                )));
            }
        }
        if v.ambient_dim() != dim {
            return Err(Error::Dimension(
                "distinguished subspace lives in the wrong dimension".into(),
            ));
        }
        Ok(KSymplecticSpace { dim, forms, v })
    }

    /// Build from the two-form stack of a model at a point, with the vertical
    /// distribution as the distinguished subspace.
    pub fn from_omega_stack(stack: &geometry::OmegaStack) -> Result<Self> {
        let dim = stack.dim();
        let n = stack.n;
        let mut v = DMatrix::zeros(dim, dim - n);
        for r in 0..dim - n {
            v[(n + r, r)] = 1.0;
        }
        KSymplecticSpace::new(stack.omegas.clone(), Subspace::from_orthonormal(v))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.forms.len()
    }

    pub fn forms(&self) -> &[DMatrix<f64>] {
        &self.forms
    }

    pub fn distinguished(&self) -> &Subspace {
        &self.v
    }

    /// Check both structure axioms numerically.
    pub fn structure(&self) -> StructureReport {
        let vb = self.v.basis();
        let mut worst = 0.0f64;
        for f in &self.forms {
            let restricted = vb.transpose() * f * vb;
            worst = worst.max(restricted.amax());
        }
        let mut stacked = DMatrix::zeros(self.dim * self.forms.len(), self.dim);
        for (a, f) in self.forms.iter().enumerate() {
            stacked.view_mut((a * self.dim, 0), (self.dim, self.dim)).copy_from(f);
        }
        let kernel = linalg::nullspace(&stacked);
        StructureReport {
            v_isotropy_residual: worst,
            common_kernel_dim: kernel.ncols(),
            valid: worst < INCLUSION_TOL && kernel.ncols() == 0,
        }
    }

    /// Restriction of the forms and the distinguished subspace to a subspace,
    /// in the coordinates of its basis.
    pub fn restrict(&self, w: &Subspace) -> Result<KSymplecticSpace> {
        let b = w.basis();
        let forms = self
            .forms
            .iter()
            .map(|f| {
                let r = b.transpose() * f * b;
                // Symmetrize away roundoff before the constructor's check.
                (&r - r.transpose()) * 0.5
            })
            .collect();
        let v_cap = self.v.intersect(w);
        // Coordinates of the intersection in the basis of w.
        let coords = b.transpose() * v_cap.basis();
        Ok(KSymplecticSpace::new(
            forms,
            Subspace::from_spanning(&coords),
        )?)
    }
}

/// The stacked-form orthogonal: all vectors pairing to zero with `w` under
/// every form.
pub fn orthogonal(space: &KSymplecticSpace, w: &Subspace) -> Subspace {
    let d = w.dim();
    let n = space.dim();
    if d == 0 {
        return Subspace::full(n);
    }
    let mut rows = DMatrix::zeros(space.k() * d, n);
    for (a, f) in space.forms().iter().enumerate() {
        // Row (a, j): (f . w_j)^T u = 0.
        let fw = f * w.basis();
        rows.view_mut((a * d, 0), (d, n)).copy_from(&fw.transpose());
    }
    Subspace::from_orthonormal(linalg::nullspace(&rows))
}

/// Subspace classification relative to its stacked-form orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SubspaceFlags {
    pub isotropic: bool,
    pub coisotropic: bool,
    pub lagrangian: bool,
    pub ksymplectic: bool,
}

pub fn classify(space: &KSymplecticSpace, w: &Subspace) -> SubspaceFlags {
    let orth = orthogonal(space, w);
    let isotropic = w.contained_in(&orth);
    let coisotropic = orth.contained_in(w);
    SubspaceFlags {
        isotropic,
        coisotropic,
        lagrangian: isotropic && coisotropic,
        ksymplectic: w.intersect(&orth).dim() == 0,
    }
}

/// Subspace checks for a model whose constraints are k copies of a base
/// distribution: coisotropy of the vertical-annihilator distribution and the
/// equivalence between compatibility and the restricted space being
/// k-symplectic.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Section62Report {
    pub compatible: bool,
    pub compat_rcond: f64,
    pub h_dim: usize,
    pub h_ksymplectic: bool,
    /// Residual of `(D^v)^perp` inside `D^v`; meaningful at regular points.
    pub coisotropy_residual: f64,
    /// The equivalence the construction promises: compatibility holds exactly
    /// when the intersection subspace is k-symplectic.
    pub flags_agree: bool,
}

pub fn check_section62(model: &ModelSpec, w: &FieldPoint) -> Result<Section62Report> {
    let dist = model.distribution().ok_or_else(|| {
        Error::Schema("subspace check requires a model built from a base distribution".into())
    })?;
    let n = model.n();
    let dim = model.dim();
    let flat = w.flatten();

    // D^v: kernel of the pulled-back base forms (rows on the q-block only).
    let mb = dist.base_count();
    let mut rows = DMatrix::zeros(mb, dim);
    for alpha in 0..mb {
        for i in 0..n {
            rows[(alpha, i)] = dist.form_at(alpha, i, flat.as_slice())?;
        }
    }
    let dv = Subspace::from_orthonormal(linalg::nullspace(&rows));

    // Tangent space of the constraint submanifold: kernel of the constraint
    // differentials.
    let (_, dphi) = geometry::constraint_jet(model, w)?;
    let tm = Subspace::from_orthonormal(linalg::nullspace(&dphi));

    let h = tm.intersect(&dv);

    let stack = geometry::omega_stack(model, w)?;
    let space = KSymplecticSpace::from_omega_stack(&stack)?;

    let dv_perp = orthogonal(&space, &dv);
    let coisotropy_residual = dv_perp.containment_residual(&dv);

    let h_perp = orthogonal(&space, &h);
    let h_ksymplectic = h.intersect(&h_perp).dim() == 0;

    let (compatible, compat_rcond) = match geometry::constraint_package(model, w) {
        Ok(pkg) => (pkg.is_compatible(), pkg.compat_rcond),
        Err(Error::SingularHessian { rcond }) => (false, rcond),
        Err(e) => return Err(e),
    };

    Ok(Section62Report {
        compatible,
        compat_rcond,
        h_dim: h.dim(),
        h_ksymplectic,
        coisotropy_residual,
        flags_agree: compatible == h_ksymplectic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprAst;
    use crate::model::{build_distribution_model, load_model_str};
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn wedge(n: usize, i: usize, j: usize) -> DMatrix<f64> {
        // e^i ^ e^j as a matrix: (u, v) -> u_i v_j - u_j v_i.
        let mut m = DMatrix::zeros(n, n);
        m[(i, j)] = 1.0;
        m[(j, i)] = -1.0;
        m
    }

    fn appendix_space() -> KSymplecticSpace {
        let forms = vec![wedge(3, 0, 2), wedge(3, 1, 2)];
        let v = Subspace::from_spanning(&DMatrix::from_column_slice(
            3,
            2,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ));
        KSymplecticSpace::new(forms, v).unwrap()
    }

    #[test]
    fn appendix_example_orthogonal_and_flags() {
        let space = appendix_space();
        assert!(space.structure().valid);
        let w = Subspace::from_spanning(&DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]));
        let orth = orthogonal(&space, &w);
        assert_eq!(orth.dim(), 1);
        assert!(w.distance(&orth) < 1e-12);
        // dim W + dim W-perp = 2, not the ambient 3.
        assert_eq!(w.dim() + orth.dim(), 2);
        let flags = classify(&space, &w);
        assert!(flags.isotropic && flags.coisotropic && flags.lagrangian);
        assert!(!flags.ksymplectic);
    }

    #[test]
    fn orthogonal_of_extremes() {
        let space = appendix_space();
        let full = Subspace::full(3);
        assert_eq!(orthogonal(&space, &full).dim(), 0);
        let zero = Subspace::zero(3);
        assert_eq!(orthogonal(&space, &zero).dim(), 3);
    }

    #[test]
    fn distinguished_subspace_is_isotropic() {
        let space = appendix_space();
        let flags = classify(&space, space.distinguished());
        assert!(flags.isotropic);
    }

    #[test]
    fn ksymplectic_subspace_restricts_to_valid_structure() {
        // In the canonical k = 2 structure on R^6 with V the velocity block,
        // the graph-free block span{e1, e3, e5} is k-symplectic and the
        // restriction is again a valid structure.
        let m = load_model_str(
            r#"{"name":"f","n":2,"k":2,"lagrangian":"0.5*(v1_1^2+v2_1^2+v1_2^2+v2_2^2)"}"#,
        )
        .unwrap();
        let w = FieldPoint::from_flat(2, 2, &DVector::from_row_slice(&[0.0, 0.0, 0.1, 0.2, 0.3, 0.4]))
            .unwrap();
        let stack = geometry::omega_stack(&m, &w).unwrap();
        let space = KSymplecticSpace::from_omega_stack(&stack).unwrap();
        assert!(space.structure().valid);
        let mut cols = DMatrix::zeros(6, 3);
        cols[(0, 0)] = 1.0;
        cols[(2, 1)] = 1.0;
        cols[(4, 2)] = 1.0;
        let sub = Subspace::from_spanning(&cols);
        let flags = classify(&space, &sub);
        assert!(flags.ksymplectic);
        let restricted = space.restrict(&sub).unwrap();
        assert!(restricted.structure().valid);
    }

    #[test]
    fn orthogonal_monotone_and_double() {
        let space = appendix_space();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let da = rng.gen_range(1..=2usize);
            let db = rng.gen_range(da..=3usize);
            let mut cols_b = DMatrix::zeros(3, db);
            for c in 0..db {
                for r in 0..3 {
                    cols_b[(r, c)] = rng.gen_range(-1.0..1.0);
                }
            }
            let b = Subspace::from_spanning(&cols_b);
            // A subspace of B: random combinations of B's basis.
            let mut mix = DMatrix::zeros(b.dim(), da.min(b.dim()));
            for c in 0..mix.ncols() {
                for r in 0..b.dim() {
                    mix[(r, c)] = rng.gen_range(-1.0..1.0);
                }
            }
            let a = Subspace::from_spanning(&(b.basis() * mix));
            assert!(a.contained_in(&b));
            let oa = orthogonal(&space, &a);
            let ob = orthogonal(&space, &b);
            assert!(
                ob.containment_residual(&oa) < 1e-10,
                "inclusion reversal failed"
            );
            let daa = orthogonal(&space, &oa);
            assert!(
                a.containment_residual(&daa) < 1e-10,
                "double orthogonal failed"
            );
        }
    }

    #[test]
    fn section62_distribution_fixture() {
        // Kinetic Lagrangian on R^2 with k = 2 copies of span{d/dq1}.
        let base = load_model_str(
            r#"{"name":"dist","n":2,"k":2,
                "lagrangian":"0.5*(v1_1^2+v2_1^2+v1_2^2+v2_2^2)"}"#,
        )
        .unwrap();
        let m = build_distribution_model(&base, &[vec![ExprAst::Const(0.0), ExprAst::Const(1.0)]])
            .unwrap();
        let w = FieldPoint::from_flat(
            2,
            2,
            &DVector::from_row_slice(&[0.4, -0.1, 0.7, 0.0, -0.2, 0.0]),
        )
        .unwrap();
        let report = check_section62(&m, &w).unwrap();
        assert!(report.compatible);
        assert!(report.h_ksymplectic);
        assert!(report.flags_agree);
        assert!(report.coisotropy_residual < 1e-10);
        assert_eq!(report.h_dim, 3);
    }

    #[test]
    fn section62_degenerate_point_keeps_agreement() {
        // Hessian q1^2 times identity: singular at q1 = 0, so the velocity
        // forms vanish and neither compatibility nor k-symplecticness holds.
        let base = load_model_str(
            r#"{"name":"deg","n":2,"k":2,
                "lagrangian":"0.5*q1^2*(v1_1^2+v2_1^2+v1_2^2+v2_2^2)"}"#,
        )
        .unwrap();
        let m = build_distribution_model(&base, &[vec![ExprAst::Const(0.0), ExprAst::Const(1.0)]])
            .unwrap();
        let w = FieldPoint::from_flat(
            2,
            2,
            &DVector::from_row_slice(&[0.0, 0.3, 0.5, 0.0, 0.1, 0.0]),
        )
        .unwrap();
        let report = check_section62(&m, &w).unwrap();
        assert!(!report.compatible);
        assert!(!report.h_ksymplectic);
        assert!(report.flags_agree);
    }

    #[test]
    fn section62_requires_distribution_model() {
        let m = crate::model::builtin("harmonic").unwrap();
        let w = FieldPoint::from_flat(1, 1, &DVector::from_row_slice(&[0.1, 0.2])).unwrap();
        assert!(check_section62(&m, &w).is_err());
    }
}
