//! Pointwise geometry, constrained field equations and integrators for
//! first-order field theories with nonholonomic constraints.
//!
//! The crate evaluates every geometric object at points of the bundle of
//! velocity k-tuples over a configuration space: derivative jets of the
//! Lagrangian, reaction forms and the constraint distribution, compatibility
//! projectors, momentum maps and the Legendre transform. On top of the
//! pointwise layer sit time integrators for mechanics (`k = 1`) and for
//! (1+1)-dimensional rod field theories (`k = 2`), plus a small linear
//! algebra of k-symplectic vector spaces.

pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hamiltonian;
pub mod hyperdual;
pub mod ksla;
pub mod linalg;
pub mod model;
pub mod momentum;
pub mod projector;

pub use error::{Error, Result};
pub use expr::{ExprAst, VariableBinding};
pub use hyperdual::{HyperDual, Scalar};
pub use model::{
    builtin, load_model, load_model_str, ConstraintFormMode, FieldPoint, ModelSpec,
    SymmetrySection, TangentVector,
};
