//! Ginzburg-Landau bulk energies on a magnetic square.
//!
//! The crate discretizes the square `Q_R` with gauge-covariant link
//! variables and provides
//!
//! * the magnetic Laplacian and its low spectrum ([`operator`], [`eigen`]),
//! * the nonlinear bulk minimizer `e(b, R)` ([`bulk`]),
//! * the L4-constrained linear quotient `m(b, R)` and its duality with the
//!   bulk energy ([`quotient`]),
//! * the Abrikosov energy on the lowest Landau level ([`abrikosov`]),
//! * thermodynamic-limit extrapolation and sweeps ([`asymptotics`]),
//! * a full two-dimensional Ginzburg-Landau solver with local L4
//!   diagnostics ([`fullgl`]).

pub mod abrikosov;
pub mod asymptotics;
pub mod bulk;
pub mod eigen;
pub mod error;
pub mod fullgl;
pub mod grid;
pub mod linalg;
pub mod links;
pub mod operator;
pub mod optim;
pub mod quotient;
pub mod seeds;

pub use error::{Error, Result};
pub use grid::{BoundaryCondition, BoundaryKind, ComplexField, Grid, Norms};
pub use links::LinkField;
pub use operator::MagneticOperator;

#[cfg(test)]
pub(crate) mod testutil {
    pub use crate::seeds::random_field;
}
