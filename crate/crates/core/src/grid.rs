//! Discrete geometry of the square `Q_R = (-R/2, R/2)^2`, boundary conditions
//! and complex node fields with their quadrature norms.
//!
//! Node layout is row-major with `x1` fastest: node `(i, j)` has index
//! `j * side + i` and coordinates `(-R/2 + i h, -R/2 + j h)`.
//!
//! * Dirichlet and Neumann grids carry `(n + 1)^2` nodes including both
//!   boundary lines. Quadrature is the tensor trapezoid rule; Dirichlet
//!   boundary nodes are pinned to zero and carry no unknowns.
//! * Magnetic-periodic grids carry `n^2` nodes; the node at `x1 = R/2` is the
//!   magnetic translate of the node at `x1 = -R/2` and is not stored.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of cells per side.
pub const MIN_POINTS: usize = 16;

/// Relative tolerance used to recognise `R^2 / (2 pi)` as an integer.
pub const FLUX_TOLERANCE: f64 = 1e-12;

/// Boundary condition family, without the flux data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Periodic,
}

impl BoundaryKind {
    pub const ALL: [BoundaryKind; 3] = [
        BoundaryKind::Dirichlet,
        BoundaryKind::Neumann,
        BoundaryKind::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Neumann => "neumann",
            BoundaryKind::Periodic => "periodic",
        }
    }
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BoundaryKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Ok(BoundaryKind::Dirichlet),
            "neumann" | "n" => Ok(BoundaryKind::Neumann),
            "periodic" | "p" | "magnetic-periodic" => Ok(BoundaryKind::Periodic),
            other => Err(format!(
                "unknown boundary condition '{other}' (expected dirichlet, neumann or periodic)"
            )),
        }
    }
}

/// Boundary condition of the square; the periodic variant records the flux
/// quantum count `N = R^2 / (2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    MagneticPeriodic { flux: u32 },
}

impl BoundaryCondition {
    pub fn kind(self) -> BoundaryKind {
        match self {
            BoundaryCondition::Dirichlet => BoundaryKind::Dirichlet,
            BoundaryCondition::Neumann => BoundaryKind::Neumann,
            BoundaryCondition::MagneticPeriodic { .. } => BoundaryKind::Periodic,
        }
    }

    /// Magnetic-periodic condition for a square of side `side`, provided the
    /// flux through it is an integer multiple of `2 pi`.
    pub fn magnetic_periodic(side: f64) -> Result<Self> {
        Ok(BoundaryCondition::MagneticPeriodic {
            flux: flux_of_side(side)?,
        })
    }
}

/// Integer flux `N` with `side^2 = 2 pi N`, if there is one.
pub fn flux_of_side(side: f64) -> Result<u32> {
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::BadSideLength(side));
    }
    let ratio = side * side / (2.0 * PI);
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > FLUX_TOLERANCE * ratio {
        return Err(Error::NonIntegralFlux { side, ratio });
    }
    Ok(rounded as u32)
}

/// Side length of the square carrying `flux` flux quanta.
pub fn side_of_flux(flux: u32) -> f64 {
    (2.0 * PI * flux as f64).sqrt()
}

/// Default number of cells per side: spacing at most 1/8 of the magnetic
/// length, and never fewer than [`MIN_POINTS`].
pub fn default_points(side: f64) -> usize {
    ((8.0 * side).ceil() as usize).max(MIN_POINTS)
}

/// Uniform `n x n`-cell discretization of `Q_R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    bc: BoundaryCondition,
}

impl Grid {
    /// Builds the grid for a square of side `side` with `n` cells per side.
    pub fn new(side: f64, n: usize, kind: BoundaryKind) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::BadSideLength(side));
        }
        if n < MIN_POINTS {
            return Err(Error::TooFewPoints {
                min: MIN_POINTS,
                got: n,
            });
        }
        let (bc, side) = match kind {
            BoundaryKind::Dirichlet => (BoundaryCondition::Dirichlet, side),
            BoundaryKind::Neumann => (BoundaryCondition::Neumann, side),
            BoundaryKind::Periodic => {
                let flux = flux_of_side(side)?;
                // snap to the exact quantized side
                (BoundaryCondition::MagneticPeriodic { flux }, side_of_flux(flux))
            }
        };
        Ok(Grid {
            n,
            h: side / n as f64,
            bc,
        })
    }

    /// Grid on the square carrying `flux` quanta, for any boundary kind.
    pub fn with_flux(flux: u32, n: usize, kind: BoundaryKind) -> Result<Self> {
        if flux == 0 {
            return Err(Error::OutOfRange {
                name: "flux",
                value: 0.0,
                range: "N >= 1",
            });
        }
        Grid::new(side_of_flux(flux), n, kind)
    }

    /// Number of cells per side.
    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// `R = h n`, always derived from the stored spacing.
    pub fn side_length(&self) -> f64 {
        self.h * self.n as f64
    }

    pub fn area(&self) -> f64 {
        let r = self.side_length();
        r * r
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn kind(&self) -> BoundaryKind {
        self.bc.kind()
    }

    pub fn flux(&self) -> Option<u32> {
        match self.bc {
            BoundaryCondition::MagneticPeriodic { flux } => Some(flux),
            _ => None,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.bc, BoundaryCondition::MagneticPeriodic { .. })
    }

    /// Stored nodes along one axis.
    pub fn nodes_per_side(&self) -> usize {
        if self.is_periodic() {
            self.n
        } else {
            self.n + 1
        }
    }

    pub fn node_count(&self) -> usize {
        let s = self.nodes_per_side();
        s * s
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    #[inline]
    pub fn ij(&self, p: usize) -> (usize, usize) {
        let s = self.nodes_per_side();
        (p % s, p / s)
    }

    /// Coordinate of grid line `i` along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.side_length() + i as f64 * self.h
    }

    pub fn position(&self, p: usize) -> (f64, f64) {
        let (i, j) = self.ij(p);
        (self.coord(i), self.coord(j))
    }

    /// Whether grid line `i` lies on the boundary of a closed (non-periodic) grid.
    #[inline]
    pub fn on_boundary_line(&self, i: usize) -> bool {
        !self.is_periodic() && (i == 0 || i == self.n)
    }

    /// Nodes carrying unknowns: everything except the Dirichlet boundary.
    #[inline]
    pub fn is_active(&self, p: usize) -> bool {
        if self.bc != BoundaryCondition::Dirichlet {
            return true;
        }
        let (i, j) = self.ij(p);
        !(self.on_boundary_line(i) || self.on_boundary_line(j))
    }

    /// One-dimensional quadrature weight (without `h`) of grid line `i`.
    #[inline]
    pub fn line_weight(&self, i: usize) -> f64 {
        if self.on_boundary_line(i) {
            0.5
        } else {
            1.0
        }
    }

    /// Quadrature weight `h^2 w_i w_j` of node `p`.
    #[inline]
    pub fn node_weight(&self, p: usize) -> f64 {
        let (i, j) = self.ij(p);
        self.h * self.h * self.line_weight(i) * self.line_weight(j)
    }

    /// Diagonal mass matrix restricted to the unknowns: zero on pinned nodes.
    pub fn mass(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|p| {
                if self.is_active(p) {
                    self.node_weight(p)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Number of active (unknown) nodes.
    pub fn active_count(&self) -> usize {
        (0..self.node_count()).filter(|&p| self.is_active(p)).count()
    }
}

/// Discrete norms of a field: `sum h^2 w |u|^2`, `sum h^2 w |u|^4`, `max |u|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Norms {
    pub l2_sq: f64,
    pub l4_4: f64,
    pub sup: f64,
}

/// One complex value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: Grid) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.node_count()],
        }
    }

    /// Wraps node values; pinned Dirichlet boundary values are set to zero.
    pub fn from_values(grid: Grid, mut values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        for (p, v) in values.iter_mut().enumerate() {
            if !grid.is_active(p) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        Ok(ComplexField { grid, values })
    }

    /// Samples `f(x1, x2)` at the nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = (0..grid.node_count())
            .map(|p| {
                if grid.is_active(p) {
                    let (x, y) = grid.position(p);
                    f(x, y)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        ComplexField { grid, values }
    }

    pub fn constant(grid: Grid, value: Complex64) -> Self {
        ComplexField::from_fn(grid, |_, _| value)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norms(&self) -> Norms {
        norms_of(&self.grid, &self.values)
    }

    /// `<u, v> = sum h^2 w u conj(v)`.
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(weighted_inner(&self.grid, &self.values, &other.values))
    }

    pub fn scaled(&self, factor: Complex64) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Multiplies node `p` by `exp(i chi_p)`.
    pub fn gauge_rotated(&self, chi: &[f64]) -> Result<ComplexField> {
        if chi.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: chi.len(),
            });
        }
        Ok(ComplexField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(chi)
                .map(|(v, &c)| v * Complex64::from_polar(1.0, c))
                .collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.norm_sqr() == 0.0)
    }
}

/// Quadrature norms of raw node values on `grid`.
pub fn norms_of(grid: &Grid, values: &[Complex64]) -> Norms {
    let mut out = Norms::default();
    for (p, v) in values.iter().enumerate() {
        let a2 = v.norm_sqr();
        let w = grid.node_weight(p);
        out.l2_sq += w * a2;
        out.l4_4 += w * a2 * a2;
        out.sup = out.sup.max(a2.sqrt());
    }
    out
}

pub(crate) fn weighted_inner(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(p, (x, y))| x * y.conj() * grid.node_weight(p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn periodic_grid_spacing() {
        let r = (16.0 * PI).sqrt();
        let g = Grid::new(r, 64, BoundaryKind::Periodic).unwrap();
        assert_eq!(g.flux(), Some(8));
        assert_relative_eq!(g.spacing(), r / 64.0, max_relative = 1e-15);
        assert_eq!(g.node_count(), 64 * 64);
    }

    #[test]
    fn non_integral_flux_is_rejected() {
        let err = Grid::new(5.0, 64, BoundaryKind::Periodic).unwrap_err();
        assert!(matches!(err, Error::NonIntegralFlux { .. }));
        assert!(Grid::new(5.0, 64, BoundaryKind::Dirichlet).is_ok());
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            Grid::new(5.0, 8, BoundaryKind::Neumann),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn snapped_side_is_quantized() {
        let r = (2.0 * PI * 3.0).sqrt() * (1.0 + 1e-14);
        let g = Grid::new(r, 32, BoundaryKind::Periodic).unwrap();
        assert_eq!(g.flux(), Some(3));
        assert_relative_eq!(g.area(), 6.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn constant_field_norms_on_neumann() {
        let g = Grid::new(5.0, 40, BoundaryKind::Neumann).unwrap();
        let u = ComplexField::constant(g, Complex64::new(1.0, 0.0));
        let n = u.norms();
        assert_relative_eq!(n.l2_sq, 25.0, max_relative = 1e-12);
        assert_relative_eq!(n.l4_4, 25.0, max_relative = 1e-12);
        assert_eq!(n.sup, 1.0);
    }

    #[test]
    fn constant_field_norms_on_periodic() {
        let g = Grid::with_flux(2, 32, BoundaryKind::Periodic).unwrap();
        let u = ComplexField::constant(g, Complex64::new(0.0, 2.0));
        let n = u.norms();
        assert_relative_eq!(n.l2_sq, 4.0 * g.area(), max_relative = 1e-12);
        assert_relative_eq!(n.l4_4, 16.0 * g.area(), max_relative = 1e-12);
    }

    #[test]
    fn zero_field_norms() {
        let g = Grid::new(3.0, 16, BoundaryKind::Dirichlet).unwrap();
        assert_eq!(ComplexField::zeros(g).norms(), Norms::default());
    }

    #[test]
    fn single_node_spike() {
        let g = Grid::new(4.0, 20, BoundaryKind::Neumann).unwrap();
        let mut u = ComplexField::zeros(g);
        u.values_mut()[g.index(7, 11)] = Complex64::new(3.0, 0.0);
        let n = u.norms();
        let h = g.spacing();
        assert_relative_eq!(n.l2_sq, h * h * 9.0, max_relative = 1e-14);
        assert_relative_eq!(n.l4_4, h * h * 81.0, max_relative = 1e-14);
    }

    #[test]
    fn dirichlet_fields_vanish_on_boundary() {
        let g = Grid::new(3.0, 16, BoundaryKind::Dirichlet).unwrap();
        let u = ComplexField::from_values(g, vec![Complex64::new(1.0, 1.0); g.node_count()]).unwrap();
        for p in 0..g.node_count() {
            let (i, j) = g.ij(p);
            if i == 0 || j == 0 || i == 16 || j == 16 {
                assert_eq!(u.values()[p], Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(g.active_count(), 15 * 15);
    }

    #[test]
    fn wrong_length_rejected() {
        let g = Grid::new(3.0, 16, BoundaryKind::Neumann).unwrap();
        assert!(ComplexField::from_values(g, vec![Complex64::new(0.0, 0.0); 3]).is_err());
    }
}
