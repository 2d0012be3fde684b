//! Peierls link phases for the unit magnetic field.
//!
//! We use the potential `A0(x) = (-x2, x1) / 2`, which has `curl A0 = +1`.
//! The link on the directed edge `p -> p + h e_k` is
//! `U = exp(-i \int_edge A0 . dl)`, so that `U u(p + h e_k) - u(p)` is the
//! gauge-covariant difference approximating `h (d_k - i A0_k) u`.
//! Because `A0_1` depends only on `x2` (and `A0_2` only on `x1`) the line
//! integrals are exact:
//!
//! ```text
//! U_x(x1, x2) = exp(+i x2 h / 2),   U_y(x1, x2) = exp(-i x1 h / 2).
//! ```
//!
//! Every plaquette, traversed counter-clockwise, then carries the product
//! `exp(-i h^2)`.
//!
//! Magnetic-periodic fields obey the magnetic translations compatible with
//! `A0(x + R e1) = A0(x) + grad(R x2 / 2)` and `A0(x + R e2) = A0(x) - grad(R x1 / 2)`:
//!
//! ```text
//! u(x1 + R, x2) = exp(+i R x2 / 2) u(x1, x2)
//! u(x1, x2 + R) = exp(-i R x1 / 2) u(x1, x2)
//! ```
//!
//! The two translations commute exactly when `R^2 = 2 pi N`. The wrap-around
//! edges fold the translation phase into their link so that the stored nodes
//! only ever see single-valued phases.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Unit-modulus phase for every directed grid edge.
///
/// `x_links()[p]` belongs to the edge `p -> p + h e1` and `y_links()[p]` to
/// `p -> p + h e2`. Edges leaving the last grid line of a closed grid do not
/// exist; their slots hold `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkField {
    grid: Grid,
    ux: Vec<Complex64>,
    uy: Vec<Complex64>,
}

impl LinkField {
    /// Links of the unit field `A0`.
    pub fn unit_field(grid: &Grid) -> Self {
        Self::constant_field(grid, 1.0)
    }

    /// Links of the field `strength * curl A0`, i.e. potential `strength * A0`.
    pub fn constant_field(grid: &Grid, strength: f64) -> Self {
        let h = grid.spacing();
        let r = grid.side_length();
        let s = grid.nodes_per_side();
        let mut ux = vec![Complex64::new(1.0, 0.0); grid.node_count()];
        let mut uy = ux.clone();
        for j in 0..s {
            for i in 0..s {
                let p = grid.index(i, j);
                let (x1, x2) = (grid.coord(i), grid.coord(j));
                if grid.is_periodic() || i < grid.cells() {
                    let mut phase = strength * x2 * h / 2.0;
                    if grid.is_periodic() && i == s - 1 {
                        phase += strength * r * x2 / 2.0;
                    }
                    ux[p] = Complex64::from_polar(1.0, phase);
                }
                if grid.is_periodic() || j < grid.cells() {
                    let mut phase = -strength * x1 * h / 2.0;
                    if grid.is_periodic() && j == s - 1 {
                        phase -= strength * r * x1 / 2.0;
                    }
                    uy[p] = Complex64::from_polar(1.0, phase);
                }
            }
        }
        LinkField { grid: *grid, ux, uy }
    }

    /// All links equal to one (zero magnetic field). Only meaningful for
    /// closed grids; on a periodic grid it describes a flat torus.
    pub fn trivial(grid: &Grid) -> Self {
        let one = vec![Complex64::new(1.0, 0.0); grid.node_count()];
        LinkField {
            grid: *grid,
            ux: one.clone(),
            uy: one,
        }
    }

    /// Builds a link field from explicit phases.
    pub fn from_phases(grid: &Grid, ux: Vec<Complex64>, uy: Vec<Complex64>) -> Result<Self> {
        for v in [&ux, &uy] {
            if v.len() != grid.node_count() {
                return Err(Error::LengthMismatch {
                    expected: grid.node_count(),
                    got: v.len(),
                });
            }
        }
        Ok(LinkField { grid: *grid, ux, uy })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn x_links(&self) -> &[Complex64] {
        &self.ux
    }

    pub fn y_links(&self) -> &[Complex64] {
        &self.uy
    }

    /// Neighbour index of `p` in `+x`, if the edge exists.
    #[inline]
    pub fn right(&self, p: usize) -> Option<usize> {
        let g = &self.grid;
        let s = g.nodes_per_side();
        let (i, j) = g.ij(p);
        if i + 1 < s {
            Some(g.index(i + 1, j))
        } else if g.is_periodic() {
            Some(g.index(0, j))
        } else {
            None
        }
    }

    /// Neighbour index of `p` in `+y`, if the edge exists.
    #[inline]
    pub fn up(&self, p: usize) -> Option<usize> {
        let g = &self.grid;
        let s = g.nodes_per_side();
        let (i, j) = g.ij(p);
        if j + 1 < s {
            Some(g.index(i, j + 1))
        } else if g.is_periodic() {
            Some(g.index(i, 0))
        } else {
            None
        }
    }

    /// Ordered product of the four links around the plaquette whose lower-left
    /// corner is `(i, j)`, traversed counter-clockwise.
    pub fn plaquette(&self, i: usize, j: usize) -> Complex64 {
        let g = &self.grid;
        let p00 = g.index(i, j);
        let p10 = self.right(p00).expect("plaquette outside grid");
        let p01 = self.up(p00).expect("plaquette outside grid");
        self.ux[p00] * self.uy[p10] * self.ux[p01].conj() * self.uy[p00].conj()
    }

    /// Number of plaquettes along one axis.
    pub fn plaquettes_per_side(&self) -> usize {
        self.grid.cells()
    }

    /// Links after the gauge change `u_p -> exp(i chi_p) u_p`:
    /// `U_{p->q} -> exp(i chi_p) U_{p->q} exp(-i chi_q)`.
    pub fn gauge_transformed(&self, chi: &[f64]) -> Result<Self> {
        let g = &self.grid;
        if chi.len() != g.node_count() {
            return Err(Error::LengthMismatch {
                expected: g.node_count(),
                got: chi.len(),
            });
        }
        let mut out = self.clone();
        for p in 0..g.node_count() {
            if let Some(q) = self.right(p) {
                out.ux[p] *= Complex64::from_polar(1.0, chi[p] - chi[q]);
            }
            if let Some(q) = self.up(p) {
                out.uy[p] *= Complex64::from_polar(1.0, chi[p] - chi[q]);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryKind;

    fn max_plaquette_defect(links: &LinkField) -> f64 {
        let h = links.grid().spacing();
        let expected = Complex64::from_polar(1.0, -h * h);
        let m = links.plaquettes_per_side();
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for i in 0..m {
                worst = worst.max((links.plaquette(i, j) - expected).norm());
            }
        }
        worst
    }

    #[test]
    fn phases_are_unimodular() {
        let g = Grid::with_flux(8, 48, BoundaryKind::Periodic).unwrap();
        let l = LinkField::unit_field(&g);
        for u in l.x_links().iter().chain(l.y_links()) {
            assert!((u.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interior_plaquettes_carry_minus_h_squared() {
        for kind in BoundaryKind::ALL {
            let g = Grid::with_flux(4, 40, kind).unwrap();
            let l = LinkField::unit_field(&g);
            assert!(max_plaquette_defect(&l) < 1e-12, "{kind}");
        }
    }

    #[test]
    fn periodic_wrap_plaquettes_are_uniform() {
        // includes the seam and corner plaquettes, only consistent for integral flux
        for flux in [1, 3, 8, 16] {
            let g = Grid::with_flux(flux, 33, BoundaryKind::Periodic).unwrap();
            let l = LinkField::unit_field(&g);
            assert!(max_plaquette_defect(&l) < 1e-12, "flux {flux}");
        }
    }

    #[test]
    fn total_flux_is_quantized() {
        let g = Grid::with_flux(5, 40, BoundaryKind::Periodic).unwrap();
        let h = g.spacing();
        let total = (g.cells() * g.cells()) as f64 * h * h;
        assert!((total - 2.0 * std::f64::consts::PI * 5.0).abs() < 1e-10);
    }

    #[test]
    fn refinement_quarters_plaquette_flux() {
        let g1 = Grid::new(4.0, 20, BoundaryKind::Neumann).unwrap();
        let g2 = Grid::new(4.0, 40, BoundaryKind::Neumann).unwrap();
        let a1 = -LinkField::unit_field(&g1).plaquette(3, 3).arg();
        let a2 = -LinkField::unit_field(&g2).plaquette(3, 3).arg();
        assert!((a1 / a2 - 4.0).abs() < 1e-10);
    }

    #[test]
    fn gauge_transform_preserves_plaquettes() {
        let g = Grid::with_flux(2, 24, BoundaryKind::Periodic).unwrap();
        let l = LinkField::unit_field(&g);
        let chi: Vec<f64> = (0..g.node_count()).map(|p| (p as f64 * 0.37).sin() * 3.0).collect();
        let t = l.gauge_transformed(&chi).unwrap();
        for j in 0..24 {
            for i in 0..24 {
                assert!((l.plaquette(i, j) - t.plaquette(i, j)).norm() < 1e-12);
            }
        }
    }
}
