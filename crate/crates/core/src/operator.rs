//! Discrete magnetic Laplacian `P = -(grad - i A0)^2` built from link phases.
//!
//! The quadratic form is the edge sum
//!
//! ```text
//! q(u) = sum_edges w_e |U_e u(q) - u(p)|^2
//! ```
//!
//! with `w_e = 1` in the bulk and `w_e = 1/2` on edges lying along a closed
//! boundary line (the trapezoid weight of the transverse direction). The
//! operator is `P = M^{-1} K` where `K` is the Hermitian matrix of `q` and `M`
//! the diagonal quadrature mass, so `P` is self-adjoint for the weighted inner
//! product `<u, v> = sum h^2 w u conj(v)`. In the bulk this is the five-point
//! stencil `h^-2 sum_dirs (u(x) - U u(x + h e))`; on Neumann lines it reduces
//! to the ghost-point stencil, on Dirichlet grids the pinned boundary values
//! act as zeros and on periodic grids the wrap links carry the magnetic
//! translation phases.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{weighted_inner, ComplexField, Grid};
use crate::links::LinkField;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Matrix-free magnetic Laplacian on one grid.
#[derive(Debug, Clone)]
pub struct MagneticOperator {
    grid: Grid,
    links: LinkField,
    mass: Vec<f64>,
}

impl MagneticOperator {
    pub fn new(links: LinkField) -> Self {
        let grid = *links.grid();
        MagneticOperator {
            mass: grid.mass(),
            grid,
            links,
        }
    }

    /// Operator for the unit field on `grid`.
    pub fn unit_field(grid: &Grid) -> Self {
        MagneticOperator::new(LinkField::unit_field(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn links(&self) -> &LinkField {
        &self.links
    }

    /// Quadrature weights of the unknowns (zero on pinned nodes).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn dim(&self) -> usize {
        self.grid.node_count()
    }

    /// Calls `f(p, q, weight, link)` for every edge `p -> q`.
    #[inline]
    fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64, Complex64)) {
        let g = &self.grid;
        let s = g.nodes_per_side();
        let periodic = g.is_periodic();
        let ux = self.links.x_links();
        let uy = self.links.y_links();
        for j in 0..s {
            let wj = g.line_weight(j);
            let row = j * s;
            for i in 0..s {
                let p = row + i;
                if i + 1 < s {
                    f(p, p + 1, wj, ux[p]);
                } else if periodic {
                    f(p, row, wj, ux[p]);
                }
                if j + 1 < s {
                    f(p, p + s, g.line_weight(i), uy[p]);
                } else if periodic {
                    f(p, i, g.line_weight(i), uy[p]);
                }
            }
        }
    }

    /// `q(u) = sum_edges w_e |U_e u_q - u_p|^2`.
    pub fn form(&self, u: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_edge(|p, q, w, link| {
            acc += w * (link * u[q] - u[p]).norm_sqr();
        });
        acc
    }

    /// `out = K u`, the (unweighted) Hermitian matrix of the form, zero on
    /// pinned nodes.
    pub fn apply_stiffness(&self, u: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = ZERO);
        self.for_each_edge(|p, q, w, link| {
            let d = link * u[q] - u[p];
            out[p] -= d * w;
            out[q] += link.conj() * d * w;
        });
        for (o, &m) in out.iter_mut().zip(&self.mass) {
            if m == 0.0 {
                *o = ZERO;
            }
        }
    }

    /// `out = P u = M^{-1} K u`.
    pub fn apply_into(&self, u: &[Complex64], out: &mut [Complex64]) {
        self.apply_stiffness(u, out);
        for (o, &m) in out.iter_mut().zip(&self.mass) {
            if m > 0.0 {
                *o /= m;
            }
        }
    }

    /// `P u` for a field on this operator's grid.
    pub fn apply(&self, u: &ComplexField) -> Result<ComplexField> {
        if *u.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![ZERO; self.dim()];
        self.apply_into(u.values(), &mut out);
        ComplexField::from_values(self.grid, out)
    }

    /// Diagonal of `P` (zero on pinned nodes).
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        self.for_each_edge(|p, q, w, _| {
            d[p] += w;
            d[q] += w;
        });
        for (x, &m) in d.iter_mut().zip(&self.mass) {
            *x = if m > 0.0 { *x / m } else { 0.0 };
        }
        d
    }

    /// Weighted inner product `sum h^2 w a conj(b)`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        weighted_inner(&self.grid, a, b)
    }

    /// Rayleigh quotient `q(u) / ||u||^2`.
    pub fn rayleigh(&self, u: &[Complex64]) -> f64 {
        self.form(u) / self.inner(u, u).re
    }

    /// Same operator after the gauge change `u -> exp(i chi) u`.
    pub fn gauge_transformed(&self, chi: &[f64]) -> Result<Self> {
        Ok(MagneticOperator::new(self.links.gauge_transformed(chi)?))
    }
}
