//! Lowest eigenpairs of the magnetic Laplacian and the lowest-Landau-level
//! basis.
//!
//! The iterative solver is a Chebyshev-filtered block subspace iteration:
//! each sweep applies a degree-`d` Chebyshev polynomial of `P` that damps the
//! interval `[theta_max, lambda_upper]` (current largest Ritz value up to a
//! Gershgorin bound), re-orthonormalizes the block in the quadrature metric
//! and performs a Rayleigh-Ritz projection. It is matrix-free, needs only a
//! handful of dense projections and converges robustly on the highly
//! degenerate Landau bands.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ComplexField;
use crate::linalg::{combine, hermitian_eigen, orthonormalize, winner, wnorm, CZERO};
use crate::operator::MagneticOperator;
use crate::seeds::random_field_stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Residual target `||P x - theta x|| <= tol * max(1, |theta|)`.
    pub tol: f64,
    /// Maximum number of filter sweeps.
    pub max_iter: usize,
    pub seed: u64,
    /// Chebyshev filter degree; `None` scales it with the square root of the
    /// spectral radius.
    pub degree: Option<usize>,
    /// Extra block vectors beyond the requested count; `None` picks
    /// `max(6, k / 2)`.
    pub guard: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-9,
            max_iter: 3000,
            seed: 0x5eed,
            degree: None,
            guard: None,
        }
    }
}

/// Converged eigenpairs, ascending.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// Unconverged Ritz values of the guard vectors, ascending.
    pub ritz_tail: Vec<f64>,
    pub vectors: Vec<ComplexField>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl EigenResult {
    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self, op: &MagneticOperator) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate() {
                let g = op.inner(a.values(), b.values());
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

struct RitzBlock {
    x: Vec<Vec<Complex64>>,
    ax: Vec<Vec<Complex64>>,
    theta: Vec<f64>,
}

fn rayleigh_ritz(op: &MagneticOperator, basis: Vec<Vec<Complex64>>) -> RitzBlock {
    let w = op.mass();
    let m = basis.len();
    let applied: Vec<Vec<Complex64>> = basis
        .iter()
        .map(|v| {
            let mut out = vec![CZERO; v.len()];
            op.apply_into(v, &mut out);
            out
        })
        .collect();
    // H_ij = <P b_j, b_i>
    let h = DMatrix::from_fn(m, m, |i, j| winner(w, &applied[j], &basis[i]));
    let (theta, c) = hermitian_eigen(h);
    let x = (0..m)
        .map(|col| combine(&basis, (0..m).map(|r| c[(r, col)])))
        .collect();
    let ax = (0..m)
        .map(|col| combine(&applied, (0..m).map(|r| c[(r, col)])))
        .collect();
    RitzBlock { x, ax, theta }
}

/// Applies the scaled Chebyshev filter damping `[a, b]` to `x`, normalised
/// so that the value near `a0` stays O(1).
fn chebyshev_filter(
    op: &MagneticOperator,
    x: &[Complex64],
    degree: usize,
    a: f64,
    b: f64,
    a0: f64,
) -> Vec<Complex64> {
    let e = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    let mut sigma = e / (a0 - c);
    let tau = 2.0 / sigma;
    let n = x.len();
    let mut prev = x.to_vec();
    let mut px = vec![CZERO; n];
    op.apply_into(&prev, &mut px);
    let s = sigma / e;
    let mut cur: Vec<Complex64> = px.iter().zip(&prev).map(|(p, v)| (p - v * c) * s).collect();
    let mut next = vec![CZERO; n];
    for _ in 1..degree {
        let sigma_new = 1.0 / (tau - sigma);
        op.apply_into(&cur, &mut px);
        let s1 = 2.0 * sigma_new / e;
        let s2 = sigma * sigma_new;
        for i in 0..n {
            next[i] = (px[i] - cur[i] * c) * s1 - prev[i] * s2;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        sigma = sigma_new;
    }
    cur
}

/// The `k` smallest eigenpairs of `op`.
pub fn lowest_eigenpairs(op: &MagneticOperator, k: usize, opts: &EigenOptions) -> Result<EigenResult> {
    let grid = *op.grid();
    let active = grid.active_count();
    if k == 0 || k > active {
        return Err(Error::Precondition(format!(
            "requested {k} eigenpairs of an operator with {active} unknowns"
        )));
    }
    let guard = opts.guard.unwrap_or((k / 2).max(6));
    let mut m = k + guard;
    if let Some(flux) = grid.flux() {
        // Landau bands are exactly flux-fold degenerate; the filter edge must
        // sit above the band that holds the last wanted state.
        let flux = flux as usize;
        m = m.max(k.div_ceil(flux) * flux + 2);
    } else if opts.guard.is_none() {
        // closed squares carry about R^2 / (2 pi) nearly degenerate bulk
        // states just above the edge states
        let bulk_states = (grid.area() / (2.0 * std::f64::consts::PI)).ceil() as usize;
        m = m.max(k + bulk_states + 2);
    }
    let m = m.min(active);
    let w = op.mass();
    let upper = 1.01 * 2.0 * op.diagonal().iter().cloned().fold(0.0, f64::max);
    let degree = opts
        .degree
        .unwrap_or_else(|| ((0.5 * upper.sqrt()).round() as usize).clamp(16, 64));

    let start: Vec<Vec<Complex64>> = (0..m as u64)
        .map(|s| random_field_stream(&grid, opts.seed, s).into_values())
        .collect();
    let mut basis = orthonormalize(w, &[], start, 1e-12);
    let mut refill = m as u64;
    let mut block = rayleigh_ritz(op, std::mem::take(&mut basis));

    let mut iterations = 0;
    loop {
        let residuals: Vec<f64> = (0..k)
            .map(|i| {
                let r: Vec<Complex64> = block.ax[i]
                    .iter()
                    .zip(&block.x[i])
                    .map(|(a, x)| a - x * block.theta[i])
                    .collect();
                wnorm(w, &r)
            })
            .collect();
        let converged = residuals
            .iter()
            .zip(&block.theta)
            .all(|(r, t)| *r <= opts.tol * t.abs().max(1.0));
        if converged {
            let vectors = block.x[..k]
                .iter()
                .map(|v| ComplexField::from_values(grid, v.clone()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(EigenResult {
                eigenvalues: block.theta[..k].to_vec(),
                ritz_tail: block.theta[k..].to_vec(),
                vectors,
                residuals,
                iterations,
                seed: opts.seed,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: residuals.iter().cloned().fold(0.0, f64::max),
            });
        }
        iterations += 1;

        let a = *block.theta.last().unwrap();
        let mut a0 = block.theta[0];
        let width = upper - a;
        if a - a0 < 1e-3 * width {
            a0 = a - 1e-3 * width;
        }
        let filtered: Vec<Vec<Complex64>> = block
            .x
            .iter()
            .map(|v| chebyshev_filter(op, v, degree, a, upper, a0))
            .collect();
        let mut basis = orthonormalize(w, &[], filtered, 1e-10);
        while basis.len() < m {
            let extra = random_field_stream(&grid, opts.seed, refill).into_values();
            refill += 1;
            let mut more = orthonormalize(w, &basis, vec![extra], 1e-10);
            basis.append(&mut more);
        }
        block = rayleigh_ritz(op, basis);
    }
}

/// Basis of the lowest Landau band of a magnetic-periodic operator.
#[derive(Debug, Clone)]
pub struct LandauBand {
    pub eigen: EigenResult,
    /// Band mean of the next band among the computed eigenvalues.
    pub next_band_mean: f64,
    /// `(next mean - lowest mean) / lowest mean`.
    pub relative_gap: f64,
}

/// Minimum relative gap between band means for the lowest band to count as
/// resolved.
pub const MIN_RELATIVE_GAP: f64 = 0.5;

/// Orthonormal basis of the lowest Landau band of a periodic operator.
///
/// Computes a few more eigenpairs than the flux count, locates the largest
/// relative jump in the spectrum and checks that the band below it has
/// exactly `N = R^2 / (2 pi)` members and is separated by a relative gap of
/// at least [`MIN_RELATIVE_GAP`].
pub fn lll_basis(op: &MagneticOperator, opts: &EigenOptions) -> Result<LandauBand> {
    let flux = op.grid().flux().ok_or(Error::NotPeriodic)? as usize;
    let mut eig = lowest_eigenpairs(op, flux, opts)?;
    // the guard Ritz values reach into the next band; good enough to locate the gap
    let vals: Vec<f64> = eig.eigenvalues.iter().chain(&eig.ritz_tail).cloned().collect();
    let (cut, _) = (1..vals.len())
        .map(|i| (i, (vals[i] - vals[i - 1]) / vals[i - 1].abs().max(1e-300)))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    if cut == 0 {
        return Err(Error::GapNotResolved("no eigenvalue above the band".into()));
    }
    let low_mean = vals[..cut].iter().sum::<f64>() / cut as f64;
    let high = &vals[cut..];
    let high_mean = high.iter().sum::<f64>() / high.len() as f64;
    let rel = (high_mean - low_mean) / low_mean;
    if rel < MIN_RELATIVE_GAP {
        return Err(Error::GapNotResolved(format!(
            "relative gap {rel:.3} between band means below {MIN_RELATIVE_GAP}"
        )));
    }
    if cut != flux {
        return Err(Error::GapNotResolved(format!(
            "found {cut} states below the gap, flux count is {flux}"
        )));
    }
    eig.ritz_tail = high.to_vec();
    Ok(LandauBand {
        eigen: eig,
        next_band_mean: high_mean,
        relative_gap: rel,
    })
}

/// All eigenvalues of the operator restricted to its unknowns, by dense
/// diagonalisation of `M^{-1/2} K M^{-1/2}`. Only for small grids; serves as
/// an independent check of the iterative solver.
pub fn dense_eigenvalues(op: &MagneticOperator) -> Vec<f64> {
    let grid = op.grid();
    let active: Vec<usize> = (0..grid.node_count()).filter(|&p| grid.is_active(p)).collect();
    let w = op.mass();
    let n = active.len();
    let mut h = DMatrix::from_element(n, n, CZERO);
    let mut unit = vec![CZERO; grid.node_count()];
    let mut col = vec![CZERO; grid.node_count()];
    for (c, &p) in active.iter().enumerate() {
        unit[p] = Complex64::new(1.0, 0.0);
        op.apply_stiffness(&unit, &mut col);
        unit[p] = CZERO;
        for (r, &q) in active.iter().enumerate() {
            h[(r, c)] = col[q] / (w[p] * w[q]).sqrt();
        }
    }
    hermitian_eigen(h).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryKind, Grid};

    fn opts() -> EigenOptions {
        EigenOptions::default()
    }

    #[test]
    fn matches_dense_oracle_on_coarse_grids() {
        for kind in BoundaryKind::ALL {
            let g = Grid::with_flux(2, 16, kind).unwrap();
            let op = MagneticOperator::unit_field(&g);
            let dense = dense_eigenvalues(&op);
            let it = lowest_eigenpairs(&op, 5, &opts()).unwrap();
            for (a, b) in it.eigenvalues.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "{kind}: {a} vs {b}");
            }
            assert!(it.orthonormality_defect(&op) < 1e-8);
        }
    }

    #[test]
    fn landau_clustering_periodic() {
        let g = Grid::with_flux(4, 48, BoundaryKind::Periodic).unwrap();
        let op = MagneticOperator::unit_field(&g);
        let eig = lowest_eigenpairs(&op, 6, &opts()).unwrap();
        let v = &eig.eigenvalues;
        for i in 1..4 {
            assert!((v[i] - v[0]).abs() < 1e-8, "{v:?}");
        }
        assert!((v[0] - 1.0).abs() < 2e-2);
        assert!(v[4] > 2.5);
    }

    #[test]
    fn lll_basis_dimension_equals_flux() {
        let g = Grid::with_flux(1, 48, BoundaryKind::Periodic).unwrap();
        let op = MagneticOperator::unit_field(&g);
        let band = lll_basis(&op, &opts()).unwrap();
        assert_eq!(band.eigen.vectors.len(), 1);
        assert!(band.relative_gap > 1.0);
    }

    #[test]
    fn lll_basis_rejects_closed_grids() {
        let g = Grid::with_flux(1, 16, BoundaryKind::Dirichlet).unwrap();
        let op = MagneticOperator::unit_field(&g);
        assert!(matches!(lll_basis(&op, &opts()), Err(Error::NotPeriodic)));
    }

    #[test]
    fn too_coarse_grid_does_not_resolve_band() {
        // half a flux quantum per plaquette: the two lowest lattice bands touch
        let g = Grid::with_flux(128, 16, BoundaryKind::Periodic).unwrap();
        let op = MagneticOperator::unit_field(&g);
        assert!(matches!(lll_basis(&op, &opts()), Err(Error::GapNotResolved(_))));
    }

    #[test]
    fn boundary_ordering_of_ground_state() {
        let side = (16.0 * std::f64::consts::PI).sqrt();
        let mut lowest = Vec::new();
        for kind in [BoundaryKind::Neumann, BoundaryKind::Periodic, BoundaryKind::Dirichlet] {
            let g = Grid::new(side, 40, kind).unwrap();
            let op = MagneticOperator::unit_field(&g);
            lowest.push(lowest_eigenpairs(&op, 1, &opts()).unwrap().eigenvalues[0]);
        }
        assert!(lowest[0] < 1.0 && lowest[0] <= lowest[1] && lowest[1] <= lowest[2], "{lowest:?}");
        assert!(lowest[2] > 1.0);
    }
}
