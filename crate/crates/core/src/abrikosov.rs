//! Abrikosov functional `1/2 ||u||_4^4 - ||u||_2^2` restricted to the lowest
//! Landau band of a magnetic-periodic square.
//!
//! On a ray `u = t v` the minimum over `t` is `-||v||_2^4 / (2 ||v||_4^4)`,
//! so minimizing the energy over the band is minimizing the scale-invariant
//! ratio `beta(v) = R^2 ||v||_4^4 / ||v||_2^4` over the `N` complex
//! coefficients, and `e_Ab(R) / R^2 = -1 / (2 beta_min)`.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{lll_basis, EigenOptions, LandauBand};
use crate::error::{Error, Result};
use crate::grid::{norms_of, ComplexField, Grid};
use crate::linalg::{combine, winner, CZERO};
use crate::operator::MagneticOperator;
use crate::optim::{minimize, LbfgsOptions, Objective};
use crate::seeds::rng;

/// The lowest Landau band as the search space of the Abrikosov functional.
#[derive(Debug, Clone)]
pub struct LLLProblem {
    grid: Grid,
    basis: Vec<Vec<Complex64>>,
    mass: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl LLLProblem {
    pub fn new(op: &MagneticOperator, opts: &EigenOptions) -> Result<Self> {
        Ok(Self::from_band(op, lll_basis(op, opts)?))
    }

    pub fn from_band(op: &MagneticOperator, band: LandauBand) -> Self {
        LLLProblem {
            grid: *op.grid(),
            basis: band.eigen.vectors.into_iter().map(ComplexField::into_values).collect(),
            mass: op.mass().to_vec(),
            eigenvalues: band.eigen.eigenvalues,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn check(&self, c: &[Complex64]) -> Result<()> {
        if c.len() != self.dimension() {
            return Err(Error::LengthMismatch {
                expected: self.dimension(),
                got: c.len(),
            });
        }
        if c.iter().all(|x| x.norm_sqr() == 0.0) {
            return Err(Error::ZeroField);
        }
        Ok(())
    }

    /// `sum_k c_k phi_k`.
    pub fn field(&self, c: &[Complex64]) -> Result<ComplexField> {
        self.check(c)?;
        ComplexField::from_values(self.grid, combine(&self.basis, c.iter().cloned()))
    }

    /// `R^2 ||u||_4^4 / ||u||_2^4`.
    pub fn beta(&self, c: &[Complex64]) -> Result<f64> {
        let n = self.field(c)?.norms();
        Ok(self.grid.area() * n.l4_4 / (n.l2_sq * n.l2_sq))
    }
}

/// `1/2 ||u||_4^4 - ||u||_2^2` for `u = sum_k c_k phi_k`.
pub fn abrikosov_energy(p: &LLLProblem, c: &[Complex64]) -> Result<f64> {
    let n = p.field(c)?.norms();
    Ok(0.5 * n.l4_4 - n.l2_sq)
}

struct BetaObjective<'a> {
    p: &'a LLLProblem,
    unit: Vec<f64>,
}

impl Objective for BetaObjective<'_> {
    fn metric(&self) -> &[f64] {
        &self.unit
    }

    // The basis is orthonormal, so ||u||_2^2 = |c|^2 and
    // grad beta = R^2 [grad S / |c|^4 - 4 S c / |c|^6] with
    // (grad S)_k = 4 <|u|^2 u, phi_k>.
    fn value_grad(&self, c: &[Complex64], grad: &mut [Complex64]) -> f64 {
        let p = self.p;
        let mut u = combine(&p.basis, c.iter().cloned());
        let s = norms_of(&p.grid, &u).l4_4;
        u.iter_mut().for_each(|x| *x *= x.norm_sqr());
        let c2: f64 = c.iter().map(|x| x.norm_sqr()).sum();
        let area = p.grid.area();
        for ((g, phi), &ck) in grad.iter_mut().zip(&p.basis).zip(c) {
            let ds = winner(&p.mass, &u, phi) * 4.0;
            *g = (ds / (c2 * c2) - ck * (4.0 * s / (c2 * c2 * c2))) * area;
        }
        area * s / (c2 * c2)
    }

    fn renormalize(&self, c: &mut [Complex64]) -> Option<f64> {
        let norm = c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() < 1e-3 || !(norm > 0.0) {
            return None;
        }
        c.iter_mut().for_each(|x| *x /= norm);
        Some(norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrikosovOptions {
    /// Random coefficient starts besides the first basis vector.
    pub restarts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsOptions,
}

impl Default for AbrikosovOptions {
    fn default() -> Self {
        AbrikosovOptions {
            restarts: 8,
            seed: 0x5eed,
            lbfgs: LbfgsOptions {
                gtol: 1e-9,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbrikosovResult {
    pub side_length: f64,
    pub flux: u32,
    /// `e_Ab(R)`.
    pub energy: f64,
    pub energy_per_area: f64,
    pub beta: f64,
    /// Optimal coefficients, normalized to `|c| = 1`, optimal amplitude not
    /// included.
    pub coefficients: Vec<Complex64>,
    pub restart_betas: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

/// Minimizes `beta` over the band coefficients from `e_1` and random
/// starts; the amplitude is then fixed in closed form.
pub fn minimize_abrikosov(p: &LLLProblem, opts: &AbrikosovOptions) -> Result<AbrikosovResult> {
    let dim = p.dimension();
    let flux = p.grid.flux().ok_or(Error::NotPeriodic)?;
    let mut starts = Vec::with_capacity(opts.restarts + 1);
    let mut first = vec![CZERO; dim];
    first[0] = Complex64::new(1.0, 0.0);
    starts.push(first);
    for r in 0..opts.restarts {
        let mut g = rng(opts.seed, 100 + r as u64);
        starts.push(
            (0..dim)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut g);
                    let b: f64 = StandardNormal.sample(&mut g);
                    Complex64::new(a, b)
                })
                .collect(),
        );
    }
    let obj = BetaObjective {
        p,
        unit: vec![1.0; dim],
    };
    let runs: Vec<_> = starts
        .into_par_iter()
        .map(|mut c| {
            let norm = c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            let rep = if dim > 1 {
                Some(minimize(&obj, &mut c, &opts.lbfgs))
            } else {
                None
            };
            let norm = c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            (c, rep)
        })
        .collect();
    let betas: Vec<f64> = runs.iter().map(|(c, _)| p.beta(c)).collect::<Result<_>>()?;
    let best = (0..betas.len()).fold(0, |best, i| if betas[i] < betas[best] { i } else { best });
    let (c, rep) = runs.into_iter().nth(best).expect("best index in range");
    let beta = betas[best];
    let area = p.grid.area();
    Ok(AbrikosovResult {
        side_length: p.grid.side_length(),
        flux,
        energy: -area / (2.0 * beta),
        energy_per_area: -1.0 / (2.0 * beta),
        beta,
        coefficients: c,
        restart_betas: betas,
        converged: rep.map_or(true, |r| r.converged()),
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryKind;

    fn problem(flux: u32, n: usize) -> LLLProblem {
        let g = Grid::with_flux(flux, n, BoundaryKind::Periodic).unwrap();
        LLLProblem::new(&MagneticOperator::unit_field(&g), &EigenOptions::default()).unwrap()
    }

    #[test]
    fn single_state_band_has_closed_form_optimum() {
        let p = problem(1, 24);
        let phi = p.field(&[Complex64::new(1.0, 0.0)]).unwrap().norms();
        // quartic in t: 1/2 t^4 l4 - t^2 with ||phi||_2 = 1, optimum -1 / (2 l4)
        let t2 = 1.0 / phi.l4_4;
        let e = abrikosov_energy(&p, &[Complex64::new(t2.sqrt(), 0.0)]).unwrap();
        assert!((e + 1.0 / (2.0 * phi.l4_4)).abs() < 1e-12);
        let r = minimize_abrikosov(&p, &AbrikosovOptions::default()).unwrap();
        assert!((r.energy - e).abs() < 1e-10);
        assert!((r.beta - p.grid().area() * phi.l4_4).abs() < 1e-10);
    }

    #[test]
    fn phase_invariance_and_errors() {
        let p = problem(2, 24);
        let c = [Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.5)];
        let rot = Complex64::from_polar(1.0, 1.234);
        let c2 = [c[0] * rot, c[1] * rot];
        let a = abrikosov_energy(&p, &c).unwrap();
        assert!((a - abrikosov_energy(&p, &c2).unwrap()).abs() < 1e-13);
        assert_eq!(abrikosov_energy(&p, &[CZERO, CZERO]), Err(Error::ZeroField));
        assert!(matches!(
            abrikosov_energy(&p, &[Complex64::new(1.0, 0.0)]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = problem(2, 24);
        let obj = BetaObjective { p: &p, unit: vec![1.0; 2] };
        let c = [Complex64::new(0.8, 0.1), Complex64::new(-0.2, 0.5)];
        let d = [Complex64::new(0.3, -0.7), Complex64::new(0.4, 0.2)];
        let mut g = [CZERO; 2];
        obj.value_grad(&c, &mut g);
        let f = |s: f64| p.beta(&[c[0] + d[0] * s, c[1] + d[1] * s]).unwrap();
        let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
        let an = crate::linalg::wdot(&[1.0, 1.0], &g, &d);
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} {an}");
    }

    #[test]
    fn two_state_band_matches_brute_force_scan() {
        let p = problem(2, 32);
        // c = (cos a, e^{i phi} sin a) covers the band up to global phase and scale
        let steps = 120;
        let mut brute = f64::INFINITY;
        for i in 0..=steps {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64;
            for j in 0..(2 * steps) {
                let phi = std::f64::consts::PI * j as f64 / steps as f64;
                let c = [Complex64::new(a.cos(), 0.0), Complex64::from_polar(a.sin(), phi)];
                brute = brute.min(p.beta(&c).unwrap());
            }
        }
        let r = minimize_abrikosov(&p, &AbrikosovOptions::default()).unwrap();
        assert!(r.beta <= brute + 1e-9);
        assert!(brute - r.beta < 1e-3, "{} vs {brute}", r.beta);
    }

    #[test]
    fn energy_per_area_in_range_and_beta_above_one() {
        let p = problem(4, 40);
        let r = minimize_abrikosov(&p, &AbrikosovOptions::default()).unwrap();
        assert!(r.beta >= 1.0);
        assert!(r.energy_per_area >= -0.5 && r.energy_per_area < 0.0);
        assert!(r.restart_betas.iter().all(|&b| b >= r.beta));
    }
}
