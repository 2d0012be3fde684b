//! Nonlinear bulk functional
//!
//! ```text
//! E(u; b, R) = b q(u) - ||u||_2^2 + 1/2 ||u||_4^4
//! ```
//!
//! and its ground-state energy `e(b, R)` on one grid and boundary condition.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{lowest_eigenpairs, EigenOptions};
use crate::error::{Error, Result};
use crate::grid::{norms_of, ComplexField, Grid, Norms};
use crate::linalg::{wnorm, CZERO};
use crate::operator::MagneticOperator;
use crate::optim::{minimize, LbfgsOptions, LbfgsReport, Objective};
use crate::seeds::random_field_stream;

/// Solver settings shared by the bulk and quotient minimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Random starts in addition to the lowest-eigenfield start.
    pub restarts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsOptions,
    pub eigen: EigenOptions,
    /// Heat-flow time used to smooth random starts to the magnetic length.
    pub smoothing_time: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            restarts: 4,
            seed: 0x5eed,
            lbfgs: LbfgsOptions::default(),
            eigen: EigenOptions::default(),
            smoothing_time: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// `b lambda_1 >= 1`: zero is the global minimizer, no iteration run.
    Trivial,
    /// No start reached a negative value.
    NoDescent,
    NotConverged,
}

/// Starting fields for a minimization: the lowest eigenfield followed by
/// smoothed random fields, all normalized in the discrete `L^2` norm.
#[derive(Debug, Clone)]
pub struct StartSet {
    pub lambda1: f64,
    pub fields: Vec<Vec<Complex64>>,
}

pub fn starting_fields(op: &MagneticOperator, opts: &MinimizeOptions) -> Result<StartSet> {
    let mut eig_opts = opts.eigen;
    eig_opts.seed = opts.seed;
    let eig = lowest_eigenpairs(op, 1, &eig_opts)?;
    let mut fields = vec![eig.vectors[0].values().to_vec()];
    let grid = op.grid();
    let h2 = grid.spacing().powi(2);
    let tau = 0.2 * h2;
    let steps = (opts.smoothing_time / tau).ceil() as usize;
    let mut pu = vec![CZERO; op.dim()];
    for r in 0..opts.restarts {
        let mut u = random_field_stream(grid, opts.seed, 1 + r as u64).into_values();
        for _ in 0..steps {
            op.apply_into(&u, &mut pu);
            u.iter_mut().zip(&pu).for_each(|(a, b)| *a -= b * tau);
        }
        let norm = wnorm(op.mass(), &u);
        u.iter_mut().for_each(|v| *v /= norm);
        fields.push(u);
    }
    Ok(StartSet {
        lambda1: eig.eigenvalues[0],
        fields,
    })
}

/// `b q(u) - ||u||_2^2 + 1/2 ||u||_4^4` for any `b`; no range check, so it
/// also serves evaluation at `b = 0`.
pub fn bulk_functional(op: &MagneticOperator, b: f64, u: &[Complex64]) -> f64 {
    let n = norms_of(op.grid(), u);
    b * op.form(u) - n.l2_sq + 0.5 * n.l4_4
}

/// `b in (0, 1]` with the unit-field operator on one grid.
#[derive(Debug, Clone)]
pub struct BulkProblem {
    b: f64,
    op: MagneticOperator,
}

pub(crate) fn check_b(b: f64, upper_open: bool) -> Result<()> {
    let ok = if upper_open { b > 0.0 && b < 1.0 } else { b > 0.0 && b <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "b",
            value: b,
            range: if upper_open { "(0, 1)" } else { "(0, 1]" },
        })
    }
}

impl BulkProblem {
    pub fn new(b: f64, grid: &Grid) -> Result<Self> {
        Self::with_operator(b, MagneticOperator::unit_field(grid))
    }

    pub fn with_operator(b: f64, op: MagneticOperator) -> Result<Self> {
        check_b(b, false)?;
        Ok(BulkProblem { b, op })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn operator(&self) -> &MagneticOperator {
        &self.op
    }
}

/// `E(u; b, R)` for a field on the problem's grid.
pub fn bulk_energy(p: &BulkProblem, u: &ComplexField) -> Result<f64> {
    if u.grid() != p.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(bulk_functional(&p.op, p.b, u.values()))
}

struct BulkObjective<'a> {
    op: &'a MagneticOperator,
    b: f64,
}

impl Objective for BulkObjective<'_> {
    fn metric(&self) -> &[f64] {
        self.op.mass()
    }

    fn value_grad(&self, x: &[Complex64], grad: &mut [Complex64]) -> f64 {
        self.op.apply_into(x, grad);
        let m = self.op.mass();
        let mut f = 0.0;
        for ((g, &u), &w) in grad.iter_mut().zip(x).zip(m) {
            let a2 = u.norm_sqr();
            let pu = *g;
            f += w * (self.b * (pu.re * u.re + pu.im * u.im) - a2 + 0.5 * a2 * a2);
            *g = (pu * self.b - u + u * a2) * 2.0;
        }
        f
    }
}

/// Metric gradient `2 (b P u - u + |u|^2 u)` and its discrete `L^2` norm.
pub fn bulk_gradient_norm(op: &MagneticOperator, b: f64, u: &[Complex64]) -> f64 {
    let obj = BulkObjective { op, b };
    let mut g = vec![CZERO; u.len()];
    obj.value_grad(u, &mut g);
    wnorm(op.mass(), &g)
}

#[derive(Debug, Clone)]
pub struct BulkSolution {
    pub b: f64,
    pub energy: f64,
    pub field: ComplexField,
    pub grad_norm: f64,
    pub norms: Norms,
    /// `q(u)`.
    pub form: f64,
    pub lambda1: f64,
    pub status: SolveStatus,
    pub restart_energies: Vec<f64>,
    pub best_restart: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
}

impl BulkSolution {
    fn trivial(p: &BulkProblem, lambda1: f64, status: SolveStatus, energies: Vec<f64>, seed: u64) -> Self {
        BulkSolution {
            b: p.b,
            energy: 0.0,
            field: ComplexField::zeros(*p.grid()),
            grad_norm: 0.0,
            norms: Norms::default(),
            form: 0.0,
            lambda1,
            status,
            restart_energies: energies,
            best_restart: None,
            iterations: 0,
            seed,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.field.is_zero()
    }

    pub fn side_length(&self) -> f64 {
        self.field.grid().side_length()
    }
}

/// Scales `v` by the amplitude minimizing `t^2 E_lin(v) + t^4/2 ||v||_4^4`.
/// Fields with `E_lin(v) >= 0` are scaled to mean density `1 - b` instead.
pub fn amplitude_optimized(op: &MagneticOperator, b: f64, v: &[Complex64]) -> Vec<Complex64> {
    let n = norms_of(op.grid(), v);
    let lin = b * op.form(v) - n.l2_sq;
    let t2 = if lin < 0.0 {
        -lin / n.l4_4
    } else {
        (1.0 - b).max(0.05) * op.grid().area() / n.l2_sq
    };
    let t = t2.sqrt();
    v.iter().map(|x| x * t).collect()
}

fn run_bulk(p: &BulkProblem, mut x: Vec<Complex64>, opts: &LbfgsOptions) -> (Vec<Complex64>, LbfgsReport) {
    let obj = BulkObjective { op: &p.op, b: p.b };
    let rep = minimize(&obj, &mut x, opts);
    (x, rep)
}

fn package(p: &BulkProblem, x: Vec<Complex64>, rep: &LbfgsReport, lambda1: f64) -> Result<BulkSolution> {
    let field = ComplexField::from_values(*p.grid(), x)?;
    let norms = field.norms();
    let form = p.op.form(field.values());
    Ok(BulkSolution {
        b: p.b,
        energy: rep.value,
        grad_norm: rep.grad_norm,
        norms,
        form,
        lambda1,
        status: if rep.converged() {
            SolveStatus::Converged
        } else {
            SolveStatus::NotConverged
        },
        restart_energies: vec![rep.value],
        best_restart: Some(0),
        iterations: rep.iterations,
        seed: 0,
        field,
    })
}

/// Ground state of the bulk functional by multi-start L-BFGS.
///
/// Start 0 is the amplitude-optimized lowest eigenfield, starts `1..=m` are
/// smoothed random fields. The lowest final energy wins, ties going to the
/// lowest start index.
pub fn minimize_bulk(p: &BulkProblem, opts: &MinimizeOptions) -> Result<BulkSolution> {
    let starts = starting_fields(&p.op, opts)?;
    if p.b * starts.lambda1 >= 1.0 {
        return Ok(BulkSolution::trivial(p, starts.lambda1, SolveStatus::Trivial, vec![], opts.seed));
    }
    let runs: Vec<_> = starts
        .fields
        .into_par_iter()
        .map(|v| run_bulk(p, amplitude_optimized(&p.op, p.b, &v), &opts.lbfgs))
        .collect();
    let energies: Vec<f64> = runs.iter().map(|(_, r)| r.value).collect();
    let best = (0..runs.len()).fold(0, |best, i| if energies[i] < energies[best] { i } else { best });
    if !(energies[best] < 0.0) {
        return Ok(BulkSolution::trivial(p, starts.lambda1, SolveStatus::NoDescent, energies, opts.seed));
    }
    let (x, rep) = runs.into_iter().nth(best).expect("best index in range");
    let mut sol = package(p, x, &rep, starts.lambda1)?;
    sol.restart_energies = energies;
    sol.best_restart = Some(best);
    sol.seed = opts.seed;
    Ok(sol)
}

/// Continues the bulk minimization from a given field (no rescaling).
pub fn refine_bulk(p: &BulkProblem, start: &ComplexField, lambda1: f64, opts: &LbfgsOptions) -> Result<BulkSolution> {
    if start.grid() != p.grid() {
        return Err(Error::GridMismatch);
    }
    let (x, rep) = run_bulk(p, start.values().to_vec(), opts);
    package(p, x, &rep, lambda1)
}

/// Critical-point identity defect `|e + 1/2 ||u||_4^4|`.
///
/// Pairing the Euler-Lagrange equation `b P u - u + |u|^2 u = 0` with `u`
/// gives `b q(u) - ||u||_2^2 = -||u||_4^4`, hence `E(u) = -1/2 ||u||_4^4`.
pub fn virial_check(s: &BulkSolution) -> f64 {
    (s.energy + 0.5 * s.norms.l4_4).abs()
}

/// `|e + 1/2 ||u||_2^2|`, the identity in its `L^2` form. Not an identity of
/// the functional; reported for comparison only.
pub fn l2_virial_defect(s: &BulkSolution) -> f64 {
    (s.energy + 0.5 * s.norms.l2_sq).abs()
}

/// `|(||u||_2^2 - b q(u)) - ||u||_4^4|`, zero at critical points.
pub fn stationarity_defect(s: &BulkSolution) -> f64 {
    (s.norms.l2_sq - s.b * s.form - s.norms.l4_4).abs()
}

/// `||u||_4^4 / R^2 + 2 E_est`, of order `1/R` for minimizers. Returns
/// `None` for the trivial minimizer, where the check carries no information.
pub fn l4_mass_check(s: &BulkSolution, e_est: f64) -> Option<f64> {
    if s.is_trivial() {
        return None;
    }
    let r2 = s.field.grid().area();
    Some(s.norms.l4_4 / r2 + 2.0 * e_est)
}
