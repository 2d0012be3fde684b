//! Large-`R` limits: sweeps over `(b, R, boundary condition)`, the fit
//! `e / R^2 = E + c / R`, the check `E_new = -sqrt(-2 E_blk)` with its
//! finite-`R` bracket, and the approach `E_blk(b) / (b - 1)^2 -> E_Ab`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bulk::{minimize_bulk, virial_check, BulkProblem, MinimizeOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::grid::{default_points, side_of_flux, BoundaryKind, Grid};
use crate::quotient::{solve_pair, DEFAULT_MARGIN};

/// Least-squares fit `y = intercept + slope / R (+ quadratic / R^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseRFit {
    pub intercept: f64,
    pub slope: f64,
    pub quadratic: Option<f64>,
    /// Root-mean-square residual.
    pub residual: f64,
    /// `residual / |intercept|`.
    pub relative_residual: f64,
}

pub fn fit_inverse_r(points: &[(f64, f64)], with_quadratic: bool) -> Result<InverseRFit> {
    let distinct: BTreeSet<u64> = points.iter().map(|(r, _)| r.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(Error::NotEnoughData(format!(
            "extrapolation needs at least 3 distinct side lengths, got {}",
            distinct.len()
        )));
    }
    let cols = if with_quadratic { 3 } else { 2 };
    let a = DMatrix::from_fn(points.len(), cols, |i, j| points[i].0.powi(-(j as i32)));
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let resid = &a * &coef - &y;
    let rms = (resid.norm_squared() / points.len() as f64).sqrt();
    Ok(InverseRFit {
        intercept: coef[0],
        slope: coef[1],
        quadratic: with_quadratic.then(|| coef[2]),
        residual: rms,
        relative_residual: if coef[0] != 0.0 { rms / coef[0].abs() } else { rms },
    })
}

/// One finite-`R` result entering an extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitPoint {
    pub side: f64,
    /// `e(b, R) / R^2`.
    pub e_per_area: f64,
    /// `m(b, R) / R`, when the quotient was solved.
    pub m_per_side: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub b: f64,
    pub kind: BoundaryKind,
    pub points: Vec<LimitPoint>,
    pub e_blk: f64,
    /// Fitted `1/R` coefficient of the energy.
    pub c_blk: f64,
    pub fit_residual: f64,
    pub e_new: Option<f64>,
    pub c_new: Option<f64>,
}

impl LimitEstimate {
    /// `E_blk` must lie in `[-1/2, 0]`.
    pub fn in_range(&self) -> bool {
        self.e_blk.is_finite() && (-0.5..=0.0).contains(&self.e_blk)
    }
}

/// Fits `e / R^2 = E + c / R` (and `m / R = E_new + c' / R` where available).
pub fn extrapolate_blk(b: f64, kind: BoundaryKind, points: &[LimitPoint], with_quadratic: bool) -> Result<LimitEstimate> {
    let e_pts: Vec<(f64, f64)> = points.iter().map(|p| (p.side, p.e_per_area)).collect();
    let fit = fit_inverse_r(&e_pts, with_quadratic)?;
    let m_pts: Vec<(f64, f64)> = points.iter().filter_map(|p| p.m_per_side.map(|m| (p.side, m))).collect();
    let m_fit = if m_pts.len() == points.len() {
        Some(fit_inverse_r(&m_pts, with_quadratic)?)
    } else {
        None
    };
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.side.total_cmp(&b.side));
    Ok(LimitEstimate {
        b,
        kind,
        points: sorted,
        e_blk: fit.intercept,
        c_blk: fit.slope,
        fit_residual: fit.relative_residual,
        e_new: m_fit.map(|f| f.intercept),
        c_new: m_fit.map(|f| f.slope),
    })
}

/// One row of the finite-`R` bracket
/// `-s - C'/(R s) <= m / R <= -s + C'/R` with `s = sqrt(-2 E)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketRow {
    pub side: f64,
    pub m_per_side: f64,
    pub lower: f64,
    pub upper: f64,
    pub inside: bool,
}

/// Smallest `C' >= 0` for which every point lies in the bracket around
/// `-sqrt(-2 e_est)`.
pub fn bracket_constant(points: &[(f64, f64)], e_est: f64) -> Result<f64> {
    if !(e_est < 0.0) {
        return Err(Error::SignRegime(format!("bulk energy estimate {e_est:.6e} is not negative")));
    }
    let s = (-2.0 * e_est).sqrt();
    Ok(points
        .iter()
        .map(|&(r, m)| ((-s - m) * r * s).max((m + s) * r))
        .fold(0.0, f64::max))
}

pub fn bracket_rows(points: &[(f64, f64)], e_est: f64, c_prime: f64) -> Result<Vec<BracketRow>> {
    if !(e_est < 0.0) {
        return Err(Error::SignRegime(format!("bulk energy estimate {e_est:.6e} is not negative")));
    }
    let s = (-2.0 * e_est).sqrt();
    let slack = 1e-12 * s;
    Ok(points
        .iter()
        .map(|&(r, m)| {
            let lower = -s - c_prime / (r * s);
            let upper = -s + c_prime / r;
            BracketRow {
                side: r,
                m_per_side: m,
                lower,
                upper,
                inside: m >= lower - slack && m <= upper + slack,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewFormulaReport {
    pub e_blk: f64,
    pub e_new: f64,
    /// `|E_new + sqrt(-2 E_blk)|`.
    pub defect: f64,
    /// `defect / sqrt(-2 E_blk)`.
    pub relative_defect: f64,
    pub c_prime: f64,
    pub rows: Vec<BracketRow>,
}

/// Compares the extrapolated `E_new` with `-sqrt(-2 E_blk)` and fits the
/// bracket constant on the estimate's own points.
pub fn check_new_formula(est: &LimitEstimate) -> Result<NewFormulaReport> {
    let e_new = est
        .e_new
        .ok_or_else(|| Error::NotEnoughData("estimate carries no quotient values".into()))?;
    if est.e_blk > 0.0 {
        return Err(Error::SignRegime(format!("extrapolated E_blk = {:.6e} > 0", est.e_blk)));
    }
    let s = (-2.0 * est.e_blk).sqrt();
    let pts: Vec<(f64, f64)> = est.points.iter().filter_map(|p| p.m_per_side.map(|m| (p.side, m))).collect();
    let c_prime = bracket_constant(&pts, est.e_blk)?;
    let rows = bracket_rows(&pts, est.e_blk, c_prime)?;
    let defect = (e_new + s).abs();
    Ok(NewFormulaReport {
        e_blk: est.e_blk,
        e_new,
        defect,
        relative_defect: if s > 0.0 { defect / s } else { defect },
        c_prime,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrikosovLimitReport {
    /// `(b, E_blk(b) / (b - 1)^2)`, ascending in `b`.
    pub ratios: Vec<(f64, f64)>,
    pub target: f64,
    /// `|ratio(b_max) - target| / |target|`.
    pub final_gap: f64,
    /// Distance to the target does not grow as `b` increases.
    pub monotone: bool,
}

pub fn check_abrikosov_limit(curve: &[(f64, f64)], e_ab_per_area: f64) -> Result<AbrikosovLimitReport> {
    let mut ratios: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(b, _)| *b < 1.0)
        .map(|&(b, e)| (b, e / ((b - 1.0) * (b - 1.0))))
        .collect();
    if ratios.is_empty() {
        return Err(Error::NotEnoughData("no b < 1 in the curve".into()));
    }
    ratios.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = ratios.iter().map(|r| (r.1 - e_ab_per_area).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    Ok(AbrikosovLimitReport {
        final_gap: gaps.last().copied().unwrap_or(f64::NAN) / e_ab_per_area.abs(),
        ratios,
        target: e_ab_per_area,
        monotone,
    })
}

/// One `(b, R, boundary condition)` solve of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTask {
    pub b: f64,
    pub kind: BoundaryKind,
    /// Flux integer; the side is `sqrt(2 pi N)` for every boundary condition.
    pub flux: u32,
    /// Cells per side; `None` uses the default resolution policy.
    pub n: Option<usize>,
}

impl SweepTask {
    pub fn side(&self) -> f64 {
        side_of_flux(self.flux)
    }

    pub fn grid(&self) -> Result<Grid> {
        let r = self.side();
        Grid::new(r, self.n.unwrap_or_else(|| default_points(r)), self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub task: SweepTask,
    pub side: f64,
    pub n: usize,
    pub energy: f64,
    /// Quotient value; `None` when `b` is too close to 1 for the quotient.
    pub m: Option<f64>,
    pub duality_defect: Option<f64>,
    pub virial_defect: f64,
    pub l2_sq: f64,
    pub l4_4: f64,
    pub lambda1: f64,
    pub bulk_status: SolveStatus,
    pub quotient_status: Option<SolveStatus>,
    pub bulk_grad_norm: f64,
    pub quotient_residual: Option<f64>,
    pub escalations: usize,
    pub seed: u64,
}

/// Receives every outcome as soon as it is available, in completion order.
pub trait ResultSink: Sync {
    fn record(&self, outcome: &SweepOutcome) -> Result<()>;
}

/// Discards results.
pub struct NullSink;

impl ResultSink for NullSink {
    fn record(&self, _: &SweepOutcome) -> Result<()> {
        Ok(())
    }
}

/// Solves one sweep point: the dual pair when the quotient is defined, the
/// bulk problem alone otherwise.
pub fn solve_task(task: &SweepTask, opts: &MinimizeOptions, gate: f64) -> Result<SweepOutcome> {
    let grid = task.grid()?;
    let (bulk, quotient, defect, escalations) = if task.b < 1.0 - DEFAULT_MARGIN {
        let pair = solve_pair(task.b, &grid, opts, gate, 3)?;
        (pair.bulk, Some(pair.quotient), pair.defect, pair.escalations)
    } else {
        (minimize_bulk(&BulkProblem::new(task.b, &grid)?, opts)?, None, None, 0)
    };
    Ok(SweepOutcome {
        task: *task,
        side: grid.side_length(),
        n: grid.cells(),
        energy: bulk.energy,
        m: quotient.as_ref().map(|q| q.value),
        duality_defect: defect,
        virial_defect: virial_check(&bulk),
        l2_sq: bulk.norms.l2_sq,
        l4_4: bulk.norms.l4_4,
        lambda1: bulk.lambda1,
        bulk_status: bulk.status,
        quotient_status: quotient.as_ref().map(|q| q.status),
        bulk_grad_norm: bulk.grad_norm,
        quotient_residual: quotient.as_ref().map(|q| q.el_residual),
        escalations,
        seed: opts.seed,
    })
}

/// Runs all tasks on the current rayon pool, hands each outcome to `sink`
/// as it completes and returns the results in task order.
pub fn run_sweep(
    tasks: &[SweepTask],
    opts: &MinimizeOptions,
    gate: f64,
    sink: &dyn ResultSink,
) -> Vec<(SweepTask, Result<SweepOutcome>)> {
    tasks
        .par_iter()
        .map(|t| {
            let out = solve_task(t, opts, gate).and_then(|o| sink.record(&o).map(|_| o));
            (*t, out)
        })
        .collect()
}

/// Groups outcomes by `(b, boundary condition)` and extrapolates each group
/// with at least three side lengths.
pub fn estimates_from(outcomes: &[SweepOutcome], with_quadratic: bool) -> Vec<Result<LimitEstimate>> {
    let mut keys: Vec<(u64, BoundaryKind)> = outcomes.iter().map(|o| (o.task.b.to_bits(), o.task.kind)).collect();
    keys.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)).then(a.1.name().cmp(b.1.name())));
    keys.dedup();
    keys.into_iter()
        .map(|(bits, kind)| {
            let pts: Vec<LimitPoint> = outcomes
                .iter()
                .filter(|o| o.task.b.to_bits() == bits && o.task.kind == kind)
                .map(|o| LimitPoint {
                    side: o.side,
                    e_per_area: o.energy / (o.side * o.side),
                    m_per_side: o.m.map(|m| m / o.side),
                })
                .collect();
            extrapolate_blk(f64::from_bits(bits), kind, &pts, with_quadratic)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_model_is_recovered() {
        let pts: Vec<(f64, f64)> = [3.0, 5.0, 7.5, 11.0].iter().map(|&r| (r, -0.3 + 0.7 / r)).collect();
        let f = fit_inverse_r(&pts, false).unwrap();
        assert!((f.intercept + 0.3).abs() < 1e-12);
        assert!((f.slope - 0.7).abs() < 1e-12);
        assert!(f.residual < 1e-13);
        let q: Vec<(f64, f64)> = [3.0, 5.0, 7.5, 11.0].iter().map(|&r| (r, -0.3 + 0.7 / r - 2.0 / (r * r))).collect();
        let f = fit_inverse_r(&q, true).unwrap();
        assert!((f.intercept + 0.3).abs() < 1e-10);
        assert!((f.quadratic.unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_points_have_zero_slope() {
        let pts = [(2.0, -0.25), (4.0, -0.25), (8.0, -0.25)];
        let f = fit_inverse_r(&pts, false).unwrap();
        assert!(f.slope.abs() < 1e-13 && f.residual < 1e-15);
        assert!((f.intercept + 0.25).abs() < 1e-14);
    }

    #[test]
    fn too_few_side_lengths() {
        let pts = [(2.0, -0.25), (4.0, -0.2), (4.0, -0.21)];
        assert!(matches!(fit_inverse_r(&pts, false), Err(Error::NotEnoughData(_))));
    }

    #[test]
    fn synthetic_identity_has_zero_defect() {
        let e: f64 = -0.1;
        let s = (-2.0 * e).sqrt();
        let pts: Vec<LimitPoint> = [5.0, 7.0, 10.0]
            .iter()
            .map(|&r| LimitPoint {
                side: r,
                e_per_area: e,
                m_per_side: Some(-s),
            })
            .collect();
        let est = extrapolate_blk(0.5, BoundaryKind::Periodic, &pts, false).unwrap();
        let rep = check_new_formula(&est).unwrap();
        assert!(rep.defect < 1e-14);
        assert!(rep.c_prime < 1e-12);
        assert!(rep.rows.iter().all(|r| r.inside));
    }

    #[test]
    fn bracket_constant_is_tight() {
        let e: f64 = -0.1;
        let s = (-2.0 * e).sqrt();
        let pts = [(4.0, -s + 0.5 / 4.0), (8.0, -s - 0.3 / (8.0 * s))];
        let c = bracket_constant(&pts, e).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        let rows = bracket_rows(&pts, e, c).unwrap();
        assert!(rows.iter().all(|r| r.inside));
        assert!(bracket_rows(&pts, e, 0.9 * c).unwrap().iter().any(|r| !r.inside));
        assert!(bracket_constant(&pts, 0.1).is_err());
    }

    #[test]
    fn positive_estimate_is_a_sign_error() {
        let est = LimitEstimate {
            b: 0.5,
            kind: BoundaryKind::Periodic,
            points: vec![],
            e_blk: 0.01,
            c_blk: 0.0,
            fit_residual: 0.0,
            e_new: Some(-0.1),
            c_new: Some(0.0),
        };
        assert!(matches!(check_new_formula(&est), Err(Error::SignRegime(_))));
    }

    #[test]
    fn abrikosov_ratio_of_exact_parabola() {
        let k = -0.42;
        let curve: Vec<(f64, f64)> = [0.85, 0.9, 0.95].iter().map(|&b| (b, k * (b - 1.0) * (b - 1.0))).collect();
        let rep = check_abrikosov_limit(&curve, k).unwrap();
        assert!(rep.ratios.iter().all(|r| (r.1 - k).abs() < 1e-12));
        assert!(rep.final_gap < 1e-12);
    }

    #[test]
    fn sweep_returns_results_in_task_order() {
        use std::sync::Mutex;
        struct Collect(Mutex<Vec<f64>>);
        impl ResultSink for Collect {
            fn record(&self, o: &SweepOutcome) -> Result<()> {
                self.0.lock().unwrap().push(o.task.b);
                Ok(())
            }
        }
        let tasks: Vec<SweepTask> = [0.6, 0.4, 1.0]
            .iter()
            .map(|&b| SweepTask {
                b,
                kind: BoundaryKind::Periodic,
                flux: 1,
                n: Some(16),
            })
            .collect();
        let opts = MinimizeOptions {
            restarts: 1,
            ..Default::default()
        };
        let sink = Collect(Mutex::new(vec![]));
        let out = run_sweep(&tasks, &opts, 1e-4, &sink);
        assert_eq!(sink.0.lock().unwrap().len(), 3);
        let bs: Vec<f64> = out.iter().map(|(t, _)| t.b).collect();
        assert_eq!(bs, vec![0.6, 0.4, 1.0]);
        let last = out[2].1.as_ref().unwrap();
        assert!(last.m.is_none());
        assert!(out[1].1.as_ref().unwrap().energy <= out[0].1.as_ref().unwrap().energy);
    }
}
