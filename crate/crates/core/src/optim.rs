//! Limited-memory BFGS on complex node vectors.
//!
//! The unknowns are complex numbers viewed as pairs of reals, with the real
//! metric `<a, b>_w = Re sum w_i a_i conj(b_i)`. Objectives return the Riesz
//! representative of their derivative in that metric, so that the
//! directional derivative along `d` is `<grad, d>_w`. Entries with zero
//! weight are frozen.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{raxpy, wdot, CZERO};

/// Smooth objective over complex vectors.
pub trait Objective {
    /// Metric weights; zero entries are frozen.
    fn metric(&self) -> &[f64];

    /// Value at `x`; writes the metric gradient into `grad`.
    fn value_grad(&self, x: &[Complex64], grad: &mut [Complex64]) -> f64;

    /// Optional rescaling for objectives invariant under `x -> x / c`
    /// (homogeneous of degree zero). Returns `c` after dividing `x` by it.
    fn renormalize(&self, _x: &mut [Complex64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Gradient target `||grad||_w <= gtol * max(1, |f|)`.
    pub gtol: f64,
    /// Relative value change required over the last `window` iterations.
    pub ftol: f64,
    pub window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 12,
            max_iter: 20_000,
            gtol: 1e-8,
            ftol: 1e-12,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl LbfgsReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

struct Trial {
    x: Vec<Complex64>,
    g: Vec<Complex64>,
    f: f64,
    dphi: f64,
}

struct Searcher<'a, O: Objective> {
    obj: &'a O,
    w: &'a [f64],
    evaluations: usize,
}

impl<O: Objective> Searcher<'_, O> {
    fn eval(&mut self, x0: &[Complex64], d: &[Complex64], alpha: f64, out: &mut Trial) {
        for ((xi, &x0i), &di) in out.x.iter_mut().zip(x0).zip(d) {
            *xi = x0i + di * alpha;
        }
        out.f = self.obj.value_grad(&out.x, &mut out.g);
        freeze(self.w, &mut out.g);
        out.dphi = wdot(self.w, &out.g, d);
        self.evaluations += 1;
    }

    /// Strong-Wolfe line search with an approximate-Wolfe escape for the
    /// regime where value differences drown in rounding.
    fn search(
        &mut self,
        x0: &[Complex64],
        f0: f64,
        dphi0: f64,
        d: &[Complex64],
        alpha0: f64,
        trial: &mut Trial,
    ) -> Option<f64> {
        const C1: f64 = 1e-4;
        const C2: f64 = 0.9;
        const MAX_STEPS: usize = 40;
        let noise = 1e-13 * f0.abs().max(1e-300) + 1e-300;
        let accept = |f: f64, dphi: f64, alpha: f64| {
            let armijo = f <= f0 + C1 * alpha * dphi0;
            let curvature = dphi.abs() <= -C2 * dphi0;
            let approx = f <= f0 + noise && dphi >= C2 * dphi0 && dphi <= -(1.0 - 2.0 * C1) * dphi0;
            (armijo && curvature) || approx
        };

        let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, dphi0);
        let mut alpha = alpha0;
        let mut bracket = None;
        for i in 0..MAX_STEPS {
            self.eval(x0, d, alpha, trial);
            if !trial.f.is_finite() {
                alpha *= 0.1;
                continue;
            }
            if accept(trial.f, trial.dphi, alpha) {
                return Some(alpha);
            }
            if trial.f > f0 + C1 * alpha * dphi0 || (i > 0 && trial.f >= f_prev) {
                bracket = Some(((a_prev, f_prev, d_prev), (alpha, trial.f, trial.dphi)));
                break;
            }
            if trial.dphi >= 0.0 {
                bracket = Some(((alpha, trial.f, trial.dphi), (a_prev, f_prev, d_prev)));
                break;
            }
            a_prev = alpha;
            f_prev = trial.f;
            d_prev = trial.dphi;
            alpha *= 2.5;
        }
        let ((mut lo, mut f_lo, mut d_lo), (mut hi, mut f_hi, mut d_hi)) = bracket?;
        for _ in 0..MAX_STEPS {
            // cubic interpolation, safeguarded towards bisection
            let mut a = cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi);
            let (left, right) = if lo < hi { (lo, hi) } else { (hi, lo) };
            let span = right - left;
            if !(a.is_finite() && a > left + 0.1 * span && a < right - 0.1 * span) {
                a = 0.5 * (lo + hi);
            }
            if span <= 1e-16 * right.abs().max(1e-300) {
                return None;
            }
            self.eval(x0, d, a, trial);
            if accept(trial.f, trial.dphi, a) {
                return Some(a);
            }
            if trial.f > f0 + C1 * a * dphi0 || trial.f >= f_lo {
                hi = a;
                f_hi = trial.f;
                d_hi = trial.dphi;
            } else {
                if trial.dphi * (hi - lo) >= 0.0 {
                    hi = lo;
                    f_hi = f_lo;
                    d_hi = d_lo;
                }
                lo = a;
                f_lo = trial.f;
                d_lo = trial.dphi;
            }
        }
        None
    }
}

fn freeze(w: &[f64], g: &mut [Complex64]) {
    for (gi, &wi) in g.iter_mut().zip(w) {
        if wi == 0.0 {
            *gi = CZERO;
        }
    }
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = disc.sqrt() * (b - a).signum();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

/// Minimizes `obj` starting from `x`, which is overwritten with the result.
pub fn minimize<O: Objective>(obj: &O, x: &mut Vec<Complex64>, opts: &LbfgsOptions) -> LbfgsReport {
    let w = obj.metric();
    let n = x.len();
    let mut g = vec![CZERO; n];
    let mut f = obj.value_grad(x, &mut g);
    freeze(w, &mut g);
    let mut searcher = Searcher { obj, w, evaluations: 1 };
    let mut trial = Trial {
        x: vec![CZERO; n],
        g: vec![CZERO; n],
        f: 0.0,
        dphi: 0.0,
    };
    let mut s_hist: Vec<Vec<Complex64>> = Vec::new();
    let mut y_hist: Vec<Vec<Complex64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = vec![f];
    let mut d = vec![CZERO; n];
    let mut alpha_buf = vec![0.0; opts.memory];

    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut gnorm = wdot(w, &g, &g).sqrt();
    while iterations < opts.max_iter {
        gnorm = wdot(w, &g, &g).sqrt();
        let scale = f.abs().max(1.0);
        let settled = history.len() > opts.window && {
            let old = history[history.len() - 1 - opts.window];
            (old - f).abs() <= opts.ftol * scale
        };
        if gnorm <= opts.gtol * scale && (settled || gnorm == 0.0) {
            termination = Termination::Converged;
            break;
        }

        // two-loop recursion
        d.copy_from_slice(&g);
        let m = s_hist.len();
        for i in (0..m).rev() {
            let a = rho[i] * wdot(w, &s_hist[i], &d);
            alpha_buf[i] = a;
            raxpy(-a, &y_hist[i], &mut d);
        }
        if m > 0 {
            let gamma = 1.0 / (rho[m - 1] * wdot(w, &y_hist[m - 1], &y_hist[m - 1]));
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..m {
            let b = rho[i] * wdot(w, &y_hist[i], &d);
            raxpy(alpha_buf[i] - b, &s_hist[i], &mut d);
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut dphi0 = wdot(w, &g, &d);
        if !(dphi0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            dphi0 = -gnorm * gnorm;
        }
        let alpha0 = if s_hist.is_empty() { 1.0 / gnorm.max(1e-300) } else { 1.0 };

        let Some(alpha) = searcher.search(x, f, dphi0, &d, alpha0, &mut trial) else {
            if !s_hist.is_empty() {
                // retry once from steepest descent before giving up
                s_hist.clear();
                y_hist.clear();
                rho.clear();
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        };

        let mut s: Vec<Complex64> = d.iter().map(|v| v * alpha).collect();
        let mut y: Vec<Complex64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        std::mem::swap(x, &mut trial.x);
        std::mem::swap(&mut g, &mut trial.g);
        f = trial.f;

        if let Some(c) = obj.renormalize(x) {
            let inv = 1.0 / c;
            g.iter_mut().for_each(|v| *v *= c);
            s.iter_mut().for_each(|v| *v *= inv);
            y.iter_mut().for_each(|v| *v *= c);
            for (sh, yh) in s_hist.iter_mut().zip(y_hist.iter_mut()) {
                sh.iter_mut().for_each(|v| *v *= inv);
                yh.iter_mut().for_each(|v| *v *= c);
            }
        }

        let sy = wdot(w, &s, &y);
        if sy > 1e-300 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
        history.push(f);
        iterations += 1;
    }
    if termination != Termination::Converged {
        gnorm = wdot(w, &g, &g).sqrt();
    }
    LbfgsReport {
        value: f,
        grad_norm: gnorm,
        iterations,
        evaluations: searcher.evaluations,
        termination,
    }
}
