//! Full two-dimensional Ginzburg-Landau functional
//!
//! ```text
//! G(psi, A) = int |(grad - i kappa H A) psi|^2 + kappa^2/2 (1 - |psi|^2)^2
//!           + kappa^2 H^2 |curl A - 1|^2
//! ```
//!
//! on the unit square (or the inscribed disk), centered at the origin, and
//! the local diagnostics around Almog's `L^4` bound.
//!
//! `psi` lives on nodes. The potential enters only through the edge angles
//! `theta_e = kappa H int_e A . dl`, stored per node as the complex number
//! `theta_x + i theta_y` for the edges leaving the node to the right and
//! upwards. The kinetic term is `sum_e w_e |exp(-i theta_e) psi_q - psi_p|^2`
//! and the field term is `sum_plaquettes (Phi - kappa H h^2)^2 / h^2` with
//! `Phi` the counter-clockwise sum of angles, so the discrete functional is
//! exactly invariant under `psi -> e^{i chi} psi`,
//! `theta_pq -> theta_pq + chi_q - chi_p`. Neumann conditions on `psi` and
//! `curl A = 1` on the boundary are the natural conditions of this sum.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryKind, Grid};
use crate::linalg::{wnorm, CZERO};
use crate::optim::{minimize, LbfgsOptions, Objective, Termination};
use crate::seeds::rng;

/// Largest `H / kappa` accepted as a probe above the theorem's range.
pub const MAX_FIELD_RATIO: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Square,
    Disk,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(Domain::Square),
            "disk" => Ok(Domain::Disk),
            other => Err(Error::Precondition(format!("unknown domain '{other}' (square, disk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GLConfig {
    pub kappa: f64,
    /// Field parameter `H`; the applied field is `kappa H`.
    pub field: f64,
    pub domain: Domain,
    /// Cells per side of the unit square.
    pub n: usize,
    /// Lower bound `Lambda` in `Lambda kappa <= H`.
    pub lambda: f64,
}

impl GLConfig {
    /// Validated configuration with `Lambda = 1/2`.
    pub fn new(kappa: f64, field: f64, domain: Domain, n: usize) -> Result<Self> {
        let cfg = GLConfig {
            kappa,
            field,
            domain,
            n,
            lambda: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Smallest `n` with `h <= (kappa H)^{-1/2} / 6`.
    pub fn min_points(kappa: f64, field: f64) -> usize {
        ((6.0 * (kappa * field).sqrt()).ceil() as usize).max(crate::grid::MIN_POINTS)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::OutOfRange {
                name: "kappa",
                value: self.kappa,
                range: "(0, inf)",
            });
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: self.lambda,
                range: "(0, 1)",
            });
        }
        let ratio = self.field / self.kappa;
        if !(ratio >= self.lambda && ratio <= MAX_FIELD_RATIO) {
            return Err(Error::OutOfRange {
                name: "H/kappa",
                value: ratio,
                range: "[lambda, 1.1]",
            });
        }
        if self.n < crate::grid::MIN_POINTS {
            return Err(Error::TooFewPoints {
                min: crate::grid::MIN_POINTS,
                got: self.n,
            });
        }
        let need = Self::min_points(self.kappa, self.field);
        if self.n < need {
            return Err(Error::Precondition(format!(
                "grid with {} cells does not resolve the magnetic length; need n >= {need}",
                self.n
            )));
        }
        Ok(())
    }

    /// `H <= kappa`, the range covered by the bound; larger fields are probes.
    pub fn in_theorem_range(&self) -> bool {
        self.field <= self.kappa
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    fn coupling(&self) -> f64 {
        self.kappa * self.field
    }
}

/// Node, edge and plaquette weights of the rasterized domain.
#[derive(Debug, Clone)]
struct Mesh {
    grid: Grid,
    active: Vec<bool>,
    node_w: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    plaquette: Vec<bool>,
}

impl Mesh {
    fn new(domain: Domain, n: usize) -> Result<Self> {
        let grid = Grid::new(1.0, n, BoundaryKind::Neumann)?;
        let s = grid.nodes_per_side();
        let len = grid.node_count();
        let mut m = Mesh {
            grid,
            active: vec![false; len],
            node_w: vec![0.0; len],
            wx: vec![0.0; len],
            wy: vec![0.0; len],
            plaquette: vec![false; len],
        };
        let h2 = grid.spacing().powi(2);
        match domain {
            Domain::Square => {
                for p in 0..len {
                    let (i, j) = grid.ij(p);
                    m.active[p] = true;
                    m.node_w[p] = grid.node_weight(p);
                    if i + 1 < s {
                        m.wx[p] = grid.line_weight(j);
                    }
                    if j + 1 < s {
                        m.wy[p] = grid.line_weight(i);
                        m.plaquette[p] = i + 1 < s;
                    }
                }
            }
            Domain::Disk => {
                for p in 0..len {
                    let (x, y) = grid.position(p);
                    m.active[p] = x * x + y * y <= 0.25 * (1.0 + 1e-12);
                    if m.active[p] {
                        m.node_w[p] = h2;
                    }
                }
                for p in 0..len {
                    let (i, j) = grid.ij(p);
                    if i + 1 < s && m.active[p] && m.active[p + 1] {
                        m.wx[p] = 1.0;
                    }
                    if j + 1 < s && m.active[p] && m.active[p + s] {
                        m.wy[p] = 1.0;
                    }
                    m.plaquette[p] = i + 1 < s
                        && j + 1 < s
                        && m.active[p]
                        && m.active[p + 1]
                        && m.active[p + s]
                        && m.active[p + s + 1];
                }
            }
        }
        Ok(m)
    }

    fn len(&self) -> usize {
        self.grid.node_count()
    }

    fn plaquette_flux(&self, theta: &[Complex64], p: usize) -> f64 {
        let s = self.grid.nodes_per_side();
        theta[p].re + theta[p + 1].im - theta[p + s].re - theta[p].im
    }

    /// Distance of node `p` to the domain boundary.
    fn boundary_distance(&self, domain: Domain, x: f64, y: f64) -> f64 {
        match domain {
            Domain::Square => 0.5 - x.abs().max(y.abs()),
            Domain::Disk => 0.5 - (x * x + y * y).sqrt(),
        }
    }
}

/// Energy and, if requested, metric gradient of the discrete functional.
/// `psi` and `theta` are the two halves of the unknown vector.
fn energy_and_gradient(
    cfg: &GLConfig,
    mesh: &Mesh,
    psi: &[Complex64],
    theta: &[Complex64],
    mut grad: Option<(&mut [Complex64], &mut [Complex64])>,
) -> f64 {
    let s = mesh.grid.nodes_per_side();
    let h = cfg.spacing();
    let k2 = cfg.kappa * cfg.kappa;
    let target = cfg.coupling() * h * h;
    if let Some((gp, gt)) = grad.as_mut() {
        gp.iter_mut().for_each(|g| *g = CZERO);
        gt.iter_mut().for_each(|g| *g = CZERO);
    }
    let mut e = 0.0;
    for p in 0..mesh.len() {
        if !mesh.active[p] {
            continue;
        }
        let a2 = psi[p].norm_sqr();
        let gap = 1.0 - a2;
        e += mesh.node_w[p] * 0.5 * k2 * gap * gap;
        if let Some((gp, _)) = grad.as_mut() {
            gp[p] -= psi[p] * (2.0 * mesh.node_w[p] * k2 * gap);
        }
        for (dir, q, w) in [(0, p + 1, mesh.wx[p]), (1, p + s, mesh.wy[p])] {
            if w == 0.0 {
                continue;
            }
            let th = if dir == 0 { theta[p].re } else { theta[p].im };
            let u = Complex64::from_polar(1.0, -th);
            let d = u * psi[q] - psi[p];
            e += w * d.norm_sqr();
            if let Some((gp, gt)) = grad.as_mut() {
                gp[p] -= d * (2.0 * w);
                gp[q] += u.conj() * d * (2.0 * w);
                // d/dtheta of w |d|^2 = 2 w Re(conj(d) (-i) u psi_q)
                let dth = 2.0 * w * (d.conj() * Complex64::new(0.0, -1.0) * u * psi[q]).re;
                if dir == 0 {
                    gt[p].re += dth;
                } else {
                    gt[p].im += dth;
                }
            }
        }
        if mesh.plaquette[p] {
            let r = mesh.plaquette_flux(theta, p) - target;
            e += r * r / (h * h);
            if let Some((_, gt)) = grad.as_mut() {
                let c = 2.0 * r / (h * h);
                gt[p].re += c;
                gt[p + 1].im += c;
                gt[p + s].re -= c;
                gt[p].im -= c;
            }
        }
    }
    if let Some((gp, _)) = grad.as_mut() {
        for (g, &w) in gp.iter_mut().zip(&mesh.node_w) {
            *g = if w > 0.0 { *g / w } else { CZERO };
        }
    }
    e
}

struct GLObjective<'a> {
    cfg: &'a GLConfig,
    mesh: &'a Mesh,
    metric: Vec<f64>,
}

impl Objective for GLObjective<'_> {
    fn metric(&self) -> &[f64] {
        &self.metric
    }

    fn value_grad(&self, x: &[Complex64], grad: &mut [Complex64]) -> f64 {
        let n = self.mesh.len();
        let (psi, theta) = x.split_at(n);
        let (gp, gt) = grad.split_at_mut(n);
        energy_and_gradient(self.cfg, self.mesh, psi, theta, Some((gp, gt)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GLOptions {
    pub lbfgs: LbfgsOptions,
    pub seed: u64,
    /// Amplitude of the random perturbation of the initial `psi = 1`.
    pub noise: f64,
}

impl Default for GLOptions {
    fn default() -> Self {
        GLOptions {
            lbfgs: LbfgsOptions {
                gtol: 1e-6,
                max_iter: 200_000,
                ..Default::default()
            },
            seed: 0x5eed,
            noise: 0.05,
        }
    }
}

/// Approximate critical point of the discrete functional.
#[derive(Debug, Clone)]
pub struct GLState {
    pub config: GLConfig,
    mesh: Mesh,
    pub psi: Vec<Complex64>,
    /// `theta_x + i theta_y` per node.
    pub theta: Vec<Complex64>,
    pub energy: f64,
    /// Metric gradient norm with respect to `psi`.
    pub residual_psi: f64,
    /// Gradient norm with respect to the edge angles.
    pub residual_field: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl GLState {
    pub fn grid(&self) -> &Grid {
        &self.mesh.grid
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// `max |psi|` over the domain.
    pub fn sup_psi(&self) -> f64 {
        self.psi
            .iter()
            .zip(&self.mesh.active)
            .filter(|(_, &a)| a)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }

    /// Induced field `curl A` on each plaquette (indexed by its lower-left
    /// node), `None` outside the domain.
    pub fn curl(&self) -> Vec<Option<f64>> {
        let h = self.config.spacing();
        let c = self.config.coupling() * h * h;
        (0..self.mesh.len())
            .map(|p| self.mesh.plaquette[p].then(|| self.mesh.plaquette_flux(&self.theta, p) / c))
            .collect()
    }

    /// `max |curl A - 1|`.
    pub fn curl_defect(&self) -> f64 {
        self.curl().into_iter().flatten().map(|c| (c - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Recomputes the energy from the stored fields.
    pub fn evaluate(&self) -> f64 {
        energy_and_gradient(&self.config, &self.mesh, &self.psi, &self.theta, None)
    }

    /// The same configuration after `psi -> e^{i chi} psi`,
    /// `theta_pq -> theta_pq + chi_q - chi_p`.
    pub fn gauge_transformed(&self, chi: &[f64]) -> Result<GLState> {
        if chi.len() != self.psi.len() {
            return Err(Error::LengthMismatch {
                expected: self.psi.len(),
                got: chi.len(),
            });
        }
        let s = self.mesh.grid.nodes_per_side();
        let mut out = self.clone();
        for p in 0..self.psi.len() {
            out.psi[p] *= Complex64::from_polar(1.0, chi[p]);
            let (i, j) = self.mesh.grid.ij(p);
            let tx = if i + 1 < s { chi[p + 1] - chi[p] } else { 0.0 };
            let ty = if j + 1 < s { chi[p + s] - chi[p] } else { 0.0 };
            out.theta[p] += Complex64::new(tx, ty);
        }
        Ok(out)
    }

    /// Tangential average of `A` along the edge from `p` to the right
    /// (`dir = 0`) or upwards (`dir = 1`).
    fn edge_potential(&self, p: usize, dir: usize) -> f64 {
        let t = if dir == 0 { self.theta[p].re } else { self.theta[p].im };
        t / (self.config.coupling() * self.config.spacing())
    }
}

/// `theta` of the applied potential `A_0 = (-x_2, x_1) / 2`.
fn applied_angles(cfg: &GLConfig, grid: &Grid) -> Vec<Complex64> {
    let h = cfg.spacing();
    let c = cfg.coupling() * h;
    (0..grid.node_count())
        .map(|p| {
            let (x, y) = grid.position(p);
            // exact line integrals along the edges leaving (x, y)
            Complex64::new(-0.5 * y * c, 0.5 * x * c)
        })
        .collect()
}

/// Minimizes the functional from `psi = 1 + noise`, `A = A_0`.
pub fn minimize_gl(cfg: &GLConfig, opts: &GLOptions) -> Result<GLState> {
    cfg.validate()?;
    let mesh = Mesh::new(cfg.domain, cfg.n)?;
    let grid = mesh.grid;
    let len = mesh.len();
    let mut r = rng(opts.seed, 0);
    let mut x: Vec<Complex64> = (0..len)
        .map(|p| {
            if mesh.active[p] {
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                Complex64::new(1.0 + opts.noise * a, opts.noise * b)
            } else {
                CZERO
            }
        })
        .collect();
    x.extend(applied_angles(cfg, &grid));
    let mut metric = mesh.node_w.clone();
    metric.extend(std::iter::repeat(1.0).take(len));
    let obj = GLObjective {
        cfg,
        mesh: &mesh,
        metric,
    };
    let rep = minimize(&obj, &mut x, &opts.lbfgs);
    let mut gp = vec![CZERO; len];
    let mut gt = vec![CZERO; len];
    let (psi, theta) = x.split_at(len);
    let energy = energy_and_gradient(cfg, &mesh, psi, theta, Some((&mut gp, &mut gt)));
    let residual_psi = wnorm(&mesh.node_w, &gp);
    let residual_field = wnorm(&vec![1.0; len], &gt);
    Ok(GLState {
        config: *cfg,
        psi: psi.to_vec(),
        theta: theta.to_vec(),
        mesh,
        energy,
        residual_psi,
        residual_field,
        iterations: rep.iterations,
        termination: rep.termination,
    })
}

/// Coefficients of the bound `c_1 / kappa + c_2 (H / kappa - 1)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmogBound {
    pub c1: f64,
    pub c2: f64,
}

impl AlmogBound {
    pub fn rhs(&self, kappa: f64, field: f64) -> f64 {
        let t = field / kappa - 1.0;
        self.c1 / kappa + self.c2 * t * t
    }
}

/// Inset `2 kappa^{-1/2}` of the admissible squares.
pub fn default_inset(kappa: f64) -> f64 {
    2.0 / kappa.sqrt()
}

/// One grid-aligned square of side `2 kappa^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareScan {
    pub cx: f64,
    pub cy: f64,
    pub avg_psi4: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Averages of `|psi|^4` over all grid-aligned squares of side
/// `2 kappa^{-1/2}` (rounded to whole cells) whose closure keeps a distance
/// greater than `inset` from the boundary. Squares are placed every half
/// side length, with the last one flush against the admissible region.
pub fn local_l4_scan(st: &GLState, bound: &AlmogBound, inset: f64) -> Result<Vec<SquareScan>> {
    let cfg = &st.config;
    let grid = st.grid();
    let h = cfg.spacing();
    let side = 2.0 / cfg.kappa.sqrt();
    let m = ((side / h).round() as usize).max(1);
    let stride = (m / 2).max(1);
    let s = grid.nodes_per_side();
    let rhs = bound.rhs(cfg.kappa, cfg.field);
    // lower-left indices whose square clears the inset of the enclosing
    // square; the two ends of the range are always included
    let far = |k: usize| 0.5 - grid.coord(k).abs() > inset;
    let starts: Vec<usize> = {
        let ok: Vec<usize> = (0..s.saturating_sub(m)).filter(|&k| far(k) && far(k + m)).collect();
        let mut v: Vec<usize> = ok.iter().copied().step_by(stride).collect();
        if let (Some(&last), Some(&end)) = (v.last(), ok.last()) {
            if last != end {
                v.push(end);
            }
        }
        v
    };
    let mut out = Vec::new();
    for &j0 in &starts {
        for &i0 in &starts {
            let corners = [(i0, j0), (i0 + m, j0), (i0, j0 + m), (i0 + m, j0 + m)];
            let inside = corners.iter().all(|&(i, j)| {
                let p = grid.index(i, j);
                let (x, y) = grid.position(p);
                st.mesh.active[p] && st.mesh.boundary_distance(cfg.domain, x, y) > inset
            });
            if !inside {
                continue;
            }
            let mut acc = 0.0;
            for j in j0..=j0 + m {
                let wj = if j == j0 || j == j0 + m { 0.5 } else { 1.0 };
                for i in i0..=i0 + m {
                    let wi = if i == i0 || i == i0 + m { 0.5 } else { 1.0 };
                    acc += wi * wj * st.psi[grid.index(i, j)].norm_sqr().powi(2);
                }
            }
            let avg = acc / (m * m) as f64;
            out.push(SquareScan {
                cx: grid.coord(i0) + 0.5 * m as f64 * h,
                cy: grid.coord(j0) + 0.5 * m as f64 * h,
                avg_psi4: avg,
                rhs,
                pass: avg <= rhs,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoAdmissibleSquare { side, inset });
    }
    Ok(out)
}

/// Least-squares fit of `y ~ c_1 / kappa + c_2 (H/kappa - 1)^2` with
/// `c_1, c_2 >= 0` over samples `(kappa, H, y)`; returns the bound and the
/// relative residual `||fit - y|| / ||y||`.
pub fn fit_almog(samples: &[(f64, f64, f64)]) -> Result<(AlmogBound, f64)> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughData("the bound fit needs at least 2 samples".into()));
    }
    let rows: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|&(k, hf, y)| (1.0 / k, (hf / k - 1.0).powi(2), y))
        .collect();
    let resid = |c1: f64, c2: f64| -> f64 { rows.iter().map(|(a, b, y)| (c1 * a + c2 * b - y).powi(2)).sum() };
    let (mut saa, mut sab, mut sbb, mut say, mut sby) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b, y) in &rows {
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        say += a * y;
        sby += b * y;
    }
    let mut candidates = vec![(0.0, 0.0)];
    let det = saa * sbb - sab * sab;
    if det.abs() > 1e-14 * saa * sbb {
        let c1 = (say * sbb - sby * sab) / det;
        let c2 = (sby * saa - say * sab) / det;
        if c1 >= 0.0 && c2 >= 0.0 {
            candidates.push((c1, c2));
        }
    }
    if saa > 0.0 {
        candidates.push(((say / saa).max(0.0), 0.0));
    }
    if sbb > 0.0 {
        candidates.push((0.0, (sby / sbb).max(0.0)));
    }
    let (c1, c2) = candidates
        .into_iter()
        .min_by(|a, b| resid(a.0, a.1).total_cmp(&resid(b.0, b.1)))
        .expect("at least one candidate");
    let norm: f64 = rows.iter().map(|r| r.2 * r.2).sum::<f64>().sqrt();
    let rel = if norm > 0.0 { resid(c1, c2).sqrt() / norm } else { 0.0 };
    Ok((AlmogBound { c1, c2 }, rel))
}

/// Quintic step from 1 at `t <= 0` to 0 at `t >= 1`; slope at most 15/8.
pub fn cutoff_profile(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Local energy of `f psi` for the cut-off `f` equal to 1 on the square of
/// side `2 kappa^{-1/2}` around `center` and vanishing outside the square of
/// twice that side, using the max-norm distance in the quintic profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffEnergy {
    /// `int |(grad - i kappa H A)(f psi)|^2 - kappa^2 |f psi|^2 + kappa^2/2 |f psi|^4`.
    pub energy: f64,
    /// `int |grad f|^2 |psi|^2`, evaluated edge-wise.
    pub gradient_term: f64,
}

pub fn cutoff_energy(st: &GLState, center: (f64, f64)) -> Result<CutoffEnergy> {
    let cfg = &st.config;
    let a = 1.0 / cfg.kappa.sqrt();
    let grid = st.grid();
    let s = grid.nodes_per_side();
    let fits = [(-2.0, -2.0), (2.0, -2.0), (-2.0, 2.0), (2.0, 2.0)].iter().all(|(dx, dy)| {
        let (x, y) = (center.0 + dx * a, center.1 + dy * a);
        st.mesh.boundary_distance(cfg.domain, x, y) >= 0.0
    });
    if !fits {
        return Err(Error::Precondition(format!(
            "cut-off square of side {:.4} around ({:.3}, {:.3}) leaves the domain",
            4.0 * a,
            center.0,
            center.1
        )));
    }
    let f: Vec<f64> = (0..grid.node_count())
        .map(|p| {
            let (x, y) = grid.position(p);
            let r = (x - center.0).abs().max((y - center.1).abs());
            cutoff_profile((r - a) / a)
        })
        .collect();
    let fpsi: Vec<Complex64> = st.psi.iter().zip(&f).map(|(v, w)| v * w).collect();
    let k2 = cfg.kappa * cfg.kappa;
    let mut energy = 0.0;
    let mut gradient_term = 0.0;
    for p in 0..grid.node_count() {
        if !st.mesh.active[p] {
            continue;
        }
        let a2 = fpsi[p].norm_sqr();
        energy += st.mesh.node_w[p] * (0.5 * k2 * a2 * a2 - k2 * a2);
        for (dir, q, w) in [(0, p + 1, st.mesh.wx[p]), (1, p + s, st.mesh.wy[p])] {
            if w == 0.0 {
                continue;
            }
            let th = if dir == 0 { st.theta[p].re } else { st.theta[p].im };
            energy += w * (Complex64::from_polar(1.0, -th) * fpsi[q] - fpsi[p]).norm_sqr();
            let mean2 = 0.5 * (st.psi[p].norm_sqr() + st.psi[q].norm_sqr());
            gradient_term += w * (f[q] - f[p]).powi(2) * mean2;
        }
    }
    Ok(CutoffEnergy { energy, gradient_term })
}

/// Distance of `A` on a disk of radius `ell` around `center` to the family
/// `A_0(x - center) - grad phi`: the discrete potential `phi` is fitted by
/// least squares on the edges inside the disk, and the largest pointwise
/// vector defect is returned.
pub fn gauge_probe(st: &GLState, center: (f64, f64), ell: f64) -> Result<f64> {
    let cfg = &st.config;
    if !(ell > 0.0) || st.mesh.boundary_distance(cfg.domain, center.0, center.1) < ell {
        return Err(Error::Precondition(format!(
            "disk of radius {ell:.4} around ({:.3}, {:.3}) is not contained in the domain",
            center.0, center.1
        )));
    }
    let grid = st.grid();
    let s = grid.nodes_per_side();
    let h = cfg.spacing();
    let len = grid.node_count();
    let inside: Vec<bool> = (0..len)
        .map(|p| {
            let (x, y) = grid.position(p);
            st.mesh.active[p] && (x - center.0).hypot(y - center.1) <= ell
        })
        .collect();
    // edges (p, q, dir, r_e) with r_e = A_e - A_0(mid - center) . e
    let mut edges = Vec::new();
    for p in 0..len {
        if !inside[p] {
            continue;
        }
        let (x, y) = grid.position(p);
        let (i, j) = grid.ij(p);
        if i + 1 < s && inside[p + 1] {
            let a0 = -0.5 * (y - center.1);
            edges.push((p, p + 1, 0usize, st.edge_potential(p, 0) - a0));
        }
        if j + 1 < s && inside[p + s] {
            let a0 = 0.5 * (x - center.0);
            edges.push((p, p + s, 1usize, st.edge_potential(p, 1) - a0));
        }
    }
    if edges.is_empty() {
        return Err(Error::Precondition("disk contains no grid edge".into()));
    }
    // minimize sum_e (r_e + (phi_q - phi_p) / h)^2 by conjugate gradients on
    // the graph Laplacian; the constant mode is projected out
    let apply = |phi: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(p, q, _, _) in &edges {
            let d = phi[q] - phi[p];
            out[q] += d;
            out[p] -= d;
        }
    };
    let mut rhs = vec![0.0; len];
    for &(p, q, _, r) in &edges {
        rhs[q] -= r * h;
        rhs[p] += r * h;
    }
    let count = inside.iter().filter(|&&b| b).count() as f64;
    let project = |v: &mut [f64]| {
        let mean = v.iter().zip(&inside).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>() / count;
        v.iter_mut().zip(&inside).for_each(|(x, &b)| *x = if b { *x - mean } else { 0.0 });
    };
    project(&mut rhs);
    let mut phi = vec![0.0; len];
    let mut r = rhs.clone();
    let mut d = r.clone();
    let mut ad = vec![0.0; len];
    let mut rr: f64 = r.iter().map(|x| x * x).sum();
    let stop = 1e-24 * rr.max(1e-300);
    for _ in 0..10 * len {
        if rr <= stop {
            break;
        }
        apply(&d, &mut ad);
        let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
        if dad <= 0.0 {
            break;
        }
        let alpha = rr / dad;
        phi.iter_mut().zip(&d).for_each(|(x, y)| *x += alpha * y);
        r.iter_mut().zip(&ad).for_each(|(x, y)| *x -= alpha * y);
        project(&mut r);
        let rr_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        d.iter_mut().zip(&r).for_each(|(x, y)| *x = y + beta * *x);
    }
    let mut rx = vec![None; len];
    let mut ry = vec![None; len];
    for &(p, q, dir, r) in &edges {
        let res = r + (phi[q] - phi[p]) / h;
        if dir == 0 {
            rx[p] = Some(res);
        } else {
            ry[p] = Some(res);
        }
    }
    let worst = (0..len)
        .filter_map(|p| match (rx[p], ry[p]) {
            (Some(a), Some(b)) => Some(a.hypot(b)),
            (Some(a), None) | (None, Some(a)) => Some(a.abs()),
            _ => None,
        })
        .fold(0.0, f64::max);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kappa: f64, ratio: f64) -> GLConfig {
        let field = ratio * kappa;
        GLConfig::new(kappa, field, Domain::Square, GLConfig::min_points(kappa, field)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GLConfig::new(8.0, 8.0, Domain::Square, 16).is_err());
        assert!(GLConfig::new(8.0, 0.0, Domain::Square, 64).is_err());
        assert!(GLConfig::new(8.0, 9.6, Domain::Square, 64).is_err());
        let ok = GLConfig::new(8.0, 8.4, Domain::Square, 64).unwrap();
        assert!(!ok.in_theorem_range());
        assert!(GLConfig::new(8.0, 8.0, Domain::Disk, 64).unwrap().in_theorem_range());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for domain in [Domain::Square, Domain::Disk] {
            let cfg = GLConfig::new(4.0, 4.0, Domain::Square, 24).unwrap();
            let cfg = GLConfig { domain, ..cfg };
            let mesh = Mesh::new(domain, cfg.n).unwrap();
            let len = mesh.len();
            let mut r = rng(3, 1);
            let mut sample = |scale: f64| -> Vec<Complex64> {
                (0..2 * len)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut r);
                        let b: f64 = StandardNormal.sample(&mut r);
                        Complex64::new(a, b) * scale
                    })
                    .collect()
            };
            let mut x = sample(0.5);
            let mut d = sample(1.0);
            for p in 0..len {
                if !mesh.active[p] {
                    x[p] = CZERO;
                    d[p] = CZERO;
                }
            }
            let mut metric = mesh.node_w.clone();
            metric.extend(std::iter::repeat(1.0).take(len));
            let obj = GLObjective {
                cfg: &cfg,
                mesh: &mesh,
                metric,
            };
            let mut g = vec![CZERO; 2 * len];
            obj.value_grad(&x, &mut g);
            let mut scratch = vec![CZERO; 2 * len];
            let mut f = |t: f64| {
                let y: Vec<Complex64> = x.iter().zip(&d).map(|(a, b)| a + b * t).collect();
                obj.value_grad(&y, &mut scratch)
            };
            let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
            let an = crate::linalg::wdot(obj.metric(), &g, &d);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{domain:?}: {fd} vs {an}");
        }
    }

    #[test]
    fn normal_state_with_applied_field_has_only_condensation_energy() {
        let cfg = small(6.0, 1.0);
        let mesh = Mesh::new(cfg.domain, cfg.n).unwrap();
        let psi = vec![CZERO; mesh.len()];
        let theta = applied_angles(&cfg, &mesh.grid);
        let e = energy_and_gradient(&cfg, &mesh, &psi, &theta, None);
        assert!((e - 0.5 * cfg.kappa * cfg.kappa).abs() < 1e-9);
    }

    #[test]
    fn converged_state_diagnostics_and_gauge_invariance() {
        let cfg = small(6.0, 0.9);
        let st = minimize_gl(&cfg, &GLOptions::default()).unwrap();
        assert!(st.converged(), "{:?} after {}", st.termination, st.iterations);
        assert!(st.sup_psi() <= 1.0 + 5.0 * cfg.spacing());
        assert!(st.energy < 0.5 * cfg.kappa * cfg.kappa);
        assert!(st.curl_defect() < 1.0);

        let chi = crate::seeds::random_gauge(st.psi.len(), 5);
        let moved = st.gauge_transformed(&chi).unwrap();
        assert!((moved.evaluate() - st.energy).abs() <= 1e-9 * st.energy.abs());
        for (a, b) in st.psi.iter().zip(&moved.psi) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        for (a, b) in st.curl().iter().zip(moved.curl()) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                (None, None) => {}
                _ => panic!("plaquette sets differ"),
            }
        }
    }

    fn synthetic(kappa: f64, psi: Complex64) -> GLState {
        let cfg = small(kappa, 1.0);
        let mesh = Mesh::new(cfg.domain, cfg.n).unwrap();
        let theta = applied_angles(&cfg, &mesh.grid);
        let len = mesh.len();
        GLState {
            config: cfg,
            psi: vec![psi; len],
            theta,
            mesh,
            energy: 0.0,
            residual_psi: 0.0,
            residual_field: 0.0,
            iterations: 0,
            termination: Termination::Converged,
        }
    }

    #[test]
    fn scan_of_zero_field_passes_and_geometry_errors() {
        let st = synthetic(49.0, CZERO);
        let bound = AlmogBound { c1: 1.0, c2: 1.0 };
        let scan = local_l4_scan(&st, &bound, default_inset(49.0)).unwrap();
        assert!(!scan.is_empty());
        assert!(scan.iter().all(|s| s.avg_psi4 == 0.0 && s.pass));
        let small_kappa = synthetic(4.0, CZERO);
        assert!(matches!(
            local_l4_scan(&small_kappa, &bound, default_inset(4.0)),
            Err(Error::NoAdmissibleSquare { .. })
        ));
    }

    #[test]
    fn scan_average_of_constant_field() {
        let st = synthetic(49.0, Complex64::new(0.5, 0.5));
        let scan = local_l4_scan(&st, &AlmogBound { c1: 0.0, c2: 0.0 }, 0.0).unwrap();
        assert!(scan.iter().all(|s| (s.avg_psi4 - 0.25).abs() < 1e-12 && !s.pass));
    }

    #[test]
    fn almog_fit_recovers_exact_coefficients() {
        let samples: Vec<(f64, f64, f64)> = [(12.0, 10.0), (16.0, 16.0), (24.0, 22.8), (24.0, 25.2)]
            .iter()
            .map(|&(k, h)| (k, h, 0.7 / k + 2.0 * (h / k - 1.0f64).powi(2)))
            .collect();
        let (b, rel) = fit_almog(&samples).unwrap();
        assert!((b.c1 - 0.7).abs() < 1e-10 && (b.c2 - 2.0).abs() < 1e-9 && rel < 1e-10);
        let negative: Vec<(f64, f64, f64)> = samples.iter().map(|&(k, h, _)| (k, h, -1.0 / k)).collect();
        let (b, _) = fit_almog(&negative).unwrap();
        assert!(b.c1 >= 0.0 && b.c2 >= 0.0);
    }

    #[test]
    fn cutoff_profile_bounds() {
        assert_eq!(cutoff_profile(-1.0), 1.0);
        assert_eq!(cutoff_profile(2.0), 0.0);
        let slope = (0..1000)
            .map(|i| {
                let t = i as f64 / 1000.0;
                (cutoff_profile(t + 1e-6) - cutoff_profile(t)) / 1e-6
            })
            .fold(0.0f64, |m, s| m.max(s.abs()));
        assert!(slope <= 15.0 / 8.0 + 1e-4);
    }

    #[test]
    fn cutoff_energy_of_normal_state_vanishes() {
        let st = synthetic(36.0, CZERO);
        let c = cutoff_energy(&st, (0.0, 0.0)).unwrap();
        assert_eq!(c.energy, 0.0);
        assert!(cutoff_energy(&st, (0.4, 0.0)).is_err());
    }

    #[test]
    fn gauge_probe_on_exact_and_random_potentials() {
        let st = synthetic(16.0, CZERO);
        // A_0 about the origin differs from A_0 about the center by a gradient
        let d = gauge_probe(&st, (0.1, -0.05), 0.25).unwrap();
        assert!(d < 1e-8, "{d}");
        let mut noisy = st.clone();
        let mut r = rng(9, 2);
        for t in noisy.theta.iter_mut() {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            *t += Complex64::new(a, b) * (0.3 * st.config.coupling() * st.config.spacing());
        }
        assert!(gauge_probe(&noisy, (0.1, -0.05), 0.25).unwrap() > 0.1);
        assert!(gauge_probe(&st, (0.4, 0.0), 0.25).is_err());
    }
}
