//! Subcommands. Each one expands the configuration into independent tasks,
//! serves them from the cache or solves them on the worker pool, and writes
//! `<out>/<module>.jsonl` plus CSV tables in task order.

use std::collections::BTreeMap;
use std::time::Instant;

use glbulk_core::abrikosov::{minimize_abrikosov, AbrikosovOptions, LLLProblem};
use glbulk_core::asymptotics::{check_new_formula, extrapolate_blk, solve_task, LimitPoint, SweepTask};
use glbulk_core::bulk::{minimize_bulk, virial_check, BulkProblem, MinimizeOptions, SolveStatus};
use glbulk_core::eigen::{lowest_eigenpairs, EigenOptions};
use glbulk_core::fullgl::{
    default_inset, fit_almog, local_l4_scan, minimize_gl, AlmogBound, GLConfig, GLOptions, GLState,
};
use glbulk_core::optim::{LbfgsOptions, Termination};
use glbulk_core::quotient::{minimize_quotient, QuotientProblem};
use glbulk_core::{BoundaryKind, Error as CoreError, MagneticOperator};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{Cache, CacheKey, SweepRecord, TaskParams};
use crate::config::{Command, RunConfig};
use crate::output::{num, opt, print_table, write_csv, write_lines};
use crate::{verify, CliError, SCHEMA_VERSION};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Statuses reported as solver failures (exit code 3).
const FAILING: &[&str] = &["not_converged", "line_search_failed", "max_iterations"];

pub fn dispatch(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.command {
        Command::Spectrum => spectrum(cfg),
        Command::Bulk => bulk(cfg),
        Command::Quotient => quotient(cfg),
        Command::Abrikosov => abrikosov(cfg),
        Command::Limit => limit(cfg),
        Command::Glapp => glapp(cfg),
        Command::Verify => verify::run(cfg),
    }
}

/// What a solve hands back before it becomes a record.
pub struct Solved {
    pub values: BTreeMap<String, f64>,
    pub table: Vec<Vec<f64>>,
    pub status: String,
}

fn values<const K: usize>(pairs: [(&str, f64); K]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn status_name<T: Serialize>(s: &T) -> String {
    match serde_json::to_value(s) {
        Ok(serde_json::Value::String(v)) => v,
        _ => "unknown".into(),
    }
}

pub struct Executed {
    pub records: Vec<SweepRecord>,
    pub lines: Vec<String>,
    pub failures: Vec<String>,
    pub cache_hits: usize,
    pub tasks: usize,
}

/// Runs `solve` for every task not already in the cache. Records are
/// appended to the cache as they complete and returned in task order.
pub fn execute<T, S, F>(
    cfg: &RunConfig,
    module: &str,
    tasks: &[(T, TaskParams)],
    settings: &S,
    solve: F,
) -> Result<Executed, CliError>
where
    T: Sync,
    S: Serialize + Sync,
    F: Fn(&T) -> Result<Solved, CoreError> + Sync,
{
    let cache = Cache::open(&cfg.cache_dir)?;
    let results: Vec<Result<(SweepRecord, String, bool), String>> = tasks
        .par_iter()
        .map(|(task, params)| {
            let hash = CacheKey {
                schema_version: SCHEMA_VERSION,
                version: VERSION,
                module,
                params,
                settings,
            }
            .hash();
            if !cfg.force {
                if let Some(line) = cache.get(&hash) {
                    let rec = SweepRecord::from_line(line).map_err(|e| e.to_string())?;
                    return Ok((rec, line.to_string(), true));
                }
            }
            let t0 = Instant::now();
            let solved = solve(task).map_err(|e| format!("{module} {}: {e}", describe(params)))?;
            let rec = SweepRecord {
                schema_version: SCHEMA_VERSION,
                config_hash: hash,
                module: module.to_string(),
                params: params.clone(),
                values: solved.values,
                table: solved.table,
                status: solved.status,
                seed: cfg.seed,
                wall_time: t0.elapsed().as_secs_f64(),
                version: VERSION.to_string(),
            };
            let line = rec.to_line();
            cache.append(&line).map_err(|e| e.to_string())?;
            Ok((rec, line, false))
        })
        .collect();
    let mut out = Executed {
        records: Vec::new(),
        lines: Vec::new(),
        failures: Vec::new(),
        cache_hits: 0,
        tasks: tasks.len(),
    };
    for r in results {
        match r {
            Ok((rec, line, hit)) => {
                if FAILING.contains(&rec.status.as_str()) {
                    out.failures.push(format!("{module} {}: {}", describe(&rec.params), rec.status));
                }
                out.cache_hits += hit as usize;
                out.records.push(rec);
                out.lines.push(line);
            }
            Err(e) => out.failures.push(e),
        }
    }
    write_lines(&cfg.out.join(format!("{module}.jsonl")), &out.lines)?;
    Ok(out)
}

fn describe(p: &TaskParams) -> String {
    let mut parts = Vec::new();
    if let Some(b) = p.b {
        parts.push(format!("b={b}"));
    }
    if let Some(f) = p.flux {
        parts.push(format!("N={f}"));
    }
    if let Some(bc) = &p.bc {
        parts.push(bc.clone());
    }
    if let Some(k) = p.kappa {
        parts.push(format!("kappa={k}"));
    }
    if let Some(h) = p.field {
        parts.push(format!("H={h}"));
    }
    if let Some(n) = p.n {
        parts.push(format!("n={n}"));
    }
    parts.join(" ")
}

fn finish(module: &str, ex: &Executed) -> Result<(), CliError> {
    eprintln!(
        "{module}: {} record(s), {} from cache",
        ex.records.len(),
        ex.cache_hits
    );
    if ex.failures.is_empty() {
        Ok(())
    } else {
        for f in &ex.failures {
            eprintln!("  failed: {f}");
        }
        Err(CliError::Solver(format!(
            "{} of {} task(s) failed; completed results were kept",
            ex.failures.len(),
            ex.tasks
        )))
    }
}

pub(crate) fn minimize_options_for(cfg: &RunConfig) -> MinimizeOptions {
    let mut o = MinimizeOptions {
        restarts: cfg.restarts,
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(t) = cfg.tol {
        o.lbfgs.gtol = t;
    }
    o
}

/// `(b, N, bc)` grid of sweep tasks with resolved cell counts.
fn sweep_tasks(cfg: &RunConfig, with_b: bool) -> Result<Vec<(SweepTask, TaskParams)>, CliError> {
    let bs: Vec<f64> = if with_b { cfg.b.clone() } else { vec![0.0] };
    let mut out = Vec::new();
    for &b in &bs {
        for &flux in &cfg.flux {
            for &kind in &cfg.bc {
                let mut task = SweepTask { b, kind, flux, n: cfg.n };
                let grid = task.grid().map_err(|e| CliError::Config(e.to_string()))?;
                task.n = Some(grid.cells());
                let params = TaskParams {
                    b: with_b.then_some(b),
                    flux: Some(flux),
                    side: Some(grid.side_length()),
                    bc: Some(kind.name().to_string()),
                    n: Some(grid.cells()),
                    ..Default::default()
                };
                out.push((task, params));
            }
        }
    }
    Ok(out)
}

fn p_str(p: &TaskParams) -> [String; 4] {
    [
        p.bc.clone().unwrap_or_default(),
        p.flux.map(|f| f.to_string()).unwrap_or_default(),
        opt(p.side),
        p.n.map(|n| n.to_string()).unwrap_or_default(),
    ]
}

fn spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let tasks = sweep_tasks(cfg, false)?;
    let eigen = EigenOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let settings = (cfg.count, eigen);
    let ex = execute(cfg, "spectrum", &tasks, &settings, |t| {
        let op = MagneticOperator::unit_field(&t.grid()?);
        let k = cfg.count.unwrap_or(2 * t.flux as usize + 2);
        let res = lowest_eigenpairs(&op, k, &eigen)?;
        Ok(Solved {
            values: values([
                ("lambda1", res.eigenvalues[0]),
                ("iterations", res.iterations as f64),
            ]),
            table: res
                .eigenvalues
                .iter()
                .zip(&res.residuals)
                .enumerate()
                .map(|(i, (l, r))| vec![(i + 1) as f64, *l, *r])
                .collect(),
            status: "converged".into(),
        })
    })?;
    let cols = ["bc", "flux", "side", "n", "index", "eigenvalue", "residual"];
    let mut rows = Vec::new();
    for r in &ex.records {
        for t in &r.table {
            let mut row = p_str(&r.params).to_vec();
            row.extend([(t[0] as usize).to_string(), num(t[1]), num(t[2])]);
            rows.push(row);
        }
    }
    write_csv(&cfg.out.join("spectrum.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);
    finish("spectrum", &ex)
}

fn bulk(cfg: &RunConfig) -> Result<(), CliError> {
    let tasks = sweep_tasks(cfg, true)?;
    let opts = minimize_options_for(cfg);
    let ex = execute(cfg, "bulk", &tasks, &opts, |t| {
        let grid = t.grid()?;
        let s = minimize_bulk(&BulkProblem::new(t.b, &grid)?, &opts)?;
        let r2 = grid.side_length().powi(2);
        Ok(Solved {
            values: values([
                ("energy", s.energy),
                ("energy_per_area", s.energy / r2),
                ("l2_sq", s.norms.l2_sq),
                ("l4_4", s.norms.l4_4),
                ("virial_defect", virial_check(&s)),
                ("grad_norm", s.grad_norm),
                ("lambda1", s.lambda1),
                ("iterations", s.iterations as f64),
            ]),
            table: vec![],
            status: status_name(&s.status),
        })
    })?;
    let cols = [
        "b", "bc", "flux", "side", "n", "energy", "energy_per_area", "l2_sq", "l4_4", "virial_defect", "grad_norm",
        "lambda1", "status",
    ];
    let rows: Vec<Vec<String>> = ex
        .records
        .iter()
        .map(|r| {
            let mut row = vec![opt(r.params.b)];
            row.extend(p_str(&r.params));
            for k in ["energy", "energy_per_area", "l2_sq", "l4_4", "virial_defect", "grad_norm", "lambda1"] {
                row.push(opt(r.value(k)));
            }
            row.push(r.status.clone());
            row
        })
        .collect();
    write_csv(&cfg.out.join("bulk.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);
    finish("bulk", &ex)
}

fn quotient(cfg: &RunConfig) -> Result<(), CliError> {
    let tasks = sweep_tasks(cfg, true)?;
    let opts = minimize_options_for(cfg);
    let ex = execute(cfg, "quotient", &tasks, &opts, |t| {
        let grid = t.grid()?;
        let q = minimize_quotient(&QuotientProblem::new(t.b, &grid)?, &opts)?;
        Ok(Solved {
            values: values([
                ("m", q.value),
                ("m_per_side", q.value / grid.side_length()),
                ("el_residual", q.el_residual),
                ("grad_norm", q.grad_norm),
                ("lambda1", q.lambda1),
                ("nonnegative", q.nonnegative as u8 as f64),
                ("iterations", q.iterations as f64),
            ]),
            table: vec![],
            status: status_name(&q.status),
        })
    })?;
    let cols = ["b", "bc", "flux", "side", "n", "m", "m_per_side", "el_residual", "lambda1", "status"];
    let rows: Vec<Vec<String>> = ex
        .records
        .iter()
        .map(|r| {
            let mut row = vec![opt(r.params.b)];
            row.extend(p_str(&r.params));
            for k in ["m", "m_per_side", "el_residual", "lambda1"] {
                row.push(opt(r.value(k)));
            }
            row.push(r.status.clone());
            row
        })
        .collect();
    write_csv(&cfg.out.join("quotient.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);
    finish("quotient", &ex)
}

fn abrikosov(cfg: &RunConfig) -> Result<(), CliError> {
    let tasks = sweep_tasks(cfg, false)?;
    let mut opts = AbrikosovOptions {
        restarts: cfg.restarts.max(1) * 2,
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(t) = cfg.tol {
        opts.lbfgs = LbfgsOptions { gtol: t, ..opts.lbfgs };
    }
    let eigen = EigenOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let settings = (opts, eigen);
    let ex = execute(cfg, "abrikosov", &tasks, &settings, |t| {
        let op = MagneticOperator::unit_field(&t.grid()?);
        let p = LLLProblem::new(&op, &eigen)?;
        let r = minimize_abrikosov(&p, &opts)?;
        Ok(Solved {
            values: values([
                ("beta", r.beta),
                ("energy", r.energy),
                ("energy_per_area", r.energy_per_area),
                ("dimension", p.dimension() as f64),
            ]),
            table: vec![],
            status: if r.converged { "converged" } else { "not_converged" }.into(),
        })
    })?;
    let cols = ["bc", "flux", "side", "n", "beta", "energy", "energy_per_area", "status"];
    let rows: Vec<Vec<String>> = ex
        .records
        .iter()
        .map(|r| {
            let mut row = p_str(&r.params).to_vec();
            for k in ["beta", "energy", "energy_per_area"] {
                row.push(opt(r.value(k)));
            }
            row.push(r.status.clone());
            row
        })
        .collect();
    write_csv(&cfg.out.join("abrikosov.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);
    finish("abrikosov", &ex)
}

fn limit(cfg: &RunConfig) -> Result<(), CliError> {
    let tasks = sweep_tasks(cfg, true)?;
    let opts = minimize_options_for(cfg);
    let settings = (opts, cfg.gate);
    let ex = execute(cfg, "limit", &tasks, &settings, |t| {
        let o = solve_task(t, &opts, cfg.gate)?;
        let r = o.side;
        let mut v = values([
            ("energy", o.energy),
            ("energy_per_area", o.energy / (r * r)),
            ("virial_defect", o.virial_defect),
            ("l2_sq", o.l2_sq),
            ("l4_4", o.l4_4),
            ("lambda1", o.lambda1),
            ("bulk_grad_norm", o.bulk_grad_norm),
            ("escalations", o.escalations as f64),
        ]);
        if let Some(m) = o.m {
            v.insert("m".into(), m);
            v.insert("m_per_side".into(), m / r);
        }
        if let Some(d) = o.duality_defect {
            v.insert("duality_defect".into(), d);
        }
        if let Some(q) = o.quotient_residual {
            v.insert("quotient_residual".into(), q);
        }
        let status = match o.quotient_status {
            Some(q) if q == SolveStatus::NotConverged => status_name(&q),
            _ => status_name(&o.bulk_status),
        };
        Ok(Solved {
            values: v,
            table: vec![],
            status,
        })
    })?;
    let cols = [
        "b", "bc", "flux", "side", "n", "energy_per_area", "m_per_side", "duality_defect", "virial_defect", "status",
    ];
    let rows: Vec<Vec<String>> = ex
        .records
        .iter()
        .map(|r| {
            let mut row = vec![opt(r.params.b)];
            row.extend(p_str(&r.params));
            for k in ["energy_per_area", "m_per_side", "duality_defect", "virial_defect"] {
                row.push(opt(r.value(k)));
            }
            row.push(r.status.clone());
            row
        })
        .collect();
    write_csv(&cfg.out.join("limit_points.csv"), &cfg.header(), &cols, &rows)?;

    // fits after the barrier, grouped by (b, bc) in configuration order
    let fit_cols = [
        "b", "bc", "points", "e_blk", "c_blk", "fit_residual", "e_new", "c_new", "new_formula_defect", "c_prime",
        "in_range",
    ];
    let mut fit_rows = Vec::new();
    for &b in &cfg.b {
        for &kind in &cfg.bc {
            let pts: Vec<LimitPoint> = ex
                .records
                .iter()
                .filter(|r| r.params.b == Some(b) && r.params.bc.as_deref() == Some(kind.name()))
                .map(|r| LimitPoint {
                    side: r.params.side.unwrap_or(f64::NAN),
                    e_per_area: r.value("energy_per_area").unwrap_or(f64::NAN),
                    m_per_side: r.value("m_per_side"),
                })
                .collect();
            fit_rows.push(fit_row(b, kind, &pts, cfg.quadratic));
        }
    }
    write_csv(&cfg.out.join("limit.csv"), &cfg.header(), &fit_cols, &fit_rows)?;
    print_table(&fit_cols, &fit_rows);
    finish("limit", &ex)
}

fn fit_row(b: f64, kind: BoundaryKind, pts: &[LimitPoint], quadratic: bool) -> Vec<String> {
    let mut row = vec![num(b), kind.name().to_string(), pts.len().to_string()];
    match extrapolate_blk(b, kind, pts, quadratic) {
        Ok(est) => {
            let nf = check_new_formula(&est).ok();
            row.extend([
                num(est.e_blk),
                num(est.c_blk),
                num(est.fit_residual),
                opt(est.e_new),
                opt(est.c_new),
                opt(nf.as_ref().map(|r| r.relative_defect)),
                opt(nf.as_ref().map(|r| r.c_prime)),
                est.in_range().to_string(),
            ]);
        }
        Err(_) => row.extend(std::iter::repeat(String::new()).take(8)),
    }
    row
}

#[derive(Debug, Clone, Copy, Serialize)]
struct GLSettings {
    opts: GLOptions,
    inset: Option<f64>,
}

/// Summary values and scanned squares of one full GL solve.
pub fn gl_summary(st: &GLState, inset: f64) -> Solved {
    let cfg = &st.config;
    let unit = AlmogBound { c1: 0.0, c2: 0.0 };
    let table: Vec<Vec<f64>> = match local_l4_scan(st, &unit, inset) {
        Ok(scan) => scan.iter().map(|s| vec![s.cx, s.cy, s.avg_psi4]).collect(),
        Err(_) => vec![],
    };
    let max_avg = table.iter().map(|r| r[2]).fold(f64::NAN, f64::max);
    let mut v = values([
        ("energy", st.energy),
        ("h", cfg.spacing()),
        ("sup_psi", st.sup_psi()),
        ("kappa_curl_defect", cfg.kappa * st.curl_defect()),
        ("residual_psi", st.residual_psi),
        ("residual_field", st.residual_field),
        ("iterations", st.iterations as f64),
        ("inset", inset),
        ("squares", table.len() as f64),
    ]);
    if max_avg.is_finite() {
        v.insert("max_avg_psi4".into(), max_avg);
    }
    Solved {
        values: v,
        table,
        status: match st.termination {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
        }
        .into(),
    }
}

fn glapp(cfg: &RunConfig) -> Result<(), CliError> {
    let mut tasks = Vec::new();
    for &kappa in &cfg.kappa {
        for &ratio in &cfg.ratio {
            let field = ratio * kappa;
            let n = cfg.n.unwrap_or_else(|| GLConfig::min_points(kappa, field));
            let c = GLConfig {
                kappa,
                field,
                domain: cfg.domain,
                n,
                lambda: 0.5,
            };
            c.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let params = TaskParams {
                kappa: Some(kappa),
                field: Some(field),
                n: Some(n),
                domain: Some(status_name(&cfg.domain)),
                ..Default::default()
            };
            tasks.push((c, params));
        }
    }
    let mut opts = GLOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(t) = cfg.tol {
        opts.lbfgs.gtol = t;
    }
    let settings = GLSettings { opts, inset: cfg.inset };
    let ex = execute(cfg, "glapp", &tasks, &settings, |c| {
        let st = minimize_gl(c, &opts)?;
        Ok(gl_summary(&st, cfg.inset.unwrap_or_else(|| default_inset(c.kappa))))
    })?;
    let cols = [
        "kappa", "field", "n", "energy", "sup_psi", "sup_bound", "kappa_curl_defect", "residual_psi",
        "residual_field", "inset", "squares", "max_avg_psi4", "status",
    ];
    let rows: Vec<Vec<String>> = ex
        .records
        .iter()
        .map(|r| {
            let h = r.value("h").unwrap_or(f64::NAN);
            vec![
                opt(r.params.kappa),
                opt(r.params.field),
                r.params.n.map(|n| n.to_string()).unwrap_or_default(),
                opt(r.value("energy")),
                opt(r.value("sup_psi")),
                num(1.0 + 5.0 * h),
                opt(r.value("kappa_curl_defect")),
                opt(r.value("residual_psi")),
                opt(r.value("residual_field")),
                opt(r.value("inset")),
                opt(r.value("squares")),
                opt(r.value("max_avg_psi4")),
                r.status.clone(),
            ]
        })
        .collect();
    write_csv(&cfg.out.join("glapp.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);

    let samples: Vec<(f64, f64, f64)> = ex
        .records
        .iter()
        .filter_map(|r| Some((r.params.kappa?, r.params.field?, r.value("max_avg_psi4")?)))
        .collect();
    let scan_cols = ["kappa", "field", "cx", "cy", "avg_psi4", "rhs", "pass"];
    match fit_almog(&samples) {
        Ok((bound, rel)) => {
            let mut scan_rows = Vec::new();
            let (mut total, mut under) = (0usize, 0usize);
            for r in &ex.records {
                let (Some(k), Some(hf)) = (r.params.kappa, r.params.field) else { continue };
                let rhs = bound.rhs(k, hf);
                for t in &r.table {
                    let pass = t[2] <= rhs;
                    total += 1;
                    under += pass as usize;
                    scan_rows.push(vec![num(k), num(hf), num(t[0]), num(t[1]), num(t[2]), num(rhs), pass.to_string()]);
                }
            }
            write_csv(&cfg.out.join("glapp_scan.csv"), &cfg.header(), &scan_cols, &scan_rows)?;
            let fit_cols = ["c1", "c2", "relative_residual", "squares", "fraction_under"];
            let fit_rows = vec![vec![
                num(bound.c1),
                num(bound.c2),
                num(rel),
                total.to_string(),
                num(under as f64 / total.max(1) as f64),
            ]];
            write_csv(&cfg.out.join("glapp_fit.csv"), &cfg.header(), &fit_cols, &fit_rows)?;
            print_table(&fit_cols, &fit_rows);
        }
        Err(e) => eprintln!("glapp: no local L4 fit ({e}); too few configurations with admissible squares"),
    }
    finish("glapp", &ex)
}
