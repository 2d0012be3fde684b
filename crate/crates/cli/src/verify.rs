//! Invariant suite behind `glbulk verify`: small, fixed problems whose
//! checks must all pass. The table carries no timings, so two runs with the
//! same seed write identical bytes.

use glbulk_core::abrikosov::{minimize_abrikosov, AbrikosovOptions, LLLProblem};
use glbulk_core::bulk::{minimize_bulk, virial_check, BulkProblem, SolveStatus};
use glbulk_core::eigen::{lowest_eigenpairs, EigenOptions};
use glbulk_core::quotient::solve_pair;
use glbulk_core::seeds::random_gauge;
use glbulk_core::{BoundaryKind, Grid, MagneticOperator};

use crate::config::RunConfig;
use crate::output::{print_table, write_csv};
use crate::CliError;

/// Flux of the verification square.
pub const VERIFY_FLUX: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

fn grid(kind: BoundaryKind) -> Result<Grid, CliError> {
    let r = glbulk_core::grid::side_of_flux(VERIFY_FLUX);
    Grid::new(r, glbulk_core::grid::default_points(r), kind).map_err(core)
}

fn core(e: glbulk_core::Error) -> CliError {
    CliError::Solver(e.to_string())
}

pub fn checks(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let mut opts = crate::commands::minimize_options_for(cfg);
    opts.restarts = opts.restarts.min(4);
    let eigen = EigenOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let periodic = grid(BoundaryKind::Periodic)?;
    let dirichlet = grid(BoundaryKind::Dirichlet)?;
    let mut out = Vec::new();

    // lowest Landau level: N eigenvalues near 1, a gap to the next level
    let n = VERIFY_FLUX as usize;
    let op = MagneticOperator::unit_field(&periodic);
    let res = lowest_eigenpairs(&op, n + 1, &eigen).map_err(core)?;
    let lll = res.eigenvalues[..n].iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max);
    out.push(Check::at_most("landau_level_defect", lll, 2e-2));
    out.push(Check {
        name: "second_level_lower_bound",
        value: res.eigenvalues[n],
        tolerance: 2.5,
        pass: res.eigenvalues[n] >= 2.5,
    });

    let chi = random_gauge(periodic.node_count(), cfg.seed);
    let moved = op.gauge_transformed(&chi).map_err(core)?;
    let res2 = lowest_eigenpairs(&moved, n + 1, &eigen).map_err(core)?;
    let cov = res
        .eigenvalues
        .iter()
        .zip(&res2.eigenvalues)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(Check::at_most("gauge_covariance", cov, 1e-7));

    // duality and virial on both boundary conditions
    for (name, g, b) in [("periodic", &periodic, 0.5), ("dirichlet", &dirichlet, 0.7)] {
        let pair = solve_pair(b, g, &opts, cfg.gate, 3).map_err(core)?;
        let defect = pair.defect.unwrap_or(f64::INFINITY);
        out.push(Check::at_most(
            if name == "periodic" { "duality_periodic" } else { "duality_dirichlet" },
            defect,
            cfg.gate,
        ));
        let s = &pair.bulk;
        let scale = s.norms.l2_sq.max(f64::MIN_POSITIVE);
        out.push(Check::at_most(
            if name == "periodic" { "virial_periodic" } else { "virial_dirichlet" },
            virial_check(s) / scale,
            1e-6,
        ));
    }

    // monotonicity of e(b, R) in b
    let mut energies = Vec::new();
    for b in [0.3, 0.5, 0.7] {
        let s = minimize_bulk(&BulkProblem::new(b, &periodic).map_err(core)?, &opts).map_err(core)?;
        energies.push(s.energy);
    }
    let worst_step = energies.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check {
        name: "monotone_in_b",
        value: worst_step,
        tolerance: 0.0,
        pass: worst_step < 0.0,
    });

    // b = 1 with the Dirichlet condition: zero is the minimizer
    let s = minimize_bulk(&BulkProblem::new(1.0, &dirichlet).map_err(core)?, &opts).map_err(core)?;
    out.push(Check {
        name: "trivial_endpoint",
        value: s.energy.abs(),
        tolerance: 0.0,
        pass: s.energy == 0.0 && s.status == SolveStatus::Trivial,
    });

    // Abrikosov energy per area in [-1/2, 0)
    let p = LLLProblem::new(&op, &eigen).map_err(core)?;
    let ab = minimize_abrikosov(
        &p,
        &AbrikosovOptions {
            seed: cfg.seed,
            ..Default::default()
        },
    )
    .map_err(core)?;
    out.push(Check {
        name: "abrikosov_range",
        value: ab.energy_per_area,
        tolerance: -0.5,
        pass: ab.energy_per_area >= -0.5 && ab.energy_per_area < 0.0,
    });
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let checks = checks(cfg)?;
    let cols = ["check", "value", "tolerance", "pass"];
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.to_string(),
                format!("{:.6e}", c.value),
                format!("{:.1e}", c.tolerance),
                if c.pass { "PASS" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    write_csv(&cfg.out.join("verify.csv"), &cfg.header(), &cols, &rows)?;
    print_table(&cols, &rows);
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        Err(CliError::Verify(failed))
    } else {
        Ok(())
    }
}
