//! Property tests over random fields, grids and gauges.

use std::sync::OnceLock;

use glbulk_core::abrikosov::LLLProblem;
use glbulk_core::asymptotics::fit_inverse_r;
use glbulk_core::bulk::{amplitude_optimized, bulk_functional};
use glbulk_core::eigen::{lowest_eigenpairs, EigenOptions};
use glbulk_core::quotient::{quotient_value, QuotientProblem};
use glbulk_core::seeds::{random_field, random_gauge};
use glbulk_core::{BoundaryKind, ComplexField, Grid, MagneticOperator};
use num_complex::Complex64;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = BoundaryKind> {
    prop_oneof![
        Just(BoundaryKind::Dirichlet),
        Just(BoundaryKind::Neumann),
        Just(BoundaryKind::Periodic)
    ]
}

fn grid(kind: BoundaryKind, flux: u32, n: usize) -> Grid {
    Grid::with_flux(flux, n, kind).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn operator_is_self_adjoint_and_nonnegative(
        k in kind(), flux in 1u32..5, n in 16usize..28, s1 in any::<u64>(), s2 in any::<u64>()
    ) {
        let g = grid(k, flux, n);
        let op = MagneticOperator::unit_field(&g);
        let u = random_field(&g, s1);
        let v = random_field(&g, s2);
        let pu = op.apply(&u).unwrap();
        let pv = op.apply(&v).unwrap();
        let a = op.inner(pu.values(), v.values());
        let b = op.inner(u.values(), pv.values());
        let scale = a.norm().max(1.0);
        prop_assert!((a - b).norm() <= 1e-11 * scale, "{a} vs {b}");
        let q = op.form(u.values());
        prop_assert!(q >= 0.0);
        // the form is the quadratic form of P
        let pq = op.inner(pu.values(), u.values()).re;
        prop_assert!((pq - q).abs() <= 1e-10 * q.max(1.0));
    }

    #[test]
    fn bulk_functional_is_gauge_invariant(
        k in kind(), flux in 1u32..4, b in 0.05f64..1.0, s in any::<u64>()
    ) {
        let g = grid(k, flux, 20);
        let op = MagneticOperator::unit_field(&g);
        let u = random_field(&g, s);
        let chi = random_gauge(g.node_count(), s ^ 0xabc);
        let op2 = op.gauge_transformed(&chi).unwrap();
        let u2 = u.gauge_rotated(&chi).unwrap();
        let e1 = bulk_functional(&op, b, u.values());
        let e2 = bulk_functional(&op2, b, u2.values());
        prop_assert!((e1 - e2).abs() <= 1e-10 * e1.abs().max(1.0));
    }

    #[test]
    fn quotient_is_scale_invariant(
        k in kind(), b in 0.05f64..0.95, s in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0
    ) {
        prop_assume!(re.hypot(im) > 1e-3);
        let g = grid(k, 2, 20);
        let p = QuotientProblem::new(b, &g).unwrap();
        let u = random_field(&g, s);
        let c = Complex64::new(re, im);
        let m1 = quotient_value(&p, &u).unwrap();
        let m2 = quotient_value(&p, &u.scaled(c)).unwrap();
        prop_assert!((m1 - m2).abs() <= 1e-10 * m1.abs().max(1.0));
    }

    /// Amplitude optimization maps the quotient value to the bulk value:
    /// `min_t E(t v) = -m(v)^2 / 2` whenever `m(v) < 0`.
    #[test]
    fn amplitude_optimization_realizes_duality(
        b in 0.05f64..0.6, eps in 0.0f64..0.2, s in any::<u64>()
    ) {
        let (g, lowest) = lowest_periodic();
        let noise = random_field(g, s);
        let p = QuotientProblem::new(b, g).unwrap();
        let op = p.operator();
        // noise of relative size eps in the weighted L2 norm
        let rel = eps * (op.inner(lowest.values(), lowest.values()).re
            / op.inner(noise.values(), noise.values()).re).sqrt();
        let v: Vec<Complex64> = lowest.values().iter().zip(noise.values()).map(|(a, r)| a + r * rel).collect();
        let v = ComplexField::from_values(*g, v).unwrap();
        let m = quotient_value(&p, &v).unwrap();
        prop_assume!(m < 0.0);
        let u = amplitude_optimized(op, b, v.values());
        let e = bulk_functional(op, b, &u);
        prop_assert!((e + 0.5 * m * m).abs() <= 1e-10 * e.abs(), "{e} vs {}", -0.5 * m * m);
    }

    /// Discrete Cauchy-Schwarz with weights summing to the area: `beta >= 1`.
    #[test]
    fn abrikosov_ratio_at_least_one(coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4)) {
        prop_assume!(coeffs.iter().any(|(a, b)| a.hypot(*b) > 1e-3));
        let p = lll4();
        let c: Vec<Complex64> = coeffs.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        prop_assert!(p.beta(&c).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn inverse_r_fit_recovers_exact_data(e in -0.5f64..0.0, c in -2.0f64..2.0) {
        let pts: Vec<(f64, f64)> = [2u32, 4, 8, 16]
            .iter()
            .map(|&n| {
                let r = (2.0 * std::f64::consts::PI * n as f64).sqrt();
                (r, e + c / r)
            })
            .collect();
        let f = fit_inverse_r(&pts, false).unwrap();
        prop_assert!((f.intercept - e).abs() < 1e-12 && (f.slope - c).abs() < 1e-11);
    }
}

fn lowest_periodic() -> &'static (Grid, ComplexField) {
    static CELL: OnceLock<(Grid, ComplexField)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = grid(BoundaryKind::Periodic, 2, 24);
        let op = MagneticOperator::unit_field(&g);
        let res = lowest_eigenpairs(&op, 1, &EigenOptions::default()).unwrap();
        (g, res.vectors[0].clone())
    })
}

fn lll4() -> &'static LLLProblem {
    static CELL: OnceLock<LLLProblem> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = grid(BoundaryKind::Periodic, 4, 32);
        LLLProblem::new(&MagneticOperator::unit_field(&g), &EigenOptions::default()).unwrap()
    })
}
