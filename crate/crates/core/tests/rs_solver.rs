use cox_overfit::rs_solver::{
    asymptotic_log_g, asymptotic_rho, compact_rhs, numeric_log_g, solve_compact_at_q,
    solve_for_zeta, solve_for_zeta_with, solve_full_variational, QuadratureRules, SolverOptions,
    VariationalSolution,
};
use cox_overfit::special::{lambert_w0, make_quadrature, QuadratureKind};
use cox_overfit::survival_data::stream_rng;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

fn bisect<F: FnMut(f64) -> f64>(mut lo: f64, mut hi: f64, tol: f64, mut f: F) -> f64 {
    let mut f_lo = f(lo);
    assert!(f_lo * f(hi) < 0.0, "no sign change on [{lo}, {hi}]");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// (v, ρ, ζ) at fixed q by nested bisection: ρ solves compact3 for each v,
/// and v solves compact1 with that ρ.
fn nested(q: f64, s: f64, rules: &QuadratureRules) -> (f64, f64, f64) {
    let rho_of = |v: f64| bisect(0.05, 50.0, 1e-11, |r| compact_rhs(q, v, r, s, rules).unwrap().rho_residual);
    let v = bisect(0.0, 10.0, 1e-10, |v| {
        let rho = rho_of(v);
        compact_rhs(q, v, rho, s, rules).unwrap().v2_residual
    });
    let rho = rho_of(v);
    (v, rho, compact_rhs(q, v, rho, s, rules).unwrap().zeta_from_eq2)
}

#[test]
fn matches_nested_bisection_oracle() {
    let opts = SolverOptions {
        hermite_order: 20,
        laguerre_order: 48,
        ..SolverOptions::default()
    };
    let rules = QuadratureRules::from_options(&opts).unwrap();
    let sol = solve_for_zeta_with(0.5, 0.5, &rules, &opts).unwrap();
    let log_q = bisect(0.0, 5.0, 1e-10, |lq| nested(lq.exp(), 0.5, &rules).2 - 0.5);
    let (v, rho, zeta) = nested(log_q.exp(), 0.5, &rules);
    assert!((zeta - 0.5).abs() < 1e-8);
    assert!((sol.q.ln() - log_q).abs() < 1e-6, "{} vs {}", sol.q.ln(), log_q);
    assert!((sol.v - v).abs() < 1e-6, "{} vs {v}", sol.v);
    assert!((sol.rho - rho).abs() < 1e-6, "{} vs {rho}", sol.rho);
}

#[test]
fn compact2_agrees_with_monte_carlo() {
    let opts = SolverOptions::default();
    let sol = solve_for_zeta(0.5, 0.5, &opts).unwrap();
    let mut rng = stream_rng(2024, 0);
    let n = 10_000_000;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let ell: f64 = rng.sample(Exp1);
        let w = lambert_w0(sol.q * (sol.v * x).exp() * ell.powf(sol.rho)).unwrap();
        let f = w / (1.0 + w);
        sum += f;
        sum2 += f * f;
    }
    let mean = sum / n as f64;
    let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - sol.zeta).abs() < 3.0 * se, "{mean} ± {se} vs {}", sol.zeta);
}

#[test]
fn zeta_round_trip_and_small_limit() {
    let opts = SolverOptions::default();
    for target in [1e-6, 0.1, 0.37, 0.9] {
        let sol = solve_for_zeta(target, 0.5, &opts).unwrap();
        assert!((sol.zeta - target).abs() < 1e-8);
        let again = solve_compact_at_q(sol.q, 0.5, &opts).unwrap();
        assert!((again.zeta - target).abs() < 1e-8);
    }
    let tiny = solve_for_zeta(1e-6, 1.0, &opts).unwrap();
    assert!(tiny.v < 1e-3 && (tiny.rho - 1.0).abs() < 1e-3);
    assert!((tiny.k - 1.0).abs() < 1e-3 && tiny.e.abs() < 1e-3);
    assert!((tiny.w - 1.0).abs() < 1e-3);
}

#[test]
fn near_critical_targets_are_reachable() {
    let sol = solve_for_zeta(0.99, 0.5, &SolverOptions::default()).unwrap();
    assert!((sol.zeta - 0.99).abs() < 1e-8);
    assert!(sol.q.ln() > 18.5, "needs q beyond 1e8");
}

fn sweep(s: f64) -> Vec<VariationalSolution> {
    let opts = SolverOptions::default();
    (0..=30)
        .map(|i| solve_compact_at_q(10f64.powf(-6.0 + 0.5 * i as f64), s, &opts).unwrap())
        .collect()
}

#[test]
fn sweep_shows_phase_behaviour() {
    let rows = sweep(0.5);
    for w in rows.windows(2) {
        assert!(w[1].zeta > w[0].zeta && w[1].zeta < 1.0);
        assert!(w[1].v > w[0].v);
        assert!(w[1].e < w[0].e);
    }
    assert!(rows.iter().all(|r| r.e <= 0.0));
    assert!(rows.last().unwrap().zeta > 0.8);
}

#[test]
fn full_system_reproduces_compact_system() {
    let opts = SolverOptions::default();
    for i in 0..=8 {
        let q = 10f64.powf(-1.5 + 0.9 * i as f64);
        let c = solve_compact_at_q(q, 0.5, &opts).unwrap();
        let f = solve_full_variational(q, 0.5, &opts).unwrap();
        assert!((f.rho - f.w / 0.5).abs() < 1e-3);
        assert!((f.v - c.v).abs() < 1e-4 && (f.k - c.k).abs() < 1e-4);
    }
    let f = solve_full_variational(1e-10, 0.5, &opts).unwrap();
    assert!((f.w - 0.5).abs() < 1e-6 && (f.rho - 1.0).abs() < 1e-6);
}

#[test]
fn independent_of_strength() {
    let opts = SolverOptions::default();
    for z in [0.3, 0.6] {
        let a = solve_for_zeta(z, 0.5, &opts).unwrap();
        let b = solve_for_zeta(z, 1.0, &opts).unwrap();
        for (x, y) in [(a.v, b.v), (a.rho, b.rho), (a.k, b.k), (a.e, b.e)] {
            assert!((x - y).abs() < 1e-6, "zeta {z}: {x} vs {y}");
        }
    }
}

#[test]
fn quadrature_orders_are_converged() {
    let base = SolverOptions::default();
    let doubled = SolverOptions {
        hermite_order: 2 * base.hermite_order,
        laguerre_order: 2 * base.laguerre_order,
        ..base
    };
    for z in [0.2, 0.5, 0.8] {
        let a = solve_for_zeta(z, 0.5, &base).unwrap();
        let b = solve_compact_at_q(a.q, 0.5, &doubled).unwrap();
        for (x, y) in [(a.v, b.v), (a.rho, b.rho), (a.k, b.k)] {
            assert!((x - y).abs() < 1e-6, "zeta {z}: {x} vs {y}");
        }
    }
}

#[test]
fn large_time_rho_agrees_as_zeta_vanishes() {
    let opts = SolverOptions::default();
    let mut last = f64::INFINITY;
    for z in [0.05, 0.01, 1e-3] {
        let sol = solve_for_zeta(z, 0.5, &opts).unwrap();
        let gap = (asymptotic_rho(sol.u_tilde, sol.w, sol.s).unwrap() / sol.rho - 1.0).abs();
        // with w = ρS the gap is (√(1 + 4ũ²/w²) − 1)/2
        let ratio = (sol.u_tilde / sol.w).powi(2);
        assert!((gap - 0.5 * ((1.0 + 4.0 * ratio).sqrt() - 1.0)).abs() < 1e-9);
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 0.02);
}

#[test]
fn log_g_approaches_its_asymptotic_form() {
    let h = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 40).unwrap();
    let rel = |x: f64| {
        let n = numeric_log_g(x, 1.0, &h).unwrap();
        ((n - asymptotic_log_g(x, 1.0).unwrap()) / n).abs()
    };
    let r: Vec<f64> = [1e3, 1e4, 1e6].iter().map(|&x| rel(x)).collect();
    assert!(r[2] < 0.1);
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn log_g_leading_term() {
    let h = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 40).unwrap();
    let ratio = |x: f64, s: f64| {
        numeric_log_g(x, s, &h).unwrap() / (-(x.ln().powi(2)) / (2.0 * s * s))
    };
    // slow O(log log x / log x) approach to 1
    let far: Vec<f64> = [1e20, 1e100, 1e300].iter().map(|&x| (ratio(x, 1.0) - 1.0).abs()).collect();
    assert!(far.windows(2).all(|w| w[1] < w[0]), "{far:?}");
    assert!(far[2] < 0.02);
    for x in [1e3, 1e4, 1e6] {
        assert!((ratio(x, 1.0) - 1.0).abs() < 0.1);
    }
}

#[test]
fn log_g_quadrature_is_converged() {
    let h40 = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 40).unwrap();
    let h160 = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 160).unwrap();
    for x in [1e-3, 1.0, 1e3, 1e6, 1e100] {
        for s in [0.5, 1.0, 2.0] {
            let a = numeric_log_g(x, s, &h40).unwrap();
            let b = numeric_log_g(x, s, &h160).unwrap();
            assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "x {x} S {s}: {a} vs {b}");
        }
    }
}
