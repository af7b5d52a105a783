//! Quadrature rules for the two integration measures the theory uses:
//! the standard normal density on ℝ and the exponential density on [0, ∞).
//!
//! Gauss rules are built by Golub–Welsch (eigenvalues of the Jacobi matrix),
//! polished by Newton on the three-term recurrence, and weighted through the
//! Christoffel function so that no weight is formed from an eigenvector
//! component. The exponential measure additionally has an exp-sinh rule; it
//! converges geometrically for integrands with `ln ℓ` or `ℓ^ρ` behaviour at the
//! origin, where Gauss–Laguerre only converges algebraically.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 512;
pub const DEFAULT_HERMITE_ORDER: usize = 40;
pub const DEFAULT_LAGUERRE_ORDER: usize = 80;

// exp-sinh truncation: nodes cover ℓ ∈ [1e-16, 60].
const EXP_SINH_SCALE: f64 = std::f64::consts::FRAC_PI_2;
const EXP_SINH_LOG_MIN: f64 = -36.841_361_487_904_734; // ln 1e-16
const EXP_SINH_LOG_MAX: f64 = 4.094_344_562_222_1; // ln 60

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    /// Weight (2π)^{-1/2} e^{-x²/2} on ℝ.
    GaussHermiteProbabilist,
    /// Weight e^{-ℓ} on [0, ∞).
    GaussLaguerre,
    /// Weight e^{-ℓ} on [0, ∞), trapezoid rule under ℓ = exp(π/2 · sinh t).
    ExpSinhLaguerre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: QuadratureKind,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Σ wᵢ f(xᵢ).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Builds an `n`-point rule of the requested kind, `1 <= n <= 512`.
///
/// Orders whose smallest weight would underflow double precision are rejected
/// (this caps Gauss–Hermite near n = 360 and Gauss–Laguerre near n = 180), as is
/// the one-point exp-sinh rule.
pub fn make_quadrature(kind: QuadratureKind, n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_ORDER {
        return Err(Error::Parameter(format!(
            "quadrature order must be in 1..={MAX_ORDER}, got {n}"
        )));
    }
    let (nodes, weights) = match kind {
        QuadratureKind::GaussHermiteProbabilist => gauss_rule(Family::Hermite, n)?,
        QuadratureKind::GaussLaguerre => gauss_rule(Family::Laguerre, n)?,
        QuadratureKind::ExpSinhLaguerre => exp_sinh_rule(n)?,
    };
    Ok(QuadratureRule { nodes, weights, kind })
}

#[derive(Clone, Copy)]
enum Family {
    Hermite,
    Laguerre,
}

impl Family {
    fn jacobi(self, n: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(n, n);
        for k in 0..n {
            if let Family::Laguerre = self {
                j[(k, k)] = (2 * k + 1) as f64;
            }
            if k + 1 < n {
                let off = match self {
                    Family::Hermite => ((k + 1) as f64).sqrt(),
                    Family::Laguerre => (k + 1) as f64,
                };
                j[(k, k + 1)] = off;
                j[(k + 1, k)] = off;
            }
        }
        j
    }
}

/// Orthonormal polynomial values at `x` up to degree `n`, carried with a
/// common power-of-ten scale so the recurrence never overflows.
struct Recurrence {
    p_n: f64,
    p_nm1: f64,
    /// Σ_{k<n} p_k², in the same scale as p_n.
    sum_sq: f64,
    /// Number of 1e-150 rescalings applied.
    rescales: i32,
}

const RESCALE: f64 = 1e-150;
const RESCALE_LN: f64 = -345.387_763_949_106_84; // ln 1e-150

fn recurrence(family: Family, n: usize, x: f64) -> Recurrence {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    let mut rescales = 0;
    for k in 0..n {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = match family {
            Family::Hermite => (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt(),
            Family::Laguerre => ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0),
        };
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= RESCALE;
            prev *= RESCALE;
            sum_sq *= RESCALE * RESCALE;
            rescales += 1;
        }
    }
    Recurrence {
        p_n: cur,
        p_nm1: prev,
        sum_sq,
        rescales,
    }
}

fn newton_step(family: Family, n: usize, x: f64) -> f64 {
    let r = recurrence(family, n, x);
    let nf = n as f64;
    // derivative identities for the orthonormal families
    let dp = match family {
        Family::Hermite => nf.sqrt() * r.p_nm1,
        Family::Laguerre => nf * (r.p_n - r.p_nm1) / x,
    };
    if dp == 0.0 {
        0.0
    } else {
        r.p_n / dp
    }
}

fn gauss_rule(family: Family, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let eig = SymmetricEigen::new(family.jacobi(n));
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    if let Family::Hermite = family {
        // enforce exact symmetry about the origin
        for i in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -m;
            nodes[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
    }
    for x in nodes.iter_mut() {
        if *x == 0.0 {
            continue;
        }
        for _ in 0..3 {
            let dx = newton_step(family, n, *x);
            *x -= dx;
            if dx.abs() <= 2.0 * f64::EPSILON * x.abs() {
                break;
            }
        }
    }
    let mut weights = Vec::with_capacity(n);
    for &x in &nodes {
        let r = recurrence(family, n, x);
        let ln_w = -r.sum_sq.ln() + 2.0 * f64::from(r.rescales) * RESCALE_LN;
        let w = ln_w.exp();
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Parameter(format!(
                "quadrature order {n} is unsupported: smallest weight underflows"
            )));
        }
        weights.push(w);
    }
    // the Christoffel weights sum to one up to rounding; remove the residue
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok((nodes, weights))
}

fn exp_sinh_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::Parameter(
            "exp-sinh rule needs at least 2 nodes".to_string(),
        ));
    }
    let t_lo = (EXP_SINH_LOG_MIN / EXP_SINH_SCALE).asinh();
    let t_hi = (EXP_SINH_LOG_MAX / EXP_SINH_SCALE).asinh();
    let h = (t_hi - t_lo) / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        let t = t_lo + h * j as f64;
        let ell = (EXP_SINH_SCALE * t.sinh()).exp();
        let mut w = h * EXP_SINH_SCALE * t.cosh() * ell * (-ell).exp();
        if j == 0 || j == n - 1 {
            w *= 0.5;
        }
        nodes.push(ell);
        weights.push(w);
    }
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::euler_gamma;

    fn factorial(k: u32) -> f64 {
        (1..=k).map(f64::from).product()
    }

    fn double_factorial_odd(k: u32) -> f64 {
        // (k-1)!! for even k
        (1..k).step_by(2).map(f64::from).product()
    }

    #[test]
    fn single_node_hermite() {
        let r = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert!((r.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hermite_second_moment() {
        let r = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 10).unwrap();
        assert!((r.integrate(|x| x * x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polynomial_exactness() {
        for n in [5usize, 8, 20, 40, 100] {
            let h = make_quadrature(QuadratureKind::GaussHermiteProbabilist, n).unwrap();
            let l = make_quadrature(QuadratureKind::GaussLaguerre, n).unwrap();
            for deg in 0..=8u32 {
                if 2 * n as u32 - 1 < deg {
                    continue;
                }
                let gh = h.integrate(|x| x.powi(deg as i32));
                let exact = if deg % 2 == 1 { 0.0 } else { double_factorial_odd(deg) };
                assert!((gh - exact).abs() < 1e-12 * exact.max(1.0), "H n={n} deg={deg}: {gh}");
                let gl = l.integrate(|x| x.powi(deg as i32));
                let exact = factorial(deg);
                assert!(((gl - exact) / exact).abs() < 1e-12, "L n={n} deg={deg}: {gl}");
            }
        }
    }

    #[test]
    fn exp_sinh_polynomial_moments() {
        let r = make_quadrature(QuadratureKind::ExpSinhLaguerre, 160).unwrap();
        for deg in 0..=8u32 {
            let g = r.integrate(|x| x.powi(deg as i32));
            let exact = factorial(deg);
            assert!(((g - exact) / exact).abs() < 1e-12, "deg={deg}: {g}");
        }
    }

    #[test]
    fn weights_sum_to_one_and_nodes_increase() {
        for kind in [
            QuadratureKind::GaussHermiteProbabilist,
            QuadratureKind::GaussLaguerre,
            QuadratureKind::ExpSinhLaguerre,
        ] {
            for n in [2usize, 7, 40, 80, 150] {
                let r = make_quadrature(kind, n).unwrap();
                let total: f64 = r.weights().iter().sum();
                // the exp-sinh rule is not exact for constants; it converges to them
                let tol = match (kind, n) {
                    (QuadratureKind::ExpSinhLaguerre, n) if n < 40 => f64::INFINITY,
                    (QuadratureKind::ExpSinhLaguerre, n) if n < 80 => 1e-8,
                    _ => 1e-13,
                };
                assert!((total - 1.0).abs() < tol, "{kind:?} n={n}: {total}");
                assert!(r.weights().iter().all(|&w| w > 0.0));
                assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
            }
        }
    }

    #[test]
    fn log_moment_gives_euler_constant() {
        let r = make_quadrature(QuadratureKind::ExpSinhLaguerre, 64).unwrap();
        let est = r.integrate(f64::ln);
        assert!((est + euler_gamma()).abs() < 1e-6, "{est}");
    }

    #[test]
    fn log_moment_convergence() {
        let est = |n| {
            make_quadrature(QuadratureKind::ExpSinhLaguerre, n)
                .unwrap()
                .integrate(f64::ln)
        };
        assert!((est(16) - est(64)).abs() < 1e-3);
        assert!((est(32) - est(64)).abs() < 1e-5);
    }

    #[test]
    fn gauss_laguerre_log_moment_is_slow() {
        // ln ℓ is not polynomial at the origin; Gauss–Laguerre error decays like 1/n
        let est = |n| {
            make_quadrature(QuadratureKind::GaussLaguerre, n)
                .unwrap()
                .integrate(f64::ln)
        };
        let e64 = (est(64) + euler_gamma()).abs();
        assert!(e64 > 1e-3 && e64 < 2e-2);
        assert!((est(128) + euler_gamma()).abs() < e64);
    }

    #[test]
    fn unit_interval_identity() {
        // ∫Dx f(x) = ∫₀¹ ds [f(√(2L)) + f(-√(2L))] / (2√(πL)), L = ln(1/s).
        // With s = e^{-ℓ} the right side is ∫₀^∞ e^{-ℓ} (…) dℓ.
        let f = |x: f64| x * x;
        let lhs = make_quadrature(QuadratureKind::GaussHermiteProbabilist, 20)
            .unwrap()
            .integrate(f);
        let rhs = make_quadrature(QuadratureKind::ExpSinhLaguerre, 200)
            .unwrap()
            .integrate(|l| {
                let r = (2.0 * l).sqrt();
                (f(r) + f(-r)) / (2.0 * (std::f64::consts::PI * l).sqrt())
            });
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn rejects_unsupported_orders() {
        assert!(make_quadrature(QuadratureKind::GaussLaguerre, 0).is_err());
        assert!(make_quadrature(QuadratureKind::GaussHermiteProbabilist, 513).is_err());
        assert!(make_quadrature(QuadratureKind::GaussLaguerre, 512).is_err());
        assert!(make_quadrature(QuadratureKind::ExpSinhLaguerre, 1).is_err());
        assert!(make_quadrature(QuadratureKind::ExpSinhLaguerre, 512).is_ok());
    }
}
