//! Replica-symmetric variational theory of Cox overfitting.
//!
//! The variational ansatz Λ̂ = kΛ₀^ρ turns the saddle-point problem into a few
//! scalar equations. All of them are double integrals over a standard normal
//! `x` and `ℓ = log(1/s) ~ Exp(1)` of
//!
//! ```text
//! W = W₀(q · e^{σx} · ℓ^ρ)
//! ```
//!
//! where `q = k ũ² e^{ũ²}` is the sweep parameter and `σ` is `v` in the
//! compact three-equation system, or `√((w − ρS)² + v²)` in the full
//! five-equation one. `W` is evaluated from the log of its argument, so the
//! integrals stay finite for any `q` that is itself a finite double.
//!
//! For fixed `q` both systems are solved by a damped fixed-point map;
//! [`solve_for_zeta`] inverts the monotone map `q ↦ ζ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    lambert_w0_exp, make_quadrature, QuadratureKind, QuadratureRule, DEFAULT_LAGUERRE_ORDER,
    EULER_GAMMA,
};

/// Largest ζ target accepted by [`solve_for_zeta`].
pub const ZETA_CAP: f64 = 0.99;
const ZETA_TOL: f64 = 1e-8;
const LOG_Q_MIN: f64 = -27.631_021_115_928_547; // ln 1e-12
const LOG_Q_MAX: f64 = 18.420_680_743_952_367; // ln 1e8
const LOG_Q_LIMIT: f64 = 700.0;
// 40 Hermite nodes leave ~1e-5 in v at ζ = 0.8, where v ≈ 7.6
const SOLVER_HERMITE_ORDER: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub hermite_order: usize,
    pub laguerre_order: usize,
    /// Rule for the `ℓ ~ Exp(1)` integral.
    #[serde(default = "default_laguerre_kind")]
    pub laguerre_kind: QuadratureKind,
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
}

fn default_laguerre_kind() -> QuadratureKind {
    QuadratureKind::ExpSinhLaguerre
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            hermite_order: SOLVER_HERMITE_ORDER,
            laguerre_order: DEFAULT_LAGUERRE_ORDER,
            laguerre_kind: default_laguerre_kind(),
            tol: 1e-10,
            damping: 0.5,
            max_iter: 50_000,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.hermite_order < 8 || self.laguerre_order < 8 {
            return Err(Error::Parameter("quadrature orders must be at least 8".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Parameter("damping must lie in (0, 1]".into()));
        }
        if self.laguerre_kind == QuadratureKind::GaussHermiteProbabilist {
            return Err(Error::Parameter("laguerre_kind must be a rule on [0, inf)".into()));
        }
        Ok(())
    }
}

/// The two rules of the double integral, with `ln ℓ` precomputed.
#[derive(Debug, Clone)]
pub struct QuadratureRules {
    x: Vec<f64>,
    wx: Vec<f64>,
    ell: Vec<f64>,
    log_ell: Vec<f64>,
    w_ell: Vec<f64>,
}

impl QuadratureRules {
    pub fn new(hermite: &QuadratureRule, laguerre: &QuadratureRule) -> Result<Self> {
        if hermite.kind() != QuadratureKind::GaussHermiteProbabilist {
            return Err(Error::Parameter("first rule must be Gauss–Hermite".into()));
        }
        if laguerre.kind() == QuadratureKind::GaussHermiteProbabilist {
            return Err(Error::Parameter("second rule must be on [0, inf)".into()));
        }
        Ok(QuadratureRules {
            x: hermite.nodes().to_vec(),
            wx: hermite.weights().to_vec(),
            ell: laguerre.nodes().to_vec(),
            log_ell: laguerre.nodes().iter().map(|l| l.ln()).collect(),
            w_ell: laguerre.weights().to_vec(),
        })
    }

    pub fn from_options(options: &SolverOptions) -> Result<Self> {
        options.validate()?;
        let h = make_quadrature(QuadratureKind::GaussHermiteProbabilist, options.hermite_order)?;
        let l = make_quadrature(options.laguerre_kind, options.laguerre_order)?;
        QuadratureRules::new(&h, &l)
    }
}

/// The integrals every equation is built from, at one `(q, σ, ρ)`.
#[derive(Debug, Clone, Copy)]
struct Moments {
    /// ∬W
    u2: f64,
    /// ∬W/(1+W)
    zeta: f64,
    /// ∬(ũ² − W)²
    m2: f64,
    /// ∬W log ℓ
    j: f64,
    /// ∬(1 − ℓ)W
    i1: f64,
}

fn moments(log_q: f64, width: f64, rho: f64, rules: &QuadratureRules) -> Result<Moments> {
    let nl = rules.ell.len();
    let mut w_vals = vec![0.0; rules.x.len() * nl];
    let (mut u2, mut zeta, mut j, mut i1) = (0.0, 0.0, 0.0, 0.0);
    for (a, (&x, &wx)) in rules.x.iter().zip(&rules.wx).enumerate() {
        let base = log_q + width * x;
        let (mut su, mut sz, mut sj, mut si) = (0.0, 0.0, 0.0, 0.0);
        for b in 0..nl {
            let w = lambert_w0_exp(base + rho * rules.log_ell[b]);
            w_vals[a * nl + b] = w;
            let wl = rules.w_ell[b];
            su += wl * w;
            sz += wl * (w / (1.0 + w));
            sj += wl * w * rules.log_ell[b];
            si += wl * (1.0 - rules.ell[b]) * w;
        }
        u2 += wx * su;
        zeta += wx * sz;
        j += wx * sj;
        i1 += wx * si;
    }
    let mut m2 = 0.0;
    for (a, &wx) in rules.wx.iter().enumerate() {
        let s: f64 = (0..nl)
            .map(|b| rules.w_ell[b] * (u2 - w_vals[a * nl + b]).powi(2))
            .sum();
        m2 += wx * s;
    }
    let out = Moments { u2, zeta, m2, j, i1 };
    if [u2, zeta, m2, j, i1].iter().any(|v| !v.is_finite()) {
        return Err(Error::Range(format!(
            "saddle-point integrals are not finite at ln q = {log_q}, width = {width}, rho = {rho}"
        )));
    }
    Ok(out)
}

/// Right-hand sides of the compact system at `(q, v, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactRhs {
    /// ζ = ∬ W/(1+W).
    pub zeta_from_eq2: f64,
    /// ζv² − ∬(ũ² − W)².
    pub v2_residual: f64,
    /// ζρ − [−(1/S²)∬W log ℓ − ∬(1 − ℓ + (C_E − 1/ρ)/S²) W].
    pub rho_residual: f64,
    pub u_tilde2: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Parameter(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

fn compact_rho_rhs(m: &Moments, rho: f64, s2: f64) -> f64 {
    -m.j / s2 - m.i1 - (EULER_GAMMA - 1.0 / rho) * m.u2 / s2
}

pub fn compact_rhs(q: f64, v: f64, rho: f64, s: f64, rules: &QuadratureRules) -> Result<CompactRhs> {
    check_positive("q", q)?;
    check_positive("rho", rho)?;
    check_positive("S", s)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Parameter(format!("v must be nonnegative and finite, got {v}")));
    }
    let m = moments(q.ln(), v, rho, rules)?;
    Ok(CompactRhs {
        zeta_from_eq2: m.zeta,
        v2_residual: m.zeta * v * v - m.m2,
        rho_residual: m.zeta * rho - compact_rho_rhs(&m, rho, s * s),
        u_tilde2: m.u2,
    })
}

/// Equation residuals, each divided by ζ·max(1, |unknown|) so that one
/// tolerance serves from ζ ≈ 0 to the divergent region near ζ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub v: f64,
    /// Zero for the compact system, where w = ρS holds by construction.
    pub w: f64,
    pub rho: f64,
    /// ∬W·[log ℓ + C_E − 1/ρ] / ũ², the identity that ties the two systems together.
    pub identity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.v.abs().max(self.w.abs()).max(self.rho.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalSolution {
    pub q: f64,
    pub zeta: f64,
    pub u_tilde: f64,
    pub v: f64,
    pub w: f64,
    pub rho: f64,
    pub k: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

/// E = −log k − log ρ + (ρ − 1) C_E.
pub fn energy(k: f64, rho: f64) -> Result<f64> {
    if !(k > 0.0) || !(rho > 0.0) {
        return Err(Error::Domain(format!("energy requires k > 0 and rho > 0, got ({k}, {rho})")));
    }
    Ok(-k.ln() - rho.ln() + (rho - 1.0) * EULER_GAMMA)
}

/// Large-time prediction ρ = (w/2S)(1 + √(1 + 4ũ²/w²)).
pub fn asymptotic_rho(u_tilde: f64, w: f64, s: f64) -> Result<f64> {
    check_positive("w", w)?;
    check_positive("S", s)?;
    if !u_tilde.is_finite() {
        return Err(Error::Domain("u_tilde must be finite".into()));
    }
    Ok(w / (2.0 * s) * (1.0 + (1.0 + 4.0 * u_tilde * u_tilde / (w * w)).sqrt()))
}

/// Positive root of `a ρ² + c ρ − b = 0` with `a, b > 0`, free of cancellation.
fn positive_root(a: f64, c: f64, b: f64) -> f64 {
    let disc = (c * c + 4.0 * a * b).sqrt();
    if c >= 0.0 {
        2.0 * b / (c + disc)
    } else {
        (disc - c) / (2.0 * a)
    }
}

fn finish(
    q: f64,
    s: f64,
    m: &Moments,
    (v, w, rho): (f64, f64, f64),
    iterations: usize,
    residuals: Residuals,
) -> Result<VariationalSolution> {
    let k = q * (-m.u2).exp() / m.u2;
    Ok(VariationalSolution {
        q,
        zeta: m.zeta,
        u_tilde: m.u2.sqrt(),
        v,
        w,
        rho,
        k,
        s,
        e: energy(k, rho)?,
        iterations,
        residuals,
    })
}

fn identity_residual(m: &Moments, rho: f64) -> f64 {
    m.j / m.u2 + EULER_GAMMA - 1.0 / rho
}

fn check_zeta(m: &Moments) -> Result<()> {
    if m.zeta >= 1.0 {
        return Err(Error::PhaseBoundary { zeta: m.zeta });
    }
    if !(m.zeta > 0.0) || !(m.u2 > 0.0) {
        return Err(Error::Range(format!(
            "q is too small for double precision (zeta = {:e})",
            m.zeta
        )));
    }
    Ok(())
}

/// Damped fixed point of the compact system at fixed `q`, starting from `(v, ρ)`.
pub fn solve_compact_from(
    q: f64,
    s: f64,
    start: (f64, f64),
    rules: &QuadratureRules,
    options: &SolverOptions,
) -> Result<VariationalSolution> {
    check_positive("q", q)?;
    check_positive("S", s)?;
    options.validate()?;
    let log_q = q.ln();
    let s2 = s * s;
    let (mut v, mut rho) = start;
    if !(v >= 0.0 && v.is_finite()) || !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("invalid start point ({v}, {rho})")));
    }
    let d = options.damping;
    let mut last = Residuals::default();
    for iter in 0..=options.max_iter {
        let m = moments(log_q, v, rho, rules)?;
        check_zeta(&m)?;
        let scale_v = m.zeta * v.max(1.0).powi(2);
        let scale_rho = m.zeta * rho.max(1.0);
        last = Residuals {
            v: (m.zeta * v * v - m.m2) / scale_v,
            w: 0.0,
            rho: (m.zeta * rho - compact_rho_rhs(&m, rho, s2)) / scale_rho,
            identity: identity_residual(&m, rho),
        };
        if last.max() < options.tol {
            return finish(q, s, &m, (v, rho * s, rho), iter, last);
        }
        if iter == options.max_iter {
            break;
        }
        let v_new = (m.m2 / m.zeta).sqrt();
        let c = m.j / s2 + m.i1 + EULER_GAMMA * m.u2 / s2;
        let rho_new = positive_root(m.zeta, c, m.u2 / s2);
        v = (1.0 - d) * v + d * v_new;
        rho = (1.0 - d) * rho + d * rho_new;
    }
    Err(Error::Convergence {
        iterations: options.max_iter,
        residual: last.max(),
    })
}

/// Compact system at fixed `q`, from the ζ → 0 point `(v, ρ) = (0, 1)`.
pub fn solve_compact_at_q(q: f64, s: f64, options: &SolverOptions) -> Result<VariationalSolution> {
    let rules = QuadratureRules::from_options(options)?;
    solve_compact_from(q, s, (0.0, 1.0), &rules, options)
}

/// Full five-equation system at fixed `q`; w and ρ are solved independently.
pub fn solve_full_variational(q: f64, s: f64, options: &SolverOptions) -> Result<VariationalSolution> {
    let rules = QuadratureRules::from_options(options)?;
    solve_full_from(q, s, (0.0, s, 1.0), &rules, options)
}

pub fn solve_full_from(
    q: f64,
    s: f64,
    start: (f64, f64, f64),
    rules: &QuadratureRules,
    options: &SolverOptions,
) -> Result<VariationalSolution> {
    check_positive("q", q)?;
    check_positive("S", s)?;
    options.validate()?;
    let log_q = q.ln();
    let s2 = s * s;
    let (mut v, mut w, mut rho) = start;
    let d = options.damping;
    let mut last = Residuals::default();
    for iter in 0..=options.max_iter {
        let sigma = ((w - rho * s).powi(2) + v * v).sqrt();
        let m = moments(log_q, sigma, rho, rules)?;
        check_zeta(&m)?;
        let c = m.j - s * w * m.zeta + m.u2 * EULER_GAMMA;
        last = Residuals {
            v: (m.zeta * v * v - m.m2) / (m.zeta * v.max(1.0).powi(2)),
            w: (m.zeta * w / s + m.i1) / (m.zeta * (w / s).max(1.0)),
            rho: (m.u2 / rho - (m.j - s * (w - rho * s) * m.zeta + m.u2 * EULER_GAMMA))
                / (s2 * m.zeta * rho.max(1.0)),
            identity: identity_residual(&m, rho),
        };
        if last.max() < options.tol {
            return finish(q, s, &m, (v, w, rho), iter, last);
        }
        if iter == options.max_iter {
            break;
        }
        let v_new = (m.m2 / m.zeta).sqrt();
        let w_new = -s * m.i1 / m.zeta;
        let rho_new = positive_root(s2 * m.zeta, c, m.u2);
        v = (1.0 - d) * v + d * v_new;
        w = (1.0 - d) * w + d * w_new;
        rho = (1.0 - d) * rho + d * rho_new;
    }
    Err(Error::Convergence {
        iterations: options.max_iter,
        residual: last.max(),
    })
}

/// Compact solution with ζ(q) = `zeta_target` to 1e-8.
///
/// The root in ln q is bracketed first (from [1e-12, 1e8], widened up to
/// ln q = 700 when ζ targets near 1 need it), then refined by Illinois false
/// position on ln ζ, with every solve warm-started from the closest one so far.
pub fn solve_for_zeta(zeta_target: f64, s: f64, options: &SolverOptions) -> Result<VariationalSolution> {
    let rules = QuadratureRules::from_options(options)?;
    solve_for_zeta_with(zeta_target, s, &rules, options)
}

pub fn solve_for_zeta_with(
    zeta_target: f64,
    s: f64,
    rules: &QuadratureRules,
    options: &SolverOptions,
) -> Result<VariationalSolution> {
    if !(zeta_target > 0.0 && zeta_target <= ZETA_CAP) {
        return Err(Error::Parameter(format!(
            "zeta target must lie in (0, {ZETA_CAP}], got {zeta_target}"
        )));
    }
    check_positive("S", s)?;
    let target = zeta_target.ln();
    let solve = |log_q: f64, start: (f64, f64)| solve_compact_from(log_q.exp(), s, start, rules, options);
    let origin = (0.0, 1.0);

    let mut lo = (LOG_Q_MIN, solve(LOG_Q_MIN, origin)?);
    if lo.1.zeta > zeta_target {
        return Err(Error::Range(format!(
            "zeta target {zeta_target} lies below zeta(1e-12) = {:e}",
            lo.1.zeta
        )));
    }
    let mut hi = (LOG_Q_MAX, solve(LOG_Q_MAX, origin)?);
    while hi.1.zeta < zeta_target {
        if hi.0 >= LOG_Q_LIMIT {
            return Err(Error::Range(format!(
                "no bracket for zeta = {zeta_target} with ln q <= {LOG_Q_LIMIT}"
            )));
        }
        let next = (hi.0 + 60.0).min(LOG_Q_LIMIT);
        let start = (hi.1.v, hi.1.rho);
        lo = hi;
        hi = (next, solve(next, start)?);
    }

    let f = |sol: &VariationalSolution| sol.zeta.ln() - target;
    let (mut f_lo, mut f_hi) = (f(&lo.1), f(&hi.1));
    let mut side = 0i8;
    for _ in 0..200 {
        for cand in [&lo, &hi] {
            if (cand.1.zeta - zeta_target).abs() < ZETA_TOL {
                return Ok(cand.1);
            }
        }
        let mut x = hi.0 - f_hi * (hi.0 - lo.0) / (f_hi - f_lo);
        if !(x > lo.0 && x < hi.0) {
            x = 0.5 * (lo.0 + hi.0);
        }
        let near = if f_lo.abs() < f_hi.abs() { &lo.1 } else { &hi.1 };
        let sol = solve(x, (near.v, near.rho))?;
        let fx = f(&sol);
        if fx < 0.0 {
            lo = (x, sol);
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = (x, sol);
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if hi.0 - lo.0 < 1e-14 * hi.0.abs().max(1.0) {
            break;
        }
    }
    let best = if (lo.1.zeta - zeta_target).abs() < (hi.1.zeta - zeta_target).abs() { lo.1 } else { hi.1 };
    if (best.zeta - zeta_target).abs() < ZETA_TOL {
        Ok(best)
    } else {
        Err(Error::Convergence {
            iterations: 200,
            residual: (best.zeta - zeta_target).abs(),
        })
    }
}

/// log g(x) with g(x) = ∫Dy e^{Sy − x e^{Sy}}.
///
/// The integrand is re-centred on its mode, which is exactly
/// `m = S − W(xS²e^{S²})/S`, and scaled by its curvature there before the
/// Hermite rule is applied; the sum is taken in the log domain.
pub fn numeric_log_g(x: f64, s: f64, hermite: &QuadratureRule) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("x must be nonnegative and finite, got {x}")));
    }
    check_positive("S", s)?;
    if hermite.kind() != QuadratureKind::GaussHermiteProbabilist {
        return Err(Error::Parameter("numeric_log_g needs a Gauss–Hermite rule".into()));
    }
    let u = if x == 0.0 { 0.0 } else { lambert_w0_exp(x.ln() + 2.0 * s.ln() + s * s) };
    let mode = s - u / s;
    let curv = 1.0 + u;
    let inv_sd = curv.sqrt().recip();
    // x e^{Sy} = (u/S²) e^{S(y − m)} at the mode-shifted node y
    let terms: Vec<f64> = hermite
        .iter()
        .map(|(t, wt)| {
            let y = mode + t * inv_sd;
            let h = -0.5 * y * y + s * y - u / (s * s) * (s * (y - mode)).exp();
            wt.ln() + h + 0.5 * t * t
        })
        .collect();
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Range(format!("log g is not finite at x = {x}")));
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    Ok(peak + sum.ln() + inv_sd.ln())
}

/// −(W(xS²e^{S²}) + 1)²/(2S²) − ½ log W(xS²e^{S²}).
pub fn asymptotic_log_g(x: f64, s: f64) -> Result<f64> {
    check_positive("x", x)?;
    check_positive("S", s)?;
    let w = lambert_w0_exp(x.ln() + 2.0 * s.ln() + s * s);
    Ok(-(w + 1.0).powi(2) / (2.0 * s * s) - 0.5 * w.ln())
}

/// Solves every ζ in `grid` (in parallel) for one S.
pub fn theory_table(grid: &[f64], s: f64, options: &SolverOptions) -> Result<Vec<VariationalSolution>> {
    use rayon::prelude::*;
    let rules = QuadratureRules::from_options(options)?;
    grid.par_iter()
        .map(|&z| solve_for_zeta_with(z, s, &rules, options))
        .collect()
}

pub fn write_theory_csv<W: Write>(writer: W, rows: &[VariationalSolution]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["zeta", "v", "w", "rho", "k", "u_tilde", "E", "residual_max"])?;
    for r in rows {
        out.write_record(
            [r.zeta, r.v, r.w, r.rho, r.k, r.u_tilde, r.e, r.residuals.max()].map(|x| x.to_string()),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// JSON form of a theory table, with the solver options echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryTable {
    #[serde(rename = "S")]
    pub s: f64,
    pub options: SolverOptions,
    pub rows: Vec<VariationalSolution>,
}
