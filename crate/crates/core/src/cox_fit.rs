//! Maximum-likelihood Cox regression with a Breslow baseline.
//!
//! All risk-set quantities come from one sweep over the samples in order of
//! decreasing event time. The running sums Σ e^η, Σ e^η z and Σ e^η z zᵀ are
//! kept relative to the largest η seen so far (a cumulative log-sum-exp), so
//! no exponential overflows however large the linear predictors become. The
//! sweep is generic over [`RiskScalar`], which selects standard `f64` or
//! double-double accumulation.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_root;
use crate::precision::{DoubleDouble, PrecisionMode, RiskScalar};
use crate::survival_data::SurvivalDataset;

/// Λ̂(t): right-continuous step function, zero before the first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCumulativeHazard {
    #[serde(rename = "times")]
    jump_times: Vec<f64>,
    #[serde(rename = "values")]
    cumulative_values: Vec<f64>,
}

impl StepCumulativeHazard {
    pub fn new(jump_times: Vec<f64>, cumulative_values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != cumulative_values.len() {
            return Err(Error::Data("jump times and values differ in length".into()));
        }
        if jump_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Data("jump times must be positive and finite".into()));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("jump times must be strictly increasing".into()));
        }
        if cumulative_values.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || cumulative_values.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Data("cumulative values must be finite, nonnegative and nondecreasing".into()));
        }
        Ok(StepCumulativeHazard {
            jump_times,
            cumulative_values,
        })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.cumulative_values
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative_values[k - 1]
        }
    }

    /// Applies a monotone map to every step value.
    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        StepCumulativeHazard::new(
            self.jump_times.clone(),
            self.cumulative_values.iter().map(|&v| f(v)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub precision_mode: PrecisionMode,
    pub tol: f64,
    pub loglik: f64,
    /// ℓ(β) after each accepted Newton step, starting at β = 0.
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitResult {
    pub beta_hat: Vec<f64>,
    #[serde(rename = "breslow")]
    pub lambda_hat: StepCumulativeHazard,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub precision: PrecisionMode,
    /// Euclidean bound on β̂ beyond which the likelihood is declared monotone.
    pub beta_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-10,
            max_iter: 100,
            precision: PrecisionMode::Standard,
            beta_bound: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Sample indices ordered by decreasing event time.
fn descending_order(data: &SurvivalDataset) -> Result<Vec<usize>> {
    let t = data.times();
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| t[b].total_cmp(&t[a]));
    if let Some(w) = order.windows(2).find(|w| t[w[0]] == t[w[1]]) {
        return Err(Error::Data(format!(
            "tied event time {} (samples {} and {}); ties are not supported",
            t[w[0]], w[0], w[1]
        )));
    }
    Ok(order)
}

struct Sweep<T> {
    loglik: T,
    gradient: Vec<T>,
    /// Packed upper triangle, row-major.
    hessian: Option<Vec<T>>,
    /// ln Σ_{j in risk set} e^{η_j}, per sample in descending time order.
    log_risk: Vec<T>,
}

fn sweep<T: RiskScalar>(
    data: &SurvivalDataset,
    order: &[usize],
    beta: &[f64],
    want_hessian: bool,
) -> Result<Sweep<T>> {
    let p = data.p();
    let tri = p * (p + 1) / 2;
    let mut shift = T::zero();
    let mut s0 = T::zero();
    let mut s1 = vec![T::zero(); p];
    let mut s2 = if want_hessian { vec![T::zero(); tri] } else { Vec::new() };
    let mut loglik = T::zero();
    let mut grad = vec![T::zero(); p];
    let mut hess = if want_hessian { vec![T::zero(); tri] } else { Vec::new() };
    let mut log_risk = Vec::with_capacity(order.len());
    let one = T::from_f64(1.0);
    let mut mean = vec![T::zero(); p];

    for (k, &j) in order.iter().enumerate() {
        let z = data.row(j);
        let eta = T::dot(beta, z);
        if k == 0 || eta.to_f64() > shift.to_f64() {
            if k > 0 {
                let factor = (shift - eta).exp();
                s0 = s0 * factor;
                s1.iter_mut().for_each(|x| *x = *x * factor);
                s2.iter_mut().for_each(|x| *x = *x * factor);
            }
            shift = eta;
        }
        let w = (eta - shift).exp();
        s0 = s0 + w;
        for a in 0..p {
            let wa = w.mul_f64(z[a]);
            s1[a] = s1[a] + wa;
            if want_hessian {
                let base = a * p - a * (a + 1) / 2;
                for b in a..p {
                    s2[base + b] = s2[base + b] + wa.mul_f64(z[b]);
                }
            }
        }

        let log_s0 = shift + s0.ln();
        if !log_s0.to_f64().is_finite() {
            return Err(Error::Overflow(format!(
                "risk-set normaliser is not finite at sample {j}"
            )));
        }
        log_risk.push(log_s0);
        loglik = loglik + (eta - log_s0);
        let inv = one.div(s0);
        for a in 0..p {
            mean[a] = s1[a] * inv;
            grad[a] = grad[a] + (T::from_f64(z[a]) - mean[a]);
        }
        if want_hessian {
            for a in 0..p {
                let base = a * p - a * (a + 1) / 2;
                for b in a..p {
                    let cov = s2[base + b] * inv - mean[a] * mean[b];
                    hess[base + b] = hess[base + b] - cov;
                }
            }
        }
    }
    Ok(Sweep {
        loglik,
        gradient: grad,
        hessian: want_hessian.then_some(hess),
        log_risk,
    })
}

fn unpack_hessian<T: RiskScalar>(packed: &[T], p: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(p, p);
    for a in 0..p {
        let base = a * p - a * (a + 1) / 2;
        for b in a..p {
            let v = packed[base + b].to_f64();
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

fn evaluate<T: RiskScalar>(
    data: &SurvivalDataset,
    order: &[usize],
    beta: &[f64],
    want_hessian: bool,
) -> Result<LikelihoodEval> {
    let s = sweep::<T>(data, order, beta, want_hessian)?;
    let p = data.p();
    let out = LikelihoodEval {
        loglik: s.loglik.to_f64(),
        gradient: s.gradient.iter().map(|g| g.to_f64()).collect(),
        hessian: s
            .hessian
            .map(|h| unpack_hessian(&h, p))
            .unwrap_or_else(|| DMatrix::zeros(0, 0)),
    };
    if !out.loglik.is_finite() || out.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Overflow("partial likelihood is not finite".into()));
    }
    Ok(out)
}

fn evaluate_mode(
    data: &SurvivalDataset,
    order: &[usize],
    beta: &[f64],
    want_hessian: bool,
    mode: PrecisionMode,
) -> Result<LikelihoodEval> {
    match mode {
        PrecisionMode::Standard => evaluate::<f64>(data, order, beta, want_hessian),
        PrecisionMode::Extended => evaluate::<DoubleDouble>(data, order, beta, want_hessian),
    }
}

fn check_beta(data: &SurvivalDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != data.p() {
        return Err(Error::Data(format!(
            "beta has {} entries for {} covariates",
            beta.len(),
            data.p()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Parameter("beta must be finite".into()));
    }
    Ok(())
}

/// ℓ(β) = Σᵢ [β·zᵢ − ln Σ_{j: tⱼ ≥ tᵢ} e^{β·zⱼ}] with its gradient and Hessian.
pub fn partial_loglik(data: &SurvivalDataset, beta: &[f64]) -> Result<LikelihoodEval> {
    partial_loglik_with(data, beta, PrecisionMode::Standard)
}

pub fn partial_loglik_with(
    data: &SurvivalDataset,
    beta: &[f64],
    mode: PrecisionMode,
) -> Result<LikelihoodEval> {
    check_beta(data, beta)?;
    let order = descending_order(data)?;
    evaluate_mode(data, &order, beta, true, mode)
}

/// Breslow estimator Λ̂(t) = Σ_{i: tᵢ ≤ t} 1 / Σ_{j: tⱼ ≥ tᵢ} e^{β·zⱼ}.
pub fn breslow(data: &SurvivalDataset, beta: &[f64]) -> Result<StepCumulativeHazard> {
    breslow_with(data, beta, PrecisionMode::Standard)
}

pub fn breslow_with(
    data: &SurvivalDataset,
    beta: &[f64],
    mode: PrecisionMode,
) -> Result<StepCumulativeHazard> {
    check_beta(data, beta)?;
    let order = descending_order(data)?;
    match mode {
        PrecisionMode::Standard => breslow_sorted::<f64>(data, &order, beta),
        PrecisionMode::Extended => breslow_sorted::<DoubleDouble>(data, &order, beta),
    }
}

fn breslow_sorted<T: RiskScalar>(
    data: &SurvivalDataset,
    order: &[usize],
    beta: &[f64],
) -> Result<StepCumulativeHazard> {
    let s = sweep::<T>(data, order, beta, false)?;
    let mut acc = T::zero();
    let mut times = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len());
    for (&j, log_s0) in order.iter().zip(&s.log_risk).rev() {
        acc = acc + (-*log_s0).exp();
        times.push(data.times()[j]);
        values.push(acc.to_f64());
    }
    StepCumulativeHazard::new(times, values)
}

const STEP_TOL: f64 = 1e-6;
const DIVERGING_STEP: f64 = 0.1;

fn loglik_slack(loglik: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + loglik.abs())
}

/// Newton–Raphson from β = 0 with step halving on ℓ.
pub fn fit_cox(data: &SurvivalDataset, options: &FitOptions) -> Result<CoxFitResult> {
    if !(options.tol > 0.0) {
        return Err(Error::Parameter("tolerance must be positive".into()));
    }
    let order = descending_order(data)?;
    let p = data.p();
    let mode = options.precision;
    let mut beta = vec![0.0; p];
    let mut current = evaluate_mode(data, &order, &beta, true, mode)?;
    let mut trace = vec![current.loglik];
    let mut last_step = 0.0f64;

    for iter in 0..=options.max_iter {
        let gnorm = current.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let info = -current.hessian.clone();
        let Some(chol) = Cholesky::new(info) else {
            // information lost to cancellation while still taking O(1) steps: β is escaping
            if last_step >= DIVERGING_STEP {
                return Err(Error::Separation {
                    norm: beta.iter().map(|b| b * b).sum::<f64>().sqrt(),
                    bound: options.beta_bound,
                });
            }
            return Err(Error::Degenerate(format!(
                "information matrix is not positive definite at iteration {iter} (p = {p}, N = {})",
                data.n()
            )));
        };
        let step = chol.solve(&DVector::from_column_slice(&current.gradient));
        let step_norm = step.amax();
        // a vanishing gradient with an O(1) Newton step is a monotone likelihood, not an optimum
        if gnorm < options.tol && step_norm < STEP_TOL {
            let lambda_hat = match mode {
                PrecisionMode::Standard => breslow_sorted::<f64>(data, &order, &beta)?,
                PrecisionMode::Extended => breslow_sorted::<DoubleDouble>(data, &order, &beta)?,
            };
            return Ok(CoxFitResult {
                beta_hat: beta,
                lambda_hat,
                diagnostics: FitDiagnostics {
                    iterations: iter,
                    final_gradient_norm: gnorm,
                    precision_mode: mode,
                    tol: options.tol,
                    loglik: current.loglik,
                    loglik_trace: trace,
                },
            });
        }
        if iter == options.max_iter {
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, d)| b + alpha * d).collect();
            match evaluate_mode(data, &order, &cand, false, mode) {
                // near the optimum the gain drops below the rounding of ℓ itself
                Ok(ev) if ev.loglik >= current.loglik - loglik_slack(current.loglik) => {
                    accepted = Some(cand);
                    break;
                }
                Ok(_) | Err(Error::Overflow(_)) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some(next) = accepted else {
            // no ascent direction left above rounding: the iterate is as good as it gets
            return Err(Error::Convergence {
                iterations: iter,
                residual: gnorm,
            });
        };
        let norm = next.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > options.beta_bound {
            return Err(Error::Separation {
                norm,
                bound: options.beta_bound,
            });
        }
        last_step = beta.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        beta = next;
        current = evaluate_mode(data, &order, &beta, true, mode)?;
        debug_assert!(current.loglik >= trace.last().unwrap() - loglik_slack(current.loglik));
        trace.push(current.loglik);
    }
    let gnorm = current.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Err(Error::Convergence {
        iterations: options.max_iter,
        residual: gnorm,
    })
}

/// Maps a fit on whitened covariates z̃ back to covariates z = z̄ + A^{1/2} z̃:
/// β̂ = A^{-1/2} β̃ and Λ̂(t) = Λ̃(t) e^{-β̂·z̄}.
pub fn map_correlated_fit(
    fit_on_whitened: &CoxFitResult,
    a: &DMatrix<f64>,
    z_bar: &[f64],
) -> Result<CoxFitResult> {
    let p = fit_on_whitened.beta_hat.len();
    if a.nrows() != p || z_bar.len() != p {
        return Err(Error::Matrix(format!(
            "dimension mismatch: fit has p = {p}, A is {}x{}, z_bar has {}",
            a.nrows(),
            a.ncols(),
            z_bar.len()
        )));
    }
    let root = spd_root(a)?;
    let beta = &root.inv_sqrt * DVector::from_column_slice(&fit_on_whitened.beta_hat);
    let offset: f64 = beta.iter().zip(z_bar).map(|(b, z)| b * z).sum();
    let factor = (-offset).exp();
    Ok(CoxFitResult {
        beta_hat: beta.iter().copied().collect(),
        lambda_hat: fit_on_whitened.lambda_hat.map_values(|v| v * factor)?,
        diagnostics: fit_on_whitened.diagnostics.clone(),
    })
}

/// P(T > t*) = exp(−e^{β̂·z} Λ̂(t*)).
pub fn predict_survival(fit: &CoxFitResult, z: &[f64], t_star: f64) -> Result<f64> {
    if !(t_star > 0.0) {
        return Err(Error::Parameter(format!("t_star must be positive, got {t_star}")));
    }
    if z.len() != fit.beta_hat.len() {
        return Err(Error::Data(format!(
            "covariate vector has {} entries, model has {}",
            z.len(),
            fit.beta_hat.len()
        )));
    }
    let eta: f64 = fit.beta_hat.iter().zip(z).map(|(b, x)| b * x).sum();
    Ok((-eta.exp() * fit.lambda_hat.eval(t_star)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(times: &[f64], z: &[f64], p: usize) -> SurvivalDataset {
        SurvivalDataset::new(times.to_vec(), z.to_vec(), p).unwrap()
    }

    #[test]
    fn loglik_at_zero_is_log_factorial() {
        let d = dataset(&[1.0, 2.0, 3.0], &[0.3, -1.0, 2.0], 1);
        let ev = partial_loglik(&d, &[0.0]).unwrap();
        assert!((ev.loglik + 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_at_zero_is_centred_covariates() {
        let z = [0.3, -1.0, 2.0, 0.5];
        let t = [2.0, 1.0, 4.0, 3.0];
        let d = dataset(&t, &z, 1);
        let ev = partial_loglik(&d, &[0.0]).unwrap();
        let mut expected = 0.0;
        for i in 0..4 {
            let risk: Vec<f64> = (0..4).filter(|&j| t[j] >= t[i]).map(|j| z[j]).collect();
            expected += z[i] - risk.iter().sum::<f64>() / risk.len() as f64;
        }
        assert!((ev.gradient[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn ties_are_rejected() {
        let d = dataset(&[1.0, 2.0, 1.0], &[0.0, 1.0, 2.0], 1);
        assert!(matches!(partial_loglik(&d, &[0.0]), Err(Error::Data(_))));
        assert!(matches!(fit_cox(&d, &FitOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn breslow_small_cases() {
        let d = dataset(&[1.0, 2.0], &[0.5, -0.5], 1);
        let l = breslow(&d, &[0.0]).unwrap();
        assert_eq!(l.jump_times(), &[1.0, 2.0]);
        assert!((l.values()[0] - 0.5).abs() < 1e-15);
        assert!((l.values()[1] - 1.5).abs() < 1e-15);

        let d = dataset(&[4.0, 1.0, 3.0, 2.0], &[0.1, 0.2, 0.3, 0.4], 1);
        let l = breslow(&d, &[0.0]).unwrap();
        let expected = 0.25 + 1.0 / 3.0 + 0.5 + 1.0;
        assert!((l.values()[3] - expected).abs() < 1e-15);
        assert_eq!(l.eval(0.5), 0.0);
        assert_eq!(l.eval(2.5), l.values()[1]);
    }

    #[test]
    fn flat_likelihood_is_degenerate() {
        let d = dataset(&[1.0, 2.0, 3.0, 4.0], &[1.5; 4], 1);
        assert!(matches!(fit_cox(&d, &FitOptions::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn separable_data_is_detected() {
        // the earliest event always has the largest covariate
        let d = dataset(&[1.0, 2.0], &[1.0, 0.0], 1);
        let err = fit_cox(&d, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err:?}");
    }

    #[test]
    fn more_covariates_than_samples_is_degenerate() {
        let d = dataset(&[1.0, 2.0, 3.0], &[0.1, 0.4, -0.2, 1.0, 0.3, 0.7, -1.0, 0.2, 0.5, 0.9, -0.3, 0.1], 4);
        assert!(fit_cox(&d, &FitOptions::default()).is_err());
    }

    #[test]
    fn survival_prediction_examples() {
        let fit = CoxFitResult {
            beta_hat: vec![0.0],
            lambda_hat: StepCumulativeHazard::new(vec![1.0, 2.0], vec![0.1, 2f64.ln()]).unwrap(),
            diagnostics: FitDiagnostics {
                iterations: 0,
                final_gradient_norm: 0.0,
                precision_mode: PrecisionMode::Standard,
                tol: 1e-10,
                loglik: 0.0,
                loglik_trace: vec![],
            },
        };
        assert_eq!(predict_survival(&fit, &[3.0], 0.5).unwrap(), 1.0);
        assert!((predict_survival(&fit, &[3.0], 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(predict_survival(&fit, &[3.0], 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn step_function_validation() {
        assert!(StepCumulativeHazard::new(vec![1.0, 1.0], vec![0.1, 0.2]).is_err());
        assert!(StepCumulativeHazard::new(vec![1.0, 2.0], vec![0.3, 0.2]).is_err());
        assert!(StepCumulativeHazard::new(vec![0.0], vec![0.3]).is_err());
    }

    #[test]
    fn extended_mode_agrees_with_standard() {
        let z = [0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.2, 0.0, -0.4, 0.8];
        let t = [2.0, 1.0, 4.0, 3.0, 5.5, 0.2, 0.9, 7.0, 1.7, 2.4];
        let d = dataset(&t, &z, 1);
        let a = partial_loglik_with(&d, &[0.7], PrecisionMode::Standard).unwrap();
        let b = partial_loglik_with(&d, &[0.7], PrecisionMode::Extended).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-13);
        for (x, y) in a.gradient.iter().zip(&b.gradient) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!((&a.hessian - &b.hessian).amax() < 1e-13);
    }

    #[test]
    fn fit_json_shape() {
        let d = dataset(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.5, -0.2, 0.9, -1.1, 0.3], 1);
        let fit = fit_cox(&d, &FitOptions::default()).unwrap();
        let v = serde_json::to_value(&fit).unwrap();
        assert!(v["beta_hat"].is_array());
        assert!(v["breslow"]["times"].is_array());
        assert!(v["breslow"]["values"].is_array());
        assert_eq!(v["diagnostics"]["precision_mode"], "standard");
        let back: CoxFitResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }
}
