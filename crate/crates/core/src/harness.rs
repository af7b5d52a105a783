//! Replicate simulations and the overfitting observables measured on them.
//!
//! Every experiment draws one β* (stream 0 of the seed) and then generates
//! replicate `r` from stream `r + 1`, so results do not depend on how
//! replicates are scheduled across threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox_fit::{fit_cox, predict_survival, CoxFitResult, FitOptions};
use crate::error::{Error, Result};
use crate::precision::PrecisionMode;
use crate::rs_solver::{solve_for_zeta, SolverOptions, VariationalSolution, ZETA_CAP};
use crate::survival_data::{
    draw_beta_star, generate_with_beta, stream_rng, HazardModel, Scaling, SurvivalDataset,
};

/// Least-squares line through the origin of β̂ against β*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudFit {
    pub kappa: f64,
    pub sigma: f64,
}

pub fn measure_cloud(pairs: &[(f64, f64)]) -> Result<CloudFit> {
    if pairs.len() < 2 {
        return Err(Error::Data(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all true associations are zero".into()));
    }
    let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    let kappa = sxy / sxx;
    let ss: f64 = pairs.iter().map(|(x, y)| (y - kappa * x).powi(2)).sum();
    Ok(CloudFit {
        kappa,
        sigma: (ss / pairs.len() as f64).sqrt(),
    })
}

/// One replicate: the true association vector (theory convention, RMS = S)
/// and the fitted one (Cox convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub beta_star: Vec<f64>,
    pub beta_hat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub v_hat: f64,
    pub w_hat: f64,
}

/// Replicate-averaged estimates of the order parameters v and w.
///
/// With β̂ rescaled by √p and ⟨·⟩ the replicate average,
/// `v² = (1/p)[Σ⟨β̂²⟩ − (Σβ*⟨β̂⟩)²/|β*|²]` and `w = (1/√p) Σβ*⟨β̂⟩/|β*|`.
pub fn measure_order_params(runs: &[ReplicateRun], p: usize, n: usize) -> Result<OrderParams> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Data("no replicates".into()))?;
    if p == 0 || n == 0 {
        return Err(Error::Data("p and N must be positive".into()));
    }
    for run in runs {
        if run.beta_star.len() != p || run.beta_hat.len() != p {
            return Err(Error::Data(format!(
                "replicate has {} true and {} fitted entries, expected {p}",
                run.beta_star.len(),
                run.beta_hat.len()
            )));
        }
        if run.beta_star != first.beta_star {
            return Err(Error::Data("replicates must share the same beta_star".into()));
        }
    }
    let root_p = (p as f64).sqrt();
    let r = runs.len() as f64;
    let mut mean = vec![0.0; p];
    let mut mean_sq = vec![0.0; p];
    for run in runs {
        for (mu, b) in run.beta_hat.iter().enumerate() {
            let b = b * root_p;
            mean[mu] += b / r;
            mean_sq[mu] += b * b / r;
        }
    }
    let norm = first.beta_star.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate("beta_star is zero".into()));
    }
    let proj: f64 = first.beta_star.iter().zip(&mean).map(|(s, m)| s * m).sum();
    let v2 = (mean_sq.iter().sum::<f64>() - proj * proj / (norm * norm)) / p as f64;
    Ok(OrderParams {
        v_hat: v2.max(0.0).sqrt(),
        w_hat: proj / (norm * root_p),
    })
}

/// OLS of log Λ̂ on log Λ₀ over the central event-time quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub k_hat: f64,
    pub rho_hat: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const MIN_LOGLOG_POINTS: usize = 10;

pub fn fit_loglog_lambda(
    fit: &CoxFitResult,
    truth: &HazardModel,
    quantile_range: (f64, f64),
) -> Result<LogLogFit> {
    let (lo, hi) = quantile_range;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Parameter(format!("invalid quantile range ({lo}, {hi})")));
    }
    truth.validate()?;
    let times = fit.lambda_hat.jump_times();
    let values = fit.lambda_hat.values();
    let n = times.len();
    let start = (lo * n as f64).floor() as usize;
    let end = ((hi * n as f64).ceil() as usize).min(n);
    let pts: Vec<(f64, f64)> = (start..end)
        .map(|i| (truth.cumulative(times[i]).ln(), values[i].ln()))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.len() < MIN_LOGLOG_POINTS {
        return Err(Error::Data(format!(
            "only {} jumps in the quantile range, need {MIN_LOGLOG_POINTS}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Data("no spread in log cumulative hazards".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(LogLogFit {
        k_hat: intercept.exp(),
        rho_hat: slope,
        r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        points: pts.len(),
    })
}

/// Inverts the predicted distortion: β ↦ β/ρ and Λ̂ ↦ (Λ̂/k)^{1/ρ}.
///
/// The theory predicts ⟨β̂⟩ ≈ ρβ* (the cloud slope κ equals ρ) and
/// Λ̂ ≈ kΛ₀^ρ; this undoes both on a single fit.
pub fn correct_fit(fit: &CoxFitResult, theory: &VariationalSolution, p: usize) -> Result<CoxFitResult> {
    correct_with(fit, theory.rho, theory.k, p)
}

pub fn correct_with(fit: &CoxFitResult, rho: f64, k: f64, p: usize) -> Result<CoxFitResult> {
    if !(rho > 0.0 && rho.is_finite()) || !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("correction needs rho > 0 and k > 0, got ({rho}, {k})")));
    }
    if fit.beta_hat.len() != p {
        return Err(Error::Data(format!(
            "fit has {} coefficients, expected p = {p}",
            fit.beta_hat.len()
        )));
    }
    Ok(CoxFitResult {
        beta_hat: fit.beta_hat.iter().map(|b| b / rho).collect(),
        lambda_hat: fit.lambda_hat.map_values(|v| (v / k).powf(1.0 / rho))?,
        diagnostics: fit.diagnostics.clone(),
    })
}

/// S from a single fit: √((1/p)Σ(√p β̂)² − v²)/ρ, using the theory's (v, ρ).
pub fn estimate_strength(beta_hat: &[f64], theory: &VariationalSolution) -> Result<f64> {
    if beta_hat.is_empty() {
        return Err(Error::Data("empty coefficient vector".into()));
    }
    let mean_sq = beta_hat.iter().map(|b| b * b).sum::<f64>();
    let signal = mean_sq - theory.v * theory.v;
    if !(signal > 0.0) {
        return Err(Error::Degenerate(
            "fitted coefficients are indistinguishable from overfitting noise".into(),
        ));
    }
    Ok(signal.sqrt() / theory.rho)
}

fn default_quantiles() -> (f64, f64) {
    (0.1, 0.9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub hazard: HazardModel,
    pub r: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: PrecisionMode,
    #[serde(default = "default_quantiles")]
    pub quantile_range: (f64, f64),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter(format!("N must be at least 2, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(Error::Parameter("p must be positive".into()));
        }
        if self.r == 0 {
            return Err(Error::Parameter("r must be positive".into()));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Parameter(format!("S must be positive, got {}", self.s)));
        }
        let (lo, hi) = self.quantile_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Parameter(format!("invalid quantile range ({lo}, {hi})")));
        }
        self.hazard.validate()
    }

    pub fn zeta(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

/// Mean and standard error over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Estimate {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            f64::NAN
        };
        Estimate { mean, se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub rho: f64,
    pub v: f64,
    pub w: f64,
    pub k: f64,
    #[serde(rename = "E")]
    pub e: f64,
    /// κ̂/ρ − 1.
    pub kappa_rel_err: f64,
    /// σ̂√p/v − 1.
    pub sigma_rel_err: f64,
    /// ρ̂(log-log)/ρ − 1.
    pub loglog_rho_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSummary {
    pub zeta: f64,
    #[serde(rename = "S")]
    pub s: f64,
    /// Replicates requested.
    pub r: usize,
    pub succeeded: usize,
    pub failures: Vec<ReplicateFailure>,
    pub kappa_hat: f64,
    pub kappa_se: f64,
    pub sigma_hat: f64,
    pub sigma_se: f64,
    pub v_hat: f64,
    pub w_hat: f64,
    pub loglog_k: f64,
    pub loglog_rho: f64,
    pub r_squared: f64,
    pub theory: Option<TheoryComparison>,
    pub config: ExperimentConfig,
}

/// Per-replicate artefacts kept for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub fit: CoxFitResult,
    pub cloud: CloudFit,
    pub loglog: LogLogFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: MeasurementSummary,
    /// β* in the theory convention (RMS S).
    pub beta_star: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
}

/// The β* shared by every replicate of an experiment.
pub fn experiment_beta_star(config: &ExperimentConfig) -> Result<Vec<f64>> {
    draw_beta_star(config.p, config.s, &mut stream_rng(config.seed, 0))
}

/// Dataset for replicate `index` (stream `index + 1`).
pub fn replicate_dataset(
    config: &ExperimentConfig,
    beta_star: &[f64],
    index: usize,
) -> Result<SurvivalDataset> {
    let mut rng = stream_rng(config.seed, index as u64 + 1);
    let mut data = generate_with_beta(config.n, beta_star, config.hazard, Scaling::TheorySqrtP, &mut rng)?;
    if let Some(t) = data.truth.as_mut() {
        t.seed = Some(config.seed);
    }
    Ok(data)
}

fn run_replicate(
    config: &ExperimentConfig,
    beta_star: &[f64],
    cox_star: &[f64],
    index: usize,
) -> Result<ReplicateResult> {
    let data = replicate_dataset(config, beta_star, index)?;
    let fit = fit_cox(
        &data,
        &FitOptions {
            precision: config.precision,
            ..FitOptions::default()
        },
    )?;
    let pairs: Vec<(f64, f64)> = cox_star.iter().copied().zip(fit.beta_hat.iter().copied()).collect();
    let cloud = measure_cloud(&pairs)?;
    let loglog = fit_loglog_lambda(&fit, &config.hazard, config.quantile_range)?;
    Ok(ReplicateResult {
        replicate: index,
        fit,
        cloud,
        loglog,
    })
}

/// Generates and fits `r` replicates and aggregates every observable.
///
/// Failed replicates are excluded and listed; more than 20% failures is an
/// error. The theory comparison is present whenever ζ ≤ 0.99.
pub fn run_experiment(config: &ExperimentConfig, solver: &SolverOptions) -> Result<ExperimentOutput> {
    config.validate()?;
    let beta_star = experiment_beta_star(config)?;
    let root_p = (config.p as f64).sqrt();
    let cox_star: Vec<f64> = beta_star.iter().map(|b| b / root_p).collect();

    let outcomes: Vec<Result<ReplicateResult>> = (0..config.r)
        .into_par_iter()
        .map(|i| run_replicate(config, &beta_star, &cox_star, i))
        .collect();
    let mut replicates = Vec::with_capacity(config.r);
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => replicates.push(rep),
            Err(e) => failures.push(ReplicateFailure {
                replicate: i,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() * 5 > config.r || replicates.is_empty() {
        return Err(Error::Experiment(format!(
            "{} of {} replicate fits failed (first: {})",
            failures.len(),
            config.r,
            failures.first().map(|f| f.error.as_str()).unwrap_or("none")
        )));
    }

    let kappa = Estimate::from_samples(&replicates.iter().map(|r| r.cloud.kappa).collect::<Vec<_>>());
    let sigma = Estimate::from_samples(&replicates.iter().map(|r| r.cloud.sigma).collect::<Vec<_>>());
    let runs: Vec<ReplicateRun> = replicates
        .iter()
        .map(|r| ReplicateRun {
            beta_star: beta_star.clone(),
            beta_hat: r.fit.beta_hat.clone(),
        })
        .collect();
    let order = measure_order_params(&runs, config.p, config.n)?;
    let m = replicates.len() as f64;
    let loglog_k = replicates.iter().map(|r| r.loglog.k_hat).sum::<f64>() / m;
    let loglog_rho = replicates.iter().map(|r| r.loglog.rho_hat).sum::<f64>() / m;
    let r_squared = replicates.iter().map(|r| r.loglog.r_squared).sum::<f64>() / m;

    let zeta = config.zeta();
    let theory = if zeta <= ZETA_CAP {
        let t = solve_for_zeta(zeta, config.s, solver)?;
        Some(TheoryComparison {
            rho: t.rho,
            v: t.v,
            w: t.w,
            k: t.k,
            e: t.e,
            kappa_rel_err: kappa.mean / t.rho - 1.0,
            sigma_rel_err: sigma.mean * root_p / t.v - 1.0,
            loglog_rho_rel_err: loglog_rho / t.rho - 1.0,
        })
    } else {
        None
    };

    Ok(ExperimentOutput {
        summary: MeasurementSummary {
            zeta,
            s: config.s,
            r: config.r,
            succeeded: replicates.len(),
            failures,
            kappa_hat: kappa.mean,
            kappa_se: kappa.se,
            sigma_hat: sigma.mean,
            sigma_se: sigma.se,
            v_hat: order.v_hat,
            w_hat: order.w_hat,
            loglog_k,
            loglog_rho,
            r_squared,
            theory,
            config: config.clone(),
        },
        beta_star,
        replicates,
    })
}

/// `replicate,mu,beta_star,beta_hat`, both in the Cox convention.
pub fn write_pairs_csv<W: Write>(writer: W, output: &ExperimentOutput) -> Result<()> {
    let root_p = (output.beta_star.len() as f64).sqrt();
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["replicate", "mu", "beta_star", "beta_hat"])?;
    for rep in &output.replicates {
        for (mu, (s, b)) in output.beta_star.iter().zip(&rep.fit.beta_hat).enumerate() {
            out.write_record([
                rep.replicate.to_string(),
                (mu + 1).to_string(),
                (s / root_p).to_string(),
                b.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `replicate,t,lambda0,lambda_hat` at every event time.
pub fn write_hazard_csv<W: Write>(writer: W, output: &ExperimentOutput) -> Result<()> {
    let hazard = output.summary.config.hazard;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["replicate", "t", "lambda0", "lambda_hat"])?;
    for rep in &output.replicates {
        let l = &rep.fit.lambda_hat;
        for (t, v) in l.jump_times().iter().zip(l.values()) {
            out.write_record([
                rep.replicate.to_string(),
                t.to_string(),
                hazard.cumulative(*t).to_string(),
                v.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Train/validation prediction sweep over the number of covariates used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSweepConfig {
    pub n_train: usize,
    pub n_validation: usize,
    /// Numbers of leading covariates to fit.
    pub p_grid: Vec<usize>,
    /// Covariates carrying signal; the rest are noise.
    pub informative: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub hazard: HazardModel,
    pub seed: u64,
    #[serde(default)]
    pub precision: PrecisionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub p: usize,
    pub zeta: f64,
    /// Fraction of training samples whose event-by-t* status is predicted correctly.
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub error: Option<String>,
}

fn prediction_accuracy(fit: &CoxFitResult, data: &SurvivalDataset, t_star: f64) -> Result<f64> {
    let mut correct = 0usize;
    for (z, &t) in data.rows().zip(data.times()) {
        let predicted_event = predict_survival(fit, z, t_star)? < 0.5;
        if predicted_event == (t <= t_star) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n() as f64)
}

/// Fits the leading `p` covariates of a training set for every `p` in the grid
/// and scores event-by-t* predictions (t* the training median event time) on
/// the training and validation sets.
pub fn prediction_sweep(config: &PredictionSweepConfig) -> Result<Vec<PredictionPoint>> {
    let p_max = *config
        .p_grid
        .iter()
        .max()
        .ok_or_else(|| Error::Parameter("empty p grid".into()))?;
    if config.p_grid.contains(&0) {
        return Err(Error::Parameter("p grid entries must be positive".into()));
    }
    if config.informative == 0 || config.informative > p_max {
        return Err(Error::Parameter(format!(
            "informative covariates must lie in 1..={p_max}, got {}",
            config.informative
        )));
    }
    if config.n_train < 2 || config.n_validation < 1 {
        return Err(Error::Parameter("need at least 2 training and 1 validation samples".into()));
    }
    let mut rng = stream_rng(config.seed, 0);
    let signal = draw_beta_star(config.informative, config.s, &mut rng)?;
    let scale = (config.informative as f64).sqrt();
    let mut beta = vec![0.0; p_max];
    for (b, s) in beta.iter_mut().zip(&signal) {
        *b = s / scale;
    }
    let n = config.n_train + config.n_validation;
    let all = generate_with_beta(n, &beta, config.hazard, Scaling::CoxRaw, &mut rng)?;
    let train_idx: Vec<usize> = (0..config.n_train).collect();
    let valid_idx: Vec<usize> = (config.n_train..n).collect();
    let train_all = all.subset(&train_idx)?;
    let valid_all = all.subset(&valid_idx)?;
    let mut sorted = train_all.times().to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_star = sorted[sorted.len() / 2];

    config
        .p_grid
        .par_iter()
        .map(|&p| {
            let zeta = p as f64 / config.n_train as f64;
            let train = train_all.leading_covariates(p)?;
            let valid = valid_all.leading_covariates(p)?;
            let opts = FitOptions {
                precision: config.precision,
                ..FitOptions::default()
            };
            Ok(match fit_cox(&train, &opts) {
                Ok(fit) => PredictionPoint {
                    p,
                    zeta,
                    train_accuracy: Some(prediction_accuracy(&fit, &train, t_star)?),
                    validation_accuracy: Some(prediction_accuracy(&fit, &valid, t_star)?),
                    error: None,
                },
                Err(e) => PredictionPoint {
                    p,
                    zeta,
                    train_accuracy: None,
                    validation_accuracy: None,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}

pub fn write_prediction_csv<W: Write>(writer: W, points: &[PredictionPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["p", "zeta", "train_accuracy", "validation_accuracy"])?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for pt in points {
        out.write_record([
            pt.p.to_string(),
            pt.zeta.to_string(),
            fmt(pt.train_accuracy),
            fmt(pt.validation_accuracy),
        ])?;
    }
    out.flush()?;
    Ok(())
}
