//! Ground-truth hazard models and synthetic uncensored survival data.
//!
//! Event times follow the proportional-hazards model
//! `S(t|z) = exp(-e^η Λ₀(t))`, sampled by inversion: `t = Λ₀⁻¹(ε e^{-η})`
//! with `ε ~ Exp(1)`. Covariates are i.i.d. standard normal.
//!
//! Two conventions for the linear predictor are supported. In the
//! `TheorySqrtP` convention `η = β*·z/√p`, so the variance of η is S² whatever
//! p is; `CoxRaw` uses `η = β*·z` directly.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_root;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardModel {
    /// λ₀(t) = 1.
    Constant,
    /// λ₀(t) = a/√t.
    InverseSqrt { a: f64 },
}

impl HazardModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HazardModel::Constant => Ok(()),
            HazardModel::InverseSqrt { a } if a > 0.0 && a.is_finite() => Ok(()),
            HazardModel::InverseSqrt { a } => Err(Error::Parameter(format!(
                "inverse_sqrt hazard needs a positive amplitude, got {a}"
            ))),
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            HazardModel::Constant => 1.0,
            HazardModel::InverseSqrt { a } => a / t.sqrt(),
        }
    }

    /// Λ₀(t).
    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            HazardModel::Constant => t,
            HazardModel::InverseSqrt { a } => 2.0 * a * t.sqrt(),
        }
    }

    /// Λ₀⁻¹(u).
    pub fn inverse_cumulative(&self, u: f64) -> f64 {
        match *self {
            HazardModel::Constant => u,
            HazardModel::InverseSqrt { a } => {
                let r = u / (2.0 * a);
                r * r
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            HazardModel::Constant => "constant",
            HazardModel::InverseSqrt { .. } => "inverse_sqrt",
        }
    }

    pub fn amplitude(&self) -> Option<f64> {
        match *self {
            HazardModel::Constant => None,
            HazardModel::InverseSqrt { a } => Some(a),
        }
    }
}

/// Amplitude `a = e^{S²}/√2` for which `λ₀ = a/√t` gives mean event time 1.
pub fn default_amplitude(s: f64) -> f64 {
    (s * s).exp() / std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    TheorySqrtP,
    CoxRaw,
}

/// Parameters that generated a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta_star: Vec<f64>,
    #[serde(rename = "S")]
    pub s: f64,
    pub hazard: HazardModel,
    pub scaling: Scaling,
    pub seed: Option<u64>,
    /// Covariates were passed through [`apply_correlation`] after generation.
    #[serde(default)]
    pub correlated: bool,
}

impl Truth {
    /// β* in the Cox convention (coefficient of the raw covariates).
    pub fn cox_beta(&self) -> Vec<f64> {
        cox_beta(&self.beta_star, self.scaling)
    }
}

fn cox_beta(beta_star: &[f64], scaling: Scaling) -> Vec<f64> {
    match scaling {
        Scaling::CoxRaw => beta_star.to_vec(),
        Scaling::TheorySqrtP => {
            let root_p = (beta_star.len() as f64).sqrt();
            beta_star.iter().map(|b| b / root_p).collect()
        }
    }
}

/// N event times with their p covariates, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    covariates: Vec<f64>,
    p: usize,
    pub(crate) truth: Option<Truth>,
}

impl SurvivalDataset {
    /// `covariates` is row-major, `times.len() * p` long.
    pub fn new(times: Vec<f64>, covariates: Vec<f64>, p: usize) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Data(format!("need at least 2 samples, got {}", times.len())));
        }
        if p == 0 {
            return Err(Error::Data("need at least one covariate".into()));
        }
        if covariates.len() != times.len() * p {
            return Err(Error::Data(format!(
                "covariate block has {} entries, expected {} x {}",
                covariates.len(),
                times.len(),
                p
            )));
        }
        if let Some(bad) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Data(format!("event times must be positive and finite, got {bad}")));
        }
        if covariates.iter().any(|z| !z.is_finite()) {
            return Err(Error::Data("covariates must be finite".into()));
        }
        Ok(SurvivalDataset {
            times,
            covariates,
            p,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        if truth.beta_star.len() != self.p {
            return Err(Error::Data(format!(
                "truth has {} coefficients for {} covariates",
                truth.beta_star.len(),
                self.p
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn zeta(&self) -> f64 {
        self.p as f64 / self.n() as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.covariates.chunks_exact(self.p)
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let times = indices.iter().map(|&i| self.times[i]).collect();
        let covariates = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let mut out = SurvivalDataset::new(times, covariates, self.p)?;
        out.truth = self.truth.clone();
        Ok(out)
    }

    /// Keeps only the first `q` covariate columns. Truth is truncated to match.
    pub fn leading_covariates(&self, q: usize) -> Result<Self> {
        if q == 0 || q > self.p {
            return Err(Error::Parameter(format!("cannot keep {q} of {} covariates", self.p)));
        }
        let covariates = self.rows().flat_map(|r| r[..q].iter().copied()).collect();
        let mut out = SurvivalDataset::new(self.times.clone(), covariates, q)?;
        out.truth = self.truth.as_ref().map(|t| Truth {
            beta_star: t.beta_star[..q].to_vec(),
            ..t.clone()
        });
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.p).map(|j| format!("z{j}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(self.rows()) {
            let mut rec = Vec::with_capacity(self.p + 1);
            rec.push(t.to_string());
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0).map(str::trim) != Some("t") || header.len() < 2 {
            return Err(Error::Data("CSV header must be `t,z1,...,zp`".into()));
        }
        let p = header.len() - 1;
        let mut times = Vec::new();
        let mut covariates = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::Data(format!("row {} has {} fields, expected {}", line + 1, rec.len(), p + 1)));
            }
            let mut fields = rec.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("row {}: cannot parse `{f}`: {e}", line + 1)))
            });
            times.push(fields.next().unwrap()?);
            for f in fields {
                covariates.push(f?);
            }
        }
        SurvivalDataset::new(times, covariates, p)
    }
}

/// On-disk form of the truth block (sidecar JSON next to the CSV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(rename = "S")]
    pub s: f64,
    pub beta_star: Vec<f64>,
    pub hazard_kind: String,
    pub a: Option<f64>,
    pub scaling: Scaling,
    pub seed: Option<u64>,
    #[serde(default)]
    pub correlated: bool,
}

impl From<&Truth> for TruthFile {
    fn from(t: &Truth) -> Self {
        TruthFile {
            s: t.s,
            beta_star: t.beta_star.clone(),
            hazard_kind: t.hazard.kind_name().to_string(),
            a: t.hazard.amplitude(),
            scaling: t.scaling,
            seed: t.seed,
            correlated: t.correlated,
        }
    }
}

impl TryFrom<TruthFile> for Truth {
    type Error = Error;

    fn try_from(f: TruthFile) -> Result<Self> {
        let hazard = match (f.hazard_kind.as_str(), f.a) {
            ("constant", _) => HazardModel::Constant,
            ("inverse_sqrt", Some(a)) => HazardModel::InverseSqrt { a },
            ("inverse_sqrt", None) => {
                return Err(Error::Data("inverse_sqrt hazard requires `a`".into()));
            }
            (other, _) => return Err(Error::Data(format!("unknown hazard kind `{other}`"))),
        };
        hazard.validate()?;
        Ok(Truth {
            beta_star: f.beta_star,
            s: f.s,
            hazard,
            scaling: f.scaling,
            seed: f.seed,
            correlated: f.correlated,
        })
    }
}

/// RNG for stream `stream` of master seed `seed`.
///
/// Streams are ChaCha20 stream ids, so `(seed, r)` pairs give independent,
/// platform-independent sequences. Stream 0 is used by [`generate_dataset`];
/// experiments draw β* from stream 0 and replicate `r` from stream `r + 1`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws β* with i.i.d. normal direction, rescaled so that `(1/p) Σ β*² = S²`.
pub fn draw_beta_star<R: rand::Rng>(p: usize, s: f64, rng: &mut R) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Parameter("p must be positive".into()));
    }
    check_strength(s)?;
    let dir: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let rms = (dir.iter().map(|d| d * d).sum::<f64>() / p as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::Parameter("degenerate direction draw".into()));
    }
    let factor = s / rms;
    Ok(dir.into_iter().map(|d| d * factor).collect())
}

fn check_strength(s: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Parameter(format!("S must be a nonnegative finite number, got {s}")));
    }
    Ok(())
}

/// Generates N samples with p covariates from a freshly drawn β*.
///
/// Draw order on stream 0 of `seed`: β* direction, covariates row by row,
/// then one exponential per sample.
pub fn generate_dataset(
    n: usize,
    p: usize,
    s: f64,
    hazard: HazardModel,
    seed: u64,
    scaling: Scaling,
) -> Result<SurvivalDataset> {
    let mut rng = stream_rng(seed, 0);
    let beta_star = draw_beta_star(p, s, &mut rng)?;
    let mut data = generate_with_beta(n, &beta_star, hazard, scaling, &mut rng)?;
    if let Some(t) = data.truth.as_mut() {
        t.s = s;
        t.seed = Some(seed);
    }
    Ok(data)
}

/// Generates N samples for a given β*, consuming covariates then exponentials
/// from `rng`. The recorded S is the RMS of `beta_star`.
pub fn generate_with_beta<R: rand::Rng>(
    n: usize,
    beta_star: &[f64],
    hazard: HazardModel,
    scaling: Scaling,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    if n < 2 {
        return Err(Error::Parameter(format!("N must be at least 2, got {n}")));
    }
    let p = beta_star.len();
    if p == 0 {
        return Err(Error::Parameter("p must be positive".into()));
    }
    hazard.validate()?;
    let covariates: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(rng)).collect();
    let beta = cox_beta(beta_star, scaling);
    let mut times: Vec<f64> = covariates
        .chunks_exact(p)
        .map(|z| {
            let eta: f64 = beta.iter().zip(z).map(|(b, x)| b * x).sum();
            let u: f64 = Open01.sample(rng);
            let eps = -u.ln();
            hazard.inverse_cumulative(eps * (-eta).exp())
        })
        .collect();
    break_ties(&mut times);
    if let Some(bad) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Overflow(format!(
            "generated event time {bad} is not a positive finite number; reduce S"
        )));
    }
    let s = (beta_star.iter().map(|b| b * b).sum::<f64>() / p as f64).sqrt();
    SurvivalDataset::new(times, covariates, p)?.with_truth(Truth {
        beta_star: beta_star.to_vec(),
        s,
        hazard,
        scaling,
        seed: None,
        correlated: false,
    })
}

/// Nudges exactly coinciding times upward by one ulp until all are distinct.
fn break_ties(times: &mut [f64]) {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    for k in 1..order.len() {
        let prev = times[order[k - 1]];
        let cur = &mut times[order[k]];
        if *cur <= prev {
            *cur = prev.next_up();
        }
    }
}

/// Maps covariates to `z̄ + A^{1/2} z̃` (symmetric square root). Times are kept.
pub fn apply_correlation(
    data: &SurvivalDataset,
    a: &DMatrix<f64>,
    z_bar: &[f64],
) -> Result<SurvivalDataset> {
    let p = data.p();
    if a.nrows() != p || z_bar.len() != p {
        return Err(Error::Matrix(format!(
            "dimension mismatch: A is {}x{}, z_bar has {}, data has p = {p}",
            a.nrows(),
            a.ncols(),
            z_bar.len()
        )));
    }
    let root = spd_root(a)?;
    let mut covariates = Vec::with_capacity(data.covariates.len());
    for row in data.rows() {
        let mapped = &root.sqrt * DVector::from_column_slice(row);
        covariates.extend(mapped.iter().zip(z_bar).map(|(m, c)| m + c));
    }
    let mut out = SurvivalDataset::new(data.times.clone(), covariates, p)?;
    out.truth = data.truth.clone().map(|t| Truth {
        correlated: true,
        ..t
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazard_round_trip() {
        let models = [HazardModel::Constant, HazardModel::InverseSqrt { a: 0.9 }];
        for h in models {
            let mut t = 1e-6;
            while t <= 1e6 {
                let back = h.inverse_cumulative(h.cumulative(t));
                assert!(((back - t) / t).abs() < 1e-12, "{h:?} t={t}");
                t *= 1.7;
            }
        }
    }

    #[test]
    fn amplitude_examples() {
        assert!((default_amplitude(0.0) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((default_amplitude(0.5) - 0.25f64.exp() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(50, 5, 0.5, HazardModel::Constant, 7, Scaling::TheorySqrtP).unwrap();
        let b = generate_dataset(50, 5, 0.5, HazardModel::Constant, 7, Scaling::TheorySqrtP).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(50, 5, 0.5, HazardModel::Constant, 8, Scaling::TheorySqrtP).unwrap();
        assert_ne!(a.times(), c.times());
    }

    #[test]
    fn exact_signal_strength() {
        let d = generate_dataset(10, 37, 0.7, HazardModel::Constant, 3, Scaling::TheorySqrtP).unwrap();
        let t = d.truth().unwrap();
        let ms = t.beta_star.iter().map(|b| b * b).sum::<f64>() / 37.0;
        assert!((ms - 0.49).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let h = HazardModel::Constant;
        assert!(matches!(generate_dataset(1, 2, 0.5, h, 0, Scaling::CoxRaw), Err(Error::Parameter(_))));
        assert!(matches!(generate_dataset(5, 2, -0.5, h, 0, Scaling::CoxRaw), Err(Error::Parameter(_))));
        assert!(generate_dataset(5, 2, 0.5, HazardModel::InverseSqrt { a: 0.0 }, 0, Scaling::CoxRaw).is_err());
    }

    #[test]
    fn ties_are_broken() {
        let mut t = vec![1.0, 0.5, 1.0, 1.0, 0.25];
        break_ties(&mut t);
        let mut sorted = t.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t[0], 1.0);
        assert_eq!(t[2], 1f64.next_up());
    }

    #[test]
    fn scaling_equivalence_is_bitwise() {
        let p = 9;
        let beta = draw_beta_star(p, 0.8, &mut stream_rng(1, 0)).unwrap();
        let raw: Vec<f64> = beta.iter().map(|b| b / (p as f64).sqrt()).collect();
        let h = HazardModel::InverseSqrt { a: 1.3 };
        let a = generate_with_beta(40, &beta, h, Scaling::TheorySqrtP, &mut stream_rng(5, 2)).unwrap();
        let b = generate_with_beta(40, &raw, h, Scaling::CoxRaw, &mut stream_rng(5, 2)).unwrap();
        assert_eq!(a.times(), b.times());
        assert_eq!(a.covariates(), b.covariates());
    }

    #[test]
    fn identity_correlation() {
        let d = generate_dataset(20, 3, 0.5, HazardModel::Constant, 1, Scaling::TheorySqrtP).unwrap();
        let out = apply_correlation(&d, &DMatrix::identity(3, 3), &[0.0; 3]).unwrap();
        for (x, y) in d.covariates().iter().zip(out.covariates()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(out.times(), d.times());
        assert!(out.truth().unwrap().correlated);
    }

    #[test]
    fn diagonal_correlation_doubles() {
        let d = generate_dataset(20, 1, 0.5, HazardModel::Constant, 1, Scaling::TheorySqrtP).unwrap();
        let out = apply_correlation(&d, &DMatrix::from_element(1, 1, 4.0), &[0.0]).unwrap();
        for (x, y) in d.covariates().iter().zip(out.covariates()) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn correlation_rejects_non_spd() {
        let d = generate_dataset(20, 2, 0.5, HazardModel::Constant, 1, Scaling::TheorySqrtP).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(apply_correlation(&d, &bad, &[0.0, 0.0]), Err(Error::Matrix(_))));
    }

    #[test]
    fn csv_round_trip() {
        let d = generate_dataset(15, 4, 0.5, HazardModel::Constant, 11, Scaling::TheorySqrtP).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,z1,z2,z3,z4\n"));
        let back = SurvivalDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times(), d.times());
        assert_eq!(back.covariates(), d.covariates());
    }

    #[test]
    fn truth_file_round_trip() {
        let d = generate_dataset(15, 4, 0.5, HazardModel::InverseSqrt { a: 1.1 }, 11, Scaling::TheorySqrtP)
            .unwrap();
        let file = TruthFile::from(d.truth().unwrap());
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"S\":0.5"));
        assert!(json.contains("\"hazard_kind\":\"inverse_sqrt\""));
        let back: Truth = serde_json::from_str::<TruthFile>(&json).unwrap().try_into().unwrap();
        assert_eq!(&back, d.truth().unwrap());
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(SurvivalDataset::read_csv("x,z1\n1,2\n3,4\n".as_bytes()).is_err());
        assert!(SurvivalDataset::read_csv("t,z1\n1,2\n".as_bytes()).is_err());
        assert!(SurvivalDataset::read_csv("t,z1\n1,2\n-3,4\n".as_bytes()).is_err());
    }
}
