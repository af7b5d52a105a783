use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cox_overfit::cox_fit::{fit_cox, CoxFitResult, FitOptions};
use cox_overfit::harness::{
    correct_fit, estimate_strength, prediction_sweep, run_experiment, write_hazard_csv, write_pairs_csv,
    write_prediction_csv, ExperimentConfig, PredictionSweepConfig,
};
use cox_overfit::precision::PrecisionMode;
use cox_overfit::rs_solver::{solve_for_zeta, theory_table, write_theory_csv, SolverOptions, TheoryTable};
use cox_overfit::survival_data::{
    default_amplitude, generate_dataset, HazardModel, Scaling, SurvivalDataset, Truth, TruthFile,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{
    CorrectArgs, ExperimentArgs, FitArgs, GenArgs, GlobalArgs, HazardKind, ScalingKind, SolverArgs, TheoryArgs,
};
use crate::manifest::RunManifest;

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<cox_overfit::Error> for Failure {
    fn from(e: cox_overfit::Error) -> Self {
        match e {
            cox_overfit::Error::Parameter(_) | cox_overfit::Error::Domain(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

pub type CmdResult = Result<Vec<String>, Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn load_config<T: DeserializeOwned + Default>(global: &GlobalArgs) -> Result<T, Failure> {
    let Some(path) = &global.config else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("--config: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--config: {}: {e}", path.display())))
}

fn set<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

fn require_positive_count(flag: &str, v: usize, min: usize) -> Result<(), Failure> {
    if v < min {
        return usage(format!("--{flag} must be at least {min}, got {v}"));
    }
    Ok(())
}

fn require_positive(flag: &str, v: f64) -> Result<(), Failure> {
    if !(v > 0.0 && v.is_finite()) {
        return usage(format!("--{flag} must be a positive finite number, got {v}"));
    }
    Ok(())
}

fn hazard_model(kind: HazardKind, a: Option<f64>, s: f64) -> Result<HazardModel, Failure> {
    match kind {
        HazardKind::Const => Ok(HazardModel::Constant),
        HazardKind::InverseSqrt => {
            let a = a.unwrap_or_else(|| default_amplitude(s));
            require_positive("a", a)?;
            Ok(HazardModel::InverseSqrt { a })
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn finish(manifest: RunManifest, out_dir: &Path, mut lines: Vec<String>) -> CmdResult {
    for p in &manifest.outputs {
        lines.push(format!("wrote {}", p.display()));
    }
    let path = manifest.finish(out_dir)?;
    lines.push(format!("wrote {}", path.display()));
    Ok(lines)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> cox_overfit::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub hermite_order: usize,
    pub laguerre_order: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            hermite_order: d.hermite_order,
            laguerre_order: d.laguerre_order,
            tol: d.tol,
        }
    }
}

impl SolverConfig {
    fn merge(&mut self, args: &SolverArgs) {
        set(&mut self.hermite_order, args.hermite_order);
        set(&mut self.laguerre_order, args.laguerre_order);
        set(&mut self.tol, args.solver_tol);
    }

    fn options(&self) -> Result<SolverOptions, Failure> {
        require_positive_count("hermite-order", self.hermite_order, 2)?;
        require_positive_count("laguerre-order", self.laguerre_order, 2)?;
        require_positive("solver-tol", self.tol)?;
        let opts = SolverOptions {
            hermite_order: self.hermite_order,
            laguerre_order: self.laguerre_order,
            tol: self.tol,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub hazard: HazardKind,
    pub a: Option<f64>,
    pub scaling: ScalingKind,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 400,
            p: 80,
            s: 0.5,
            hazard: HazardKind::Const,
            a: None,
            scaling: ScalingKind::Theory,
            seed: 0,
        }
    }
}

pub fn gen(global: &GlobalArgs, args: &GenArgs) -> CmdResult {
    let mut cfg: GenConfig = load_config(global)?;
    set(&mut cfg.n, args.n);
    set(&mut cfg.p, args.p);
    set(&mut cfg.s, args.s);
    set(&mut cfg.hazard, args.hazard);
    set(&mut cfg.scaling, args.scaling);
    set(&mut cfg.seed, global.seed);
    if args.a.is_some() {
        cfg.a = args.a;
    }
    require_positive_count("n", cfg.n, 2)?;
    require_positive_count("p", cfg.p, 1)?;
    require_positive("s", cfg.s)?;
    let hazard = hazard_model(cfg.hazard, cfg.a, cfg.s)?;
    let scaling = match cfg.scaling {
        ScalingKind::Theory => Scaling::TheorySqrtP,
        ScalingKind::Cox => Scaling::CoxRaw,
    };

    let data = generate_dataset(cfg.n, cfg.p, cfg.s, hazard, cfg.seed, scaling)?;
    let truth = TruthFile::from(data.truth().expect("generated data carries its truth"));

    let out = &global.out_dir;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("gen", cfg.seed, &cfg)?;
    manifest.emit(out, "dataset.csv", &csv_bytes(|b| data.write_csv(b))?)?;
    manifest.emit_json(out, "truth.json", &truth)?;
    finish(manifest, out, vec![format!("N = {}, p = {}, zeta = {:.4}", cfg.n, cfg.p, data.zeta())])
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub data: Option<PathBuf>,
    pub options: FitOptions,
}

fn read_dataset(path: &Path) -> Result<SurvivalDataset, Failure> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(SurvivalDataset::read_csv(file)?)
}

pub fn fit(global: &GlobalArgs, args: &FitArgs) -> CmdResult {
    let mut cfg: FitConfig = load_config(global)?;
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    set(&mut cfg.options.tol, args.tol);
    set(&mut cfg.options.max_iter, args.max_iter);
    set(&mut cfg.options.beta_bound, args.beta_bound);
    set(&mut cfg.options.precision, global.precision);
    let Some(path) = cfg.data.clone() else {
        return usage("--data is required");
    };
    require_positive("tol", cfg.options.tol)?;
    require_positive_count("max-iter", cfg.options.max_iter, 1)?;
    require_positive("beta-bound", cfg.options.beta_bound)?;

    let data = read_dataset(&path)?;
    let result = fit_cox(&data, &cfg.options)?;

    let out = &global.out_dir;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("fit", global.seed.unwrap_or(0), &cfg)?;
    manifest.add_input(&path)?;
    manifest.emit_json(out, "fit.json", &result)?;
    let d = &result.diagnostics;
    finish(
        manifest,
        out,
        vec![format!(
            "converged in {} iterations, |gradient| = {:.2e}, loglik = {:.6}",
            d.iterations, d.final_gradient_norm, d.loglik
        )],
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub zeta_grid: String,
    #[serde(rename = "S")]
    pub s: f64,
    pub solver: SolverConfig,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            zeta_grid: "0.05:0.95:0.05".into(),
            s: 0.5,
            solver: SolverConfig::default(),
        }
    }
}

/// Parses `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_zeta_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = |why: &str| Failure::Usage(format!("--zeta-grid `{text}`: {why}"));
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("expected numbers"))?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        text.split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("expected numbers"))?
    };
    if grid.is_empty() {
        return Err(bad("empty grid"));
    }
    if let Some(z) = grid.iter().find(|z| !(**z > 0.0 && **z < 1.0)) {
        return Err(bad(&format!("zeta = {z} is outside (0, 1)")));
    }
    Ok(grid)
}

pub fn theory(global: &GlobalArgs, args: &TheoryArgs) -> CmdResult {
    let mut cfg: TheoryConfig = load_config(global)?;
    set(&mut cfg.zeta_grid, args.zeta_grid.clone());
    set(&mut cfg.s, args.s);
    cfg.solver.merge(&args.solver);
    let grid = parse_zeta_grid(&cfg.zeta_grid)?;
    require_positive("s", cfg.s)?;
    let options = cfg.solver.options()?;

    let rows = theory_table(&grid, cfg.s, &options)?;
    let table = TheoryTable {
        s: cfg.s,
        options,
        rows,
    };

    let out = &global.out_dir;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("theory", global.seed.unwrap_or(0), &cfg)?;
    manifest.emit(out, "theory.csv", &csv_bytes(|b| write_theory_csv(b, &table.rows))?)?;
    manifest.emit_json(out, "theory.json", &table)?;
    finish(manifest, out, vec![format!("{} grid points", table.rows.len())])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentCliConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub hazard: HazardKind,
    pub a: Option<f64>,
    pub r: usize,
    pub seed: u64,
    pub precision: PrecisionMode,
    pub emit_pairs: bool,
    pub emit_hazard: bool,
    pub figure1_demo: bool,
    pub n_train: usize,
    pub n_validation: usize,
    pub p_grid: String,
    pub informative: usize,
    pub solver: SolverConfig,
}

impl Default for ExperimentCliConfig {
    fn default() -> Self {
        ExperimentCliConfig {
            n: 200,
            p: 40,
            s: 0.5,
            hazard: HazardKind::Const,
            a: None,
            r: 200,
            seed: 0,
            precision: PrecisionMode::Standard,
            emit_pairs: false,
            emit_hazard: false,
            figure1_demo: false,
            n_train: 200,
            n_validation: 1000,
            p_grid: "5,10,20,40,60,80,100,120,140,160,180".into(),
            informative: 5,
            solver: SolverConfig::default(),
        }
    }
}

fn parse_p_grid(text: &str) -> Result<Vec<usize>, Failure> {
    let grid: Vec<usize> = text
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--p-grid `{text}`: expected comma-separated counts")))?;
    if grid.is_empty() || grid.contains(&0) {
        return usage(format!("--p-grid `{text}`: counts must be positive"));
    }
    Ok(grid)
}

pub fn experiment(global: &GlobalArgs, args: &ExperimentArgs) -> CmdResult {
    let mut cfg: ExperimentCliConfig = load_config(global)?;
    set(&mut cfg.n, args.n);
    set(&mut cfg.p, args.p);
    set(&mut cfg.s, args.s);
    set(&mut cfg.hazard, args.hazard);
    set(&mut cfg.r, args.r);
    set(&mut cfg.seed, global.seed);
    set(&mut cfg.precision, global.precision);
    set(&mut cfg.n_train, args.n_train);
    set(&mut cfg.n_validation, args.n_validation);
    set(&mut cfg.p_grid, args.p_grid.clone());
    set(&mut cfg.informative, args.informative);
    if args.a.is_some() {
        cfg.a = args.a;
    }
    cfg.emit_pairs |= args.emit_pairs;
    cfg.emit_hazard |= args.emit_hazard;
    cfg.figure1_demo |= args.figure1_demo;
    cfg.solver.merge(&args.solver);
    require_positive("s", cfg.s)?;
    let hazard = hazard_model(cfg.hazard, cfg.a, cfg.s)?;

    let out = &global.out_dir;
    if cfg.figure1_demo {
        require_positive_count("n-train", cfg.n_train, 2)?;
        require_positive_count("n-validation", cfg.n_validation, 1)?;
        require_positive_count("informative", cfg.informative, 1)?;
        let sweep = PredictionSweepConfig {
            n_train: cfg.n_train,
            n_validation: cfg.n_validation,
            p_grid: parse_p_grid(&cfg.p_grid)?,
            informative: cfg.informative,
            s: cfg.s,
            hazard,
            seed: cfg.seed,
            precision: cfg.precision,
        };
        let points = prediction_sweep(&sweep)?;
        ensure_out_dir(out)?;
        let mut manifest = RunManifest::new("experiment", cfg.seed, &cfg)?;
        manifest.emit(out, "prediction.csv", &csv_bytes(|b| write_prediction_csv(b, &points))?)?;
        manifest.emit_json(out, "prediction.json", &points)?;
        let lines = points
            .iter()
            .map(|pt| match (pt.train_accuracy, pt.validation_accuracy) {
                (Some(t), Some(v)) => format!("p = {:>4}: train {t:.3}, validation {v:.3}", pt.p),
                _ => format!("p = {:>4}: {}", pt.p, pt.error.as_deref().unwrap_or("failed")),
            })
            .collect();
        return finish(manifest, out, lines);
    }

    require_positive_count("n", cfg.n, 2)?;
    require_positive_count("p", cfg.p, 1)?;
    require_positive_count("r", cfg.r, 1)?;
    let config = ExperimentConfig {
        n: cfg.n,
        p: cfg.p,
        s: cfg.s,
        hazard,
        r: cfg.r,
        seed: cfg.seed,
        precision: cfg.precision,
        quantile_range: (0.1, 0.9),
    };
    let output = run_experiment(&config, &cfg.solver.options()?)?;

    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("experiment", cfg.seed, &cfg)?;
    manifest.emit_json(out, "summary.json", &output.summary)?;
    if cfg.emit_pairs {
        manifest.emit(out, "pairs.csv", &csv_bytes(|b| write_pairs_csv(b, &output))?)?;
    }
    if cfg.emit_hazard {
        manifest.emit(out, "hazard.csv", &csv_bytes(|b| write_hazard_csv(b, &output))?)?;
    }
    let s = &output.summary;
    let mut lines = vec![format!(
        "zeta = {:.4}: kappa = {:.4} ± {:.4}, sigma*sqrt(p) = {:.4}, {}/{} fits",
        s.zeta,
        s.kappa_hat,
        s.kappa_se,
        s.sigma_hat * (cfg.p as f64).sqrt(),
        s.succeeded,
        s.r
    )];
    if let Some(t) = &s.theory {
        lines.push(format!("theory: rho = {:.4}, v = {:.4}, k = {:.4}", t.rho, t.v, t.k));
    }
    finish(manifest, out, lines)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectConfig {
    pub fit: Option<PathBuf>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub truth: Option<PathBuf>,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub solver: SolverConfig,
}

#[derive(Debug, Serialize)]
struct Correction {
    zeta: f64,
    #[serde(rename = "S")]
    s: f64,
    s_source: &'static str,
    rho: f64,
    k: f64,
    v: f64,
}

pub fn correct(global: &GlobalArgs, args: &CorrectArgs) -> CmdResult {
    let mut cfg: CorrectConfig = load_config(global)?;
    if args.fit.is_some() {
        cfg.fit = args.fit.clone();
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if args.truth.is_some() {
        cfg.truth = args.truth.clone();
    }
    if args.s.is_some() {
        cfg.s = args.s;
    }
    cfg.solver.merge(&args.solver);
    let Some(fit_path) = cfg.fit.clone() else {
        return usage("--fit is required");
    };
    let Some(n) = cfg.n else {
        return usage("--n is required");
    };
    require_positive_count("n", n, 2)?;
    let options = cfg.solver.options()?;

    let text = fs::read_to_string(&fit_path).with_context(|| format!("reading {}", fit_path.display()))?;
    let fit: CoxFitResult =
        serde_json::from_str(&text).with_context(|| format!("parsing fit JSON {}", fit_path.display()))?;
    let p = fit.beta_hat.len();
    let zeta = p as f64 / n as f64;
    if !(zeta < 1.0) {
        return usage(format!("--n = {n} gives zeta = p/N = {zeta} >= 1; no finite correction exists"));
    }

    let (s, source) = match (&cfg.truth, cfg.s) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: TruthFile =
                serde_json::from_str(&text).with_context(|| format!("parsing truth JSON {}", path.display()))?;
            (Truth::try_from(file)?.s, "truth")
        }
        (None, Some(s)) => {
            require_positive("s", s)?;
            (s, "flag")
        }
        (None, None) => {
            // (v, ρ, k) do not depend on S, so any S gives the theory needed to estimate it
            let probe = solve_for_zeta(zeta, 1.0, &options)?;
            (estimate_strength(&fit.beta_hat, &probe)?, "estimated")
        }
    };
    let theory = solve_for_zeta(zeta, s, &options)?;
    let corrected = correct_fit(&fit, &theory, p)?;
    let correction = Correction {
        zeta,
        s,
        s_source: source,
        rho: theory.rho,
        k: theory.k,
        v: theory.v,
    };

    let out = &global.out_dir;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("correct", global.seed.unwrap_or(0), &cfg)?;
    manifest.add_input(&fit_path)?;
    if let Some(path) = &cfg.truth {
        manifest.add_input(path)?;
    }
    manifest.emit_json(out, "corrected_fit.json", &corrected)?;
    manifest.emit_json(out, "correction.json", &correction)?;
    finish(
        manifest,
        out,
        vec![format!(
            "zeta = {zeta:.4}, S = {s:.4} ({source}): beta / {:.4}, Lambda -> (Lambda / {:.4})^(1/{:.4})",
            theory.rho, theory.k, theory.rho
        )],
    )
}
