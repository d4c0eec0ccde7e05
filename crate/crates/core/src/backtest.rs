//! Rolling-window, daily-rebalanced backtest of the five portfolio models.
//!
//! On out-of-sample day `k` the moments are estimated from loss rows
//! `k - window .. k - 1`, each model picks weights, and the realized return is
//! `-w'l_k`. Wealth starts at 1 and compounds multiplicatively. Daily solves
//! are independent and run in parallel; compounding happens afterwards in
//! date order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::frontier::{
    classical_mv, frontier_params, h_symmetric, m_tsv_s_portfolio, tsv_portfolio, MarketModel, ModelError, Portfolio,
    DEGENERACY_TOL,
};
use crate::market_data::{window_moments, LossPanel, Ridge};
use crate::simplex::{eep_tsv_portfolio, eep_tsv_s_portfolio, SimplexSolverConfig};
use crate::worst_case::{wc_target_semivariance, DistributionFamily, MomentProfile};
use crate::{derive_seed, pos};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Model {
    #[serde(rename = "TSV")]
    Tsv,
    #[serde(rename = "M-TSV-S")]
    MTsvS,
    #[serde(rename = "EEP-TSV")]
    EepTsv,
    #[serde(rename = "EEP-TSV-S")]
    EepTsvS,
    #[serde(rename = "MV")]
    Mv,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Tsv, Model::MTsvS, Model::EepTsv, Model::EepTsvS, Model::Mv];

    pub fn name(&self) -> &'static str {
        match self {
            Model::Tsv => "TSV",
            Model::MTsvS => "M-TSV-S",
            Model::EepTsv => "EEP-TSV",
            Model::EepTsvS => "EEP-TSV-S",
            Model::Mv => "MV",
        }
    }

    pub fn long_only(&self) -> bool {
        matches!(self, Model::EepTsv | Model::EepTsvS)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.trim().to_ascii_uppercase().replace('_', "-");
        Model::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| format!("unknown model '{s}' (expected TSV, M-TSV-S, EEP-TSV, EEP-TSV-S or MV)"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error("need more than {window} loss rows for a window of {window}, got {rows}")]
    InsufficientHistory { window: usize, rows: usize },
    #[error("writing output: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub models: Vec<Model>,
    pub t: f64,
    pub lambda: f64,
    pub nu: f64,
    /// Trace-scaled ridge factor, see [`Ridge::TraceScaled`].
    pub ridge: f64,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { window: 252, models: Model::ALL.to_vec(), t: -0.003, lambda: 0.015, nu: -0.001, ridge: 1e-8, seed: 42 }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |s: String| Err(BacktestError::Config(s));
        if self.window < 2 {
            return bad(format!("window must be >= 2, got {}", self.window));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite number > 0, got {}", self.lambda));
        }
        if self.models.is_empty() {
            return bad("no models selected".into());
        }
        if !self.t.is_finite() || !self.nu.is_finite() {
            return bad("t and nu must be finite".into());
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BacktestError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BacktestError::Io(format!("{}: {e}", path.as_ref().display())))?;
        text.parse()
    }
}

impl FromStr for BacktestConfig {
    type Err = BacktestError;

    /// `key = value` lines; `#` starts a comment. Unset keys keep defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut cfg = BacktestConfig::default();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BacktestError::ConfigParse { line: i + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("'{v}' is not a number")));
            match k {
                "window" => cfg.window = v.parse().map_err(|_| err(format!("'{v}' is not a count")))?,
                "t" => cfg.t = num(v)?,
                "lambda" => cfg.lambda = num(v)?,
                "nu" => cfg.nu = num(v)?,
                "ridge" => cfg.ridge = num(v)?,
                "seed" => cfg.seed = v.parse().map_err(|_| err(format!("'{v}' is not a seed")))?,
                "models" => {
                    cfg.models = v
                        .split(',')
                        .filter(|x| !x.trim().is_empty())
                        .map(|x| x.parse::<Model>().map_err(&err))
                        .collect::<Result<_, _>>()?;
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One model's path. `wealth[0] = 1` and `wealth[k + 1]` is the wealth after
/// day `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRun {
    pub model: Model,
    pub weights: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub wealth: Vec<f64>,
    pub regimes: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFailure {
    pub model: Model,
    pub date: NaiveDate,
    pub message: String,
}

impl fmt::Display for ModelFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed on {}: {}", self.model, self.date, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    pub config: BacktestConfig,
    /// Out-of-sample dates, one per return.
    pub dates: Vec<NaiveDate>,
    /// Index of the first out-of-sample loss row.
    pub first_index: usize,
    pub runs: Vec<ModelRun>,
    pub failures: Vec<ModelFailure>,
}

/// Solver settings for out-of-sample day `k`; depends on `k` and the seed
/// only, so truncating the panel does not change earlier days.
fn simplex_config(cfg: &BacktestConfig, k: usize) -> SimplexSolverConfig {
    SimplexSolverConfig { seed: derive_seed(cfg.seed, k as u64), ..SimplexSolverConfig::default() }
}

/// Every feasible portfolio has expected loss `c` when `mu = c e`, and all
/// three frontier criteria grow with the stdev, so the global
/// minimum-variance portfolio is optimal whenever `c` meets the constraint.
fn degenerate_frontier(model: Model, m: &MarketModel, cfg: &BacktestConfig) -> Result<Portfolio, String> {
    let w = m.global_min_variance();
    let xi = m.expected_loss(&w);
    let var = m.variance(&w);
    if matches!(model, Model::Mv | Model::MTsvS) && xi > cfg.nu {
        return Err(format!(
            "all assets have mean loss {xi:.6e} > nu = {}; no portfolio meets the loss constraint",
            cfg.nu
        ));
    }
    let objective = match model {
        Model::Mv => var,
        Model::Tsv => var + pos(xi - cfg.t).powi(2),
        _ => {
            let p = MomentProfile::new(xi, var.sqrt()).map_err(|e| e.to_string())?;
            wc_target_semivariance(&p, cfg.t, DistributionFamily::Symmetric).map_err(|e| e.to_string())?.value
        }
    };
    Ok(Portfolio { weights: w, expected_loss: xi, stdev: var.sqrt(), objective, regime: "degenerate:gmv" })
}

pub fn solve_model(model: Model, m: &MarketModel, cfg: &BacktestConfig, k: usize) -> Result<Portfolio, String> {
    match model {
        Model::EepTsv => eep_tsv_portfolio(m, cfg.t, cfg.lambda, &simplex_config(cfg, k)).map_err(|e| e.to_string()),
        Model::EepTsvS => eep_tsv_s_portfolio(m, cfg.t, cfg.lambda, &simplex_config(cfg, k)).map_err(|e| e.to_string()),
        _ => {
            if m.degeneracy() <= DEGENERACY_TOL {
                return degenerate_frontier(model, m, cfg);
            }
            let fp = frontier_params(m).map_err(|e: ModelError| e.to_string())?;
            Ok(match model {
                Model::Mv => classical_mv(&fp, m, cfg.nu),
                Model::Tsv => tsv_portfolio(&fp, m, cfg.t),
                _ => {
                    let p = m_tsv_s_portfolio(&fp, m, cfg.nu, cfg.t);
                    debug_assert!(
                        (p.objective - h_symmetric(&fp, p.expected_loss, cfg.t)).abs()
                            <= 1e-9 * p.objective.max(1e-300)
                    );
                    p
                }
            })
        }
    }
}

pub fn run_backtest(l: &LossPanel, cfg: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    cfg.validate()?;
    let n = l.len();
    if n <= cfg.window {
        return Err(BacktestError::InsufficientHistory { window: cfg.window, rows: n });
    }
    let days: Vec<usize> = (cfg.window..n).collect();
    let ridge = Ridge::TraceScaled(cfg.ridge);

    // Per day: either an estimation error or one solve result per model.
    let solved: Vec<Result<Vec<Result<Portfolio, String>>, String>> = days
        .par_iter()
        .map(|&k| {
            let m = window_moments(l, cfg.window, k - 1, ridge).map_err(|e| e.to_string())?;
            Ok(cfg.models.iter().map(|&model| solve_model(model, &m, cfg, k)).collect())
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (j, &model) in cfg.models.iter().enumerate() {
        let mut run = ModelRun { model, weights: vec![], returns: vec![], wealth: vec![1.0], regimes: vec![] };
        let mut failed = None;
        for (day, &k) in solved.iter().zip(&days) {
            let p = match day {
                Err(e) => Err(e.clone()),
                Ok(per_model) => per_model[j].clone(),
            };
            match p {
                Ok(p) => {
                    let loss: f64 = p.weights.iter().zip(l.losses.row(k).iter()).map(|(w, x)| w * x).sum();
                    let r = -loss;
                    let last = *run.wealth.last().expect("wealth starts at 1");
                    run.wealth.push(last * (1.0 + r));
                    run.returns.push(r);
                    run.regimes.push(p.regime);
                    run.weights.push(p.weights);
                }
                Err(message) => {
                    failed = Some(ModelFailure { model, date: l.dates[k], message });
                    break;
                }
            }
        }
        match failed {
            Some(f) => failures.push(f),
            None => runs.push(run),
        }
    }
    Ok(BacktestResult {
        config: cfg.clone(),
        dates: days.iter().map(|&k| l.dates[k]).collect(),
        first_index: cfg.window,
        runs,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: Model,
    pub final_wealth: f64,
    pub ann_return: f64,
    pub ann_vol: f64,
    pub max_drawdown: f64,
    /// False when there are fewer than two returns; `ann_vol` is then 0.
    #[serde(skip)]
    pub vol_defined: bool,
}

pub fn summarize_run(run: &ModelRun) -> ModelSummary {
    let r = &run.returns;
    let n = r.len() as f64;
    let mean = if r.is_empty() { 0.0 } else { r.iter().sum::<f64>() / n };
    let vol_defined = r.len() >= 2;
    let sd = if vol_defined { (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &w in &run.wealth {
        peak = peak.max(w);
        if peak > 0.0 {
            mdd = mdd.max((peak - w) / peak);
        }
    }
    ModelSummary {
        model: run.model,
        final_wealth: *run.wealth.last().unwrap_or(&1.0),
        ann_return: mean * TRADING_DAYS,
        ann_vol: sd * TRADING_DAYS.sqrt(),
        max_drawdown: mdd,
        vol_defined,
    }
}

pub fn summarize(r: &BacktestResult) -> Vec<ModelSummary> {
    r.runs.iter().map(summarize_run).collect()
}

/// `date,model,wealth`, one row per out-of-sample day and model.
pub fn write_wealth_csv(r: &BacktestResult, path: &Path) -> Result<(), BacktestError> {
    let io = |e: csv::Error| BacktestError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["date", "model", "wealth"]).map_err(io)?;
    for run in &r.runs {
        for (date, wealth) in r.dates.iter().zip(&run.wealth[1..]) {
            w.write_record([date.to_string(), run.model.to_string(), wealth.to_string()]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| BacktestError::Io(e.to_string()))
}

pub fn write_summary_json(s: &[ModelSummary], path: &Path) -> Result<(), BacktestError> {
    let text = serde_json::to_string_pretty(s).map_err(|e| BacktestError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| BacktestError::Io(format!("{}: {e}", path.display())))
}
