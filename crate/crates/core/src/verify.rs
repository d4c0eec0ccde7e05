//! Grid runner that checks closed forms against the brute-force oracle and
//! the explicit witnesses.
//!
//! For each grid tuple the closed form `C`, the oracle maximum `O` and the
//! witness value `W` must satisfy `O, W <= C + 1e-6 * scale` (soundness, a
//! violation means the closed form is wrong) and `O >= C - slack * scale`
//! (the search got close), with `scale = sigma^2 + (t - mu)^2`.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::derive_seed;
use crate::oracle::{brute_force_worst_case, default_k, witness_family, OracleError};
use crate::worst_case::{
    set_nonempty, wc_target_semivariance_constrained, DistributionFamily, MomentProfile, RegretBudget, WorstCaseError,
};

pub const SOUNDNESS_TOL: f64 = 1e-6;
pub const SLACK_UNCONSTRAINED: f64 = 5e-3;
pub const SLACK_CONSTRAINED: f64 = 5e-2;
pub const EPS_SCHEDULE: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Symmetric grid with 225 tuples over `mu in [-2, 2]`, `sigma in [0.2, 3]`,
/// `t in [mu - 2 sigma, mu + 2 sigma]`.
pub const DEFAULT_GRID: &str = "mu=-2:2:5; sigma=0.2:3:5; tz=-2:2:9";
/// Budgeted grid covering `sigma <= m`, `m < sigma <= 2m` and `sigma > 2m`.
pub const DEFAULT_BUDGET_GRID: &str = "mu=-1:1:3; sigma=0.5:2.5:3; tz=-1.5:1.5:7; lz=0.1:2.1:6";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("bad grid spec: {0}")]
    GridSpec(String),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("writing report: {0}")]
    Io(String),
}

/// `a:b:n` (n evenly spaced points, ends included) or a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis(Vec<f64>);

impl Axis {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl FromStr for Axis {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VerifyError::GridSpec(format!("axis '{s}' is not 'a:b:n' or a number"));
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num =
            |x: &str| x.parse::<f64>().map_err(|_| bad()).and_then(|v| if v.is_finite() { Ok(v) } else { Err(bad()) });
        match parts.as_slice() {
            [v] => Ok(Axis(vec![num(v)?])),
            [a, b, n] => {
                let (a, b) = (num(a)?, num(b)?);
                let n: usize = n.parse().map_err(|_| bad())?;
                match n {
                    0 => Err(bad()),
                    1 => Ok(Axis(vec![a])),
                    _ => Ok(Axis((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())),
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Threshold and budget axes may be absolute or in units of `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scaled {
    Absolute(Axis),
    /// `t = mu + z sigma` or `lambda = z sigma`.
    Sigmas(Axis),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub mu: Axis,
    pub sigma: Axis,
    pub t: Scaled,
    pub lambda: Option<Scaled>,
}

impl FromStr for GridSpec {
    type Err = VerifyError;

    /// `key=axis` pairs separated by `;`, `,` or whitespace. Keys: `mu`,
    /// `sigma`, `t` or `tz`, and optionally `lambda` or `lz`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (mut mu, mut sigma, mut t, mut lambda) = (None, None, None, None);
        for item in s.split([';', ',', ' ', '\n']).filter(|x| !x.trim().is_empty()) {
            let (k, v) =
                item.split_once('=').ok_or_else(|| VerifyError::GridSpec(format!("'{item}' is not key=value")))?;
            let axis: Axis = v.parse()?;
            match k.trim() {
                "mu" => mu = Some(axis),
                "sigma" => sigma = Some(axis),
                "t" => t = Some(Scaled::Absolute(axis)),
                "tz" => t = Some(Scaled::Sigmas(axis)),
                "lambda" => lambda = Some(Scaled::Absolute(axis)),
                "lz" => lambda = Some(Scaled::Sigmas(axis)),
                other => return Err(VerifyError::GridSpec(format!("unknown key '{other}'"))),
            }
        }
        fn need<T>(x: Option<T>, k: &str) -> Result<T, VerifyError> {
            x.ok_or_else(|| VerifyError::GridSpec(format!("missing '{k}'")))
        }
        Ok(GridSpec { mu: need(mu, "mu")?, sigma: need(sigma, "sigma")?, t: need(t, "t")?, lambda })
    }
}

impl GridSpec {
    /// `(mu, sigma, t, budget)` tuples in row-major order.
    pub fn tuples(&self) -> Vec<(f64, f64, f64, RegretBudget)> {
        let mut out = Vec::new();
        for &mu in self.mu.values() {
            for &sigma in self.sigma.values() {
                let ts: Vec<f64> = match &self.t {
                    Scaled::Absolute(a) => a.values().to_vec(),
                    Scaled::Sigmas(a) => a.values().iter().map(|z| mu + z * sigma).collect(),
                };
                for &t in &ts {
                    match &self.lambda {
                        None => out.push((mu, sigma, t, RegretBudget::Unconstrained)),
                        Some(l) => {
                            let ls: Vec<f64> = match l {
                                Scaled::Absolute(a) => a.values().to_vec(),
                                Scaled::Sigmas(a) => a.values().iter().map(|z| z * sigma).collect(),
                            };
                            out.extend(ls.into_iter().map(|l| (mu, sigma, t, RegretBudget::Limit(l))));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub family: DistributionFamily,
    /// Oracle evaluations per tuple.
    pub budget: u64,
    pub seed: u64,
    /// Atom count; defaults to the family's reduction.
    pub k: Option<usize>,
    /// Test hook: multiplies every closed form, to check that the runner
    /// catches a wrong formula.
    pub closed_form_factor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { family: DistributionFamily::Symmetric, budget: 100_000, seed: 1, k: None, closed_form_factor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub mu: f64,
    pub sigma: f64,
    pub t: f64,
    pub lambda: Option<f64>,
    pub family: DistributionFamily,
    pub regime: &'static str,
    pub closed_form: f64,
    pub oracle_value: f64,
    pub witness_value: Option<f64>,
    pub gap: f64,
}

impl VerifyRow {
    pub fn scale(&self) -> f64 {
        self.sigma * self.sigma + (self.t - self.mu).powi(2)
    }

    pub fn slack(&self) -> f64 {
        if self.lambda.is_some() {
            SLACK_CONSTRAINED
        } else {
            SLACK_UNCONSTRAINED
        }
    }

    /// Neither the oracle nor the witness beats the closed form.
    pub fn sound(&self) -> bool {
        let cap = self.closed_form + SOUNDNESS_TOL * self.scale();
        self.oracle_value <= cap && self.witness_value.is_none_or(|w| w <= cap)
    }

    /// The oracle got within the slack of the closed form.
    pub fn tight(&self) -> bool {
        self.oracle_value >= self.closed_form - self.slack() * self.scale()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    /// Tuples skipped because the set is empty.
    pub skipped: usize,
}

impl VerifyReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.sound()).count()
    }

    pub fn loose(&self) -> usize {
        self.rows.iter().filter(|r| !r.tight()).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0 && self.loose() == 0
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), VerifyError> {
        let io = |e: csv::Error| VerifyError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "mu",
            "sigma",
            "t",
            "lambda",
            "family",
            "regime",
            "closed_form",
            "oracle_value",
            "witness_value",
            "gap",
        ])
        .map_err(io)?;
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.mu.to_string(),
                r.sigma.to_string(),
                r.t.to_string(),
                opt(r.lambda),
                r.family.to_string(),
                r.regime.to_string(),
                r.closed_form.to_string(),
                r.oracle_value.to_string(),
                opt(r.witness_value),
                r.gap.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| VerifyError::Io(e.to_string()))
    }
}

/// Smallest-eps witness value that still belongs to the set.
fn witness_value(p: &MomentProfile, t: f64, b: RegretBudget, fam: DistributionFamily) -> Option<f64> {
    EPS_SCHEDULE.iter().rev().find_map(|&eps| witness_family(p, t, b, fam, eps).ok()).map(|w| w.partial_moments(t).upm2)
}

fn verify_tuple(
    (mu, sigma, t, b): (f64, f64, f64, RegretBudget),
    cfg: &VerifyConfig,
    seed: u64,
) -> Result<Option<VerifyRow>, VerifyError> {
    let fam = cfg.family;
    let p = MomentProfile::new(mu, sigma)?;
    if !set_nonempty(&p, t, b, fam)? {
        return Ok(None);
    }
    let cf = wc_target_semivariance_constrained(&p, t, b, fam)?;
    let k = cfg.k.unwrap_or_else(|| default_k(fam, b));
    let oracle_value = match brute_force_worst_case(&p, t, b, fam, k, cfg.budget, seed) {
        Ok(r) => r.best_value,
        Err(OracleError::BudgetExhausted { best: Some(r) }) => r.best_value,
        Err(OracleError::BudgetExhausted { best: None }) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    let closed_form = cf.value * cfg.closed_form_factor;
    Ok(Some(VerifyRow {
        mu,
        sigma,
        t,
        lambda: b.lambda(),
        family: fam,
        regime: cf.regime,
        closed_form,
        oracle_value,
        witness_value: witness_value(&p, t, b, fam),
        gap: closed_form - oracle_value,
    }))
}

/// Evaluates every tuple of `grid`. Tuple `i` uses oracle seed
/// `derive_seed(cfg.seed, i)`, so the report is independent of threading.
pub fn run_verify(grid: &GridSpec, cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let tuples = grid.tuples();
    let results: Vec<Result<Option<VerifyRow>, VerifyError>> = tuples
        .into_par_iter()
        .enumerate()
        .map(|(i, tup)| verify_tuple(tup, cfg, derive_seed(cfg.seed, i as u64)))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }
    Ok(VerifyReport { rows, skipped })
}
