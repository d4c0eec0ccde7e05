//! Long-only solvers for the excess-profit constrained models.
//!
//! Both models minimize a worst-case target semi-variance of the portfolio
//! loss over the probability simplex, with the distribution set restricted by
//! `E[(X - t)_-] <= lambda`:
//!
//! - EEP-TSV over arbitrary distributions: `w'S w + (w'mu - t)_+^2`, which is
//!   convex, solved by accelerated projected gradient (FISTA with adaptive
//!   restart).
//! - EEP-TSV-S over symmetric distributions: piecewise smooth and not known
//!   to be convex. Solved by multi-start projected gradient with Armijo
//!   backtracking and a pairwise mass-transfer polish. Only certified against
//!   the probe set, not globally.
//!
//! Inputs with `(min_i mu_i - t)_- > lambda` are rejected, since some
//! portfolios would then face an empty distribution set.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::frontier::{MarketModel, Portfolio};
use crate::worst_case::{wc_target_semivariance_constrained, DistributionFamily, MomentProfile, RegretBudget};
use crate::{derive_seed, neg, pos};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error(
        "infeasible regret budget: (min mu_i - t)_- = {excess} exceeds lambda = {lambda}; \
         raise lambda or lower the target loss t"
    )]
    InfeasibleBudget { excess: f64, lambda: f64 },
    #[error("no convergence after {iterations} iterations (gradient mapping norm {norm:e})")]
    NonConvergence { iterations: usize, norm: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid regret budget lambda = {0}")]
    InvalidBudget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexSolverConfig {
    pub max_iterations: usize,
    /// Initial step as a multiple of `1/L`, `L` a gradient Lipschitz bound.
    pub step_init: f64,
    pub step_shrink: f64,
    /// Gradient-mapping norm accepted as stationary.
    pub tolerance: f64,
    /// Local searches started from the best probes (on top of the vertices
    /// and the barycenter).
    pub multistart_count: usize,
    /// Random simplex points evaluated before the local searches.
    pub probes: usize,
    pub seed: u64,
}

impl Default for SimplexSolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            step_init: 1.0,
            step_shrink: 0.5,
            tolerance: 1e-10,
            multistart_count: 8,
            probes: 1000,
            seed: 0,
        }
    }
}

impl SimplexSolverConfig {
    pub fn validate(&self) -> Result<(), SimplexError> {
        let bad = |s: &str| Err(SimplexError::InvalidConfig(s.into()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if self.multistart_count == 0 {
            return bad("multistart_count must be >= 1");
        }
        if !(self.step_init > 0.0) {
            return bad("step_init must be > 0");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        Ok(())
    }
}

/// `(min_i mu_i - t)_- <= lambda`.
pub fn check_regret_feasibility(m: &MarketModel, t: f64, lambda: f64) -> bool {
    let min = m.mu().iter().cloned().fold(f64::INFINITY, f64::min);
    neg(min - t) <= lambda
}

/// Euclidean projection onto `{w >= 0, sum w = 1}`. Points already on the
/// simplex (to rounding) come back unchanged.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * n as f64 {
        return v.to_vec();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let cand = (cum - 1.0) / (j + 1) as f64;
        if x - cand > 0.0 {
            tau = cand;
        }
    }
    v.iter().map(|&x| pos(x - tau)).collect()
}

/// Which worst case the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EepModel {
    Arbitrary,
    Symmetric,
}

impl EepModel {
    fn family(self) -> DistributionFamily {
        match self {
            Self::Arbitrary => DistributionFamily::Arbitrary,
            Self::Symmetric => DistributionFamily::Symmetric,
        }
    }
}

/// Worst-case target semi-variance of the loss of `w`, `+inf` when the
/// distribution set of `w` is empty.
pub fn eep_objective(m: &MarketModel, w: &[f64], t: f64, lambda: f64, model: EepModel) -> f64 {
    eval(m, w, t, lambda, model).0
}

fn eval(m: &MarketModel, w: &[f64], t: f64, lambda: f64, model: EepModel) -> (f64, &'static str) {
    let xi = m.expected_loss(w);
    let sigma = m.variance(w).max(0.0).sqrt().max(1e-12);
    let p = MomentProfile::new(xi, sigma).expect("finite moments with sigma floored");
    let b = RegretBudget::Limit(lambda);
    match wc_target_semivariance_constrained(&p, t, b, model.family()) {
        Ok(v) => (v.value, v.regime),
        Err(_) => (f64::INFINITY, "empty"),
    }
}

/// Partials `(dh/dxi, dh/dsigma)` of the symmetric budgeted objective on the
/// branch named by `regime`.
fn symmetric_partials(regime: &str, xi: f64, sigma: f64, t: f64, lambda: f64) -> (f64, f64) {
    let d = xi - t;
    if regime.ends_with("t>mu") || regime.starts_with("budget-boundary") {
        (0.0, sigma)
    } else if regime.ends_with(":t<=mu-sigma") {
        (2.0 * d, 2.0 * sigma)
    } else if regime.contains("(b)(iii)") || regime.ends_with("(c):t<=mu") {
        (2.0 * lambda + 3.0 * d, sigma)
    } else {
        (sigma + d, sigma + d)
    }
}

fn portfolio_from(m: &MarketModel, w: Vec<f64>, objective: f64, regime: &'static str) -> Portfolio {
    Portfolio {
        expected_loss: m.expected_loss(&w),
        stdev: m.variance(&w).max(0.0).sqrt(),
        objective,
        regime,
        weights: w,
    }
}

fn screen(m: &MarketModel, t: f64, lambda: f64, cfg: &SimplexSolverConfig) -> Result<(), SimplexError> {
    cfg.validate()?;
    if !(lambda > 0.0) || lambda.is_nan() {
        return Err(SimplexError::InvalidBudget(lambda));
    }
    if !check_regret_feasibility(m, t, lambda) {
        let min = m.mu().iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(SimplexError::InfeasibleBudget { excess: neg(min - t), lambda });
    }
    Ok(())
}

fn lipschitz(m: &MarketModel) -> f64 {
    let top = m.cov().clone().symmetric_eigenvalues().max();
    2.0 * (top + m.mu().norm_squared())
}

fn vertices_and_barycenter(n: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    pts.push(vec![1.0 / n as f64; n]);
    pts
}

/// Uniform draws from the simplex (normalized exponentials).
pub fn random_simplex_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Minimizes the worst-case target semi-variance over arbitrary loss
/// distributions with mean `w'mu`, variance `w'S w` and excess profit at most
/// `lambda`.
pub fn eep_tsv_portfolio(
    m: &MarketModel,
    t: f64,
    lambda: f64,
    cfg: &SimplexSolverConfig,
) -> Result<Portfolio, SimplexError> {
    screen(m, t, lambda, cfg)?;
    let n = m.dim();
    let mu = m.mu();
    let cov = m.cov();
    let grad = |w: &DVector<f64>| -> DVector<f64> {
        let e = pos(mu.dot(w) - t);
        cov * w * 2.0 + mu * (2.0 * e)
    };
    let f = |w: &DVector<f64>| -> f64 {
        let e = pos(mu.dot(w) - t);
        w.dot(&(cov * w)) + e * e
    };
    let step = cfg.step_init / lipschitz(m);
    let proj = |v: &DVector<f64>| DVector::from_vec(project_to_simplex(v.as_slice()));
    let mapping_norm = |w: &DVector<f64>| {
        let g = grad(w);
        ((w - proj(&(w - &g * step))) / step).norm()
    };

    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut fx = f(&x);
    let mut norm = f64::INFINITY;
    let mut iterations = 0;
    for k in 0..cfg.max_iterations {
        iterations = k + 1;
        let x_new = proj(&(&y - grad(&y) * step));
        let f_new = f(&x_new);
        if f_new > fx {
            // Adaptive restart: drop momentum, take a plain step from x.
            theta = 1.0;
            y = x.clone();
            let x_plain = proj(&(&x - grad(&x) * step));
            fx = f(&x_plain);
            x = x_plain;
        } else {
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            y = &x_new + (&x_new - &x) * ((theta - 1.0) / theta_new);
            theta = theta_new;
            x = x_new;
            fx = f_new;
        }
        if k % 8 == 0 || k + 1 == cfg.max_iterations {
            norm = mapping_norm(&x);
            if norm <= cfg.tolerance {
                break;
            }
        }
    }
    if norm > cfg.tolerance {
        return Err(SimplexError::NonConvergence { iterations, norm });
    }

    let mut best = (x.as_slice().to_vec(), eep_objective(m, x.as_slice(), t, lambda, EepModel::Arbitrary));
    for v in vertices_and_barycenter(n) {
        let val = eep_objective(m, &v, t, lambda, EepModel::Arbitrary);
        if val < best.1 {
            best = (v, val);
        }
    }
    let (_, regime) = eval(m, &best.0, t, lambda, EepModel::Arbitrary);
    let regime = if regime.starts_with("budget-boundary") { "eep-tsv:boundary" } else { "eep-tsv:generic" };
    Ok(portfolio_from(m, best.0, best.1, regime))
}

struct Local {
    w: Vec<f64>,
    value: f64,
}

fn symmetric_gradient(m: &MarketModel, w: &[f64], t: f64, lambda: f64) -> Option<(f64, DVector<f64>)> {
    let (value, regime) = eval(m, w, t, lambda, EepModel::Symmetric);
    if !value.is_finite() {
        return None;
    }
    let wv = DVector::from_column_slice(w);
    let sw = m.cov() * &wv;
    let xi = m.mu().dot(&wv);
    let sigma = wv.dot(&sw).max(0.0).sqrt().max(1e-12);
    let (dxi, dsigma) = symmetric_partials(regime, xi, sigma, t, lambda);
    Some((value, m.mu() * dxi + sw * (dsigma / sigma)))
}

fn descend(m: &MarketModel, start: Vec<f64>, t: f64, lambda: f64, cfg: &SimplexSolverConfig, l: f64) -> Local {
    let obj = |w: &[f64]| eep_objective(m, w, t, lambda, EepModel::Symmetric);
    let mut w = start;
    let mut value = obj(&w);
    let base = cfg.step_init / l;
    let mut step = base;
    for _ in 0..cfg.max_iterations {
        let Some((_, g)) = symmetric_gradient(m, &w, t, lambda) else { break };
        let mut accepted = false;
        while step > base * 1e-12 {
            let trial: Vec<f64> = w.iter().zip(g.iter()).map(|(x, gi)| x - step * gi).collect();
            let cand = project_to_simplex(&trial);
            let moved: f64 = cand.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
            if moved == 0.0 {
                break;
            }
            let v = obj(&cand);
            if v <= value - 1e-4 / step * moved {
                let converged = moved.sqrt() / step <= cfg.tolerance;
                w = cand;
                value = v;
                accepted = !converged;
                break;
            }
            step *= cfg.step_shrink;
        }
        if !accepted {
            break;
        }
        step = (step / cfg.step_shrink).min(base * 1e6);
    }
    Local { w, value }
}

/// Pairwise mass transfers `w_i -> w_j` with halving amounts; handles kinks
/// where the gradient step stalls.
fn polish(m: &MarketModel, mut w: Vec<f64>, mut value: f64, t: f64, lambda: f64) -> Local {
    let n = w.len();
    let mut delta: f64 = 0.25;
    while delta > 1e-12 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || w[i] <= 0.0 {
                    continue;
                }
                let amount = f64::min(delta, w[i]);
                let mut cand = w.clone();
                cand[i] -= amount;
                cand[j] += amount;
                let v = eep_objective(m, &cand, t, lambda, EepModel::Symmetric);
                if v < value {
                    w = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    Local { w, value }
}

/// Minimizes the worst-case target semi-variance over symmetric loss
/// distributions with mean `w'mu`, variance `w'S w` and excess profit at most
/// `lambda`.
pub fn eep_tsv_s_portfolio(
    m: &MarketModel,
    t: f64,
    lambda: f64,
    cfg: &SimplexSolverConfig,
) -> Result<Portfolio, SimplexError> {
    screen(m, t, lambda, cfg)?;
    let n = m.dim();
    let obj = |w: &[f64]| eep_objective(m, w, t, lambda, EepModel::Symmetric);

    let mut probes: Vec<(f64, Vec<f64>)> =
        random_simplex_points(n, cfg.probes, derive_seed(cfg.seed, 0)).into_par_iter().map(|w| (obj(&w), w)).collect();
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut starts = vertices_and_barycenter(n);
    starts.extend(probes.iter().take(cfg.multistart_count).map(|p| p.1.clone()));

    let l = lipschitz(m);
    let locals: Vec<Local> = starts.into_par_iter().map(|s| descend(m, s, t, lambda, cfg, l)).collect();
    let mut best = Local { w: vec![1.0 / n as f64; n], value: f64::INFINITY };
    for loc in locals.into_iter().chain(probes.into_iter().map(|(value, w)| Local { w, value })) {
        if loc.value < best.value {
            best = loc;
        }
    }
    let polished = polish(m, best.w.clone(), best.value, t, lambda);
    let refined = descend(m, polished.w.clone(), t, lambda, cfg, l);
    best = [best, polished, refined].into_iter().fold(Local { w: vec![], value: f64::INFINITY }, |a, b| {
        if b.value < a.value {
            b
        } else {
            a
        }
    });
    let (value, regime) = eval(m, &best.w, t, lambda, EepModel::Symmetric);
    Ok(portfolio_from(m, best.w, value, regime))
}
