//! Mean-variance frontier algebra and the short-selling solvers.
//!
//! With `a = e'S^-1 e`, `b = mu'S^-1 e`, `c = mu'S^-1 mu` the frontier
//! scalars are `u = ac - b^2`, `v0 = a/u`, `v1 = b/u`, `v2 = c/u`, and the
//! smallest variance among fully invested portfolios with expected loss `xi`
//! is `v0 xi^2 - 2 v1 xi + v2`. Every solver here reduces to a search over
//! `xi` along that parabola.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use thiserror::Error;

use crate::pos;
use crate::worst_case::{wc_target_semivariance, DistributionFamily, MomentProfile};

/// Relative threshold on `u / (a c)` below which `mu` counts as parallel to `e`.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("covariance matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("mean loss vector is (numerically) a multiple of the all-ones vector")]
    DegenerateMeans,
    #[error("dimension mismatch: {assets} assets, mean of length {mu}, covariance {rows}x{cols}")]
    DimensionMismatch { assets: usize, mu: usize, rows: usize, cols: usize },
    #[error("non-finite entry in the market model")]
    NonFinite,
}

/// Asset names with per-period mean loss vector and covariance.
#[derive(Debug, Clone)]
pub struct MarketModel {
    assets: Vec<String>,
    mu: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl MarketModel {
    /// Validates shape, symmetry (1e-10) and positive definiteness. Means
    /// parallel to `e` are allowed here; [`frontier_params`] rejects them.
    pub fn new(assets: Vec<String>, mu: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = assets.len();
        if n == 0 || mu.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(ModelError::DimensionMismatch {
                assets: n,
                mu: mu.len(),
                rows: cov.nrows(),
                cols: cov.ncols(),
            });
        }
        if mu.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-10 {
            return Err(ModelError::NotSymmetric(asym));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or(ModelError::NotPositiveDefinite)?;
        if chol.l_dirty().diagonal().iter().any(|&x| !(x > 0.0)) {
            return Err(ModelError::NotPositiveDefinite);
        }
        Ok(Self { assets, mu, cov: sym, chol })
    }

    /// Convenience constructor with generated names `A1, A2, ...`.
    pub fn from_slices(mu: &[f64], cov: &[&[f64]]) -> Result<Self, ModelError> {
        let n = mu.len();
        let assets = (1..=n).map(|i| format!("A{i}")).collect();
        let rows = cov.len();
        if cov.iter().any(|r| r.len() != n) {
            return Err(ModelError::DimensionMismatch { assets: n, mu: n, rows, cols: 0 });
        }
        let flat: Vec<f64> = cov.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(assets, DVector::from_vec(mu.to_vec()), DMatrix::from_row_slice(rows, n, &flat))
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn dim(&self) -> usize {
        self.assets.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn expected_loss(&self, w: &[f64]) -> f64 {
        self.mu.iter().zip(w).map(|(m, x)| m * x).sum()
    }

    pub fn variance(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        w.dot(&(&self.cov * &w))
    }

    /// `u / (a c)`; zero exactly when `mu` is parallel to `e` (or zero).
    pub fn degeneracy(&self) -> f64 {
        let e = DVector::from_element(self.dim(), 1.0);
        let se = self.solve(&e);
        let sm = self.solve(&self.mu);
        let a = e.dot(&se);
        let b = self.mu.dot(&se);
        let c = self.mu.dot(&sm);
        let denom = a * c;
        if denom > 0.0 {
            (a * c - b * b) / denom
        } else {
            0.0
        }
    }

    /// Minimum-variance fully invested portfolio `S^-1 e / (e'S^-1 e)`.
    pub fn global_min_variance(&self) -> Vec<f64> {
        let se = self.solve(&DVector::from_element(self.dim(), 1.0));
        let a = se.sum();
        (se / a).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierParams {
    pub u: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    #[serde(skip)]
    inv_mu: DVector<f64>,
    #[serde(skip)]
    inv_e: DVector<f64>,
}

impl FrontierParams {
    /// `v0 xi^2 - 2 v1 xi + v2`.
    pub fn variance_at(&self, xi: f64) -> f64 {
        (self.v0 * xi - 2.0 * self.v1) * xi + self.v2
    }

    /// Expected loss of the global minimum-variance portfolio.
    pub fn vertex(&self) -> f64 {
        self.v1 / self.v0
    }

    pub fn inv_mu(&self) -> &DVector<f64> {
        &self.inv_mu
    }

    pub fn inv_e(&self) -> &DVector<f64> {
        &self.inv_e
    }
}

pub fn frontier_params(m: &MarketModel) -> Result<FrontierParams, ModelError> {
    let e = DVector::from_element(m.dim(), 1.0);
    let inv_e = m.solve(&e);
    let inv_mu = m.solve(m.mu());
    let a = e.dot(&inv_e);
    let b = m.mu().dot(&inv_e);
    let c = m.mu().dot(&inv_mu);
    let u = a * c - b * b;
    if !(a * c > 0.0) || u <= DEGENERACY_TOL * a * c {
        return Err(ModelError::DegenerateMeans);
    }
    Ok(FrontierParams { u, v0: a / u, v1: b / u, v2: c / u, inv_mu, inv_e })
}

/// Weights with diagnostics. `objective` is the model's own criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Portfolio {
    pub weights: Vec<f64>,
    pub expected_loss: f64,
    pub stdev: f64,
    pub objective: f64,
    pub regime: &'static str,
}

impl Portfolio {
    pub fn variance(&self) -> f64 {
        self.stdev * self.stdev
    }
}

/// Two-fund portfolio `S^-1 mu (v0 xi - v1) + S^-1 e (v2 - v1 xi)`.
pub fn min_variance_portfolio(fp: &FrontierParams, m: &MarketModel, xi: f64) -> Portfolio {
    let w = &fp.inv_mu * (fp.v0 * xi - fp.v1) + &fp.inv_e * (fp.v2 - fp.v1 * xi);
    let weights: Vec<f64> = w.iter().copied().collect();
    let var = fp.variance_at(xi);
    Portfolio {
        expected_loss: m.expected_loss(&weights),
        stdev: var.sqrt(),
        objective: var,
        regime: "frontier",
        weights,
    }
}

/// Smallest variance subject to `w'mu <= nu`.
pub fn classical_mv(fp: &FrontierParams, m: &MarketModel, nu: f64) -> Portfolio {
    let vertex = fp.vertex();
    let (xi, regime) = if vertex <= nu { (vertex, "mv:unbinding") } else { (nu, "mv:binding") };
    Portfolio { regime, ..min_variance_portfolio(fp, m, xi) }
}

/// Minimizes `w'S w + (w'mu - t)_+^2`.
pub fn tsv_portfolio(fp: &FrontierParams, m: &MarketModel, t: f64) -> Portfolio {
    let vertex = fp.vertex();
    let (xi, regime) =
        if vertex <= t { (vertex, "tsv:vertex<=t") } else { ((fp.v1 + t) / (fp.v0 + 1.0), "tsv:vertex>t") };
    let e = pos(xi - t);
    let p = min_variance_portfolio(fp, m, xi);
    Portfolio { objective: fp.variance_at(xi) + e * e, regime, ..p }
}

/// Worst-case symmetric target semi-variance at frontier point `xi`.
pub fn h_symmetric(fp: &FrontierParams, xi: f64, t: f64) -> f64 {
    let sigma = fp.variance_at(xi).sqrt();
    let p = MomentProfile::new(xi, sigma).expect("frontier variance is positive");
    wc_target_semivariance(&p, t, DistributionFamily::Symmetric).expect("symmetric family accepts any mean").value
}

const GRID: usize = 2048;

/// Minimizer of `h_symmetric` over `[lo, hi]`: best point of a uniform grid
/// (earliest on ties within 1e-12) refined by golden section on the
/// neighbouring cells.
fn minimize_on_interval(fp: &FrontierParams, t: f64, lo: f64, hi: f64) -> (f64, f64) {
    let h = |x: f64| h_symmetric(fp, x, t);
    let step = (hi - lo) / (GRID - 1) as f64;
    let at = |i: usize| if i == GRID - 1 { hi } else { lo + step * i as f64 };
    let mut best_i = 0;
    let mut best = h(lo);
    for i in 1..GRID {
        let v = h(at(i));
        if v < best - 1e-12 {
            best = v;
            best_i = i;
        }
    }
    let (mut a, mut b) = (at(best_i.saturating_sub(1)), at((best_i + 1).min(GRID - 1)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    for _ in 0..200 {
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = h(d);
        }
    }
    let (xr, fr) = if fc <= fd { (c, fc) } else { (d, fd) };
    if fr < best - 1e-12 {
        (xr, fr)
    } else {
        (at(best_i), best)
    }
}

/// Minimizes the worst-case symmetric target semi-variance subject to
/// `w'mu <= nu`.
///
/// For `t >= nu` every feasible portfolio has its mean below the target and
/// the criterion is half the variance, so the answer is the classical one.
/// Otherwise the best frontier point with `xi <= t` is compared with a
/// numerical minimizer over `[t, nu]`.
pub fn m_tsv_s_portfolio(fp: &FrontierParams, m: &MarketModel, nu: f64, t: f64) -> Portfolio {
    let vertex = fp.vertex();
    if t >= nu {
        let xi = vertex.min(nu);
        let p = min_variance_portfolio(fp, m, xi);
        return Portfolio { objective: h_symmetric(fp, xi, t), regime: "m-tsv-s:(i)", ..p };
    }
    let xi1 = vertex.min(t);
    let h1 = h_symmetric(fp, xi1, t);
    let (xi2, h2) = minimize_on_interval(fp, t, t, nu);
    let (xi, h, regime) = if h1 <= h2 { (xi1, h1, "m-tsv-s:(ii)") } else { (xi2, h2, "m-tsv-s:(iii)") };
    Portfolio { objective: h, regime, ..min_variance_portfolio(fp, m, xi) }
}
