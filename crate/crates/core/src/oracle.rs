//! Finite discrete distributions, explicit witness constructions and a
//! seeded brute-force search over k-point families.
//!
//! The search never calls the closed forms in [`crate::worst_case`]; it only
//! knows how to evaluate partial moments of a discrete distribution and how
//! to test membership in an uncertainty set. That is what makes it usable as
//! an independent check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::worst_case::{set_nonempty, DistributionFamily, MomentProfile, RegretBudget, WorstCaseError};
use crate::{derive_seed, neg, pos};

/// Atoms closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no two-point distribution with mean {mu} and sd {sigma} fits in [{lower}, {upper}]")]
    InfeasibleSupport { mu: f64, sigma: f64, lower: f64, upper: f64 },
    #[error("no explicit witness for this regime: {0}")]
    NoKnownWitness(String),
    #[error("the constraints admit no {k}-point {family} distribution")]
    InfeasibleConstraints { k: usize, family: DistributionFamily },
    #[error("search budget exhausted before enough feasible starts were found")]
    BudgetExhausted { best: Option<Box<OracleReport>> },
    #[error("unsupported atom count k = {k} for the {family} family")]
    UnsupportedK { k: usize, family: DistributionFamily },
    #[error("evaluation budget {0} is below the minimum of 10000")]
    BudgetTooSmall(u64),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
}

/// A finite distribution with strictly increasing atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    /// Sorts, merges atoms within [`MERGE_TOL`], drops zero masses.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, OracleError> {
        if atoms.is_empty() {
            return Err(OracleError::InvalidDistribution("no atoms".into()));
        }
        for &(x, p) in &atoms {
            if !x.is_finite() || !p.is_finite() || p < 0.0 {
                return Err(OracleError::InvalidDistribution(format!("bad atom ({x}, {p})")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidDistribution(format!("masses sum to {total}")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, p) in atoms {
            match merged.last_mut() {
                Some(last) if x - last.0 <= MERGE_TOL => last.1 += p,
                _ => merged.push((x, p)),
            }
        }
        merged.retain(|a| a.1 > 0.0);
        Ok(Self { atoms: merged })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min_support(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn partial_moments(&self, t: f64) -> PartialMoments {
        partial_moments(self, t)
    }

    /// Center of symmetry, if the atoms and masses mirror about the mean
    /// within `tol`.
    pub fn symmetry_center(&self, tol: f64) -> Option<f64> {
        let n = self.atoms.len();
        let c = self.partial_moments(0.0).mean;
        for i in 0..n.div_ceil(2) {
            let (xl, pl) = self.atoms[i];
            let (xr, pr) = self.atoms[n - 1 - i];
            if (xl + xr - 2.0 * c).abs() > tol || (pl - pr).abs() > tol {
                return None;
            }
        }
        Some(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialMoments {
    pub mean: f64,
    pub variance: f64,
    pub upm1: f64,
    pub upm2: f64,
    pub lpm1: f64,
    pub lpm2: f64,
}

pub fn partial_moments(d: &DiscreteDistribution, t: f64) -> PartialMoments {
    let mean: f64 = d.atoms.iter().map(|&(x, p)| p * x).sum();
    let mut pm = PartialMoments { mean, variance: 0.0, upm1: 0.0, upm2: 0.0, lpm1: 0.0, lpm2: 0.0 };
    for &(x, p) in &d.atoms {
        let c = x - mean;
        pm.variance += p * c * c;
        let up = pos(x - t);
        let dn = neg(x - t);
        pm.upm1 += p * up;
        pm.upm2 += p * up * up;
        pm.lpm1 += p * dn;
        pm.lpm2 += p * dn * dn;
    }
    pm
}

/// Checks that `d` belongs to the uncertainty set within the oracle
/// tolerances: mean 1e-9, variance 1e-9 relative, excess profit
/// `<= lambda + 1e-9`, symmetry and support sign 1e-12 (relative to scale).
pub fn check_membership(
    d: &DiscreteDistribution,
    p: &MomentProfile,
    t: f64,
    b: RegretBudget,
    fam: DistributionFamily,
) -> Result<(), String> {
    let pm = d.partial_moments(t);
    let scale = 1.0 + p.mu().abs() + p.sigma();
    if (pm.mean - p.mu()).abs() > 1e-9 * scale {
        return Err(format!("mean {} != {}", pm.mean, p.mu()));
    }
    if (pm.variance - p.variance()).abs() > 1e-9 * p.variance() {
        return Err(format!("variance {} != {}", pm.variance, p.variance()));
    }
    if let Some(lambda) = b.lambda() {
        if pm.lpm1 > lambda + 1e-9 {
            return Err(format!("excess profit {} > {lambda}", pm.lpm1));
        }
    }
    match fam {
        DistributionFamily::Arbitrary => {}
        DistributionFamily::Symmetric => {
            if d.symmetry_center(1e-12 * scale).is_none() {
                return Err("not symmetric".into());
            }
        }
        DistributionFamily::NonNegative => {
            if d.min_support() < -1e-12 * scale {
                return Err(format!("negative support point {}", d.min_support()));
            }
        }
    }
    Ok(())
}

/// Two-point distribution with mean `mu`, sd `sigma` and support in
/// `[lower, upper]` (either bound may be infinite).
pub fn two_point_match(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<DiscreteDistribution, OracleError> {
    let infeasible = OracleError::InfeasibleSupport { mu, sigma, lower, upper };
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) || !(lower < mu && mu < upper) {
        return Err(infeasible);
    }
    let atoms = match (lower.is_finite(), upper.is_finite()) {
        (true, true) => {
            let (a, b) = (mu - lower, upper - mu);
            if sigma * sigma > a * b {
                return Err(infeasible);
            }
            if a == b {
                vec![(mu - sigma, 0.5), (mu + sigma, 0.5)]
            } else {
                // Endpoint masses keep the mean; shrinking both arms by the
                // same factor then brings the variance down to sigma^2.
                let p = b / (a + b);
                let s = sigma / (a * b).sqrt();
                vec![(mu - a * s, p), (mu + b * s, 1.0 - p)]
            }
        }
        (true, false) => {
            let r = (mu - lower) / sigma;
            let alpha = f64::max(0.5, 1.0 / (1.0 + r * r));
            lopsided(mu, sigma, alpha)
        }
        (false, true) => {
            let r = (upper - mu) / sigma;
            let alpha = f64::max(0.5, 1.0 / (1.0 + r * r));
            lopsided(-mu, sigma, alpha).into_iter().map(|(x, p)| (-x, p)).collect()
        }
        (false, false) => vec![(mu - sigma, 0.5), (mu + sigma, 0.5)],
    };
    DiscreteDistribution::new(atoms)
}

/// Mass `alpha` below the mean, `1 - alpha` above, moments `(mu, sigma^2)`.
fn lopsided(mu: f64, sigma: f64, alpha: f64) -> Vec<(f64, f64)> {
    if alpha == 0.5 {
        return vec![(mu - sigma, 0.5), (mu + sigma, 0.5)];
    }
    vec![
        (mu - sigma * ((1.0 - alpha) / alpha).sqrt(), alpha),
        (mu + sigma * (alpha / (1.0 - alpha)).sqrt(), 1.0 - alpha),
    ]
}

/// `[mu - s sqrt(delta/(1-delta)), 1-delta; mu + s sqrt((1-delta)/delta), delta]`.
pub fn f_delta(p: &MomentProfile, delta: f64) -> Result<DiscreteDistribution, OracleError> {
    let (mu, s) = (p.mu(), p.sigma());
    DiscreteDistribution::new(vec![
        (mu - s * (delta / (1.0 - delta)).sqrt(), 1.0 - delta),
        (mu + s * ((1.0 - delta) / delta).sqrt(), delta),
    ])
}

/// `[mu -+ sqrt(sigma^2 / (2 eps)), eps each; mu, 1 - 2 eps]`.
pub fn three_point_symmetric(p: &MomentProfile, eps: f64) -> Result<DiscreteDistribution, OracleError> {
    let (mu, s) = (p.mu(), p.sigma());
    let arm = s / (2.0 * eps).sqrt();
    DiscreteDistribution::new(vec![(mu - arm, eps), (mu, 1.0 - 2.0 * eps), (mu + arm, eps)])
}

/// Four atoms mirrored about `mu` that exhaust the budget exactly:
/// `[t - lambda/q, q; t, 1/2 - q; 2mu - t, 1/2 - q; 2mu - t + lambda/q, q]`.
pub fn four_point_symmetric(p: &MomentProfile, t: f64, lambda: f64) -> Result<DiscreteDistribution, OracleError> {
    let mu = p.mu();
    let d = mu - t;
    let m = lambda + d;
    let q = 2.0 * lambda * lambda / (p.variance() + 3.0 * d * d - 4.0 * m * d);
    if !(q > 0.0 && q <= 0.5) {
        return Err(OracleError::NoKnownWitness(format!("four-point mass {q} outside (0, 1/2]")));
    }
    let arm = lambda / q;
    let r = 2.0 * mu - t;
    DiscreteDistribution::new(vec![(t - arm, q), (t, 0.5 - q), (r, 0.5 - q), (r + arm, q)])
}

/// Explicit (near-)worst distribution for the active regime.
///
/// | family / budget           | regime                      | witness          |
/// |---------------------------|-----------------------------|------------------|
/// | symmetric                 | `t <= mu` and `1/2(sigma + mu - t) <= m` | `[mu -+ sigma]` |
/// | symmetric                 | `t > mu`                    | three-point, `eps` |
/// | symmetric, budget         | `t <= mu`, pair over budget | four-point       |
/// | arbitrary / non-negative  | any                         | `F_delta`, `delta = eps` |
///
/// With a budget on its boundary `lambda == (mu - t)_-` the value is zero and
/// no construction is returned.
pub fn witness_family(
    p: &MomentProfile,
    t: f64,
    b: RegretBudget,
    fam: DistributionFamily,
    eps: f64,
) -> Result<DiscreteDistribution, OracleError> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(OracleError::NoKnownWitness(format!("eps = {eps} outside (0, 1/4)")));
    }
    if fam == DistributionFamily::NonNegative && p.mu() <= 0.0 {
        return Err(WorstCaseError::NonNegativeRequiresPositiveMean(p.mu()).into());
    }
    if !set_nonempty(p, t, b, fam)? {
        return Err(WorstCaseError::EmptyUncertaintySet.into());
    }
    let d = p.mu() - t;
    let lambda = b.lambda();
    if lambda == Some(neg(d)) {
        return Err(OracleError::NoKnownWitness("budget on its boundary".into()));
    }
    let w = match fam {
        DistributionFamily::Arbitrary | DistributionFamily::NonNegative => f_delta(p, eps)?,
        DistributionFamily::Symmetric if d < 0.0 => three_point_symmetric(p, eps)?,
        DistributionFamily::Symmetric => {
            let pair_regret = 0.5 * (p.sigma() + d).max(2.0 * d);
            match lambda {
                Some(l) if pair_regret > l + d => four_point_symmetric(p, t, l)?,
                _ => two_point_match(p.mu(), p.sigma(), f64::NEG_INFINITY, f64::INFINITY)?,
            }
        }
    };
    check_membership(&w, p, t, b, fam)
        .map_err(|e| OracleError::NoKnownWitness(format!("construction leaves the set ({e}); try a smaller eps")))?;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub best_value: f64,
    pub witness: DiscreteDistribution,
    pub evaluations: u64,
    pub seed: u64,
    pub feasible_starts: usize,
    pub starts: usize,
}

/// Evaluations allotted to one multi-start.
const EVALS_PER_START: u64 = 500;
const SWEEPS: usize = 40;

#[derive(Debug, Clone, Copy)]
enum Shape {
    General { k: usize },
    Symmetric { pairs: usize, center: bool },
}

impl Shape {
    fn new(fam: DistributionFamily, k: usize) -> Result<Self, OracleError> {
        if !(2..=6).contains(&k) {
            return Err(OracleError::UnsupportedK { k, family: fam });
        }
        Ok(match fam {
            DistributionFamily::Symmetric => Shape::Symmetric { pairs: k / 2, center: k % 2 == 1 },
            _ => Shape::General { k },
        })
    }

    /// `(mass logits, gap logs)`.
    fn dims(&self) -> (usize, usize) {
        match *self {
            Shape::General { k } => (k, k - 1),
            Shape::Symmetric { pairs, center } => (pairs + center as usize, pairs),
        }
    }

    /// Standardized atoms (mean 0, variance 1) with their masses.
    fn decode(&self, theta: &[f64], out: &mut Vec<(f64, f64)>) -> bool {
        out.clear();
        let (nm, ng) = self.dims();
        let (logits, gaps) = theta.split_at(nm);
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        match *self {
            Shape::General { .. } => {
                let mut y = 0.0;
                out.push((0.0, weights[0] / total));
                for j in 0..ng {
                    y += gaps[j].exp();
                    out.push((y, weights[j + 1] / total));
                }
                let mean: f64 = out.iter().map(|a| a.0 * a.1).sum();
                let var: f64 = out.iter().map(|a| a.1 * (a.0 - mean).powi(2)).sum();
                if !(var > 1e-300 && var.is_finite()) {
                    return false;
                }
                let sd = var.sqrt();
                for a in out.iter_mut() {
                    a.0 = (a.0 - mean) / sd;
                }
            }
            Shape::Symmetric { pairs, center } => {
                let mut arm = 0.0;
                let mut var = 0.0;
                for j in 0..pairs {
                    arm += gaps[j].exp();
                    let r = weights[j] / total;
                    out.push((arm, r));
                    var += r * arm * arm;
                }
                if !(var > 1e-300 && var.is_finite()) {
                    return false;
                }
                let sd = var.sqrt();
                let mut mirrored = Vec::with_capacity(2 * pairs + 1);
                for &(a, r) in out.iter() {
                    mirrored.push((-a / sd, 0.5 * r));
                    mirrored.push((a / sd, 0.5 * r));
                }
                if center {
                    mirrored.push((0.0, weights[pairs] / total));
                }
                *out = mirrored;
            }
        }
        true
    }
}

struct Problem {
    shape: Shape,
    mu: f64,
    sigma: f64,
    t: f64,
    lambda: Option<f64>,
    nonneg: bool,
}

impl Problem {
    /// Target semi-variance of the decoded distribution, or `None` when the
    /// draw leaves the set.
    fn value(&self, theta: &[f64], buf: &mut Vec<(f64, f64)>) -> Option<f64> {
        if !self.shape.decode(theta, buf) {
            return None;
        }
        let mut upm2 = 0.0;
        let mut lpm1 = 0.0;
        for &(z, p) in buf.iter() {
            let x = self.mu + self.sigma * z;
            if self.nonneg && x < 0.0 {
                return None;
            }
            let e = x - self.t;
            upm2 += p * pos(e) * pos(e);
            lpm1 += p * neg(e);
        }
        if let Some(l) = self.lambda {
            if lpm1 > l {
                return None;
            }
        }
        upm2.is_finite().then_some(upm2)
    }

    fn distribution(&self, theta: &[f64]) -> DiscreteDistribution {
        let mut buf = Vec::new();
        self.shape.decode(theta, &mut buf);
        let atoms: Vec<(f64, f64)> = buf.iter().map(|&(z, p)| (self.mu + self.sigma * z, p)).collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteDistribution::new(atoms.into_iter().map(|(x, p)| (x, p / total)).collect())
            .expect("decoded atoms are finite with positive masses")
    }
}

struct StartOutcome {
    best: Option<(f64, Vec<f64>)>,
    evaluations: u64,
}

fn run_start(prob: &Problem, seed: u64) -> StartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nm, ng) = prob.shape.dims();
    let dim = nm + ng;
    let mut buf = Vec::with_capacity(8);
    let mut evals = 0u64;
    let mut theta = vec![0.0; dim];

    let mut current = None;
    while evals < EVALS_PER_START / 2 {
        for (j, th) in theta.iter_mut().enumerate() {
            *th = if j < nm { rng.random_range(-4.0..4.0) } else { rng.random_range(-3.0..2.0) };
        }
        evals += 1;
        if let Some(v) = prob.value(&theta, &mut buf) {
            current = Some(v);
            break;
        }
    }
    let Some(mut best) = current else {
        return StartOutcome { best: None, evaluations: evals };
    };

    let mut h = 0.5;
    'sweeps: for _ in 0..SWEEPS {
        for j in 0..dim {
            for dir in [1.0, -1.0] {
                let mut moved = false;
                loop {
                    if evals >= EVALS_PER_START {
                        break 'sweeps;
                    }
                    let old = theta[j];
                    theta[j] = (old + dir * h).clamp(-30.0, 30.0);
                    evals += 1;
                    match prob.value(&theta, &mut buf) {
                        Some(v) if v > best => {
                            best = v;
                            moved = true;
                        }
                        _ => {
                            theta[j] = old;
                            break;
                        }
                    }
                }
                if moved {
                    break;
                }
            }
        }
        h *= 0.5;
    }
    StartOutcome { best: Some((best, theta)), evaluations: evals }
}

/// Maximizes `E[(X - t)_+^2]` over `k`-point members of the set.
///
/// Atoms are drawn in standardized coordinates and mapped affinely onto the
/// exact mean and variance; symmetric families are parameterized by mirrored
/// pairs (plus a center atom for odd `k`). Each start is a random feasible
/// draw refined by cyclic coordinate ascent with step halving. Starts run in
/// parallel with sub-seeds derived from `(seed, start)`, so the report does
/// not depend on scheduling.
pub fn brute_force_worst_case(
    p: &MomentProfile,
    t: f64,
    b: RegretBudget,
    fam: DistributionFamily,
    k: usize,
    budget: u64,
    seed: u64,
) -> Result<OracleReport, OracleError> {
    if budget < 10_000 {
        return Err(OracleError::BudgetTooSmall(budget));
    }
    if fam == DistributionFamily::NonNegative && p.mu() <= 0.0 {
        return Err(WorstCaseError::NonNegativeRequiresPositiveMean(p.mu()).into());
    }
    if !t.is_finite() {
        return Err(WorstCaseError::InvalidThreshold(t).into());
    }
    let lambda = match b {
        RegretBudget::Limit(l) if !(l.is_finite() && l > 0.0) => return Err(WorstCaseError::InvalidBudget(l).into()),
        _ => b.lambda(),
    };
    let prob = Problem {
        shape: Shape::new(fam, k)?,
        mu: p.mu(),
        sigma: p.sigma(),
        t,
        lambda,
        nonneg: fam == DistributionFamily::NonNegative,
    };
    let starts = (budget / EVALS_PER_START).max(1) as usize;
    let outcomes: Vec<StartOutcome> =
        (0..starts).into_par_iter().map(|i| run_start(&prob, derive_seed(seed, i as u64))).collect();

    let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
    let feasible_starts = outcomes.iter().filter(|o| o.best.is_some()).count();
    let best = outcomes.iter().filter_map(|o| o.best.as_ref()).fold(None::<&(f64, Vec<f64>)>, |acc, cand| match acc {
        Some(a) if a.0 >= cand.0 => Some(a),
        _ => Some(cand),
    });

    let Some((best_value, theta)) = best else {
        if !set_nonempty(p, t, b, fam)? {
            return Err(OracleError::InfeasibleConstraints { k, family: fam });
        }
        return Err(OracleError::BudgetExhausted { best: None });
    };
    let report = OracleReport {
        best_value: *best_value,
        witness: prob.distribution(theta),
        evaluations,
        seed,
        feasible_starts,
        starts,
    };
    if feasible_starts * 10 < starts {
        return Err(OracleError::BudgetExhausted { best: Some(Box::new(report)) });
    }
    Ok(report)
}

/// Atom count the reductions prescribe for a family.
pub fn default_k(fam: DistributionFamily, b: RegretBudget) -> usize {
    match (fam, b) {
        (DistributionFamily::Symmetric, RegretBudget::Unconstrained) => 5,
        (DistributionFamily::Symmetric, RegretBudget::Limit(_)) => 6,
        _ => 3,
    }
}
