//! Closed-form worst-case partial moments over moment uncertainty sets.
//!
//! Every evaluator works on `d = mu - t` and `sigma` only (plus `mu` itself
//! for the non-negative family), so results are translation covariant:
//! `f(mu, sigma, t) == f(0, sigma, t - mu)` bit for bit for the arbitrary and
//! symmetric families.
//!
//! Families:
//!
//! | family        | distributions                                   |
//! |---------------|-------------------------------------------------|
//! | `Arbitrary`   | mean `mu`, variance `sigma^2`                   |
//! | `Symmetric`   | as above and symmetric about some center        |
//! | `NonNegative` | as above and supported on `[0, inf)`; `mu > 0`   |
//!
//! A finite [`RegretBudget`] further restricts the set to distributions with
//! expected excess profit `E[(X - t)_-] <= lambda`.

use serde::Serialize;
use thiserror::Error;

use crate::{neg, pos};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorstCaseError {
    #[error("invalid moment profile: mu = {mu}, sigma = {sigma} (need finite mu and sigma > 0)")]
    InvalidProfile { mu: f64, sigma: f64 },
    #[error("the non-negative family requires a positive mean, got mu = {0}")]
    NonNegativeRequiresPositiveMean(f64),
    #[error("invalid regret budget lambda = {0} (need a finite lambda > 0)")]
    InvalidBudget(f64),
    #[error("non-finite threshold t = {0}")]
    InvalidThreshold(f64),
    #[error("empty uncertainty set")]
    EmptyUncertaintySet,
}

/// Mean and standard deviation of a loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentProfile {
    mu: f64,
    sigma: f64,
}

impl MomentProfile {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, WorstCaseError> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(WorstCaseError::InvalidProfile { mu, sigma });
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionFamily {
    Arbitrary,
    Symmetric,
    NonNegative,
}

impl DistributionFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Arbitrary => "arbitrary",
            Self::Symmetric => "symmetric",
            Self::NonNegative => "nonnegative",
        }
    }
}

impl std::str::FromStr for DistributionFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arbitrary" | "any" => Ok(Self::Arbitrary),
            "symmetric" | "sym" => Ok(Self::Symmetric),
            "nonnegative" | "non-negative" | "positive" => Ok(Self::NonNegative),
            other => Err(format!("unknown family '{other}' (expected arbitrary, symmetric or nonnegative)")),
        }
    }
}

impl std::fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Cap on the expected excess profit `E[(X - t)_-]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RegretBudget {
    Limit(f64),
    Unconstrained,
}

impl RegretBudget {
    pub fn limit(lambda: f64) -> Result<Self, WorstCaseError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(WorstCaseError::InvalidBudget(lambda));
        }
        Ok(Self::Limit(lambda))
    }

    /// `None` for the unconstrained set.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            Self::Limit(l) => Some(*l),
            Self::Unconstrained => None,
        }
    }

    fn checked(&self) -> Result<Option<f64>, WorstCaseError> {
        match *self {
            Self::Limit(l) if !l.is_finite() || l <= 0.0 => Err(WorstCaseError::InvalidBudget(l)),
            Self::Limit(l) => Ok(Some(l)),
            Self::Unconstrained => Ok(None),
        }
    }
}

/// A worst-case value together with the piecewise branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstCaseValue {
    pub value: f64,
    pub regime: &'static str,
}

impl WorstCaseValue {
    fn new(value: f64, regime: &'static str) -> Self {
        Self { value, regime }
    }
}

fn check_inputs(p: &MomentProfile, t: f64, fam: DistributionFamily) -> Result<(), WorstCaseError> {
    // Profiles built through `new` are valid; re-check for struct literals
    // deserialized elsewhere.
    MomentProfile::new(p.mu, p.sigma)?;
    if !t.is_finite() {
        return Err(WorstCaseError::InvalidThreshold(t));
    }
    if fam == DistributionFamily::NonNegative && p.mu <= 0.0 {
        return Err(WorstCaseError::NonNegativeRequiresPositiveMean(p.mu));
    }
    Ok(())
}

/// `1/2 (d + sqrt(sigma^2 + d^2))`, evaluated without cancellation for `d < 0`.
fn half_hypot_plus(d: f64, sigma: f64) -> f64 {
    let r = sigma.hypot(d);
    if d >= 0.0 {
        0.5 * (d + r)
    } else {
        0.5 * sigma * sigma / (r - d)
    }
}

/// Worst-case expected regret `sup E[(X - t)_+]`.
pub fn wc_expected_regret(
    p: &MomentProfile,
    t: f64,
    fam: DistributionFamily,
) -> Result<WorstCaseValue, WorstCaseError> {
    check_inputs(p, t, fam)?;
    let sigma = p.sigma;
    let d = p.mu - t;
    let v = match fam {
        DistributionFamily::Arbitrary => WorstCaseValue::new(half_hypot_plus(d, sigma), "arbitrary"),
        DistributionFamily::Symmetric => {
            if d > 0.5 * sigma {
                WorstCaseValue::new(d + sigma * sigma / (8.0 * d), "symmetric:t<mu-sigma/2")
            } else if d > -0.5 * sigma {
                WorstCaseValue::new(0.5 * (sigma + d), "symmetric:|t-mu|<sigma/2")
            } else {
                WorstCaseValue::new(sigma * sigma / (8.0 * -d), "symmetric:t>=mu+sigma/2")
            }
        }
        DistributionFamily::NonNegative => {
            let mu = p.mu;
            let second = sigma * sigma + mu * mu;
            if t < 0.0 {
                WorstCaseValue::new(d, "nonnegative:t<0")
            } else if t < second / (2.0 * mu) {
                WorstCaseValue::new(mu - mu * mu * t / second, "nonnegative:0<=t<m2/(2mu)")
            } else {
                WorstCaseValue::new(half_hypot_plus(d, sigma), "nonnegative:t>=m2/(2mu)")
            }
        }
    };
    Ok(v)
}

fn symmetric_semivariance(d: f64, sigma: f64) -> WorstCaseValue {
    if d >= sigma {
        WorstCaseValue::new(sigma * sigma + d * d, "symmetric:t<=mu-sigma")
    } else if d >= 0.0 {
        let s = d + sigma;
        WorstCaseValue::new(0.5 * s * s, "symmetric:mu-sigma<t<=mu")
    } else {
        WorstCaseValue::new(0.5 * sigma * sigma, "symmetric:t>mu")
    }
}

/// Worst-case target semi-variance `sup E[(X - t)_+^2]` without a budget.
pub fn wc_target_semivariance(
    p: &MomentProfile,
    t: f64,
    fam: DistributionFamily,
) -> Result<WorstCaseValue, WorstCaseError> {
    check_inputs(p, t, fam)?;
    let d = p.mu - t;
    let v = match fam {
        DistributionFamily::Arbitrary => {
            let e = pos(d);
            WorstCaseValue::new(p.variance() + e * e, "arbitrary")
        }
        DistributionFamily::NonNegative => {
            let e = pos(d);
            WorstCaseValue::new(p.variance() + e * e, "nonnegative")
        }
        DistributionFamily::Symmetric => symmetric_semivariance(d, p.sigma),
    };
    Ok(v)
}

/// Symmetric family with a finite budget and `lambda > (mu - t)_-`.
///
/// With `m = lambda + d` the budget is equivalent to `E[(X - t)_+] <= m`. For
/// `t <= mu` the unconstrained worst case `[mu - sigma, mu + sigma]` stays
/// admissible while `d >= 2m - sigma` fails, i.e. while `1/2 (sigma + d) <= m`;
/// past that point the four-atom distribution with the binding budget is the
/// worst case and gives `sigma^2/2 + 2 m d - d^2/2`. When `sigma > 2m` that
/// holds for every `t <= mu`.
fn symmetric_budgeted(d: f64, sigma: f64, lambda: f64) -> WorstCaseValue {
    let m = lambda + d;
    let half_var = 0.5 * sigma * sigma;
    if sigma <= m {
        if d >= sigma {
            WorstCaseValue::new(sigma * sigma + d * d, "symmetric-budget:(a):t<=mu-sigma")
        } else if d >= 0.0 {
            let s = d + sigma;
            WorstCaseValue::new(0.5 * s * s, "symmetric-budget:(a):mu-sigma<t<=mu")
        } else {
            WorstCaseValue::new(half_var, "symmetric-budget:(a):t>mu")
        }
    } else if sigma <= 2.0 * m {
        if d < 0.0 {
            WorstCaseValue::new(half_var, "symmetric-budget:(b)(i):t>mu")
        } else if d >= 2.0 * m - sigma {
            WorstCaseValue::new(half_var + 2.0 * m * d - 0.5 * d * d, "symmetric-budget:(b)(iii):t<=mu+sigma-2m")
        } else {
            let s = d + sigma;
            WorstCaseValue::new(0.5 * s * s, "symmetric-budget:(b)(ii):mu+sigma-2m<t<=mu")
        }
    } else if d >= 0.0 {
        WorstCaseValue::new(half_var + 2.0 * m * d - 0.5 * d * d, "symmetric-budget:(c):t<=mu")
    } else {
        WorstCaseValue::new(half_var, "symmetric-budget:(c):t>mu")
    }
}

/// Worst-case target semi-variance over the set further restricted by
/// `E[(X - t)_-] <= lambda`.
///
/// Returns [`WorstCaseError::EmptyUncertaintySet`] when no distribution
/// satisfies the restrictions (see [`set_nonempty`]). On the boundary
/// `lambda == (mu - t)_-` every admissible loss sits below `t` a.s., so the
/// value is exactly zero.
pub fn wc_target_semivariance_constrained(
    p: &MomentProfile,
    t: f64,
    b: RegretBudget,
    fam: DistributionFamily,
) -> Result<WorstCaseValue, WorstCaseError> {
    check_inputs(p, t, fam)?;
    let Some(lambda) = b.checked()? else {
        return wc_target_semivariance(p, t, fam);
    };
    if !set_nonempty(p, t, b, fam)? {
        return Err(WorstCaseError::EmptyUncertaintySet);
    }
    let d = p.mu - t;
    if lambda == neg(d) {
        return Ok(WorstCaseValue::new(0.0, "budget-boundary:lambda=(mu-t)_-"));
    }
    let v = match fam {
        DistributionFamily::Arbitrary => {
            let e = pos(d);
            WorstCaseValue::new(p.variance() + e * e, "budget:arbitrary")
        }
        DistributionFamily::NonNegative => {
            let e = pos(d);
            WorstCaseValue::new(p.variance() + e * e, "budget:nonnegative")
        }
        DistributionFamily::Symmetric => symmetric_budgeted(d, p.sigma, lambda),
    };
    Ok(v)
}

/// Whether the (possibly budgeted) uncertainty set contains any distribution.
///
/// On the boundary `lambda == t - mu > 0` every member must satisfy `X <= t`
/// a.s. A non-negative member then lives on `[0, t]`, whose largest variance
/// with mean `mu` is `mu (t - mu)`; a symmetric member lives on
/// `[2 mu - t, t]`, whose largest variance is `(t - mu)^2`.
pub fn set_nonempty(
    p: &MomentProfile,
    t: f64,
    b: RegretBudget,
    fam: DistributionFamily,
) -> Result<bool, WorstCaseError> {
    check_inputs(p, t, fam)?;
    let Some(lambda) = b.checked()? else {
        return Ok(true);
    };
    let excess = neg(p.mu - t);
    if lambda > excess {
        return Ok(true);
    }
    if lambda < excess {
        return Ok(false);
    }
    let gap = t - p.mu;
    Ok(match fam {
        DistributionFamily::Arbitrary => true,
        DistributionFamily::NonNegative => p.variance() <= p.mu * gap,
        DistributionFamily::Symmetric => p.sigma <= gap,
    })
}

/// Suprema and infima of the first- and second-order partial moments that
/// follow from the known suprema through the complement identities
/// `(x)_+^2 + (x)_-^2 = x^2` and the reflection `X -> -X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplementBounds {
    pub sup_plus1: f64,
    pub inf_plus1: f64,
    pub sup_plus2: f64,
    pub inf_plus2: f64,
    pub sup_minus2: f64,
    pub inf_minus2: f64,
}

pub fn reflect_complement_bounds(
    p: &MomentProfile,
    t: f64,
    fam: DistributionFamily,
) -> Result<ComplementBounds, WorstCaseError> {
    if fam == DistributionFamily::NonNegative {
        // Reflection maps non-negative losses to non-positive ones.
        return Err(WorstCaseError::NonNegativeRequiresPositiveMean(p.mu));
    }
    check_inputs(p, t, fam)?;
    let reflected = MomentProfile::new(-p.mu, p.sigma)?;
    let d = p.mu - t;
    let total = p.variance() + d * d;

    let sup_plus1 = wc_expected_regret(p, t, fam)?.value;
    // Jensen gives E[(X - t)_+] >= (mu - t)_+; the three-point family
    // [mu -+ sigma/sqrt(2 eps), eps] approaches it for both families.
    let inf_plus1 = pos(d);
    let sup_plus2 = wc_target_semivariance(p, t, fam)?.value;
    let sup_minus2 = wc_target_semivariance(&reflected, -t, fam)?.value;
    Ok(ComplementBounds {
        sup_plus1,
        inf_plus1,
        sup_plus2,
        inf_plus2: total - sup_minus2,
        sup_minus2,
        inf_minus2: total - sup_plus2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(mu: f64, sigma: f64) -> MomentProfile {
        MomentProfile::new(mu, sigma).unwrap()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn rejects_degenerate_profiles() {
        assert!(matches!(MomentProfile::new(0.0, 0.0), Err(WorstCaseError::InvalidProfile { .. })));
        assert!(MomentProfile::new(0.0, -1.0).is_err());
        assert!(MomentProfile::new(f64::NAN, 1.0).is_err());
        assert!(RegretBudget::limit(0.0).is_err());
        assert!(RegretBudget::limit(f64::INFINITY).is_err());
    }

    #[test]
    fn nonnegative_needs_positive_mean() {
        let err = wc_expected_regret(&mp(0.0, 1.0), 0.0, DistributionFamily::NonNegative);
        assert_eq!(err, Err(WorstCaseError::NonNegativeRequiresPositiveMean(0.0)));
        let err = wc_target_semivariance(&mp(-1.0, 1.0), 0.0, DistributionFamily::NonNegative);
        assert!(err.is_err());
    }

    #[test]
    fn regret_examples() {
        let v = wc_expected_regret(&mp(0.0, 1.0), 0.0, DistributionFamily::Arbitrary).unwrap();
        close(v.value, 0.5);
        let v = wc_expected_regret(&mp(0.0, 1.0), 1.0, DistributionFamily::Symmetric).unwrap();
        close(v.value, 0.125);
        assert_eq!(v.regime, "symmetric:t>=mu+sigma/2");
        let v = wc_expected_regret(&mp(1.0, 1.0), 0.0, DistributionFamily::NonNegative).unwrap();
        close(v.value, 1.0);
        assert_eq!(v.regime, "nonnegative:0<=t<m2/(2mu)");
    }

    #[test]
    fn regret_tends_to_expected_excess() {
        for fam in [DistributionFamily::Arbitrary, DistributionFamily::Symmetric, DistributionFamily::NonNegative] {
            let p = mp(if fam == DistributionFamily::NonNegative { 1.0 } else { 0.0 }, 1.0);
            let t = -1e6;
            let v = wc_expected_regret(&p, t, fam).unwrap().value;
            assert!((v - (p.mu() - t)).abs() < 1e-6, "{fam}: {v}");
        }
    }

    #[test]
    fn regret_branches_are_continuous() {
        let p = mp(0.3, 1.7);
        let sym = DistributionFamily::Symmetric;
        for t in [p.mu() - 0.85, p.mu() + 0.85] {
            let a = wc_expected_regret(&p, t - 1e-12, sym).unwrap().value;
            let b = wc_expected_regret(&p, t + 1e-12, sym).unwrap().value;
            assert!((a - b).abs() < 1e-9);
        }
        let q = mp(1.0, 1.0);
        let knot = (1.0 + 1.0) / 2.0;
        let a = wc_expected_regret(&q, knot - 1e-12, DistributionFamily::NonNegative).unwrap();
        let b = wc_expected_regret(&q, knot + 1e-12, DistributionFamily::NonNegative).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn semivariance_examples() {
        let v = wc_target_semivariance(&mp(1.0, 2.0), 0.0, DistributionFamily::Arbitrary).unwrap();
        close(v.value, 5.0);
        let sym = DistributionFamily::Symmetric;
        close(wc_target_semivariance(&mp(0.0, 1.0), 0.5, sym).unwrap().value, 0.5);
        close(wc_target_semivariance(&mp(0.0, 1.0), -0.5, sym).unwrap().value, 1.125);
        close(wc_target_semivariance(&mp(0.0, 1.0), -2.0, sym).unwrap().value, 5.0);
    }

    #[test]
    fn symmetric_semivariance_knots() {
        let p = mp(0.0, 1.3);
        let sym = DistributionFamily::Symmetric;
        let at = |t: f64| wc_target_semivariance(&p, t, sym).unwrap().value;
        close(at(-1.3), 2.0 * 1.69);
        assert!((at(-1.3 + 1e-12) - 2.0 * 1.69).abs() < 1e-9);
        close(at(0.0), 0.5 * 1.69);
        assert!((at(1e-12) - 0.5 * 1.69).abs() < 1e-12);
    }

    #[test]
    fn constrained_examples() {
        let arb = DistributionFamily::Arbitrary;
        let sym = DistributionFamily::Symmetric;
        let lim = |l| RegretBudget::limit(l).unwrap();
        let v = wc_target_semivariance_constrained(&mp(0.0, 1.0), 0.0, lim(0.5), arb).unwrap();
        close(v.value, 1.0);
        let v = wc_target_semivariance_constrained(&mp(0.0, 1.0), 1.0, lim(1.0), arb).unwrap();
        assert_eq!(v.value, 0.0);
        let v = wc_target_semivariance_constrained(&mp(0.0, 0.4), 0.5, lim(1.0), sym).unwrap();
        close(v.value, 0.08);
        let v = wc_target_semivariance_constrained(&mp(0.0, 2.5), -0.8, lim(1.0), sym).unwrap();
        close(v.value, 5.445);
        assert_eq!(v.regime, "symmetric-budget:(b)(ii):mu+sigma-2m<t<=mu");
        let v = wc_target_semivariance_constrained(&mp(0.0, 2.5), -0.4, lim(1.0), sym).unwrap();
        close(v.value, 4.165);
        assert_eq!(v.regime, "symmetric-budget:(b)(iii):t<=mu+sigma-2m");
    }

    #[test]
    fn sigma_above_twice_m_uses_binding_budget_formula() {
        // m = 0.7, sigma = 2 > 2m. The pair [-2, 2] has E[(X+0.2)_+] = 1.1 > m,
        // so the unconstrained 2.42 is not attainable; the binding four-atom
        // distribution gives 2 + 2*0.7*0.2 - 0.02.
        let v = wc_target_semivariance_constrained(
            &mp(0.0, 2.0),
            -0.2,
            RegretBudget::limit(0.5).unwrap(),
            DistributionFamily::Symmetric,
        )
        .unwrap();
        close(v.value, 2.26);
        assert_eq!(v.regime, "symmetric-budget:(c):t<=mu");
    }

    #[test]
    fn empty_sets_are_errors() {
        let r = wc_target_semivariance_constrained(
            &mp(0.0, 1.0),
            1.0,
            RegretBudget::limit(0.5).unwrap(),
            DistributionFamily::Arbitrary,
        );
        assert_eq!(r, Err(WorstCaseError::EmptyUncertaintySet));
        let r = wc_target_semivariance_constrained(
            &mp(1.0, 2.0),
            2.0,
            RegretBudget::limit(1.0).unwrap(),
            DistributionFamily::NonNegative,
        );
        assert_eq!(r, Err(WorstCaseError::EmptyUncertaintySet));
    }

    #[test]
    fn nonempty_examples() {
        let lim = |l| RegretBudget::limit(l).unwrap();
        assert!(set_nonempty(&mp(1.0, 0.5), 2.0, lim(1.0), DistributionFamily::NonNegative).unwrap());
        assert!(!set_nonempty(&mp(1.0, 2.0), 2.0, lim(1.0), DistributionFamily::NonNegative).unwrap());
        // [-1, 1] with equal masses lies below t = 1 and has E[(X-1)_-] = 1.
        assert!(set_nonempty(&mp(0.0, 1.0), 1.0, lim(1.0), DistributionFamily::Symmetric).unwrap());
        assert!(!set_nonempty(&mp(0.0, 1.5), 1.0, lim(1.0), DistributionFamily::Symmetric).unwrap());
        assert!(set_nonempty(&mp(0.0, 9.0), 1.0, lim(1.0), DistributionFamily::Arbitrary).unwrap());
        assert!(!set_nonempty(&mp(0.0, 1.0), 1.0, lim(0.9), DistributionFamily::Arbitrary).unwrap());
    }

    #[test]
    fn complement_examples() {
        let b = reflect_complement_bounds(&mp(0.0, 1.0), 1.0, DistributionFamily::Arbitrary).unwrap();
        close(b.sup_minus2, 2.0);
        let b = reflect_complement_bounds(&mp(0.0, 1.0), 0.0, DistributionFamily::Arbitrary).unwrap();
        close(b.inf_plus2, 0.0);
        // The lower tail below t = -0.5 mirrors the upper tail above 0.5.
        let b = reflect_complement_bounds(&mp(0.0, 1.0), -0.5, DistributionFamily::Symmetric).unwrap();
        close(b.sup_minus2, 0.5);
        let b = reflect_complement_bounds(&mp(0.0, 1.0), 0.5, DistributionFamily::Symmetric).unwrap();
        close(b.sup_minus2, 1.125);
        assert!(reflect_complement_bounds(&mp(1.0, 1.0), 0.0, DistributionFamily::NonNegative).is_err());
    }
}
