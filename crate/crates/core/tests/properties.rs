use proptest::prelude::*;

use wctsv::frontier::{classical_mv, frontier_params, m_tsv_s_portfolio, min_variance_portfolio, tsv_portfolio};
use wctsv::oracle::DiscreteDistribution;
use wctsv::simplex::{
    check_regret_feasibility, eep_objective, eep_tsv_portfolio, eep_tsv_s_portfolio, project_to_simplex, EepModel,
    SimplexSolverConfig,
};
use wctsv::worst_case::{
    reflect_complement_bounds, set_nonempty, wc_expected_regret, wc_target_semivariance,
    wc_target_semivariance_constrained, DistributionFamily, MomentProfile, RegretBudget,
};
use wctsv::MarketModel;

use DistributionFamily::{Arbitrary, NonNegative, Symmetric};

fn mp(mu: f64, sigma: f64) -> MomentProfile {
    MomentProfile::new(mu, sigma).unwrap()
}

fn tsv(mu: f64, sigma: f64, t: f64, fam: DistributionFamily) -> f64 {
    wc_target_semivariance(&mp(mu, sigma), t, fam).unwrap().value
}

fn ctsv(mu: f64, sigma: f64, t: f64, lambda: f64, fam: DistributionFamily) -> Option<f64> {
    wc_target_semivariance_constrained(&mp(mu, sigma), t, RegretBudget::Limit(lambda), fam).ok().map(|v| v.value)
}

fn family() -> impl Strategy<Value = DistributionFamily> {
    prop_oneof![Just(Arbitrary), Just(Symmetric)]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Random SPD matrix `A A' + 0.1 I` and a mean vector with a spread.
fn market(d: usize) -> impl Strategy<Value = MarketModel> {
    (prop::collection::vec(-1.0f64..1.0, d * d), prop::collection::vec(-0.02f64..0.02, d)).prop_map(
        move |(a, mut mu)| {
            mu[0] += 0.01;
            mu[d - 1] -= 0.01;
            let a = nalgebra::DMatrix::from_vec(d, d, a);
            let cov = &a * a.transpose() * 1e-4 + nalgebra::DMatrix::identity(d, d) * 1e-5;
            MarketModel::new((0..d).map(|i| format!("A{i}")).collect(), nalgebra::DVector::from_vec(mu), cov).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn translation_invariance(
        mu in -5.0f64..5.0, sigma in 0.05f64..4.0, t in -8.0f64..8.0,
        lambda in 0.01f64..6.0, fam in family(),
    ) {
        let shifted = t - mu;
        let a = wc_expected_regret(&mp(mu, sigma), t, fam).unwrap().value;
        let b = wc_expected_regret(&mp(0.0, sigma), shifted, fam).unwrap().value;
        prop_assert!(rel_close(a, b, 1e-12), "regret {a} vs {b}");
        prop_assert!(rel_close(tsv(mu, sigma, t, fam), tsv(0.0, sigma, shifted, fam), 1e-12));
        let budget = RegretBudget::Limit(lambda);
        prop_assert_eq!(
            set_nonempty(&mp(mu, sigma), t, budget, fam).unwrap(),
            set_nonempty(&mp(0.0, sigma), shifted, budget, fam).unwrap()
        );
        match (ctsv(mu, sigma, t, lambda, fam), ctsv(0.0, sigma, shifted, lambda, fam)) {
            (Some(a), Some(b)) => prop_assert!(rel_close(a, b, 1e-12), "{a} vs {b}"),
            (None, None) => {}
            (a, b) => prop_assert!(false, "feasibility differs: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn positive_homogeneity(
        mu in -3.0f64..3.0, sigma in 0.05f64..3.0, t in -5.0f64..5.0,
        lambda in 0.01f64..4.0, c in 0.1f64..10.0, fam in family(),
    ) {
        let scale = sigma * sigma + (mu - t).powi(2);
        let a = tsv(c * mu, c * sigma, c * t, fam);
        prop_assert!((a - c * c * tsv(mu, sigma, t, fam)).abs() <= 1e-10 * c * c * scale);
        let r1 = wc_expected_regret(&mp(c * mu, c * sigma), c * t, fam).unwrap().value;
        let r0 = wc_expected_regret(&mp(mu, sigma), t, fam).unwrap().value;
        prop_assert!((r1 - c * r0).abs() <= 1e-10 * c * scale.sqrt());
        if let (Some(a), Some(b)) = (ctsv(c * mu, c * sigma, c * t, c * lambda, fam), ctsv(mu, sigma, t, lambda, fam)) {
            prop_assert!((a - c * c * b).abs() <= 1e-10 * c * c * (scale + lambda * lambda));
        }
    }

    #[test]
    fn smaller_sets_have_smaller_worst_cases(
        mu in -3.0f64..3.0, sigma in 0.05f64..3.0, t in -5.0f64..5.0, lambda in 0.01f64..4.0,
    ) {
        let tol = 1e-12 * (sigma * sigma + (mu - t).powi(2));
        prop_assert!(tsv(mu, sigma, t, Symmetric) <= tsv(mu, sigma, t, Arbitrary) + tol);
        let p = mp(mu, sigma);
        prop_assert!(
            wc_expected_regret(&p, t, Symmetric).unwrap().value
                <= wc_expected_regret(&p, t, Arbitrary).unwrap().value + tol
        );
        if mu > 0.0 {
            prop_assert!(tsv(mu, sigma, t, NonNegative) <= tsv(mu, sigma, t, Arbitrary) + tol);
            prop_assert!(
                wc_expected_regret(&p, t, NonNegative).unwrap().value
                    <= wc_expected_regret(&p, t, Arbitrary).unwrap().value + tol
            );
        }
        for fam in [Arbitrary, Symmetric] {
            if let Some(v) = ctsv(mu, sigma, t, lambda, fam) {
                prop_assert!(v >= 0.0);
                prop_assert!(v <= tsv(mu, sigma, t, fam) + tol, "{fam}: {v}");
            }
        }
        if let (Some(s), Some(a)) = (ctsv(mu, sigma, t, lambda, Symmetric), ctsv(mu, sigma, t, lambda, Arbitrary)) {
            prop_assert!(s <= a + tol);
        }
    }

    #[test]
    fn budget_monotone_and_recovers_unconstrained(
        mu in -3.0f64..3.0, sigma in 0.05f64..3.0, t in -5.0f64..5.0,
        l1 in 0.01f64..4.0, dl in 0.0f64..4.0, fam in family(),
    ) {
        let tol = 1e-12 * (sigma * sigma + (mu - t).powi(2) + (l1 + dl).powi(2));
        if let Some(v1) = ctsv(mu, sigma, t, l1, fam) {
            let v2 = ctsv(mu, sigma, t, l1 + dl, fam).expect("larger budgets stay feasible");
            prop_assert!(v1 <= v2 + tol, "{v1} > {v2}");
        }
        let far = ctsv(mu, sigma, t, 1e6 * sigma, fam).unwrap();
        prop_assert!(rel_close(far, tsv(mu, sigma, t, fam), 1e-9));
    }

    #[test]
    fn values_are_continuous_in_the_threshold(
        mu in -2.0f64..2.0, sigma in 0.1f64..3.0, t in -5.0f64..5.0, lambda in 0.05f64..3.0, fam in family(),
    ) {
        let h = 1e-7;
        let lip = 4.0 * (sigma + (mu - t).abs() + lambda + 1.0);
        let jump = (tsv(mu, sigma, t + h, fam) - tsv(mu, sigma, t, fam)).abs();
        prop_assert!(jump <= lip * h, "unconstrained jump {jump}");
        if let (Some(a), Some(b)) = (ctsv(mu, sigma, t, lambda, fam), ctsv(mu, sigma, t + h, lambda, fam)) {
            prop_assert!((a - b).abs() <= lip * h, "constrained jump {}", (a - b).abs());
        }
    }

    #[test]
    fn symmetric_knots(mu in -2.0f64..2.0, sigma in 0.1f64..3.0, frac in 0.01f64..0.49) {
        let s2 = sigma * sigma;
        for (t, expect) in [(mu - sigma, 2.0 * s2), (mu, 0.5 * s2)] {
            for side in [-1e-9, 0.0, 1e-9] {
                prop_assert!((tsv(mu, sigma, t + side, Symmetric) - expect).abs() <= 1e-8 * (1.0 + s2));
            }
        }
        // Between the two budget branches with m < sigma <= 2m the knot sits
        // at t = mu - sigma + 2 lambda and the value is 2 m^2 = 2 (sigma - lambda)^2.
        let lambda = frac * sigma;
        let knot = mu - sigma + 2.0 * lambda;
        let expect = 2.0 * (sigma - lambda).powi(2);
        for side in [-1e-9, 0.0, 1e-9] {
            let v = ctsv(mu, sigma, knot + side, lambda, Symmetric).unwrap();
            prop_assert!((v - expect).abs() <= 1e-7 * (1.0 + s2), "{v} vs {expect}");
        }
    }

    #[test]
    fn complement_and_reflection(mu in -3.0f64..3.0, sigma in 0.05f64..3.0, t in -5.0f64..5.0, fam in family()) {
        let p = mp(mu, sigma);
        let b = reflect_complement_bounds(&p, t, fam).unwrap();
        let total = sigma * sigma + (t - mu).powi(2);
        let tol = 1e-12 * total.max(1.0);
        prop_assert!((b.sup_plus2 + b.inf_minus2 - total).abs() <= tol);
        prop_assert!((b.inf_plus2 + b.sup_minus2 - total).abs() <= tol);
        prop_assert!(b.inf_plus2 >= -tol && b.inf_plus2 <= b.sup_plus2 + tol);
        prop_assert!(b.inf_minus2 >= -tol && b.inf_minus2 <= b.sup_minus2 + tol);
        prop_assert!(b.inf_plus1 <= b.sup_plus1 + tol);
    }

    /// Any distribution in the set stays below the closed form.
    #[test]
    fn random_members_never_beat_the_closed_form(
        xs in prop::collection::vec(-4.0f64..4.0, 2..7),
        ws in prop::collection::vec(0.01f64..1.0, 7),
        t in -5.0f64..5.0,
        symmetric in any::<bool>(),
        lambda_pad in 0.0f64..2.0,
    ) {
        let raw: Vec<(f64, f64)> = if symmetric {
            // Pairs around 0.7 with a common weight per pair.
            xs.iter().zip(&ws).flat_map(|(&x, &w)| [(0.7 + x, w), (0.7 - x, w)]).collect()
        } else {
            xs.iter().zip(&ws).map(|(&x, &w)| (x, w)).collect()
        };
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let d = DiscreteDistribution::new(raw.iter().map(|&(x, w)| (x, w / total)).collect()).unwrap();
        let pm = d.partial_moments(t);
        prop_assume!(pm.variance > 1e-6);
        let fam = if symmetric { Symmetric } else { Arbitrary };
        let p = mp(pm.mean, pm.variance.sqrt());
        let tol = 1e-10 * (pm.variance + (pm.mean - t).powi(2));
        prop_assert!(pm.upm2 <= wc_target_semivariance(&p, t, fam).unwrap().value + tol);
        prop_assert!(pm.upm1 <= wc_expected_regret(&p, t, fam).unwrap().value + tol.sqrt());
        let lambda = pm.lpm1 + lambda_pad;
        if lambda > 0.0 {
            let b = RegretBudget::Limit(lambda);
            prop_assert!(set_nonempty(&p, t, b, fam).unwrap());
            let cf = wc_target_semivariance_constrained(&p, t, b, fam).unwrap().value;
            prop_assert!(pm.upm2 <= cf + tol, "member {} above closed form {cf}", pm.upm2);
        }
    }

    #[test]
    fn projection_is_idempotent_and_nearest(
        v in prop::collection::vec(-5.0f64..5.0, 1..12),
        y_raw in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let p = project_to_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let q = project_to_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        let s: f64 = y_raw[..v.len()].iter().sum();
        prop_assume!(s > 0.0);
        let y: Vec<f64> = y_raw[..v.len()].iter().map(|x| x / s).collect();
        let dist = |w: &[f64]| v.iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!(dist(&p) <= dist(&y) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frontier_outputs_lie_on_the_frontier(m in (2usize..7).prop_flat_map(market), nu in -0.02f64..0.02, t in -0.02f64..0.02) {
        let fp = frontier_params(&m).unwrap();
        prop_assert!(fp.u > 0.0 && fp.v0 > 0.0);
        prop_assert!(rel_close(fp.v0 * fp.v2 - fp.v1 * fp.v1, 1.0 / fp.u, 1e-8));
        let outs = [
            min_variance_portfolio(&fp, &m, nu),
            classical_mv(&fp, &m, nu),
            tsv_portfolio(&fp, &m, t),
            m_tsv_s_portfolio(&fp, &m, nu, t),
        ];
        for p in &outs {
            prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            let var = m.variance(&p.weights);
            prop_assert!(rel_close(var, fp.variance_at(p.expected_loss), 1e-9), "{} vs {}", var, fp.variance_at(p.expected_loss));
        }
        let mv = classical_mv(&fp, &m, nu);
        prop_assert!(mv.expected_loss <= nu + 1e-12);
        let ms = m_tsv_s_portfolio(&fp, &m, nu, t);
        prop_assert!(ms.expected_loss <= nu + 1e-12);
        if t >= nu {
            for (a, b) in ms.weights.iter().zip(&mv.weights) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn simplex_solvers_return_simplex_points(m in (2usize..6).prop_flat_map(market), t in -0.03f64..0.01, lambda in 0.01f64..0.05, seed in 0u64..1000) {
        prop_assume!(check_regret_feasibility(&m, t, lambda));
        let cfg = SimplexSolverConfig { seed, probes: 200, ..SimplexSolverConfig::default() };
        for (model, r) in [
            (EepModel::Arbitrary, eep_tsv_portfolio(&m, t, lambda, &cfg)),
            (EepModel::Symmetric, eep_tsv_s_portfolio(&m, t, lambda, &cfg)),
        ] {
            let p = r.unwrap();
            prop_assert!(p.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let obj = eep_objective(&m, &p.weights, t, lambda, model);
            prop_assert!(rel_close(p.objective, obj, 1e-12) || (p.objective - obj).abs() <= 1e-18);
            let n = m.dim();
            let bary = vec![1.0 / n as f64; n];
            prop_assert!(p.objective <= eep_objective(&m, &bary, t, lambda, model) + 1e-15);
        }
    }
}
