use quantile_closure::multiplicity::{bonferroni, holm};
use quantile_closure::rankscore::{score_state, statistic_standard, WeightingKind};
use quantile_closure::simulation::{generate, run_monte_carlo, wald_test, Dgp, Method, Scenario};
use quantile_closure::{validate, HypothesisSubset, QuantileSpec};

fn scenario(dgp: Dgp, beta: f64, taus: &[f64], replications: usize, seed: u64) -> Scenario {
    Scenario {
        name: "test".into(),
        dgp,
        beta,
        gamma: 0.5,
        n: 100,
        rho: 0.3,
        taus: taus.to_vec(),
        replications,
        seed,
        alpha: 0.05,
        methods: Method::default_set(),
    }
}

const FIVE: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Pooled standardized errors `(y - 0.5 - beta x - gamma z) / scale(x)`.
fn pooled_errors(s: &Scenario, reps: usize, scale: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..reps {
        let d = generate(s, r);
        for i in 0..d.n() {
            let mean = 0.5 + s.beta * d.x[i] + s.gamma * d.z[(i, 1)];
            out.push((d.y[i] - mean) / scale(d.x[i]));
        }
    }
    out
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn null_normal_moments() {
    let s = scenario(Dgp::NullNormal, 0.0, &FIVE, 1, 1);
    let e = pooled_errors(&s, 100, |_| 1.0);
    let (m, v) = mean_var(&e);
    assert!(m.abs() < 4.0 / (e.len() as f64).sqrt(), "mean {m}");
    assert!((v - 1.0).abs() < 0.05, "variance {v}");
}

#[test]
fn scaled_t5_has_unit_variance_after_scaling() {
    let s = scenario(Dgp::ScaledT5, 0.6, &FIVE, 1, 2);
    let e = pooled_errors(&s, 1000, |x| 1.0 + x.abs());
    let (m, v) = mean_var(&e);
    assert!(m.abs() < 0.01, "mean {m}");
    assert!((v - 1.0).abs() < 0.05, "variance {v}");
}

#[test]
fn skew_normal_standardized_moments() {
    let s = scenario(Dgp::SkewNormal, 0.6, &FIVE, 1, 3);
    let delta = 2.2 / (1.0f64 + 2.2 * 2.2).sqrt();
    let e: Vec<f64> = {
        let mut out = Vec::new();
        for r in 0..1000 {
            let d = generate(&s, r);
            for i in 0..d.n() {
                let loc = 0.5 + s.beta * d.x[i] + s.gamma * d.z[(i, 1)] - 1.453;
                out.push((d.y[i] - loc) / (3.0 + d.x[i].abs()).sqrt());
            }
        }
        out
    };
    let (m, v) = mean_var(&e);
    let mean = delta * (2.0 / std::f64::consts::PI).sqrt();
    assert!((m - mean).abs() < 0.01, "mean {m} vs {mean}");
    assert!((v - (1.0 - mean * mean)).abs() < 0.02, "variance {v}");
    // standardized third moment of the skew normal
    let skew: f64 = e.iter().map(|x| (x - m).powi(3)).sum::<f64>() / e.len() as f64 / v.powf(1.5);
    let expected = (4.0 - std::f64::consts::PI) / 2.0 * mean.powi(3) / (1.0 - mean * mean).powf(1.5);
    assert!((skew - expected).abs() < 0.05, "skewness {skew} vs {expected}");
}

#[test]
fn hetero_normal_variance_is_one_plus_abs_x() {
    let s = scenario(Dgp::HeteroNormal, 0.6, &FIVE, 1, 4);
    let e = pooled_errors(&s, 1000, |x| (1.0 + x.abs()).sqrt());
    let (m, v) = mean_var(&e);
    assert!(m.abs() < 0.01);
    assert!((v - 1.0).abs() < 0.02, "variance {v}");
}

#[test]
fn covariates_have_requested_correlation() {
    let s = scenario(Dgp::NullNormal, 0.0, &FIVE, 1, 5);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for r in 0..500 {
        let d = generate(&s, r);
        for i in 0..d.n() {
            let (x, z) = (d.x[i], d.z[(i, 1)]);
            sxy += x * z;
            sxx += x * x;
            syy += z * z;
        }
    }
    let corr = sxy / (sxx * syy).sqrt();
    assert!((corr - 0.3).abs() < 0.01, "corr {corr}");
}

#[test]
fn generation_is_deterministic() {
    let s = scenario(Dgp::SkewNormal, 0.6, &FIVE, 1, 6);
    assert_eq!(generate(&s, 17), generate(&s, 17));
    assert_ne!(generate(&s, 17).y, generate(&s, 18).y);
    let mut other = s.clone();
    other.seed = 7;
    assert_ne!(generate(&s, 17).y, generate(&other, 17).y);
}

#[test]
fn monte_carlo_is_reproducible() {
    let s = scenario(Dgp::HeteroNormal, 0.3, &[0.25, 0.5, 0.75], 40, 8);
    let a = run_monte_carlo(&s, &s.methods).unwrap();
    let b = run_monte_carlo(&s, &s.methods).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.diagnostics.failed_replications, 0);
    for m in &a.methods {
        for r in m.hypotheses.iter().chain(std::iter::once(&m.familywise)) {
            assert!((0.0..=1.0).contains(&r.rate));
            assert!((r.std_error - (r.rate * (1.0 - r.rate) / 40.0).sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn holm_rejections_contain_bonferroni() {
    let s = scenario(Dgp::ScaledT5, 0.4, &FIVE, 1, 9);
    for r in 0..100 {
        let problem = validate(generate(&s, r), QuantileSpec::new(FIVE.to_vec())).unwrap();
        let state = score_state(&problem).unwrap();
        let raw: Vec<f64> =
            (0..5).map(|j| statistic_standard(&state, &HypothesisSubset::singleton(j)).unwrap().p_value).collect();
        let (h, b) = (holm(&raw), bonferroni(&raw));
        for j in 0..5 {
            assert!(!(b[j] <= 0.05) || h[j] <= 0.05);
        }
    }
}

#[test]
fn wald_is_deterministic() {
    let s = scenario(Dgp::NullNormal, 0.0, &FIVE, 1, 10);
    let problem = validate(generate(&s, 0), QuantileSpec::new(FIVE.to_vec())).unwrap();
    let a = wald_test(&problem).unwrap();
    assert_eq!(a, wald_test(&problem).unwrap());
    let full = HypothesisSubset::full(5);
    assert_eq!(a.test(&full).unwrap(), wald_test(&problem).unwrap().test(&full).unwrap());
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
fn ks_uniform(p: &mut [f64]) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

#[test]
fn wald_single_level_is_calibrated_in_large_samples() {
    let mut s = scenario(Dgp::NullNormal, 0.0, &[0.5], 1, 11);
    s.n = 2000;
    let mut p: Vec<f64> = (0..1000)
        .map(|r| {
            let problem = validate(generate(&s, r), QuantileSpec::new(vec![0.5])).unwrap();
            wald_test(&problem).unwrap().test(&HypothesisSubset::full(1)).unwrap().1
        })
        .collect();
    let d = ks_uniform(&mut p);
    assert!(d < 1.358 / 1000f64.sqrt(), "KS distance {d}");
}

#[test]
fn single_level_rank_score_tests_hold_size_under_homoscedastic_null() {
    let s = scenario(Dgp::NullNormal, 0.0, &FIVE, 1000, 12);
    let report = run_monte_carlo(&s, &[Method::Raw]).unwrap();
    for (j, r) in report.methods[0].hypotheses.iter().enumerate() {
        assert!((0.0365..=0.0635).contains(&r.rate), "level {}: {}", FIVE[j], r.rate);
    }
}

/// Large-sample size of the single-level test when the error scale `s(x)`
/// depends on `|x|`, which the nuisance-only null model cannot absorb:
/// `Var(S) / (V tau (1 - tau)) = E[x^2 p(1 - p)] / (E[x^2] tau (1 - tau))`
/// with `p(x) = G(q / s(x))` and `q` the marginal tau-quantile.
fn predicted_size(cdf: &dyn Fn(f64) -> f64, scale: &dyn Fn(f64) -> f64, tau: f64) -> f64 {
    let grid: Vec<(f64, f64)> = (0..=8000)
        .map(|i| {
            let x = -10.0 + i as f64 * 20.0 / 8000.0;
            (x, (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * 20.0 / 8000.0)
        })
        .collect();
    let marginal = |q: f64| grid.iter().map(|&(x, w)| w * cdf(q / scale(x))).sum::<f64>();
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let num: f64 = grid.iter().map(|&(x, w)| {
        let p = cdf(q / scale(x));
        w * x * x * p * (1.0 - p)
    }).sum();
    let den: f64 = grid.iter().map(|&(x, w)| w * x * x).sum::<f64>() * tau * (1.0 - tau);
    statrs::distribution::ContinuousCDF::sf(&statrs::distribution::ChiSquared::new(1.0).unwrap(), 3.841458820694124 / (num / den))
}

#[test]
fn heteroscedastic_null_size_follows_score_variance_ratio() {
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let t5 = StudentsT::new(0.0, 1.0, 5.0).unwrap();
    let normal_cdf = move |v: f64| normal.cdf(v);
    let t5_cdf = move |v: f64| t5.cdf(v);
    let hetero_scale = |x: f64| (1.0 + x.abs()).sqrt();
    let t5_scale = |x: f64| (1.0 + x.abs()) * 0.6f64.sqrt();
    let taus = [0.1, 0.5, 0.9];
    let cases: [(Dgp, &dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64, u64); 2] =
        [(Dgp::HeteroNormal, &normal_cdf, &hetero_scale, 13), (Dgp::ScaledT5, &t5_cdf, &t5_scale, 14)];
    for (dgp, cdf, scale, seed) in cases {
        let report = run_monte_carlo(&scenario(dgp, 0.0, &taus, 1000, seed), &[Method::Raw]).unwrap();
        for (j, r) in report.methods[0].hypotheses.iter().enumerate() {
            let predicted = predicted_size(cdf, scale, taus[j]);
            assert!((r.rate - predicted).abs() <= 0.03, "{dgp:?} level {}: {} vs {predicted}", taus[j], r.rate);
            if taus[j] == 0.5 {
                assert!((0.0365..=0.0635).contains(&r.rate), "{dgp:?} median: {}", r.rate);
            }
        }
    }
}

#[test]
fn strong_signal_saturates_closed_testing() {
    let s = scenario(Dgp::NullNormal, 2.0, &FIVE, 200, 16);
    let report = run_monte_carlo(&s, &[Method::ClosedTesting(WeightingKind::Identity)]).unwrap();
    for r in &report.methods[0].hypotheses {
        assert!(r.rate >= 0.99, "power {}", r.rate);
    }
}

#[test]
fn closed_testing_power_grows_with_effect() {
    let deciles: Vec<f64> = (1..=9).map(|j| j as f64 / 10.0).collect();
    let method = [Method::ClosedTesting(WeightingKind::Identity)];
    let runs: Vec<_> = [0.4, 0.6, 0.8, 1.2]
        .iter()
        .map(|&beta| run_monte_carlo(&scenario(Dgp::HeteroNormal, beta, &deciles, 500, 17), &method).unwrap())
        .collect();
    for w in runs.windows(2) {
        for j in 0..9 {
            let (a, b) = (&w[0].methods[0].hypotheses[j], &w[1].methods[0].hypotheses[j]);
            let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            assert!(b.rate >= a.rate - 2.0 * se, "level {}: {} then {}", deciles[j], a.rate, b.rate);
        }
    }
}

#[test]
fn scenario_files_round_trip_and_reject_bad_input() {
    for name in Scenario::bundled_names() {
        let s = Scenario::bundled(name).unwrap();
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }
    let good = Scenario::bundled("null_calibration").unwrap().to_text();
    assert!(Scenario::parse(&good.replace("null_normal", "cauchy")).is_err());
    assert!(Scenario::parse(&good.replace("rho = 0.3", "rho = 1.5")).is_err());
    assert!(Scenario::parse(&good.replace("n = 100", "n = 5")).is_err());
    assert!(Scenario::parse(&good.replace("n = 100", "")).is_err());
    assert!(Scenario::parse(&format!("{good}\ncolour = blue\n")).is_err());
    assert!(Scenario::parse(&good.replace("holm", "sidak")).is_err());
    let err = Scenario::parse(&good.replace("null_normal", "cauchy")).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}
