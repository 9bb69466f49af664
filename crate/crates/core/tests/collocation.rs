use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use ngcolloc::collocation::{self, certificate, fit, fit_columns, ks_statistic, PdfEstimate};
use ngcolloc::density::mean_and_standard_error;
use ngcolloc::quadrature::build_rule;
use ngcolloc::{synthetic, BasisSet, GaussianMixture, QuadratureRule, SolverConfig, SurrogateModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

struct Fixture {
    basis: BasisSet,
    rules: Vec<QuadratureRule>,
}

/// Order-6 basis and rules for p = 1..3 on the synthetic density.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let g = synthetic::density();
        let basis = BasisSet::for_density(&g, 6).unwrap();
        let rules = (1..=3)
            .map(|p| build_rule(&basis, &g, p, &SolverConfig::default()).unwrap())
            .collect();
        Fixture { basis, rules }
    })
}

fn rule(p: u32) -> &'static QuadratureRule {
    &fixture().rules[p as usize - 1]
}

fn outputs(rule: &QuadratureRule, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..rule.len()).map(|k| f(&rule.node(k))).collect()
}

#[test]
fn p2_mean_is_close_to_the_exact_mean() {
    let g = synthetic::density();
    let r = rule(2);
    let model = fit(&fixture().basis, r, &outputs(r, synthetic::response)).unwrap();
    let (mean, _) = model.mean_variance();
    let exact = synthetic::exact_mean(&g);

    // Independent check of the closed form.
    let xs = g.sample(200_000, 17).unwrap();
    let ys: Vec<f64> = (0..xs.nrows()).map(|i| synthetic::response(&[xs[(i, 0)], xs[(i, 1)]])).collect();
    let (mc, se) = mean_and_standard_error(&ys);
    assert!((mc - exact).abs() <= 5.0 * se, "closed form {exact} vs MC {mc} +- {se}");
    assert!((mean - exact).abs() <= 1e-3 + 5.0 * se, "{mean} vs {exact}");
}

#[test]
fn p3_variance_agrees_with_sampling_the_surrogate() {
    let g = synthetic::density();
    let r = rule(3);
    let model = fit(&fixture().basis, r, &outputs(r, synthetic::response)).unwrap();
    let (mean, var) = model.mean_variance();
    let ys = model.sample_outputs(&g, 1_000_000, 5).unwrap();
    let (mc_mean, se) = mean_and_standard_error(&ys);
    let mc_var = ys.iter().map(|y| (y - mc_mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
    assert!((var - mc_var).abs() <= 0.01 * var, "{var} vs {mc_var}");
    assert!((mean - mc_mean).abs() <= 5.0 * se, "{mean} vs {mc_mean} +- {se}");
}

#[test]
fn linear_surrogate_of_a_gaussian_passes_ks() {
    let g = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap();
    let basis = BasisSet::for_density(&g, 2).unwrap();
    let model = SurrogateModel::new(basis, vec![0.0, 1.0, 0.0]).unwrap();
    let ys = model.sample_outputs(&g, 1_000_000, 11).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = ks_statistic(&ys, |y| normal.cdf(y));
    assert!(d <= 0.01, "KS statistic {d}");
}

#[test]
fn polynomials_are_recovered_exactly() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for p in 1..=3 {
        let r = rule(p);
        let n = f.basis.count(p);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys = outputs(r, |x| f.basis.eval(x, p).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum());
        let model = fit(&f.basis, r, &ys).unwrap();
        assert_eq!(model.coeffs().len(), n);
        let err = model.coeffs().iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-6, "p = {p}: coefficient error {err:e}");
    }
}

#[test]
fn projection_is_idempotent() {
    let f = fixture();
    let r = rule(2);
    let first = fit(&f.basis, r, &outputs(r, synthetic::response)).unwrap();
    let again = fit(&f.basis, r, &outputs(r, |x| first.evaluate(x).unwrap())).unwrap();
    for (a, b) in first.coeffs().iter().zip(again.coeffs()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-7);
    }
}

#[test]
fn columns_are_fitted_independently() {
    let f = fixture();
    let r = rule(2);
    let a = outputs(r, synthetic::response);
    let b = outputs(r, |x| x[0] * x[1]);
    let mut m = DMatrix::zeros(r.len(), 2);
    m.column_mut(0).copy_from_slice(&a);
    m.column_mut(1).copy_from_slice(&b);
    let both = fit_columns(&f.basis, r, &["a".into(), "b".into()], &m).unwrap();
    assert_eq!(both[0].name(), "a");
    assert_eq!(both[0].coeffs(), fit(&f.basis, r, &a).unwrap().coeffs());
    assert_eq!(both[1].coeffs(), fit(&f.basis, r, &b).unwrap().coeffs());
}

#[test]
fn mismatched_and_non_finite_outputs_are_rejected() {
    let f = fixture();
    let r = rule(2);
    assert!(fit(&f.basis, r, &vec![1.0; r.len() + 1]).is_err());
    let mut ys = vec![1.0; r.len()];
    ys[2] = f64::NAN;
    assert!(fit(&f.basis, r, &ys).is_err());
    let narrow = BasisSet::for_density(&synthetic::density(), 1).unwrap();
    assert!(fit(&narrow, r, &vec![1.0; r.len()]).is_err());
}

#[test]
fn certificates_hold_for_fixture_rules() {
    let g = synthetic::density();
    for p in 1..=2 {
        let r = rule(p);
        let moments = g.moment_table(4 * p).unwrap();
        let basis = BasisSet::for_density(&g, 2 * p).unwrap();
        let c = certificate(&basis, r, &moments).unwrap();
        assert!(c.holds(), "p = {p}: {c:?}");
        assert!(c.t >= 1.0);
        assert!(certificate(&basis, r, &g.moment_table(4 * p - 1).unwrap()).is_err());
    }
}

#[test]
fn surrogates_round_trip_through_json() {
    let f = fixture();
    let r = rule(2);
    let model = fit(&f.basis, r, &outputs(r, synthetic::response)).unwrap().with_name("y");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    collocation::save(std::slice::from_ref(&model), &path).unwrap();
    let back = collocation::load(&path).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].coeffs(), model.coeffs());
    assert_eq!(back[0].rule(), model.rule());
    let x = [0.05, -0.02];
    assert_eq!(back[0].evaluate(&x).unwrap(), model.evaluate(&x).unwrap());
}

#[test]
fn pdf_estimate_is_normalized() {
    let g = synthetic::density();
    let f = fixture();
    let r = rule(2);
    let model = fit(&f.basis, r, &outputs(r, synthetic::response)).unwrap();
    let est = model.pdf_estimate(&g, 100_000, 3, 60).unwrap();
    assert_abs_diff_eq!(est.histogram_integral(), 1.0, epsilon = 1e-12);
    let h = est.grid[1] - est.grid[0];
    let kde_mass: f64 = est.kde.iter().sum::<f64>() * h;
    assert_abs_diff_eq!(kde_mass, 1.0, epsilon = 1e-2);
    assert!(model.pdf_estimate(&g, 50, 3, 60).is_err());
    assert!(model.pdf_estimate(&g, 1000, 3, 0).is_err());
}

#[test]
fn constant_samples_give_an_atom() {
    let est = PdfEstimate::from_samples(&[2.5; 500], 10);
    assert!(est.degenerate);
    assert_abs_diff_eq!(est.histogram_integral(), 1.0, epsilon = 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_variance_match_sampling(c in prop::collection::vec(-1.0f64..1.0, 6), seed in 0u64..1000) {
        let g = synthetic::density();
        let basis = BasisSet::for_density(&g, 2).unwrap();
        let model = SurrogateModel::new(basis, c.clone()).unwrap();
        let (mean, var) = model.mean_variance();
        prop_assert!((mean - c[0]).abs() < 1e-15);
        prop_assert!((var - c[1..].iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        let ys = model.sample_outputs(&g, 100_000, seed).unwrap();
        let (mc, se) = mean_and_standard_error(&ys);
        prop_assert!((mc - mean).abs() <= 5.0 * se.max(1e-12), "{mean} vs {mc} +- {se}");
    }

    #[test]
    fn fit_is_linear_in_outputs(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let f = fixture();
        let r = rule(2);
        let u = outputs(r, synthetic::response);
        let v = outputs(r, |x| (x[0] - x[1]).sin());
        let combo: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let fu = fit(&f.basis, r, &u).unwrap();
        let fv = fit(&f.basis, r, &v).unwrap();
        let fc = fit(&f.basis, r, &combo).unwrap();
        for i in 0..fc.coeffs().len() {
            let want = a * fu.coeffs()[i] + b * fv.coeffs()[i];
            prop_assert!((fc.coeffs()[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}
