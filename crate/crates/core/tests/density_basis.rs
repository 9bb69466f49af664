use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use ngcolloc::density::{ComponentSpec, MixtureSpec};
use ngcolloc::{synthetic, BasisSet, GaussianMixture, MultiIndexSet};
use proptest::prelude::*;

/// A random SPD matrix `L L' + 0.1 I` in row-major order.
fn spd(d: usize, entries: &[f64]) -> Vec<f64> {
    let l = DMatrix::from_fn(d, d, |i, j| if j <= i { entries[(i * d + j) % entries.len()] } else { 0.0 });
    let s = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    s.transpose().as_slice().to_vec()
}

fn mixture_strategy() -> impl Strategy<Value = MixtureSpec> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), k),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d * d), k),
        )
            .prop_map(move |(w, means, covs)| {
                let total: f64 = w.iter().sum();
                let mut comps: Vec<ComponentSpec> = w
                    .iter()
                    .zip(means)
                    .zip(covs)
                    .map(|((w, mean), c)| ComponentSpec {
                        weight: w / total,
                        mean,
                        covariance: spd(d, &c),
                    })
                    .collect();
                // Exact unit sum for the validator.
                let rest: f64 = comps[1..].iter().map(|c| c.weight).sum();
                comps[0].weight = 1.0 - rest;
                MixtureSpec {
                    dimension: d,
                    components: comps,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn moments_are_linear_in_mixture_weights(spec in mixture_strategy(), order in 0u32..=5) {
        let g = GaussianMixture::new(&spec).unwrap();
        let parts: Vec<GaussianMixture> = spec
            .components
            .iter()
            .map(|c| GaussianMixture::gaussian(c.mean.clone(), c.covariance.clone()).unwrap())
            .collect();
        for alpha in MultiIndexSet::new(spec.dimension, order).unwrap().iter() {
            let whole = g.moment(alpha).unwrap();
            let sum: f64 = spec.components.iter().zip(&parts).map(|(c, p)| c.weight * p.moment(alpha).unwrap()).sum();
            prop_assert!((whole - sum).abs() <= 1e-12 * (1.0 + sum.abs()), "{alpha:?}: {whole} vs {sum}");
        }
    }

    #[test]
    fn symmetric_mixtures_have_vanishing_odd_moments(spec in mixture_strategy()) {
        let mut comps = Vec::new();
        for c in &spec.components {
            comps.push(ComponentSpec { weight: c.weight / 2.0, mean: c.mean.clone(), covariance: c.covariance.clone() });
            comps.push(ComponentSpec { weight: c.weight / 2.0, mean: c.mean.iter().map(|m| -m).collect(), covariance: c.covariance.clone() });
        }
        let rest: f64 = comps[1..].iter().map(|c| c.weight).sum();
        comps[0].weight = 1.0 - rest;
        let g = GaussianMixture::new(&MixtureSpec { dimension: spec.dimension, components: comps }).unwrap();
        let table = g.moment_table(7).unwrap();
        for (alpha, v) in table.indices().iter().zip(table.values()) {
            if alpha.iter().sum::<u32>() % 2 == 1 {
                prop_assert!(v.abs() < 1e-12, "{alpha:?}: {v}");
            }
        }
    }

    #[test]
    fn random_mixture_bases_are_orthonormal(spec in mixture_strategy(), order in 1u32..=3) {
        let g = GaussianMixture::new(&spec).unwrap();
        let b = BasisSet::for_density(&g, order).unwrap();
        prop_assert!(b.orthonormality_error(order).unwrap() <= 1e-8);
        let (means, _) = b.statistics(order).unwrap();
        prop_assert!((means[0] - 1.0).abs() < 1e-12);
        prop_assert!(means.iter().skip(1).all(|m| m.abs() < 1e-8));
        let r = b.coeffs();
        for j in 0..b.len() {
            prop_assert!(r[(j, j)] > 0.0);
            for i in j + 1..b.len() {
                prop_assert_eq!(r[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn first_basis_function_is_one(spec in mixture_strategy(), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let g = GaussianMixture::new(&spec).unwrap();
        let b = BasisSet::for_density(&g, 2).unwrap();
        let psi = b.eval(&x[..spec.dimension], 2).unwrap();
        prop_assert_eq!(psi[0], 1.0);
    }

    #[test]
    fn pdf_is_nonnegative(spec in mixture_strategy(), x in prop::collection::vec(-50.0f64..50.0, 3)) {
        let g = GaussianMixture::new(&spec).unwrap();
        prop_assert!(g.pdf(&x[..spec.dimension]).unwrap() >= 0.0);
    }
}

#[test]
fn fixture_moment_21_matches_monte_carlo() {
    let g = synthetic::density();
    let exact = g.moment(&[2, 1]).unwrap();
    let (est, se) = g.mc_moment(&[2, 1], 1_000_000, 2024).unwrap();
    assert!((exact - est).abs() <= 4.0 * se, "{exact} vs {est} +- {se}");
}

#[test]
fn table_sizes() {
    let g = synthetic::density();
    let t0 = g.moment_table(0).unwrap();
    assert_eq!(t0.len(), 1);
    assert_eq!(t0.values(), &[1.0]);
    assert_eq!(g.moment_table(2).unwrap().len(), 6);
    assert_eq!(MultiIndexSet::new(6, 2).unwrap().len(), 28);
}

#[test]
fn fixture_pdf_integrates_to_one() {
    // Midpoint rule on a box holding all but a negligible tail.
    let g = synthetic::density();
    let (lo, hi, n) = (-0.75, 0.75, 600);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += g.pdf(&x).unwrap();
        }
    }
    assert_abs_diff_eq!(total * h * h, 1.0, epsilon = 1e-6);
}

#[test]
fn sampling_is_thread_safe_and_deterministic() {
    let g = synthetic::density();
    let reference = g.sample(70_000, 3).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| g.sample(70_000, 3).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), reference);
        }
    });
    // A prefix does not depend on how many rows were requested.
    let short = g.sample(40_000, 3).unwrap();
    assert_eq!(short.rows(0, 40_000), reference.rows(0, 40_000));
}

#[test]
fn fixture_p3_gram_is_identity() {
    let b = BasisSet::for_density(&synthetic::density(), 3).unwrap();
    let (_, gram) = b.statistics(3).unwrap();
    let n = gram.nrows();
    assert!((gram - DMatrix::<f64>::identity(n, n)).norm() <= 1e-8);
}

#[test]
fn gram_schmidt_is_bit_reproducible() {
    let g = synthetic::density();
    let a = BasisSet::for_density(&g, 4).unwrap();
    let b = BasisSet::for_density(&g, 4).unwrap();
    assert_eq!(a.coeffs(), b.coeffs());
}

#[test]
fn second_pass_is_stable() {
    let b = BasisSet::for_density(&synthetic::density(), 4).unwrap();
    let again = b.reorthogonalized();
    let rel = (&again - b.coeffs()).norm() / b.coeffs().norm();
    assert!(rel <= 1e-10, "relative change {rel:e}");
}

#[test]
fn truncation_matches_direct_build() {
    let g = synthetic::density();
    let wide = BasisSet::for_density(&g, 4).unwrap();
    let narrow = BasisSet::for_density(&g, 2).unwrap();
    assert_eq!(wide.truncated(2).unwrap().coeffs(), narrow.coeffs());
    assert!(wide.truncated(5).is_err());
}

#[test]
fn evaluation_is_linear_in_coefficients() {
    let g = synthetic::density();
    let b = BasisSet::for_density(&g, 2).unwrap();
    let mut file = b.to_file();
    let x = [0.03, -0.12];
    let before = b.eval(&x, 2).unwrap();
    for v in file.coeffs[4].iter_mut() {
        *v *= 3.0;
    }
    // The scaled basis is no longer orthonormal, so compare by hand.
    let idx = b.indices();
    let mono: Vec<f64> = idx.iter().map(|a| x[0].powi(a[0] as i32) * x[1].powi(a[1] as i32)).collect();
    let scaled: f64 = file.coeffs[4].iter().zip(&mono).map(|(c, m)| c * m).sum();
    assert_abs_diff_eq!(scaled, 3.0 * before[4], epsilon = 1e-12 * before[4].abs().max(1.0));
}
