//! The two-parameter synthetic benchmark: a smooth response of a correlated
//! bimodal Gaussian mixture.
//!
//! `x = dx / 10` with `dx ~ 0.5 N((1, 1), S1) + 0.5 N((-1, -1), S2)`,
//! `S1 = [[1, 0.4], [0.4, 1]]`, `S2 = [[1, -0.3], [-0.3, 1]]`, and
//! `y(x) = exp(x1) + 0.1 cos(x1) sin(x2)`.

use crate::density::{ComponentSpec, GaussianMixture, MixtureSpec};

/// Unscaled mixture for `dx`.
pub fn offset_mixture_spec() -> MixtureSpec {
    MixtureSpec {
        dimension: 2,
        components: vec![
            ComponentSpec {
                weight: 0.5,
                mean: vec![1.0, 1.0],
                covariance: vec![1.0, 0.4, 0.4, 1.0],
            },
            ComponentSpec {
                weight: 0.5,
                mean: vec![-1.0, -1.0],
                covariance: vec![1.0, -0.3, -0.3, 1.0],
            },
        ],
    }
}

/// Density of `x = dx / 10`.
pub fn density() -> GaussianMixture {
    GaussianMixture::new(&offset_mixture_spec())
        .and_then(|g| g.affine(&[0.0, 0.0], 0.1))
        .expect("fixture parameters are valid")
}

pub fn response(x: &[f64]) -> f64 {
    x[0].exp() + 0.1 * x[0].cos() * x[1].sin()
}

/// `E[y]` in closed form. For a Gaussian component,
/// `E[exp(x1)] = exp(mu1 + S11 / 2)` and
/// `E[sin(u . x)] = sin(u . mu) exp(-u' S u / 2)`, with
/// `cos(a) sin(b) = (sin(a + b) - sin(a - b)) / 2`.
pub fn exact_mean(density: &GaussianMixture) -> f64 {
    let spec = density.to_spec();
    spec.components
        .iter()
        .map(|c| {
            let (m1, m2) = (c.mean[0], c.mean[1]);
            let (s11, s12, s22) = (c.covariance[0], c.covariance[1], c.covariance[3]);
            let exp_term = (m1 + 0.5 * s11).exp();
            let sin_plus = (m1 + m2).sin() * (-0.5 * (s11 + 2.0 * s12 + s22)).exp();
            let sin_minus = (m2 - m1).sin() * (-0.5 * (s11 - 2.0 * s12 + s22)).exp();
            c.weight * (exp_term + 0.05 * (sin_plus + sin_minus))
        })
        .sum()
}
