//! Gaussian-mixture joint densities.
//!
//! Raw moments are exact: each component uses the Gaussian recurrence
//! `m(a + e_j) = mu_j m(a) + sum_k a_k S_jk m(a - e_k)` seeded with `m(0) = 1`,
//! and the mixture moment is the weight-averaged component moment.
//!
//! Sampling uses ChaCha8 keyed by the caller's seed. Samples are produced in
//! chunks of [`SAMPLE_CHUNK`] rows; chunk `c` draws from ChaCha stream `c` of
//! that key, so the output does not depend on how many threads generate it.
//! Within a row, one uniform picks the component (inverse CDF over the
//! cumulative weights), then `d` standard normals `z` (ziggurat) give
//! `x = mu + L z` with `L` the lower Cholesky factor.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::multi_index::MultiIndexSet;

/// Rows generated per independent RNG stream.
pub const SAMPLE_CHUNK: usize = 1 << 15;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SPD_REL_TOL: f64 = 1e-10;

/// Serializable description of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub covariance: Vec<f64>,
}

/// Serializable description of a mixture, as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dimension: usize,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

/// `rho(x) = sum_i r_i N(x | mu_i, S_i)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Builds and validates a mixture. Weights must be positive and sum to
    /// one; every covariance must be symmetric positive definite.
    pub fn new(spec: &MixtureSpec) -> Result<Self> {
        let d = spec.dimension;
        if d == 0 {
            return Err(Error::input("mixture dimension must be at least 1"));
        }
        if spec.components.is_empty() {
            return Err(Error::input("mixture needs at least one component"));
        }
        let mut total = 0.0;
        let mut components = Vec::with_capacity(spec.components.len());
        for (i, c) in spec.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::input(format!(
                    "component {i}: weight {} is not in (0, 1]",
                    c.weight
                )));
            }
            if c.mean.len() != d {
                return Err(Error::input(format!(
                    "component {i}: mean has length {}, expected {d}",
                    c.mean.len()
                )));
            }
            if c.covariance.len() != d * d {
                return Err(Error::input(format!(
                    "component {i}: covariance has {} entries, expected {}",
                    c.covariance.len(),
                    d * d
                )));
            }
            if c.mean.iter().chain(&c.covariance).any(|v| !v.is_finite()) {
                return Err(Error::input(format!("component {i}: non-finite parameter")));
            }
            total += c.weight;
            let cov = DMatrix::from_row_slice(d, d, &c.covariance);
            let chol = validate_covariance(i, &cov)?;
            let log_det: f64 = 2.0 * (0..d).map(|k| chol[(k, k)].ln()).sum::<f64>();
            components.push(Component {
                weight: c.weight,
                mean: DVector::from_column_slice(&c.mean),
                covariance: cov,
                chol,
                log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            });
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::input(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { dim: d, components })
    }

    /// Single Gaussian `N(mean, covariance)`; covariance is row-major.
    pub fn gaussian(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        Self::new(&MixtureSpec {
            dimension: mean.len(),
            components: vec![ComponentSpec {
                weight: 1.0,
                mean,
                covariance,
            }],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            dimension: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: row_major(&c.covariance),
                })
                .collect(),
        }
    }

    /// Density of `offset + scale * X` where `X` follows this mixture.
    pub fn affine(&self, offset: &[f64], scale: f64) -> Result<Self> {
        Error::check_dim(self.dim, offset.len())?;
        let mut spec = self.to_spec();
        for c in &mut spec.components {
            for (m, o) in c.mean.iter_mut().zip(offset) {
                *m = o + scale * *m;
            }
            for s in &mut c.covariance {
                *s *= scale * scale;
            }
        }
        Self::new(&spec)
    }

    /// Short stable hash of the parameters, used for provenance.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"ngcolloc-density-v1");
        h.update((self.dim as u64).to_le_bytes());
        for c in &self.components {
            h.update(c.weight.to_le_bytes());
            for v in c.mean.iter().chain(row_major(&c.covariance).iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn pdf(&self, point: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, point.len())?;
        let x = DVector::from_column_slice(point);
        Ok(self
            .components
            .iter()
            .map(|c| {
                let diff = &x - &c.mean;
                let z = c
                    .chol
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor has a positive diagonal");
                c.weight * (c.log_norm - 0.5 * z.norm_squared()).exp()
            })
            .sum())
    }

    /// Draws `n` samples as the rows of an `n x d` matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let d = self.dim;
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        let threads = std::thread::available_parallelism()
            .map(|t| t.get())
            .unwrap_or(1)
            .min(chunks);
        let mut rows = vec![0.0; n * d];
        std::thread::scope(|scope| {
            let mut work: Vec<(usize, &mut [f64])> =
                rows.chunks_mut(SAMPLE_CHUNK * d).enumerate().collect();
            let per = chunks.div_ceil(threads);
            while !work.is_empty() {
                let take = per.min(work.len());
                let batch: Vec<_> = work.drain(..take).collect();
                scope.spawn(move || {
                    for (c, buf) in batch {
                        self.fill_chunk(seed, c as u64, buf);
                    }
                });
            }
        });
        Ok(DMatrix::from_row_slice(n, d, &rows))
    }

    fn fill_chunk(&self, seed: u64, chunk: u64, buf: &mut [f64]) {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let mut z = DVector::zeros(d);
        for row in buf.chunks_mut(d) {
            let c = self.pick(rng.random::<f64>());
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &c.mean + &c.chol * &z;
            row.copy_from_slice(x.as_slice());
        }
    }

    fn pick(&self, u: f64) -> &Component {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("at least one component")
    }

    /// Exact raw moment `E[x^alpha]`.
    pub fn moment(&self, alpha: &[u32]) -> Result<f64> {
        Error::check_dim(self.dim, alpha.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * component_moment(&c.mean, &c.covariance, alpha))
            .sum())
    }

    /// All raw moments up to total order `max_order`.
    pub fn moment_table(&self, max_order: u32) -> Result<MomentTable> {
        let indices = MultiIndexSet::new(self.dim, max_order)?;
        let mut values = vec![0.0; indices.len()];
        let mut comp = vec![0.0; indices.len()];
        for c in &self.components {
            component_table(&indices, &c.mean, &c.covariance, &mut comp);
            for (v, m) in values.iter_mut().zip(&comp) {
                *v += c.weight * m;
            }
        }
        values[0] = 1.0;
        Ok(MomentTable { indices, values })
    }

    /// Monte Carlo estimate of `E[x^alpha]` with its standard error.
    pub fn mc_moment(&self, alpha: &[u32], n: usize, seed: u64) -> Result<(f64, f64)> {
        Ok(self.mc_moments(&[alpha.to_vec()], n, seed)?[0])
    }

    /// Monte Carlo estimates for several multi-indices from one shared sample.
    pub fn mc_moments(&self, alphas: &[Vec<u32>], n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
        if n < 2 {
            return Err(Error::input("Monte Carlo moments need at least 2 samples"));
        }
        for a in alphas {
            Error::check_dim(self.dim, a.len())?;
        }
        let xs = self.sample(n, seed)?;
        let mut out = Vec::with_capacity(alphas.len());
        let mut vals = vec![0.0; n];
        for a in alphas {
            for (i, v) in vals.iter_mut().enumerate() {
                *v = a
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| xs[(i, k)].powi(e as i32))
                    .product();
            }
            out.push(mean_and_standard_error(&vals));
        }
        Ok(out)
    }
}

/// Sample mean and standard error of the mean (two-pass).
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let var = if values.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Raw moments `E[x^alpha]` for every `|alpha| <= max_order`, stored in
/// graded-lex rank order.
#[derive(Debug, Clone)]
pub struct MomentTable {
    indices: MultiIndexSet,
    values: Vec<f64>,
}

impl MomentTable {
    /// Wraps externally computed moments; `values[0]` must be 1.
    pub fn from_values(indices: MultiIndexSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != indices.len() {
            return Err(Error::input(format!(
                "moment table needs {} values, got {}",
                indices.len(),
                values.len()
            )));
        }
        if values[0] != 1.0 {
            return Err(Error::input("moment of the zero index must be 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite moment"));
        }
        Ok(MomentTable { indices, values })
    }

    pub fn dim(&self) -> usize {
        self.indices.dim()
    }

    pub fn max_order(&self) -> u32 {
        self.indices.order()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn indices(&self) -> &MultiIndexSet {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, alpha: &[u32]) -> Option<f64> {
        self.indices.rank(alpha).map(|r| self.values[r])
    }

    /// `E[x^(a + b)]`.
    pub fn product(&self, a: &[u32], b: &[u32]) -> Option<f64> {
        self.indices.rank_of_sum(a, b).map(|r| self.values[r])
    }

    pub(crate) fn require_order(&self, needed: u32) -> Result<()> {
        if self.max_order() < needed {
            Err(Error::InsufficientMomentOrder {
                needed,
                available: self.max_order(),
            })
        } else {
            Ok(())
        }
    }
}

fn validate_covariance(i: usize, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    for r in 0..d {
        for c in 0..r {
            if (cov[(r, c)] - cov[(c, r)]).abs() > 1e-12 * scale {
                return Err(Error::input(format!(
                    "component {i}: covariance is not symmetric at ({r}, {c})"
                )));
            }
        }
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let trace = sym.trace();
    let min_eig = sym.clone().symmetric_eigenvalues().min();
    if !(trace > 0.0) || min_eig <= SPD_REL_TOL * trace {
        return Err(Error::input(format!(
            "component {i}: covariance is not positive definite (min eigenvalue {min_eig:e})"
        )));
    }
    sym.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::input(format!("component {i}: cholesky factorization failed")))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Single raw moment of `N(mean, cov)` by running the recurrence over the
/// box `0 <= beta <= alpha` in mixed-radix order.
fn component_moment(mean: &DVector<f64>, cov: &DMatrix<f64>, alpha: &[u32]) -> f64 {
    let d = alpha.len();
    let mut strides = vec![1usize; d];
    for k in 1..d {
        strides[k] = strides[k - 1] * (alpha[k - 1] as usize + 1);
    }
    let total = strides[d - 1] * (alpha[d - 1] as usize + 1);
    let mut m = vec![0.0; total];
    let mut beta = vec![0u32; d];
    for lin in 0..total {
        let mut rem = lin;
        for k in (0..d).rev() {
            beta[k] = (rem / strides[k]) as u32;
            rem %= strides[k];
        }
        m[lin] = match beta.iter().position(|&e| e > 0) {
            None => 1.0,
            Some(j) => {
                let b = lin - strides[j];
                let mut v = mean[j] * m[b];
                for k in 0..d {
                    let bk = beta[k] - u32::from(k == j);
                    if bk > 0 {
                        v += bk as f64 * cov[(j, k)] * m[b - strides[k]];
                    }
                }
                v
            }
        };
    }
    m[total - 1]
}

fn component_table(
    indices: &MultiIndexSet,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    out: &mut [f64],
) {
    let d = indices.dim();
    let mut b = vec![0u32; d];
    let mut bk = vec![0u32; d];
    for (r, alpha) in indices.iter().enumerate() {
        let Some(j) = alpha.iter().position(|&e| e > 0) else {
            out[r] = 1.0;
            continue;
        };
        b.copy_from_slice(alpha);
        b[j] -= 1;
        let mut v = mean[j] * out[indices.rank(&b).expect("lower degree present")];
        for k in 0..d {
            if b[k] > 0 {
                bk.copy_from_slice(&b);
                bk[k] -= 1;
                v += b[k] as f64 * cov[(j, k)] * out[indices.rank(&bk).expect("lower degree present")];
            }
        }
        out[r] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bimodal_1d() -> GaussianMixture {
        GaussianMixture::new(&MixtureSpec {
            dimension: 1,
            components: vec![
                ComponentSpec {
                    weight: 0.5,
                    mean: vec![1.0],
                    covariance: vec![1.0],
                },
                ComponentSpec {
                    weight: 0.5,
                    mean: vec![-1.0],
                    covariance: vec![1.0],
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let g = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(g.pdf(&[0.0]).unwrap(), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn symmetric_bimodal_at_origin() {
        let expected = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert_abs_diff_eq!(bimodal_1d().pdf(&[0.0]).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn far_tail_is_nonnegative() {
        let v = bimodal_1d().pdf(&[1e6]).unwrap();
        assert!((0.0..1e-300).contains(&v));
    }

    #[test]
    fn pdf_rejects_wrong_length() {
        assert!(matches!(
            bimodal_1d().pdf(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn rejects_bad_weights_and_covariances() {
        let mut spec = bimodal_1d().to_spec();
        spec.components[0].weight = 0.6;
        assert!(GaussianMixture::new(&spec).is_err());

        let bad = GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]);
        assert!(bad.is_err(), "indefinite covariance accepted");
        let asym = GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 0.1, 0.2, 1.0]);
        assert!(asym.is_err(), "asymmetric covariance accepted");
        let singular = GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]);
        assert!(singular.is_err(), "singular covariance accepted");
    }

    #[test]
    fn closed_form_low_moments() {
        let g = GaussianMixture::gaussian(vec![0.3, -0.7], vec![2.0, 0.5, 0.5, 1.5]).unwrap();
        assert_eq!(g.moment(&[0, 0]).unwrap(), 1.0);
        assert_abs_diff_eq!(g.moment(&[1, 0]).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(g.moment(&[0, 1]).unwrap(), -0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(g.moment(&[2, 0]).unwrap(), 0.09 + 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.moment(&[1, 1]).unwrap(), 0.3 * -0.7 + 0.5, epsilon = 1e-14);
        // E[x^4] = mu^4 + 6 mu^2 s^2 + 3 s^4
        let m4 = 0.3f64.powi(4) + 6.0 * 0.09 * 2.0 + 3.0 * 4.0;
        assert_abs_diff_eq!(g.moment(&[4, 0]).unwrap(), m4, epsilon = 1e-13);
    }

    #[test]
    fn odd_moments_vanish_under_point_symmetry() {
        let g = bimodal_1d();
        for k in [1u32, 3, 5, 7] {
            assert_abs_diff_eq!(g.moment(&[k]).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_agrees_with_single_moments() {
        let g = GaussianMixture::gaussian(vec![0.3, -0.7], vec![2.0, 0.5, 0.5, 1.5]).unwrap();
        let t = g.moment_table(6).unwrap();
        assert_eq!(t.len(), 28);
        for (r, a) in t.indices().iter().enumerate() {
            let single = g.moment(a).unwrap();
            assert_abs_diff_eq!(t.values()[r], single, epsilon = 1e-12 * (1.0 + single.abs()));
        }
        assert_eq!(g.moment_table(0).unwrap().values(), &[1.0]);
        assert_eq!(g.moment_table(2).unwrap().len(), 6);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = bimodal_1d();
        assert_eq!(g.sample(1000, 7).unwrap(), g.sample(1000, 7).unwrap());
        assert_ne!(g.sample(1000, 7).unwrap(), g.sample(1000, 8).unwrap());
    }

    #[test]
    fn sample_variance_of_diagonal_gaussian() {
        let g = GaussianMixture::gaussian(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 0.25]).unwrap();
        let n = 100_000;
        let xs = g.sample(n, 11).unwrap();
        for (k, s2) in [(0usize, 4.0f64), (1, 0.25)] {
            let col: Vec<f64> = xs.column(k).iter().map(|x| x * x).collect();
            let (m2, se) = mean_and_standard_error(&col);
            assert!((m2 - s2).abs() <= 5.0 * se, "coord {k}: {m2} vs {s2} (se {se})");
        }
    }

    #[test]
    fn bimodal_sample_mean_near_zero() {
        let xs = bimodal_1d().sample(100_000, 3).unwrap();
        let col: Vec<f64> = xs.column(0).iter().copied().collect();
        let (m, se) = mean_and_standard_error(&col);
        assert!(m.abs() <= 5.0 * se);
    }

    #[test]
    fn mc_moment_of_zero_index_is_exact() {
        let (m, se) = bimodal_1d().mc_moment(&[0], 100, 1).unwrap();
        assert_eq!((m, se), (1.0, 0.0));
    }

    #[test]
    fn standard_normal_kurtosis() {
        let g = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap();
        let (m, se) = g.mc_moment(&[4], 1_000_000, 5).unwrap();
        assert!((m - 3.0).abs() <= 5.0 * se, "{m} ± {se}");
    }

    #[test]
    fn affine_transform_moves_moments() {
        let g = bimodal_1d().affine(&[2.0], 0.1).unwrap();
        assert_abs_diff_eq!(g.moment(&[1]).unwrap(), 2.0, epsilon = 1e-14);
        // Var = 0.01 * (1 + 1)
        let var = g.moment(&[2]).unwrap() - 4.0;
        assert_abs_diff_eq!(var, 0.02, epsilon = 1e-13);
    }

    #[test]
    fn fingerprint_is_parameter_sensitive() {
        let a = bimodal_1d();
        let b = a.affine(&[0.0], 1.0 + 1e-12).unwrap();
        assert_eq!(a.fingerprint(), bimodal_1d().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
