//! Projection of simulator outputs onto an orthonormal basis.
//!
//! With a rule `{x_k, w_k}` the surrogate coefficients are
//! `c_j = sum_k y(x_k) Psi_j(x_k) w_k`, and because the basis is orthonormal
//! the surrogate's mean is `c_1` and its variance `sum_{j >= 2} c_j^2`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFile, BasisSet};
use crate::density::{GaussianMixture, MomentTable, SAMPLE_CHUNK};
use crate::error::{Error, Result};
use crate::multi_index::MultiIndexSet;
use crate::quadrature::QuadratureRule;

const FORMAT_TAG: &str = "ngcolloc-surrogate";

/// Identifies the rule a surrogate was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleRef {
    pub hash: String,
    pub order: u32,
    pub nodes: usize,
    pub residual_l1: f64,
    pub seed: u64,
}

impl RuleRef {
    pub fn of(rule: &QuadratureRule) -> Self {
        RuleRef {
            hash: rule.fingerprint(),
            order: rule.order(),
            nodes: rule.len(),
            residual_l1: rule.residual_l1(),
            seed: rule.seed(),
        }
    }
}

/// `y(x) ~ sum_j c_j Psi_j(x)` for one output quantity.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    name: String,
    basis: BasisSet,
    coeffs: DVector<f64>,
    rule: Option<RuleRef>,
}

impl SurrogateModel {
    /// A surrogate with explicit coefficients, one per basis function.
    pub fn new(basis: BasisSet, coeffs: Vec<f64>) -> Result<Self> {
        Error::check_dim(basis.len(), coeffs.len())?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("surrogate coefficients must be finite"));
        }
        Ok(SurrogateModel {
            name: "y".into(),
            basis,
            coeffs: DVector::from_vec(coeffs),
            rule: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    /// Coefficients in graded-lex rank order.
    pub fn coeffs(&self) -> &[f64] {
        self.coeffs.as_slice()
    }

    pub fn rule(&self) -> Option<&RuleRef> {
        self.rule.as_ref()
    }

    pub fn order(&self) -> u32 {
        self.basis.order()
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        let psi = self.basis.eval(point, self.basis.order())?;
        Ok(psi.iter().zip(self.coeffs.iter()).map(|(p, c)| p * c).sum())
    }

    /// `(c_1, sum_{j >= 2} c_j^2)`.
    pub fn mean_variance(&self) -> (f64, f64) {
        let var = self.coeffs.iter().skip(1).map(|c| c * c).sum();
        (self.coeffs[0], var)
    }

    /// Surrogate values at `n` samples of `density`.
    pub fn sample_outputs(&self, density: &GaussianMixture, n: usize, seed: u64) -> Result<Vec<f64>> {
        Error::check_dim(self.basis.dim(), density.dim())?;
        let xs = density.sample(n, seed)?;
        let d = self.basis.dim();
        let nb = self.basis.len();
        let mut out = vec![0.0; n];
        let threads = std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1);
        let per = n.div_ceil(SAMPLE_CHUNK).div_ceil(threads).max(1) * SAMPLE_CHUNK;
        std::thread::scope(|scope| {
            for (c, buf) in out.chunks_mut(per).enumerate() {
                let xs = &xs;
                scope.spawn(move || {
                    let mut point = vec![0.0; d];
                    let mut mono = vec![0.0; nb];
                    let mut psi = vec![0.0; nb];
                    for (i, o) in buf.iter_mut().enumerate() {
                        let row = c * per + i;
                        for (t, p) in point.iter_mut().enumerate() {
                            *p = xs[(row, t)];
                        }
                        self.basis.eval_into(&point, &mut mono, &mut psi);
                        *o = psi.iter().zip(self.coeffs.iter()).map(|(p, c)| p * c).sum();
                    }
                });
            }
        });
        Ok(out)
    }

    /// Histogram and Gaussian-kernel density estimate of the surrogate's
    /// output distribution under `density`.
    pub fn pdf_estimate(&self, density: &GaussianMixture, n: usize, seed: u64, bins: usize) -> Result<PdfEstimate> {
        if n < 100 {
            return Err(Error::input("pdf_estimate needs at least 100 samples"));
        }
        if bins < 1 {
            return Err(Error::input("pdf_estimate needs at least one bin"));
        }
        let ys = self.sample_outputs(density, n, seed)?;
        Ok(PdfEstimate::from_samples(&ys, bins))
    }
}

/// Histogram plus smoothed density of a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfEstimate {
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    /// Every sample had the same value; the histogram is a single atom and
    /// there is no smoothed curve.
    pub degenerate: bool,
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    /// Normalized bin heights; `sum density_i * width_i = 1`.
    pub density: Vec<f64>,
    /// Silverman bandwidth of the kernel estimate.
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub kde: Vec<f64>,
}

impl PdfEstimate {
    pub fn from_samples(ys: &[f64], bins: usize) -> Self {
        let n = ys.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
        let std = var.sqrt();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo > 1e-12 * mean.abs().max(1.0)) {
            let half = 5e-7 * mean.abs().max(1.0);
            let edges = vec![mean - half, mean + half];
            return PdfEstimate {
                samples: n,
                mean,
                std,
                degenerate: true,
                density: vec![1.0 / (edges[1] - edges[0])],
                edges,
                bandwidth: 0.0,
                grid: Vec::new(),
                kde: Vec::new(),
            };
        }

        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for &y in ys {
            counts[bin_of(y, lo, width, bins)] += 1;
        }
        let density = counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect();

        let bandwidth = silverman_bandwidth(ys, std);
        let (glo, ghi) = (lo - 3.0 * bandwidth, hi + 3.0 * bandwidth);
        // Kernel sums over a fine pre-binning instead of every sample.
        const FINE: usize = 4096;
        let fw = (ghi - glo) / FINE as f64;
        let mut fine = vec![0usize; FINE];
        for &y in ys {
            fine[bin_of(y, glo, fw, FINE)] += 1;
        }
        let points = bins.max(2);
        let grid: Vec<f64> = (0..points)
            .map(|i| glo + (ghi - glo) * i as f64 / (points - 1) as f64)
            .collect();
        let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let kde = grid
            .iter()
            .map(|&g| {
                fine.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| {
                        let u = (g - (glo + (i as f64 + 0.5) * fw)) / bandwidth;
                        c as f64 * (-0.5 * u * u).exp()
                    })
                    .sum::<f64>()
                    * norm
            })
            .collect();
        PdfEstimate {
            samples: n,
            mean,
            std,
            degenerate: false,
            edges,
            density,
            bandwidth,
            grid,
            kde,
        }
    }

    /// `sum density_i * width_i`.
    pub fn histogram_integral(&self) -> f64 {
        self.density
            .iter()
            .enumerate()
            .map(|(i, h)| h * (self.edges[i + 1] - self.edges[i]))
            .sum()
    }
}

fn bin_of(y: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((y - lo) / width) as usize).min(bins - 1)
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to `sd` when the
/// interquartile range is zero.
pub fn silverman_bandwidth(ys: &[f64], std: f64) -> f64 {
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    0.9 * spread * (ys.len() as f64).powf(-0.2)
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Fits one output column. `basis` must have order at least the rule's; it
/// is truncated to the rule's order.
pub fn fit(basis: &BasisSet, rule: &QuadratureRule, outputs: &[f64]) -> Result<SurrogateModel> {
    let m = DMatrix::from_column_slice(outputs.len(), 1, outputs);
    Ok(fit_columns(basis, rule, &["y".to_string()], &m)?.remove(0))
}

/// Fits each column of the `M x C` output matrix independently.
pub fn fit_columns(
    basis: &BasisSet,
    rule: &QuadratureRule,
    names: &[String],
    outputs: &DMatrix<f64>,
) -> Result<Vec<SurrogateModel>> {
    Error::check_dim(basis.dim(), rule.dim())?;
    Error::check_dim(rule.len(), outputs.nrows())?;
    Error::check_dim(outputs.ncols(), names.len())?;
    if let Some(k) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!(
            "non-finite output at node {} column {}",
            k % outputs.nrows() + 1,
            k / outputs.nrows() + 1
        )));
    }
    let basis = basis.truncated(rule.order())?;
    let phi = basis.eval_matrix(rule.nodes(), rule.order())?;
    let weighted = DMatrix::from_fn(outputs.nrows(), outputs.ncols(), |k, c| outputs[(k, c)] * rule.weights()[k]);
    let coeffs = phi * weighted;
    let rule_ref = RuleRef::of(rule);
    Ok(names
        .iter()
        .enumerate()
        .map(|(c, name)| SurrogateModel {
            name: name.clone(),
            basis: basis.clone(),
            coeffs: coeffs.column(c).into_owned(),
            rule: Some(rule_ref.clone()),
        })
        .collect())
}

/// On-disk form of one or more surrogates sharing a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateFile {
    pub format: String,
    pub version: u32,
    pub outputs: Vec<String>,
    pub coeffs: Vec<Vec<f64>>,
    pub rule: Option<RuleRef>,
    pub density_hash: Option<String>,
    pub basis: BasisFile,
}

pub fn to_file(models: &[SurrogateModel]) -> Result<SurrogateFile> {
    let first = models.first().ok_or_else(|| Error::input("no surrogates to export"))?;
    for m in &models[1..] {
        if m.basis.coeffs() != first.basis.coeffs() || m.rule != first.rule {
            return Err(Error::input("surrogates in one file must share basis and rule"));
        }
    }
    Ok(SurrogateFile {
        format: FORMAT_TAG.into(),
        version: 1,
        outputs: models.iter().map(|m| m.name.clone()).collect(),
        coeffs: models.iter().map(|m| m.coeffs.iter().copied().collect()).collect(),
        rule: first.rule.clone(),
        density_hash: first.basis.density_hash().map(str::to_string),
        basis: first.basis.to_file(),
    })
}

pub fn from_file(file: &SurrogateFile) -> Result<Vec<SurrogateModel>> {
    if file.format != FORMAT_TAG || file.version != 1 {
        return Err(Error::input(format!(
            "unsupported surrogate format {} v{}",
            file.format, file.version
        )));
    }
    if file.outputs.len() != file.coeffs.len() {
        return Err(Error::input("surrogate file has mismatched outputs and coefficients"));
    }
    if file.density_hash != file.basis.density_hash {
        return Err(Error::input("surrogate density hash does not match its basis"));
    }
    let basis = BasisSet::from_file(&file.basis)?;
    file.outputs
        .iter()
        .zip(&file.coeffs)
        .map(|(name, c)| {
            let mut m = SurrogateModel::new(basis.clone(), c.clone())?.with_name(name.clone());
            m.rule = file.rule.clone();
            Ok(m)
        })
        .collect()
}

pub fn save(models: &[SurrogateModel], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_file(models)?).expect("surrogate serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<SurrogateModel>> {
    let text = std::fs::read_to_string(path)?;
    let file: SurrogateFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    from_file(&file)
}

/// Computable bound on how far the discrete Gram matrix of the first `N_p`
/// basis functions is from the identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCertificate {
    pub order: u32,
    pub n_p: usize,
    /// `||V - I||_F` with `V_ij = sum_k Psi_i(x_k) Psi_j(x_k) w_k`.
    pub gram_deviation: f64,
    /// `max_{i, j <= N_p} ||Psi_i Psi_j||_2`.
    pub t: f64,
    /// The rule's l1 moment residual.
    pub epsilon: f64,
    /// `N_p * T * epsilon`.
    pub bound: f64,
}

impl ErrorCertificate {
    pub fn holds(&self) -> bool {
        self.gram_deviation <= self.bound
    }
}

/// Gram deviation of `rule` against the bound `N_p T epsilon`.
///
/// `T` comes from `E[Psi_i^2 Psi_j^2]`, a degree-`4p` moment: each product
/// `Psi_i Psi_j` is expanded in the orthonormal basis of order `2p` built
/// from `moments4p`, and its norm is the length of that coefficient vector.
pub fn certificate(basis: &BasisSet, rule: &QuadratureRule, moments4p: &MomentTable) -> Result<ErrorCertificate> {
    let p = rule.order();
    Error::check_dim(basis.dim(), rule.dim())?;
    Error::check_dim(basis.dim(), moments4p.dim())?;
    moments4p.require_order(4 * p)?;
    let shared = basis.moments().len().min(moments4p.len());
    let same = basis.moments().values()[..shared]
        .iter()
        .zip(&moments4p.values()[..shared])
        .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
    if !same {
        return Err(Error::input("certificate moments do not belong to the basis density"));
    }

    let n_p = basis.count(p);
    let phi = basis.eval_matrix(rule.nodes(), p)?;
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(rule.weights()));
    let v = &phi * w * phi.transpose();
    let gram_deviation = (v - DMatrix::<f64>::identity(n_p, n_p)).norm();

    let wide = BasisSet::gram_schmidt(&MultiIndexSet::new(basis.dim(), 2 * p)?, moments4p)?;
    let t = product_norm_max(&wide, p);
    let epsilon = rule.residual_l1();
    Ok(ErrorCertificate {
        order: p,
        n_p,
        gram_deviation,
        t,
        epsilon,
        bound: n_p as f64 * t * epsilon,
    })
}

/// `max_{i, j <= N_p} ||Psi_i Psi_j||_2` for an order-`2p` basis.
fn product_norm_max(wide: &BasisSet, p: u32) -> f64 {
    let idx = wide.indices();
    let n_p = wide.count(p);
    let n = wide.len();
    // R^T a = q maps monomial coefficients q to orthonormal ones a.
    let rt = wide.coeffs().transpose();
    let mut best: f64 = 0.0;
    let mut q = DVector::<f64>::zeros(n);
    for i in 0..n_p {
        for j in 0..=i {
            q.fill(0.0);
            for a in 0..=i {
                for b in 0..=j {
                    let r = idx
                        .rank_of_sum(idx.get(a).expect("in range"), idx.get(b).expect("in range"))
                        .expect("degree at most 2p");
                    q[r] += wide.coeffs()[(i, a)] * wide.coeffs()[(j, b)];
                }
            }
            let a = rt
                .solve_upper_triangular(&q)
                .expect("basis has a nonzero diagonal");
            best = best.max(a.norm());
        }
    }
    best
}
