//! Orthonormal polynomial bases built by Gram-Schmidt in the inner product
//! `<f, g> = E[f g]`, evaluated exactly through a moment table.
//!
//! Basis function `j` is `Psi_j(x) = sum_{i <= j} R[j, i] x^alpha_i` where the
//! monomials follow the graded-lex order of [`MultiIndexSet`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{GaussianMixture, MomentTable};
use crate::error::{Error, Result};
use crate::multi_index::MultiIndexSet;

/// Squared norm of the residual monomial, relative to the monomial's own
/// second moment, below which orthogonalization is declared degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

const FORMAT_TAG: &str = "ngcolloc-basis";

#[derive(Debug, Clone)]
pub struct BasisSet {
    indices: MultiIndexSet,
    coeffs: DMatrix<f64>,
    moments: MomentTable,
    density_hash: Option<String>,
}

impl BasisSet {
    /// Orthonormalizes the monomials of `indices` against `moments`.
    ///
    /// Modified Gram-Schmidt with a second reorthogonalization sweep, run on
    /// the Gram matrix after symmetric diagonal scaling. Scaling does not
    /// change the resulting polynomials but keeps inner products in a sane
    /// range when the density is narrow.
    pub fn gram_schmidt(indices: &MultiIndexSet, moments: &MomentTable) -> Result<Self> {
        Error::check_dim(indices.dim(), moments.dim())?;
        moments.require_order(2 * indices.order())?;
        let n = indices.len();
        let gram = monomial_gram(indices, moments, n);
        let scale: Vec<f64> = (0..n).map(|i| gram[(i, i)].sqrt()).collect();
        if let Some(i) = scale.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateDensity {
                index: i + 1,
                order: indices.order(),
                relative_norm: 0.0,
            });
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] / (scale[i] * scale[j]));

        // rows[j] holds the scaled-space coefficients of Psi_j; gq[j] = G * rows[j].
        let mut rows = DMatrix::<f64>::zeros(n, n);
        let mut gq = DMatrix::<f64>::zeros(n, n);
        let mut v = DVector::<f64>::zeros(n);
        for j in 0..n {
            v.fill(0.0);
            v[j] = 1.0;
            for _sweep in 0..2 {
                for i in 0..j {
                    let c = gq.column(i).rows(0, j + 1).dot(&v.rows(0, j + 1));
                    for k in 0..=i {
                        v[k] -= c * rows[(k, i)];
                    }
                }
            }
            let gv = scaled.columns(0, j + 1) * v.rows(0, j + 1);
            let norm2 = v.rows(0, j + 1).dot(&gv.rows(0, j + 1));
            if !(norm2 > DEGENERACY_TOL) {
                return Err(Error::DegenerateDensity {
                    index: j + 1,
                    order: indices.order(),
                    relative_norm: norm2,
                });
            }
            let inv = 1.0 / norm2.sqrt();
            for k in 0..=j {
                rows[(k, j)] = v[k] * inv;
            }
            gq.set_column(j, &(gv * inv));
        }
        let coeffs = DMatrix::from_fn(n, n, |j, i| if i <= j { rows[(i, j)] / scale[i] } else { 0.0 });
        Ok(BasisSet {
            indices: indices.clone(),
            coeffs,
            moments: moments.clone(),
            density_hash: None,
        })
    }

    /// Builds the order-`order` basis of `density`, with moments up to `2 * order`.
    pub fn for_density(density: &GaussianMixture, order: u32) -> Result<Self> {
        Self::for_density_with_moments(density, order, 2 * order)
    }

    /// Like [`BasisSet::for_density`] but keeps a moment table of `moment_order`
    /// (at least `2 * order`) for later statistics.
    pub fn for_density_with_moments(
        density: &GaussianMixture,
        order: u32,
        moment_order: u32,
    ) -> Result<Self> {
        let indices = MultiIndexSet::new(density.dim(), order)?;
        let moments = density.moment_table(moment_order.max(2 * order))?;
        let mut basis = Self::gram_schmidt(&indices, &moments)?;
        basis.density_hash = Some(density.fingerprint());
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.indices.dim()
    }

    pub fn order(&self) -> u32 {
        self.indices.order()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &MultiIndexSet {
        &self.indices
    }

    /// Lower-triangular `N x N`; row `j` holds the monomial coefficients of
    /// `Psi_j` in index order.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn moments(&self) -> &MomentTable {
        &self.moments
    }

    pub fn density_hash(&self) -> Option<&str> {
        self.density_hash.as_deref()
    }

    /// Number of basis functions of total degree at most `order`.
    pub fn count(&self, order: u32) -> usize {
        self.indices.leading(order)
    }

    /// The functions of degree `<= order`, as a basis of its own. Gram-Schmidt
    /// in graded-lex order is prefix-stable, so these are the same
    /// polynomials a direct build of that order would give.
    pub fn truncated(&self, order: u32) -> Result<BasisSet> {
        let n = self.check_up_to(order)?;
        Ok(BasisSet {
            indices: MultiIndexSet::new(self.dim(), order)?,
            coeffs: self.coeffs.view((0, 0), (n, n)).into_owned(),
            moments: self.moments.clone(),
            density_hash: self.density_hash.clone(),
        })
    }

    fn check_up_to(&self, up_to: u32) -> Result<usize> {
        if up_to > self.order() {
            return Err(Error::input(format!(
                "basis has order {}, cannot evaluate up to {up_to}",
                self.order()
            )));
        }
        Ok(self.count(up_to))
    }

    /// `[Psi_1(x), ..., Psi_N(x)]` for all functions of degree `<= up_to`.
    pub fn eval(&self, point: &[f64], up_to: u32) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), point.len())?;
        let n = self.check_up_to(up_to)?;
        let mut mono = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.eval_into(point, &mut mono, &mut out);
        Ok(out)
    }

    /// Evaluates the first `out.len()` basis functions; `mono` is scratch of
    /// the same length. Dimensions are the caller's responsibility.
    pub(crate) fn eval_into(&self, point: &[f64], mono: &mut [f64], out: &mut [f64]) {
        let n = out.len();
        self.indices.monomials(point, &mut mono[..n]);
        for (j, o) in out.iter_mut().enumerate() {
            let row = self.coeffs.row(j);
            *o = (0..=j).map(|i| row[i] * mono[i]).sum();
        }
    }

    /// Gradients of the first `n` basis functions at `point`, as an `n x d`
    /// matrix.
    pub fn gradients(&self, point: &[f64], n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut mg = vec![0.0; n * d];
        self.indices.monomial_gradients(point, n, &mut mg);
        DMatrix::from_fn(n, d, |j, t| {
            let row = self.coeffs.row(j);
            (0..=j).map(|i| row[i] * mg[i * d + t]).sum()
        })
    }

    /// Basis functions of degree `<= up_to` evaluated at every row of
    /// `nodes`, as an `N x M` matrix (`Phi[j, k] = Psi_j(x_k)`).
    pub fn eval_matrix(&self, nodes: &DMatrix<f64>, up_to: u32) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim(), nodes.ncols())?;
        let n = self.check_up_to(up_to)?;
        Ok(self.eval_matrix_n(nodes, n))
    }

    pub(crate) fn eval_matrix_n(&self, nodes: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let m = nodes.nrows();
        let mut phi = DMatrix::zeros(n, m);
        let mut point = vec![0.0; self.dim()];
        let mut mono = vec![0.0; n];
        let mut col = vec![0.0; n];
        for k in 0..m {
            for (t, p) in point.iter_mut().enumerate() {
                *p = nodes[(k, t)];
            }
            self.eval_into(&point, &mut mono, &mut col);
            phi.column_mut(k).copy_from_slice(&col);
        }
        phi
    }

    /// Means `E[Psi_j]` and Gram matrix `E[Psi_i Psi_j]` over degree
    /// `<= up_to`, computed from the moment table alone.
    pub fn statistics(&self, up_to: u32) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.check_up_to(up_to)?;
        self.moments.require_order(2 * up_to)?;
        let r = self.coeffs.view((0, 0), (n, n));
        let first: DVector<f64> = DVector::from_iterator(
            n,
            self.indices.iter().take(n).map(|a| self.moments.get(a).expect("order checked")),
        );
        let means = r * first;
        let gram = r * monomial_gram(&self.indices, &self.moments, n) * r.transpose();
        Ok((means, gram))
    }

    /// Largest `|E[Psi_i Psi_j] - delta_ij|` over degree `<= up_to`.
    pub fn orthonormality_error(&self, up_to: u32) -> Result<f64> {
        let (_, gram) = self.statistics(up_to)?;
        let n = gram.nrows();
        Ok((gram - DMatrix::<f64>::identity(n, n)).amax())
    }

    /// Condition number of the diagonally scaled monomial Gram matrix, a
    /// diagnostic for how hard the orthogonalization was.
    pub fn gram_condition(&self) -> f64 {
        let n = self.len();
        let g = monomial_gram(&self.indices, &self.moments, n);
        let scaled = DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt());
        let eig = scaled.symmetric_eigenvalues();
        eig.max() / eig.min()
    }

    /// Applies one more Gram-Schmidt pass to the current coefficients and
    /// returns the resulting matrix. For a well-built basis it is a no-op up
    /// to roundoff.
    pub fn reorthogonalized(&self) -> DMatrix<f64> {
        let n = self.len();
        let g = monomial_gram(&self.indices, &self.moments, n);
        let mut out = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut v = self.coeffs.row(j).transpose();
            for i in 0..j {
                let q = out.row(i).transpose();
                let c = q.dot(&(&g * &v));
                v -= q * c;
            }
            let norm = v.dot(&(&g * &v)).sqrt();
            out.set_row(j, &(v / norm).transpose());
        }
        out
    }

    /// Monomial coefficients of `Psi_j` (length `j + 1`).
    pub(crate) fn as_monomial_coeffs(&self, j: usize) -> Vec<f64> {
        self.coeffs.row(j).iter().take(j + 1).copied().collect()
    }

    pub fn to_file(&self) -> BasisFile {
        BasisFile {
            format: FORMAT_TAG.to_string(),
            version: 1,
            dimension: self.dim(),
            order: self.order(),
            density_hash: self.density_hash.clone(),
            indices: self.indices.iter().map(<[u32]>::to_vec).collect(),
            coeffs: (0..self.len()).map(|j| self.as_monomial_coeffs(j)).collect(),
            moment_order: self.moments.max_order(),
            moments: self.moments.values().to_vec(),
        }
    }

    /// Rebuilds a basis from its export, validating structure and
    /// orthonormality against the stored moments.
    pub fn from_file(file: &BasisFile) -> Result<Self> {
        if file.format != FORMAT_TAG || file.version != 1 {
            return Err(Error::input(format!(
                "unsupported basis format {} v{}",
                file.format, file.version
            )));
        }
        let indices = MultiIndexSet::new(file.dimension, file.order)?;
        if file.indices.len() != indices.len()
            || file.indices.iter().zip(indices.iter()).any(|(a, b)| a.as_slice() != b)
        {
            return Err(Error::input("basis index set is not in canonical graded-lex order"));
        }
        let moments = MomentTable::from_values(
            MultiIndexSet::new(file.dimension, file.moment_order)?,
            file.moments.clone(),
        )?;
        moments.require_order(2 * file.order)?;
        let n = indices.len();
        if file.coeffs.len() != n {
            return Err(Error::input("basis coefficient matrix has the wrong number of rows"));
        }
        let mut coeffs = DMatrix::zeros(n, n);
        for (j, row) in file.coeffs.iter().enumerate() {
            if row.len() != j + 1 {
                return Err(Error::input(format!("basis row {} must have {} entries", j + 1, j + 1)));
            }
            if !(row[j] > 0.0) || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("basis row {} has a bad diagonal or value", j + 1)));
            }
            for (i, v) in row.iter().enumerate() {
                coeffs[(j, i)] = *v;
            }
        }
        let basis = BasisSet {
            indices,
            coeffs,
            moments,
            density_hash: file.density_hash.clone(),
        };
        let err = basis.orthonormality_error(basis.order())?;
        if err > 1e-8 {
            return Err(Error::input(format!(
                "imported basis is not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).expect("basis serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: BasisFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_file(&file)
    }
}

/// On-disk representation of a [`BasisSet`]. Row `j` of `coeffs` lists the
/// `j + 1` monomial coefficients of `Psi_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub format: String,
    pub version: u32,
    pub dimension: usize,
    pub order: u32,
    pub density_hash: Option<String>,
    pub indices: Vec<Vec<u32>>,
    pub coeffs: Vec<Vec<f64>>,
    pub moment_order: u32,
    pub moments: Vec<f64>,
}

/// `G[i, j] = E[x^(alpha_i + alpha_j)]` for the first `n` indices.
fn monomial_gram(indices: &MultiIndexSet, moments: &MomentTable, n: usize) -> DMatrix<f64> {
    let idx: Vec<&[u32]> = indices.iter().take(n).collect();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = moments
                .product(idx[i], idx[j])
                .expect("moment order checked by caller");
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}
