//! Optimization-based quadrature for arbitrary densities.
//!
//! A rule `{x_k, w_k}` of order `p` integrates every basis function of total
//! degree `<= 2p` to within `epsilon` in the l1 sense:
//! `|| Phi(x) w - e_1 ||_1 <= epsilon` with `Phi[j, k] = Psi_j(x_k)`.
//! Rules are found by alternating an NNLS solve for the weights with one
//! damped Gauss-Newton step on the nodes, starting from a clustered Monte
//! Carlo sample, then growing or shrinking the node count.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisSet;
use crate::cluster::{weighted_complete_linkage, WeightedPoints};
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::multi_index::num_terms;
use crate::nnls::{nnls, nnls_from};

/// Solver settings for [`bcd_solve`] and [`build_rule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target l1 residual of the moment-matching equations.
    pub epsilon: f64,
    /// Outer block-coordinate iterations per solve.
    pub max_bcd_iters: usize,
    /// Stop a solve early when the best residual improved by less than
    /// 0.1% over this many iterations. Zero disables the check.
    pub stall_iters: usize,
    /// Candidate pool size as a multiple of the cluster count.
    pub init_multiplier: usize,
    /// Initial node count as a multiple of `N_p`.
    pub start_nodes_factor: usize,
    /// Floor for the Levenberg damping of the Gauss-Newton system.
    pub gn_damping: f64,
    /// Backtrack the node step until the l2 residual decreases.
    pub line_search: bool,
    /// Maximum number of node-increase rounds before giving up.
    pub max_increase_rounds: usize,
    /// How many nodes, lightest first, the decrease phase tries to delete
    /// before concluding that no node can go.
    pub deletion_candidates: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-8,
            max_bcd_iters: 500,
            stall_iters: 100,
            init_multiplier: 3,
            start_nodes_factor: 2,
            gn_damping: 1e-10,
            line_search: true,
            max_increase_rounds: 8,
            deletion_candidates: usize::MAX,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.init_multiplier < 1 || self.start_nodes_factor < 1 {
            return Err(Error::Config("initialization factors must be at least 1".into()));
        }
        if self.max_bcd_iters < 1 {
            return Err(Error::Config("max_bcd_iters must be at least 1".into()));
        }
        if !(self.gn_damping >= 0.0) {
            return Err(Error::Config("gn_damping must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Nodes (rows of an `M x d` matrix) with nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: DMatrix<f64>,
    weights: Vec<f64>,
    residual_l1: f64,
    order: u32,
    seed: u64,
}

impl QuadratureRule {
    pub fn new(
        nodes: DMatrix<f64>,
        weights: Vec<f64>,
        residual_l1: f64,
        order: u32,
        seed: u64,
    ) -> Result<Self> {
        if nodes.nrows() != weights.len() {
            return Err(Error::input(format!(
                "{} nodes but {} weights",
                nodes.nrows(),
                weights.len()
            )));
        }
        if nodes.nrows() == 0 {
            return Err(Error::input("a rule needs at least one node"));
        }
        if nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite node coordinate"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::input("weights must be finite and nonnegative"));
        }
        Ok(QuadratureRule {
            nodes,
            weights,
            residual_l1,
            order,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        self.nodes.row(k).iter().copied().collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn residual_l1(&self) -> f64 {
        self.residual_l1
    }

    /// The `p` whose degree-`2p` test functions this rule matches.
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `sum_k values_k w_k`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        Error::check_dim(self.len(), values.len())?;
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * w).sum())
    }

    /// Short stable hash over the exact node and weight bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"ngcolloc-rule-v1");
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.order as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for k in 0..self.len() {
            for t in 0..self.dim() {
                h.update(self.nodes[(k, t)].to_le_bytes());
            }
            h.update(self.weights[k].to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Delimited text: `#` header lines with the metadata, a column header,
    /// then one `x1..xd,weight` row per node.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ngcolloc-rule v1");
        let _ = writeln!(s, "# dimension={}", self.dim());
        let _ = writeln!(s, "# order={}", self.order);
        let _ = writeln!(s, "# nodes={}", self.len());
        let _ = writeln!(s, "# residual_l1={:e}", self.residual_l1);
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# hash={}", self.fingerprint());
        let cols: Vec<String> = (1..=self.dim()).map(|t| format!("x{t}")).collect();
        let _ = writeln!(s, "{},weight", cols.join(","));
        for k in 0..self.len() {
            let row: Vec<String> = self.nodes.row(k).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{},{:e}", row.join(","), self.weights[k]);
        }
        s
    }

    /// Parses [`QuadratureRule::to_csv`] output and re-checks the invariants
    /// of a successfully built rule.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut meta = std::collections::HashMap::new();
        let mut header_seen = false;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut dim = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols.last() != Some(&"weight") {
                    return Err(perr(lineno, "expected column header ending in 'weight'".into()));
                }
                dim = Some(cols.len() - 1);
                header_seen = true;
                continue;
            }
            let d = dim.expect("header parsed");
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != d + 1 {
                return Err(perr(lineno, format!("expected {} columns, found {}", d + 1, cells.len())));
            }
            for (c, cell) in cells.iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| perr(lineno, format!("non-numeric cell '{cell}'")))?;
                if c < d {
                    nodes.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        let get = |k: &str| -> Result<&String> {
            meta.get(k).ok_or_else(|| perr(1, format!("missing header field '{k}'")))
        };
        let parse_err = |k: &str| perr(1, format!("bad header field '{k}'"));
        let d: usize = get("dimension")?.parse().map_err(|_| parse_err("dimension"))?;
        let order: u32 = get("order")?.parse().map_err(|_| parse_err("order"))?;
        let m: usize = get("nodes")?.parse().map_err(|_| parse_err("nodes"))?;
        let residual: f64 = get("residual_l1")?.parse().map_err(|_| parse_err("residual_l1"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| parse_err("seed"))?;
        if dim != Some(d) {
            return Err(perr(1, "column count does not match dimension".into()));
        }
        if weights.len() != m {
            return Err(perr(1, format!("header says {m} nodes, found {}", weights.len())));
        }
        let rule = QuadratureRule::new(DMatrix::from_row_slice(m, d, &nodes), weights, residual, order, seed)?;
        if let Some(h) = meta.get("hash") {
            if *h != rule.fingerprint() {
                return Err(perr(1, "hash does not match rule contents".into()));
            }
        }
        rule.check_invariants()?;
        Ok(rule)
    }

    /// Weight sum and node-count bounds expected of a built rule.
    pub fn check_invariants(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > self.residual_l1 + 1e-12 {
            return Err(Error::input(format!(
                "weights sum to {sum}, outside residual {:e}",
                self.residual_l1
            )));
        }
        let lo = num_terms(self.dim(), self.order);
        let hi = num_terms(self.dim(), 2 * self.order);
        if self.len() < lo || self.len() > hi {
            return Err(Error::input(format!(
                "{} nodes outside the admissible range [{lo}, {hi}]",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, path)
    }
}

/// The moment-matching problem of order `p` against a fixed basis.
struct Matcher<'a> {
    basis: &'a BasisSet,
    order: u32,
    n_test: usize,
}

impl<'a> Matcher<'a> {
    fn new(basis: &'a BasisSet, order: u32) -> Result<Self> {
        if basis.order() < 2 * order {
            return Err(Error::input(format!(
                "an order-{order} rule needs a basis of order {}, got {}",
                2 * order,
                basis.order()
            )));
        }
        Ok(Matcher {
            basis,
            order,
            n_test: basis.count(2 * order),
        })
    }

    fn check_nodes(&self, nodes: &DMatrix<f64>) -> Result<()> {
        Error::check_dim(self.basis.dim(), nodes.ncols())?;
        if nodes.nrows() == 0 {
            return Err(Error::input("at least one node is required"));
        }
        Ok(())
    }

    fn phi(&self, nodes: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.eval_matrix_n(nodes, self.n_test)
    }

    fn target(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.n_test);
        e[0] = 1.0;
        e
    }

    fn residual(&self, nodes: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.phi(nodes) * w - self.target()
    }

    fn weights(&self, nodes: &DMatrix<f64>) -> DVector<f64> {
        nnls(&self.phi(nodes), &self.target()).x
    }

    /// Weights for nodes close to ones whose weights were `prev`.
    fn weights_near(&self, nodes: &DMatrix<f64>, prev: &DVector<f64>) -> DVector<f64> {
        let hint: Vec<bool> = prev.iter().map(|&w| w > 0.0).collect();
        nnls_from(&self.phi(nodes), &self.target(), &hint).x
    }

    fn jacobian(&self, nodes: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let (m, d) = nodes.shape();
        let mut jac = DMatrix::zeros(self.n_test, m * d);
        for k in 0..m {
            if w[k] == 0.0 {
                continue;
            }
            let point: Vec<f64> = nodes.row(k).iter().copied().collect();
            let g = self.basis.gradients(&point, self.n_test);
            jac.columns_mut(k * d, d).copy_from(&(g * w[k]));
        }
        jac
    }

    fn gauss_newton(
        &self,
        nodes: &DMatrix<f64>,
        w: &DVector<f64>,
        cfg: &SolverConfig,
    ) -> Result<DMatrix<f64>> {
        let r = self.residual(nodes, w);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite residual at {} nodes",
                nodes.nrows()
            )));
        }
        let jac = self.jacobian(nodes, w);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Jacobian".into()));
        }
        let (m, d) = nodes.shape();
        let mut normal = jac.tr_mul(&jac);
        let dim = normal.nrows();
        let lambda = cfg.gn_damping.max(1e-10 * normal.trace() / dim as f64);
        for i in 0..dim {
            normal[(i, i)] += lambda;
        }
        let rhs = -jac.tr_mul(&r);
        let step = normal
            .cholesky()
            .ok_or_else(|| Error::Numerical("damped normal equations not positive definite".into()))?
            .solve(&rhs);
        let step = DMatrix::from_row_slice(m, d, step.as_slice());
        if !cfg.line_search {
            return Ok(nodes + step);
        }
        let f0 = r.norm_squared();
        let mut alpha = 1.0;
        for _ in 0..30 {
            let trial = nodes + &step * alpha;
            let f = self.residual(&trial, w).norm_squared();
            if f < f0 {
                return Ok(trial);
            }
            alpha *= 0.5;
        }
        Ok(nodes.clone())
    }

    fn bcd(&self, start: &DMatrix<f64>, start_w: Option<&DVector<f64>>, cfg: &SolverConfig) -> Result<BcdOutcome> {
        self.check_nodes(start)?;
        let mut nodes = start.clone();
        let mut best_nodes = nodes.clone();
        let mut best_w;
        let mut best_res;
        match start_w {
            Some(w) => {
                best_w = w.clone();
                best_res = self.residual(&nodes, w).lp_norm(1);
            }
            None => {
                best_w = self.weights(&nodes);
                best_res = self.residual(&nodes, &best_w).lp_norm(1);
            }
        }
        let mut history = vec![best_res];
        let mut converged = best_res <= cfg.epsilon;
        let mut iterations = 0;
        let mut last_progress = (0usize, best_res);
        let mut prev_w = best_w.clone();
        while !converged && iterations < cfg.max_bcd_iters {
            iterations += 1;
            let w = self.weights_near(&nodes, &prev_w);
            prev_w.copy_from(&w);
            nodes = self.gauss_newton(&nodes, &w, cfg)?;
            let res = self.residual(&nodes, &w).lp_norm(1);
            if res < best_res {
                best_res = res;
                best_nodes.copy_from(&nodes);
                best_w = w;
            }
            history.push(best_res);
            if res <= cfg.epsilon {
                converged = true;
                break;
            }
            if best_res < last_progress.1 * 0.999 {
                last_progress = (iterations, best_res);
            } else if cfg.stall_iters > 0 && iterations - last_progress.0 >= cfg.stall_iters {
                break;
            }
        }
        let rule = QuadratureRule::new(
            best_nodes,
            best_w.iter().copied().collect(),
            best_res,
            self.order,
            cfg.seed,
        )?;
        Ok(BcdOutcome {
            rule,
            converged,
            iterations,
            history,
        })
    }
}

/// Result of [`bcd_solve`].
#[derive(Debug, Clone)]
pub struct BcdOutcome {
    /// Best iterate seen, with its residual.
    pub rule: QuadratureRule,
    pub converged: bool,
    pub iterations: usize,
    /// Best-seen l1 residual after each iteration; entry 0 is the start.
    pub history: Vec<f64>,
}

/// Nonnegative weights minimizing `|| Phi(nodes) w - e_1 ||_2` for the
/// degree-`2 * order` test functions of `basis`.
pub fn solve_weights(basis: &BasisSet, order: u32, nodes: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = Matcher::new(basis, order)?;
    m.check_nodes(nodes)?;
    Ok(m.weights(nodes).iter().copied().collect())
}

/// `Phi(nodes) w - e_1` over the degree-`2 * order` test functions.
pub fn moment_residual(basis: &BasisSet, order: u32, nodes: &DMatrix<f64>, weights: &[f64]) -> Result<Vec<f64>> {
    let m = Matcher::new(basis, order)?;
    m.check_nodes(nodes)?;
    Error::check_dim(nodes.nrows(), weights.len())?;
    let w = DVector::from_column_slice(weights);
    Ok(m.residual(nodes, &w).iter().copied().collect())
}

/// Jacobian of the moment residual with respect to the stacked node
/// coordinates, holding the weights fixed. Column `k * d + t` is
/// `w_k d Psi(x_k) / d x_t`.
pub fn residual_jacobian(basis: &BasisSet, order: u32, nodes: &DMatrix<f64>, weights: &[f64]) -> Result<DMatrix<f64>> {
    let m = Matcher::new(basis, order)?;
    m.check_nodes(nodes)?;
    Error::check_dim(nodes.nrows(), weights.len())?;
    Ok(m.jacobian(nodes, &DVector::from_column_slice(weights)))
}

/// One damped Gauss-Newton update of the nodes with the rule's weights held
/// fixed.
pub fn gauss_newton_step(basis: &BasisSet, rule: &QuadratureRule, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    let m = Matcher::new(basis, rule.order())?;
    m.check_nodes(rule.nodes())?;
    m.gauss_newton(rule.nodes(), &DVector::from_column_slice(rule.weights()), cfg)
}

/// Alternates weight and node updates until the l1 residual drops to
/// `cfg.epsilon` or the iteration budget runs out.
pub fn bcd_solve(basis: &BasisSet, rule: &QuadratureRule, cfg: &SolverConfig) -> Result<BcdOutcome> {
    cfg.validate()?;
    let m = Matcher::new(basis, rule.order())?;
    m.bcd(rule.nodes(), Some(&DVector::from_column_slice(rule.weights())), cfg)
}

/// Clusters weighted candidates down to `target` weighted centroids.
pub fn cluster_init(candidates: &WeightedPoints, target: usize) -> Result<WeightedPoints> {
    Ok(weighted_complete_linkage(candidates, target)?.centers)
}

/// One step of the construction, for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildEvent {
    pub phase: &'static str,
    pub nodes: usize,
    pub residual_l1: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Builds an order-`order` rule for `density` using a basis of order at
/// least `2 * order`.
pub fn build_rule(
    basis: &BasisSet,
    density: &GaussianMixture,
    order: u32,
    cfg: &SolverConfig,
) -> Result<QuadratureRule> {
    build_rule_logged(basis, density, order, cfg).map(|(rule, _)| rule)
}

/// [`build_rule`] plus the sequence of solves it ran.
pub fn build_rule_logged(
    basis: &BasisSet,
    density: &GaussianMixture,
    order: u32,
    cfg: &SolverConfig,
) -> Result<(QuadratureRule, Vec<BuildEvent>)> {
    cfg.validate()?;
    Error::check_dim(basis.dim(), density.dim())?;
    let matcher = Matcher::new(basis, order)?;
    let n_p = basis.count(order);
    let mut log = Vec::new();
    let mut stream = 0u64;
    let mut next_seed = || {
        stream += 1;
        derive_seed(cfg.seed, stream)
    };

    // Initialization: Monte Carlo candidates, NNLS weights, clustering.
    let mut m = cfg.start_nodes_factor * n_p;
    let pool = density.sample(cfg.init_multiplier * m, next_seed())?;
    let mut start = cluster_weighted(&matcher, pool, m)?;

    // Increase phase.
    let mut attempts = 0;
    let mut best: Option<QuadratureRule> = None;
    let mut current = loop {
        attempts += 1;
        let out = matcher.bcd(&start, None, cfg)?;
        log.push(BuildEvent {
            phase: "increase",
            nodes: m,
            residual_l1: out.rule.residual_l1(),
            converged: out.converged,
            iterations: out.iterations,
        });
        if out.converged {
            break out.rule;
        }
        if best.as_ref().is_none_or(|b| out.rule.residual_l1() < b.residual_l1()) {
            best = Some(out.rule.clone());
        }
        if attempts > cfg.max_increase_rounds {
            return Err(Error::ConstructionFailed {
                attempts,
                best: Box::new(best.expect("at least one attempt")),
            });
        }
        m += m.div_ceil(10).max(1);
        let fresh = density.sample(cfg.init_multiplier * m, next_seed())?;
        let kept = out.rule.nodes();
        let mut pool = DMatrix::zeros(kept.nrows() + fresh.nrows(), kept.ncols());
        pool.rows_mut(0, kept.nrows()).copy_from(kept);
        pool.rows_mut(kept.nrows(), fresh.nrows()).copy_from(&fresh);
        start = cluster_weighted(&matcher, pool, m)?;
    };

    // Decrease phase: drop the lightest node while the solve still converges;
    // when it does not, try the next-lightest nodes before stopping.
    'shrink: while current.len() > 1 {
        let mut order_by_weight: Vec<usize> = (0..current.len()).collect();
        order_by_weight.sort_by(|&a, &b| current.weights()[a].total_cmp(&current.weights()[b]).then(a.cmp(&b)));
        for &drop in order_by_weight.iter().take(cfg.deletion_candidates.max(1)) {
            let keep: Vec<usize> = (0..current.len()).filter(|&k| k != drop).collect();
            let nodes = current.nodes().select_rows(&keep);
            let out = matcher.bcd(&nodes, None, cfg)?;
            log.push(BuildEvent {
                phase: "decrease",
                nodes: keep.len(),
                residual_l1: out.rule.residual_l1(),
                converged: out.converged,
                iterations: out.iterations,
            });
            if out.converged {
                current = out.rule;
                continue 'shrink;
            }
        }
        break;
    }
    Ok((current, log))
}

fn cluster_weighted(matcher: &Matcher<'_>, pool: DMatrix<f64>, target: usize) -> Result<DMatrix<f64>> {
    let weights = matcher.weights(&pool).iter().copied().collect();
    let clustered = weighted_complete_linkage(
        &WeightedPoints {
            points: pool,
            weights,
        },
        target,
    )?;
    Ok(clustered.centers.points)
}

/// SplitMix64 mix of `seed` and a stream counter.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
