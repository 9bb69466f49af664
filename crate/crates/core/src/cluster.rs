//! Weighted complete-linkage agglomerative clustering.
//!
//! The merge cost of clusters `i` and `j` is
//! `D_ij = (w_i + w_j) * max_{a in C_i, b in C_j} ||a - b||_2`,
//! so light clusters are absorbed by their neighbours before heavy ones
//! merge. Clusters are reported by weight sum and weighted centroid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Points with nonnegative weights, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoints {
    pub points: DMatrix<f64>,
    pub weights: Vec<f64>,
}

/// Result of clustering: one centre per cluster plus the original members.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub centers: WeightedPoints,
    /// Row indices of the input points, in ascending order, per cluster.
    pub members: Vec<Vec<usize>>,
}

/// Merges the input down to `target` clusters.
///
/// Ties in `D_ij` go to the lexicographically smallest pair of current
/// cluster positions. A cluster whose total weight is zero is centred at the
/// plain mean of its members.
pub fn weighted_complete_linkage(input: &WeightedPoints, target: usize) -> Result<Clustering> {
    let n = input.points.nrows();
    if target < 1 {
        return Err(Error::input("cluster target must be at least 1"));
    }
    if input.weights.len() != n {
        return Err(Error::input(format!(
            "{} points but {} weights",
            n,
            input.weights.len()
        )));
    }
    if n < target {
        return Err(Error::input(format!(
            "cannot form {target} clusters from {n} points"
        )));
    }
    if input.weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::input("cluster weights must be nonnegative"));
    }

    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut weight = input.weights.clone();
    // Complete-linkage distance between current clusters (max over members).
    let mut far = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let d = (input.points.row(i) - input.points.row(j)).norm();
            far[(i, j)] = d;
            far[(j, i)] = d;
        }
    }
    // `alive[p]` maps cluster position p to its row in `far`.
    let mut alive: Vec<usize> = (0..n).collect();
    while alive.len() > target {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for p in 0..alive.len() {
            for q in p + 1..alive.len() {
                let (a, b) = (alive[p], alive[q]);
                let cost = (weight[a] + weight[b]) * far[(a, b)];
                if cost < best.0 {
                    best = (cost, p, q);
                }
            }
        }
        let (_, p, q) = best;
        let (a, b) = (alive[p], alive[q]);
        for &c in &alive {
            let d = far[(a, c)].max(far[(b, c)]);
            far[(a, c)] = d;
            far[(c, a)] = d;
        }
        far[(a, a)] = 0.0;
        weight[a] += weight[b];
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        members[a].sort_unstable();
        alive.remove(q);
    }

    let d = input.points.ncols();
    let mut centers = DMatrix::zeros(alive.len(), d);
    let mut weights = Vec::with_capacity(alive.len());
    let mut groups = Vec::with_capacity(alive.len());
    for (k, &a) in alive.iter().enumerate() {
        let total = weight[a];
        for &i in &members[a] {
            let coef = if total > 0.0 {
                input.weights[i] / total
            } else {
                1.0 / members[a].len() as f64
            };
            let mut row = centers.row_mut(k);
            row += input.points.row(i) * coef;
        }
        weights.push(members[a].iter().map(|&i| input.weights[i]).sum());
        groups.push(members[a].clone());
    }
    Ok(Clustering {
        centers: WeightedPoints {
            points: centers,
            weights,
        },
        members: groups,
    })
}
